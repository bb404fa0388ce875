//! Projection-domain filter, domain transform, image-domain denoiser.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::geometry::{Image, LinearOperator, Sinogram};
use crate::projector::{fbp, vvbp_stack, FbpFilter, ProjectionOperator};
use crate::solvers::{Denoiser, IdentityDenoiser};

pub trait SinogramFilter: Send + Sync {
    fn filter(&self, y: &Sinogram) -> Result<Sinogram>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFilter;

impl SinogramFilter for IdentityFilter {
    fn filter(&self, y: &Sinogram) -> Result<Sinogram> {
        Ok(y.clone())
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

/// Gaussian smoothing along the detector axis of each view, truncated at
/// three standard deviations and renormalized at the detector ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSmoothing {
    pub sigma_bins: f64,
}

impl GaussianSmoothing {
    pub fn new(sigma_bins: f64) -> Result<Self> {
        if !(sigma_bins > 0.0 && sigma_bins.is_finite()) {
            return invalid(format!("smoothing width must be positive, got {sigma_bins}"));
        }
        Ok(Self { sigma_bins })
    }
}

impl SinogramFilter for GaussianSmoothing {
    fn filter(&self, y: &Sinogram) -> Result<Sinogram> {
        let geo = y.geometry();
        let n = geo.n_dets();
        let radius = (3.0 * self.sigma_bins).ceil() as i64;
        let taps: Vec<f64> = (-radius..=radius)
            .map(|d| (-(d * d) as f64 / (2.0 * self.sigma_bins * self.sigma_bins)).exp())
            .collect();
        let mut out = Vec::with_capacity(y.values().len());
        for v in 0..geo.n_views() {
            let row = y.view(v);
            for k in 0..n as i64 {
                let (mut acc, mut mass) = (0.0, 0.0);
                for (t, w) in taps.iter().enumerate() {
                    let p = k + t as i64 - radius;
                    if p >= 0 && p < n as i64 {
                        acc += w * row[p as usize];
                        mass += w;
                    }
                }
                out.push(acc / mass);
            }
        }
        Sinogram::from_vec(y.geometry_arc().clone(), out)
    }

    fn describe(&self) -> String {
        format!("gaussian(sigma_bins={})", self.sigma_bins)
    }
}

/// Multi-channel image-domain stage for the view-by-view transform.
pub trait ChannelReducer: Send + Sync {
    fn reduce(&self, channels: &[Image]) -> Result<Image>;

    fn describe(&self) -> String;
}

/// Sums channels in order.
#[derive(Debug, Clone, Copy, Default)]
pub struct SumReducer;

impl ChannelReducer for SumReducer {
    fn reduce(&self, channels: &[Image]) -> Result<Image> {
        let Some(first) = channels.first() else {
            return invalid("no channels to reduce");
        };
        let mut acc = vec![0.0; first.values().len()];
        for c in channels {
            first.check_same_grid(c)?;
            for (a, v) in acc.iter_mut().zip(c.values()) {
                *a += v;
            }
        }
        Image::from_vec(first.grid(), acc)
    }

    fn describe(&self) -> String {
        "sum".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Plain backprojection `Aᵀy`.
    Bp,
    #[default]
    Fbp,
    /// View-by-view filtered backprojection into one channel per view.
    Vvbp,
}

pub struct DualDomainConfig {
    pub projection: Box<dyn SinogramFilter>,
    pub transform: Transform,
    pub filter: FbpFilter,
    /// Applied to the channel stack in `Vvbp` mode.
    pub reducer: Box<dyn ChannelReducer>,
    pub image: Box<dyn Denoiser>,
}

impl Default for DualDomainConfig {
    fn default() -> Self {
        Self {
            projection: Box::new(IdentityFilter),
            transform: Transform::Fbp,
            filter: FbpFilter::RamLak,
            reducer: Box::new(SumReducer),
            image: Box::new(IdentityDenoiser),
        }
    }
}

/// `image(transform(projection(y)))`
pub fn dual_domain_run(op: &ProjectionOperator, cfg: &DualDomainConfig, y: &Sinogram) -> Result<Image> {
    y.check_same_geometry(op.geometry())?;
    let filtered = cfg.projection.filter(y)?;
    if filtered.geometry() != y.geometry() {
        return mismatch(format!("projection filter {} changed the geometry", cfg.projection.describe()));
    }
    let transformed = match cfg.transform {
        Transform::Bp => op.back_project(&filtered)?,
        Transform::Fbp => fbp(op, &filtered, cfg.filter)?,
        Transform::Vvbp => {
            let stack = vvbp_stack(op, &filtered, cfg.filter)?;
            cfg.reducer.reduce(&stack)?
        }
    };
    if transformed.grid() != op.grid() {
        return mismatch("transform output is off the operator grid");
    }
    let out = cfg.image.denoise(&transformed)?;
    if out.grid() != transformed.grid() {
        return mismatch(format!("image denoiser {} changed the grid", cfg.image.describe()));
    }
    Ok(out)
}
