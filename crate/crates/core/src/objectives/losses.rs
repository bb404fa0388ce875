//! Image-quality losses for training and evaluation.

use serde::{Deserialize, Serialize};

use super::tv::{tv_value, TvRegularizer, TvVariant};
use crate::error::{invalid, mismatch, Result};
use crate::geometry::{Image, ImageGrid, LinearOperator, Sinogram};

pub fn mse(x: &Image, reference: &Image) -> Result<f64> {
    x.check_same_grid(reference)?;
    Ok(mean_sq(x.values(), reference.values()))
}

pub fn mae(x: &Image, reference: &Image) -> Result<f64> {
    x.check_same_grid(reference)?;
    Ok(mean_abs(x.values(), reference.values()))
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Anisotropic TV with unit strength, used as an auxiliary loss.
pub fn tv_loss(x: &Image) -> f64 {
    tv_value(
        &TvRegularizer {
            strength: 1.0,
            variant: TvVariant::Anisotropic,
        },
        x,
    )
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

/// Separable Gaussian blur; near the border the truncated window is
/// renormalized to unit mass.
fn gaussian_blur(grid: ImageGrid, x: &[f64]) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|k| {
            let d = k as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let pass = |src: &[f64], n: usize, stride: usize, count: usize, step: usize| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            let base = line * step;
            for c in 0..n {
                let (mut acc, mut mass) = (0.0, 0.0);
                for (t, w) in taps.iter().enumerate() {
                    let pos = c as i64 + t as i64 - SSIM_RADIUS as i64;
                    if pos >= 0 && (pos as usize) < n {
                        acc += w * src[base + pos as usize * stride];
                        mass += w;
                    }
                }
                out[base + c * stride] = acc / mass;
            }
        }
        out
    };
    let (nx, ny) = (grid.nx(), grid.ny());
    let rows = pass(x, nx, 1, ny, nx);
    pass(&rows, ny, nx, nx, 1)
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5) and stabilizers
/// `C1 = (0.01 L)²`, `C2 = (0.03 L)²` for data range `L`.
pub fn ssim(x: &Image, reference: &Image, data_range: f64) -> Result<f64> {
    x.check_same_grid(reference)?;
    if !(data_range > 0.0) {
        return invalid(format!("SSIM data range must be positive, got {data_range}"));
    }
    let grid = x.grid();
    let a = x.values();
    let b = reference.values();
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| p * q).collect() };
    let mu_a = gaussian_blur(grid, a);
    let mu_b = gaussian_blur(grid, b);
    let aa = gaussian_blur(grid, &prod(a, a));
    let bb = gaussian_blur(grid, &prod(b, b));
    let ab = gaussian_blur(grid, &prod(a, b));
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let n = a.len();
    let mut total = 0.0;
    for k in 0..n {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let va = aa[k] - ma * ma;
        let vb = bb[k] - mb * mb;
        let cov = ab[k] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

/// Sobel gradient magnitude with replicate border.
pub fn sobel_magnitude(x: &Image) -> Vec<f64> {
    let grid = x.grid();
    let (nx, ny) = (grid.nx() as i64, grid.ny() as i64);
    let at = |i: i64, j: i64| x.get(i.clamp(0, nx - 1) as usize, j.clamp(0, ny - 1) as usize);
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..ny {
        for i in 0..nx {
            let gx = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i - 1, j) + at(i - 1, j + 1));
            let gy = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i, j - 1) + at(i + 1, j - 1));
            out.push(gx.hypot(gy));
        }
    }
    out
}

/// Mean absolute difference between Sobel edge maps.
pub fn edge_incoherence(x: &Image, reference: &Image) -> Result<f64> {
    x.check_same_grid(reference)?;
    Ok(mean_abs(&sobel_magnitude(x), &sobel_magnitude(reference)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    Mse,
    Mae,
}

/// Distance between `Ax` and a reference sinogram.
pub fn projection_consistency_loss(
    op: &dyn LinearOperator,
    x: &Image,
    y_ref: &Sinogram,
    mode: ConsistencyMode,
) -> Result<f64> {
    y_ref.check_same_geometry(op.geometry())?;
    let ax = op.apply(x)?;
    Ok(match mode {
        ConsistencyMode::Mse => mean_sq(ax.values(), y_ref.values()),
        ConsistencyMode::Mae => mean_abs(ax.values(), y_ref.values()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
    TvLoss,
    /// `1 - SSIM`
    SsimLoss,
    EdgeIncoherence,
    ProjectionConsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub kind: LossKind,
    pub weight: f64,
}

/// Weighted sum of loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub terms: Vec<LossTerm>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::single(LossKind::Mse)
    }
}

/// Data for evaluating a [`LossSpec`]; the projection pair is only needed
/// by the consistency term.
pub struct LossInputs<'a> {
    pub output: &'a Image,
    pub reference: &'a Image,
    pub projection: Option<(&'a dyn LinearOperator, &'a Sinogram)>,
}

impl LossSpec {
    pub fn single(kind: LossKind) -> Self {
        Self {
            terms: vec![LossTerm { kind, weight: 1.0 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.iter().any(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return invalid("loss weights must be non-negative");
        }
        if !self.terms.iter().any(|t| t.weight > 0.0) {
            return invalid("loss needs at least one positively weighted term");
        }
        Ok(())
    }

    pub fn evaluate(&self, inputs: &LossInputs<'_>) -> Result<f64> {
        self.validate()?;
        let (x, r) = (inputs.output, inputs.reference);
        let mut total = 0.0;
        for t in &self.terms {
            if t.weight == 0.0 {
                continue;
            }
            let v = match t.kind {
                LossKind::Mse => mse(x, r)?,
                LossKind::Mae => mae(x, r)?,
                LossKind::TvLoss => tv_loss(x),
                LossKind::SsimLoss => {
                    let range = (r.max() - r.min()).max(f64::MIN_POSITIVE);
                    1.0 - ssim(x, r, range)?
                }
                LossKind::EdgeIncoherence => edge_incoherence(x, r)?,
                LossKind::ProjectionConsistency => match inputs.projection {
                    Some((op, y)) => projection_consistency_loss(op, x, y, ConsistencyMode::Mse)?,
                    None => return mismatch("projection consistency loss needs an operator and sinogram"),
                },
            };
            total += t.weight * v;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, nx: usize, ny: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(ImageGrid::new(nx, ny, 1.0).unwrap(), |_, _| rng.random::<f64>())
    }

    #[test]
    fn identical_images() {
        let x = random(0, 13, 12);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert_eq!(mae(&x, &x).unwrap(), 0.0);
        assert_eq!(edge_incoherence(&x, &x).unwrap(), 0.0);
        assert!((ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset() {
        let x = random(1, 10, 10);
        let c = 0.3;
        let y = x.map(|v| v + c);
        assert!((mse(&y, &x).unwrap() - c * c).abs() < 1e-12);
        assert!((mae(&y, &x).unwrap() - c).abs() < 1e-12);
        assert!(edge_incoherence(&y, &x).unwrap() < 1e-12);
        let s = ssim(&x.map(|v| v + 5.0), &x, 1.0).unwrap();
        assert!(s < 0.5, "luminance term should drop SSIM, got {s}");
    }

    #[test]
    fn jensen_and_symmetry() {
        for seed in 0..10 {
            let a = random(seed, 12, 9);
            let b = random(seed + 100, 12, 9);
            let m = mse(&a, &b).unwrap();
            let e = mae(&a, &b).unwrap();
            assert!(m >= e * e);
            let s1 = ssim(&a, &b, 1.0).unwrap();
            let s2 = ssim(&b, &a, 1.0).unwrap();
            assert!((s1 - s2).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&s1));
            assert!(edge_incoherence(&a, &b).unwrap() >= 0.0);
        }
    }

    #[test]
    fn tv_loss_matches_tv_value() {
        let x = random(4, 8, 8);
        let r = TvRegularizer::new(1.0, TvVariant::Anisotropic).unwrap();
        assert_eq!(tv_loss(&x), tv_value(&r, &x));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = random(0, 4, 4);
        let b = random(0, 5, 4);
        assert!(mse(&a, &b).is_err());
        assert!(ssim(&a, &b, 1.0).is_err());
        assert!(edge_incoherence(&a, &b).is_err());
    }

    #[test]
    fn loss_spec_weights() {
        let a = random(0, 6, 6);
        let b = random(1, 6, 6);
        let spec = LossSpec {
            terms: vec![
                LossTerm { kind: LossKind::Mse, weight: 2.0 },
                LossTerm { kind: LossKind::Mae, weight: 0.5 },
            ],
        };
        let inputs = LossInputs { output: &a, reference: &b, projection: None };
        let want = 2.0 * mse(&a, &b).unwrap() + 0.5 * mae(&a, &b).unwrap();
        assert!((spec.evaluate(&inputs).unwrap() - want).abs() < 1e-15);
        let at_ref = LossInputs { output: &b, reference: &b, projection: None };
        assert!(spec.evaluate(&at_ref).unwrap() == 0.0);

        assert!(LossSpec { terms: vec![] }.validate().is_err());
        assert!(LossSpec { terms: vec![LossTerm { kind: LossKind::Mse, weight: -1.0 }] }
            .validate()
            .is_err());
        let needs_op = LossSpec::single(LossKind::ProjectionConsistency);
        assert!(needs_op.evaluate(&inputs).is_err());
    }
}
