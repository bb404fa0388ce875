//! Image-to-image denoisers as seen by the plug-and-play solvers.

use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::objectives::{tv_prox, TvProxConfig, TvRegularizer};

pub trait Denoiser: Send + Sync {
    fn denoise(&self, x: &Image) -> Result<Image>;

    fn describe(&self) -> String;
}

/// A denoiser with a flat parameter vector θ that can be fitted to pairs.
pub trait TrainableDenoiser: Denoiser {
    fn params(&self) -> &[f64];

    fn set_params(&mut self, params: Vec<f64>) -> Result<()>;

    /// Entries that weight decay applies to.
    fn decay_mask(&self) -> Vec<bool>;

    fn denoise_with(&self, params: &[f64], x: &Image) -> Result<Image>;

    /// `MSE(D_θ(x), target)` and its gradient with respect to θ.
    fn loss_and_grad(&self, params: &[f64], x: &Image, target: &Image) -> Result<(f64, Vec<f64>)>;
}

/// Output must be finite and on the input grid.
pub(crate) fn checked_denoise(d: &dyn Denoiser, x: &Image) -> Result<Image> {
    let out = d.denoise(x)?;
    if out.grid() != x.grid() {
        return Err(Error::DimensionMismatch(format!(
            "denoiser {} changed the image grid",
            d.describe()
        )));
    }
    if out.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("denoiser {} produced a non-finite pixel", d.describe())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(x.clone())
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

/// TV proximal map with a fixed step, usable as a classic plug-in prior.
#[derive(Debug, Clone, Copy)]
pub struct TvDenoiser {
    pub regularizer: TvRegularizer,
    pub step: f64,
    pub prox: TvProxConfig,
}

impl Denoiser for TvDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(tv_prox(&self.regularizer, x, self.step, &self.prox)?.image)
    }

    fn describe(&self) -> String {
        format!("tv(strength={}, step={})", self.regularizer.strength, self.step)
    }
}
