//! Beer–Lambert physics and low-dose sinogram simulation.
//!
//! A low-dose measurement is simulated from a normal-dose line integral `y`
//! by adding Gaussian noise with variance
//!
//! ```text
//! (1-a)/a * e^y/I0 * (1 + (1+a)/a * σe² e^y/I0)
//! ```
//!
//! where `a` is the dose fraction and `σe²` the electronic noise variance.
//!
//! Noise draws are keyed by bin: bin `r` uses a ChaCha8 stream seeded with
//! the model seed and stream number `r`, and takes one standard normal from
//! it (ziggurat sampler of `rand_distr`). Realizations therefore do not
//! depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Sinogram;

/// Count floor used when a measured intensity is not positive.
pub const DEFAULT_COUNT_FLOOR: f64 = 0.1;
/// Lower bound on estimated per-bin variances.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub i0: f64,
    pub dose_factor: f64,
    pub sigma_e2: f64,
    pub seed: u64,
    #[serde(default = "default_count_floor")]
    pub count_floor: f64,
    #[serde(default = "default_variance_floor")]
    pub variance_floor: f64,
}

fn default_count_floor() -> f64 {
    DEFAULT_COUNT_FLOOR
}

fn default_variance_floor() -> f64 {
    DEFAULT_VARIANCE_FLOOR
}

impl NoiseModel {
    pub fn new(i0: f64, dose_factor: f64, sigma_e2: f64, seed: u64) -> Result<Self> {
        let m = Self {
            i0,
            dose_factor,
            sigma_e2,
            seed,
            count_floor: DEFAULT_COUNT_FLOOR,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return invalid(format!("i0 must be positive, got {}", self.i0));
        }
        if !(self.dose_factor > 0.0 && self.dose_factor <= 1.0) {
            return invalid(format!("dose factor must lie in (0, 1], got {}", self.dose_factor));
        }
        if !(self.sigma_e2 >= 0.0 && self.sigma_e2.is_finite()) {
            return invalid(format!("sigma_e2 must be non-negative, got {}", self.sigma_e2));
        }
        if !(self.count_floor > 0.0) || !(self.variance_floor > 0.0) {
            return invalid("count and variance floors must be positive");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Variance of the noise added to a bin whose normal-dose line integral is `y`.
    pub fn added_variance(&self, y: f64) -> f64 {
        let a = self.dose_factor;
        let flux = y.exp() / self.i0;
        (1.0 - a) / a * flux * (1.0 + (1.0 + a) / a * self.sigma_e2 * flux)
    }
}

/// Detected photon count `i0 * exp(-p)`.
pub fn beer_lambert(i0: f64, p: f64) -> f64 {
    i0 * (-p).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogResult {
    pub value: f64,
    /// The count was not positive and was replaced by the floor.
    pub clamped: bool,
}

/// Line integral `-ln(i / i0)`, with non-positive counts raised to `floor`.
pub fn log_transform(i: f64, i0: f64, floor: f64) -> LogResult {
    let clamped = !(i > 0.0);
    let i = if clamped { floor } else { i };
    LogResult {
        value: -(i / i0).ln(),
        clamped,
    }
}

fn bin_normal(seed: u64, bin: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(bin as u64);
    StandardNormal.sample(&mut rng)
}

/// Adds low-dose noise to every bin of `y`.
pub fn simulate_low_dose(y: &Sinogram, model: &NoiseModel) -> Result<Sinogram> {
    model.validate()?;
    let values: Vec<f64> = y
        .values()
        .par_iter()
        .enumerate()
        .map(|(r, &v)| {
            let var = model.added_variance(v);
            if var > 0.0 {
                v + var.sqrt() * bin_normal(model.seed, r)
            } else {
                v
            }
        })
        .collect();
    Sinogram::from_vec(y.geometry_arc().clone(), values)
}

/// Plug-in per-bin variances: the added-noise variance expression evaluated
/// at the measured (noisy) line integral, floored at `model.variance_floor`.
pub fn estimate_variances(y_noisy: &Sinogram, model: &NoiseModel) -> Result<Vec<f64>> {
    model.validate()?;
    Ok(y_noisy
        .values()
        .iter()
        .map(|&v| {
            let var = model.added_variance(v);
            if var.is_finite() {
                var.max(model.variance_floor)
            } else {
                f64::MAX
            }
        })
        .collect())
}

/// Inverse variances, the diagonal of `Σ⁻¹`.
pub fn wls_weights(y_noisy: &Sinogram, model: &NoiseModel) -> Result<Vec<f64>> {
    Ok(estimate_variances(y_noisy, model)?
        .into_iter()
        .map(|v| 1.0 / v)
        .collect())
}
