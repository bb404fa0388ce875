//! Central finite-difference checks of reverse-mode gradients.
//!
//! ReLU networks are piecewise smooth, so a difference quotient is only
//! meaningful when neither probe crosses a kink. A check therefore compares
//! the rectifier sign pattern at `θ ± h·eᵢ` with the one at `θ` and declines
//! the whole instance when any probe changes it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{param_init, ConvNet};
use crate::error::{invalid, Result};

/// Xavier kernels in every layer and biases from `U(-0.5, 0.5)`, so that
/// no rectifier input sits exactly at zero on a flat background.
pub fn randomized_params(net: &ConvNet, seed: u64) -> Vec<f64> {
    let mut p = param_init(net, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let mask = net.kernel_mask();
    for (v, k) in p.iter_mut().zip(mask) {
        if !k {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|fd - g| / max(|fd|, |g|, floor)` over all components.
    pub worst_rel: f64,
    pub worst_index: usize,
}

/// Compares `analytic` with central differences of `loss` at every
/// component of `params`. Returns `None` if some probe crosses a kink.
///
/// The denominator floor is `1e-6 · max|g|`, so components whose gradient
/// is zero to rounding are compared on the scale of the whole gradient.
pub fn check_gradient(
    loss: impl Fn(&[f64]) -> Result<f64>,
    pattern: impl Fn(&[f64]) -> Result<Vec<bool>>,
    params: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<Option<GradCheck>> {
    if analytic.len() != params.len() {
        return invalid("gradient length does not match the parameters");
    }
    if !(h > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let base = pattern(params)?;
    let floor = 1e-6 * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut probe = params.to_vec();
    let mut report = GradCheck {
        checked: 0,
        worst_rel: 0.0,
        worst_index: 0,
    };
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        if pattern(&probe)? != base {
            return Ok(None);
        }
        let up = loss(&probe)?;
        probe[i] = params[i] - h;
        if pattern(&probe)? != base {
            return Ok(None);
        }
        let down = loss(&probe)?;
        probe[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        let g = analytic[i];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(floor).max(f64::MIN_POSITIVE);
        if rel > report.worst_rel {
            report.worst_rel = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(Some(report))
}
