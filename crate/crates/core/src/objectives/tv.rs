//! Total variation with forward differences and replicate boundary: the
//! difference across the last column (row) is zero.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Image, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvVariant {
    #[default]
    Anisotropic,
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvRegularizer {
    pub strength: f64,
    #[serde(default)]
    pub variant: TvVariant,
}

impl TvRegularizer {
    pub fn new(strength: f64, variant: TvVariant) -> Result<Self> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return invalid(format!("TV strength must be non-negative, got {strength}"));
        }
        Ok(Self { strength, variant })
    }
}

/// Inner iterations of the dual prox solver and its step, `1/8` being the
/// bound `1/||D||²` for the 2D forward-difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvProxConfig {
    pub iterations: usize,
    pub dual_step: f64,
}

impl Default for TvProxConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            dual_step: 0.125,
        }
    }
}

/// Forward differences `(d1, d2)` along x (columns) and y (rows).
pub fn gradient(grid: ImageGrid, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut d1 = vec![0.0; x.len()];
    let mut d2 = vec![0.0; x.len()];
    for j in 0..ny {
        for i in 0..nx {
            let p = j * nx + i;
            if i + 1 < nx {
                d1[p] = x[p + 1] - x[p];
            }
            if j + 1 < ny {
                d2[p] = x[p + nx] - x[p];
            }
        }
    }
    (d1, d2)
}

/// Adjoint of [`gradient`] (negative divergence).
pub fn gradient_adjoint(grid: ImageGrid, d1: &[f64], d2: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = vec![0.0; d1.len()];
    for j in 0..ny {
        for i in 0..nx {
            let p = j * nx + i;
            if i + 1 < nx {
                out[p] -= d1[p];
                out[p + 1] += d1[p];
            }
            if j + 1 < ny {
                out[p] -= d2[p];
                out[p + nx] += d2[p];
            }
        }
    }
    out
}

fn tv_of(variant: TvVariant, grid: ImageGrid, x: &[f64]) -> f64 {
    let (d1, d2) = gradient(grid, x);
    match variant {
        TvVariant::Anisotropic => d1.iter().zip(&d2).map(|(a, b)| a.abs() + b.abs()).sum(),
        TvVariant::Isotropic => d1.iter().zip(&d2).map(|(a, b)| a.hypot(*b)).sum(),
    }
}

/// Unweighted `TV(x)` (the strength is not applied).
pub fn tv_value(r: &TvRegularizer, x: &Image) -> f64 {
    tv_of(r.variant, x.grid(), x.values())
}

/// A subgradient of the unweighted TV, with `sign(0) = 0`.
pub fn tv_subgradient(r: &TvRegularizer, x: &Image) -> Image {
    let grid = x.grid();
    let (mut d1, mut d2) = gradient(grid, x.values());
    match r.variant {
        TvVariant::Anisotropic => {
            for v in d1.iter_mut().chain(d2.iter_mut()) {
                *v = sign(*v);
            }
        }
        TvVariant::Isotropic => {
            for (a, b) in d1.iter_mut().zip(d2.iter_mut()) {
                let m = a.hypot(*b);
                if m > 0.0 {
                    *a /= m;
                    *b /= m;
                } else {
                    *a = 0.0;
                    *b = 0.0;
                }
            }
        }
    }
    Image::with_values(grid, gradient_adjoint(grid, &d1, &d2))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Result of [`tv_prox`], including the objective after each accepted inner iterate.
#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub image: Image,
    pub objective_trace: Vec<f64>,
}

/// `argmin_v ½||v - x||² + step·λ·TV(v)` by projected gradient on the dual.
///
/// The primal iterate `v = x - τ Dᵀp` is only accepted when it does not raise
/// the primal objective, so the returned trace is non-increasing.
pub fn tv_prox(r: &TvRegularizer, x: &Image, step: f64, cfg: &TvProxConfig) -> Result<ProxOutput> {
    if !(step > 0.0) {
        return invalid(format!("prox step must be positive, got {step}"));
    }
    let tau = step * r.strength;
    let grid = x.grid();
    let objective = |v: &[f64]| -> f64 {
        let fit: f64 = v.iter().zip(x.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * fit + tau * tv_of(r.variant, grid, v)
    };
    let mut best = x.values().to_vec();
    let mut best_obj = objective(&best);
    let mut trace = vec![best_obj];
    if tau == 0.0 {
        return Ok(ProxOutput {
            image: x.clone(),
            objective_trace: trace,
        });
    }
    let n = x.values().len();
    let (mut p1, mut p2) = (vec![0.0; n], vec![0.0; n]);
    let mut v = best.clone();
    let gamma = cfg.dual_step / tau;
    for _ in 0..cfg.iterations {
        let (g1, g2) = gradient(grid, &v);
        for k in 0..n {
            p1[k] += gamma * g1[k];
            p2[k] += gamma * g2[k];
        }
        match r.variant {
            TvVariant::Anisotropic => {
                for q in p1.iter_mut().chain(p2.iter_mut()) {
                    *q = q.clamp(-1.0, 1.0);
                }
            }
            TvVariant::Isotropic => {
                for (a, b) in p1.iter_mut().zip(p2.iter_mut()) {
                    let m = a.hypot(*b);
                    if m > 1.0 {
                        *a /= m;
                        *b /= m;
                    }
                }
            }
        }
        let dtp = gradient_adjoint(grid, &p1, &p2);
        for k in 0..n {
            v[k] = x.values()[k] - tau * dtp[k];
        }
        let obj = objective(&v);
        if obj <= best_obj {
            best_obj = obj;
            best.copy_from_slice(&v);
            trace.push(obj);
        }
    }
    Ok(ProxOutput {
        image: Image::with_values(grid, best),
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(nx: usize, ny: usize) -> ImageGrid {
        ImageGrid::new(nx, ny, 1.0).unwrap()
    }

    #[test]
    fn constant_image_has_zero_tv() {
        let x = Image::filled(grid(7, 5), 0.3);
        for v in [TvVariant::Anisotropic, TvVariant::Isotropic] {
            assert_eq!(tv_value(&TvRegularizer::new(1.0, v).unwrap(), &x), 0.0);
        }
    }

    #[test]
    fn vertical_step() {
        let (h, l) = (0.7, 9);
        let g = grid(6, l);
        let x = Image::from_fn(g, |x, _| if x > 0.0 { h } else { 0.0 });
        let tv = tv_value(&TvRegularizer::new(1.0, TvVariant::Anisotropic).unwrap(), &x);
        assert!((tv - h * l as f64).abs() < 1e-12);
    }

    #[test]
    fn isotropic_below_anisotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x = Image::from_fn(grid(9, 8), |_, _| rng.random_range(-1.0..1.0));
            let a = tv_value(&TvRegularizer::new(1.0, TvVariant::Anisotropic).unwrap(), &x);
            let i = tv_value(&TvRegularizer::new(1.0, TvVariant::Isotropic).unwrap(), &x);
            assert!(i <= a);
        }
    }

    #[test]
    fn gradient_adjoint_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = grid(6, 5);
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p1: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p2: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (d1, d2) = gradient(g, &x);
        let lhs = dot(&d1, &p1) + dot(&d2, &p2);
        let rhs = dot(&x, &gradient_adjoint(g, &p1, &p2));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn prox_with_zero_strength_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Image::from_fn(grid(5, 5), |_, _| rng.random::<f64>());
        let r = TvRegularizer::new(0.0, TvVariant::Anisotropic).unwrap();
        let out = tv_prox(&r, &x, 1.0, &TvProxConfig::default()).unwrap();
        assert_eq!(out.image, x);
    }

    #[test]
    fn prox_keeps_constant_image() {
        let x = Image::filled(grid(5, 4), 0.02);
        let r = TvRegularizer::new(1.0, TvVariant::Isotropic).unwrap();
        let out = tv_prox(&r, &x, 0.5, &TvProxConfig::default()).unwrap();
        assert_eq!(out.image, x);
    }

    #[test]
    fn two_pixel_shrinkage() {
        let x = Image::from_vec(grid(2, 1), vec![0.0, 1.0]).unwrap();
        let r = TvRegularizer::new(1.0, TvVariant::Anisotropic).unwrap();
        let out = tv_prox(&r, &x, 0.2, &TvProxConfig::default()).unwrap();
        let v = out.image.values();
        assert!((v[0] - 0.2).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12, "{v:?}");
    }

    #[test]
    fn bad_step_rejected() {
        let x = Image::filled(grid(2, 2), 0.0);
        let r = TvRegularizer::new(1.0, TvVariant::Anisotropic).unwrap();
        assert!(tv_prox(&r, &x, 0.0, &TvProxConfig::default()).is_err());
        assert!(TvRegularizer::new(-1.0, TvVariant::Anisotropic).is_err());
    }
}
