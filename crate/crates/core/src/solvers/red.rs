//! Regularization by denoising with a proximal data half-step.

use super::cg::{conjugate_gradient, CgOutput};
use super::config::{RedMode, SolverConfig};
use super::denoiser::{checked_denoise, Denoiser};
use super::mbir::{check_start, SolveOutput};
use crate::error::Result;
use crate::geometry::Image;
use crate::linalg::dot;
use crate::objectives::WlsFidelity;

/// `½ xᵀ(x - D(x))`, the RED prior without its weight λ.
pub fn red_regularizer_value(d: &dyn Denoiser, x: &Image) -> Result<f64> {
    let dx = checked_denoise(d, x)?;
    let r: Vec<f64> = x.values().iter().zip(dx.values()).map(|(a, b)| a - b).collect();
    Ok(0.5 * dot(x.values(), &r))
}

#[derive(Debug, Clone)]
pub struct RedStep {
    /// `x^{t+½} = argmin Φ(x) + (α/2)||x - xᵗ||²`
    pub half: Image,
    pub next: Image,
    pub cg: CgOutput,
}

/// One outer iteration: the CG half-step followed by the denoising update.
/// `rhs` is `AᵀWỹ`, passed in so repeated steps do not recompute it.
pub fn red_step(
    f: &WlsFidelity<'_>,
    rhs: &[f64],
    d: &dyn Denoiser,
    cfg: &SolverConfig,
    x: &Image,
) -> Result<RedStep> {
    let grid = x.grid();
    let a = cfg.alpha;
    let b: Vec<f64> = rhs.iter().zip(x.values()).map(|(r, xi)| r + a * xi).collect();
    let cg = conjugate_gradient(
        |p| {
            let mut m = f.normal(p)?;
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += a * pi;
            }
            Ok(m)
        },
        &b,
        x.values(),
        cfg.cg_iters,
        cfg.cg_tol,
    )?;
    let half = Image::from_vec(grid, cg.x.clone())?;
    let next = match cfg.red_mode {
        RedMode::Direct => checked_denoise(d, &half)?,
        RedMode::Convex => {
            let w = cfg.convex_weight();
            if w == 0.0 {
                half.clone()
            } else {
                let dh = checked_denoise(d, &half)?;
                let v = half
                    .values()
                    .iter()
                    .zip(dh.values())
                    .map(|(h, g)| (1.0 - w) * h + w * g)
                    .collect();
                Image::from_vec(grid, v)?
            }
        }
    };
    Ok(RedStep { half, next, cg })
}

/// `n_iters` RED iterations from `x0`. The recorded objective is the WLS
/// fidelity of each iterate.
pub fn red_reconstruct(f: &WlsFidelity<'_>, d: &dyn Denoiser, cfg: &SolverConfig, x0: &Image) -> Result<SolveOutput> {
    cfg.validate_red()?;
    check_start(f, x0)?;
    let rhs = f.rhs()?;
    let mut x = x0.clone();
    let mut trace = vec![f.value(&x)?];
    let mut unconverged = 0;
    for _ in 0..cfg.n_iters {
        let step = red_step(f, &rhs, d, cfg, &x)?;
        if !step.cg.converged {
            unconverged += 1;
        }
        x = step.next;
        trace.push(f.value(&x)?);
    }
    Ok(SolveOutput {
        image: x,
        objective: trace,
        primal_residual: vec![],
        cg_unconverged: unconverged,
    })
}
