//! Model-based iterative reconstruction of `Φ(x) + λ TV(x)`.

use super::cg::conjugate_gradient;
use super::config::{SolverConfig, StepSize};
use super::denoiser::{checked_denoise, Denoiser};
use crate::error::{mismatch, Error, Result};
use crate::geometry::Image;
use crate::linalg::{norm, sub};
use crate::objectives::{tv_prox, tv_subgradient, tv_value, TvRegularizer, WlsFidelity, POWER_ITERATIONS};

/// Consecutive objective increases that count as divergence.
pub const DIVERGENCE_PATIENCE: usize = 5;
/// Relative rises below this are rounding noise near convergence, not increases.
const RISE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub image: Image,
    /// Objective at the start and after every outer iteration.
    pub objective: Vec<f64>,
    /// `||x - v||` after every ADMM iteration; empty for other solvers.
    pub primal_residual: Vec<f64>,
    /// Inner CG solves that stopped on the iteration budget.
    pub cg_unconverged: usize,
}

pub(crate) fn check_start(f: &WlsFidelity<'_>, x0: &Image) -> Result<()> {
    if x0.grid() != f.operator().grid() {
        return mismatch("starting image does not match the operator grid");
    }
    Ok(())
}

fn objective(f: &WlsFidelity<'_>, r: &TvRegularizer, x: &Image) -> Result<f64> {
    let mut v = f.value(x)?;
    if r.strength > 0.0 {
        v += r.strength * tv_value(r, x);
    }
    Ok(v)
}

/// Resolves the configured step, estimating `1/L̂` when automatic.
pub fn resolve_step(f: &WlsFidelity<'_>, step: StepSize) -> Result<f64> {
    match step {
        StepSize::Fixed(s) => Ok(s),
        StepSize::Auto => {
            let l = f.lipschitz(POWER_ITERATIONS)?;
            if !(l > 0.0) {
                return Err(Error::InvalidArgument("normal operator is zero; no automatic step".into()));
            }
            Ok(1.0 / l)
        }
    }
}

/// Subgradient descent `x ← x - s(∇Φ(x) + λ ∂TV(x))`.
pub fn gd_reconstruct(f: &WlsFidelity<'_>, r: &TvRegularizer, cfg: &SolverConfig, x0: &Image) -> Result<SolveOutput> {
    cfg.validate()?;
    check_start(f, x0)?;
    let mut x = x0.clone();
    let mut trace = vec![objective(f, r, &x)?];
    if cfg.n_iters == 0 {
        return Ok(SolveOutput {
            image: x,
            objective: trace,
            primal_residual: vec![],
            cg_unconverged: 0,
        });
    }
    let step = resolve_step(f, cfg.step)?;
    let mut rising = 0;
    for it in 1..=cfg.n_iters {
        let mut g = f.gradient(&x)?;
        if r.strength > 0.0 {
            let s = tv_subgradient(r, &x);
            for (a, b) in g.values_mut().iter_mut().zip(s.values()) {
                *a += r.strength * b;
            }
        }
        for (xi, gi) in x.values_mut().iter_mut().zip(g.values()) {
            *xi -= step * gi;
        }
        let obj = objective(f, r, &x)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite(format!("objective at iteration {it}")));
        }
        let prev = *trace.last().expect("trace starts non-empty");
        rising = if obj - prev > RISE_TOLERANCE * prev.abs() { rising + 1 } else { 0 };
        trace.push(obj);
        if rising >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                iteration: it,
                from: trace[trace.len() - 1 - rising],
                to: obj,
            });
        }
    }
    Ok(SolveOutput {
        image: x,
        objective: trace,
        primal_residual: vec![],
        cg_unconverged: 0,
    })
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: Image,
    pub v: Image,
    pub u: Image,
}

/// The prior handled by the ADMM v-update.
#[derive(Clone, Copy)]
pub enum AdmmPrior<'a> {
    /// `v = argmin ½||v - z||² + (λ/ρ) TV(v)`
    Tv(&'a TvRegularizer),
    /// `v = D(z)`, a plug-and-play replacement of the TV prox.
    Denoiser(&'a dyn Denoiser),
}

pub fn admm_reconstruct(f: &WlsFidelity<'_>, r: &TvRegularizer, cfg: &SolverConfig, x0: &Image) -> Result<SolveOutput> {
    admm_with_prior(f, AdmmPrior::Tv(r), cfg, x0).map(|(out, _)| out)
}

/// ADMM on `Φ(x) + R(v)` subject to `x = v`:
///
/// ```text
/// x ← (AᵀWA + ρI)⁻¹ (AᵀWỹ + ρv - u)
/// v ← prox(x + u/ρ)
/// u ← u + ρ(x - v)
/// ```
pub fn admm_with_prior(
    f: &WlsFidelity<'_>,
    prior: AdmmPrior<'_>,
    cfg: &SolverConfig,
    x0: &Image,
) -> Result<(SolveOutput, AdmmState)> {
    cfg.validate_admm()?;
    check_start(f, x0)?;
    let grid = x0.grid();
    let rho = cfg.rho;
    let tv_obj = |x: &Image| -> Result<f64> {
        match prior {
            AdmmPrior::Tv(r) => objective(f, r, x),
            AdmmPrior::Denoiser(_) => f.value(x),
        }
    };
    let rhs0 = f.rhs()?;
    let mut state = AdmmState {
        x: x0.clone(),
        v: x0.clone(),
        u: Image::zeros(grid),
    };
    let mut trace = vec![tv_obj(&state.x)?];
    let mut primal = Vec::with_capacity(cfg.n_iters);
    let mut unconverged = 0;
    for _ in 0..cfg.n_iters {
        let b: Vec<f64> = rhs0
            .iter()
            .zip(state.v.values())
            .zip(state.u.values())
            .map(|((a, v), u)| a + rho * v - u)
            .collect();
        let cg = conjugate_gradient(
            |p| {
                let mut m = f.normal(p)?;
                for (mi, pi) in m.iter_mut().zip(p) {
                    *mi += rho * pi;
                }
                Ok(m)
            },
            &b,
            state.x.values(),
            cfg.cg_iters,
            cfg.cg_tol,
        )?;
        if !cg.converged {
            unconverged += 1;
        }
        state.x = Image::from_vec(grid, cg.x)?;
        let z: Vec<f64> = state
            .x
            .values()
            .iter()
            .zip(state.u.values())
            .map(|(x, u)| x + u / rho)
            .collect();
        let z = Image::from_vec(grid, z)?;
        state.v = match prior {
            AdmmPrior::Tv(r) => tv_prox(r, &z, 1.0 / rho, &cfg.tv_prox)?.image,
            AdmmPrior::Denoiser(d) => checked_denoise(d, &z)?,
        };
        let diff = sub(state.x.values(), state.v.values());
        for (u, d) in state.u.values_mut().iter_mut().zip(&diff) {
            *u += rho * d;
        }
        primal.push(norm(&diff));
        trace.push(tv_obj(&state.x)?);
    }
    Ok((
        SolveOutput {
            image: state.x.clone(),
            objective: trace,
            primal_residual: primal,
            cg_unconverged: unconverged,
        },
        state,
    ))
}

/// Solves the normal equations `AᵀWAx = AᵀWỹ` by CG. Used as a reference
/// point for the iterative solvers.
pub fn normal_equations_solve(f: &WlsFidelity<'_>, x0: &Image, max_iters: usize, tol: f64) -> Result<Image> {
    check_start(f, x0)?;
    let out = conjugate_gradient(|p| f.normal(p), &f.rhs()?, x0.values(), max_iters, tol)?;
    Image::from_vec(x0.grid(), out.x)
}
