use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objectives::TvProxConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `1 / L̂` from a power-method estimate of `||AᵀWA||`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedMode {
    /// `xᵗ⁺¹ = D(x^{t+½})`
    #[default]
    Direct,
    /// `xᵗ⁺¹ = (1 - w) x^{t+½} + w D(x^{t+½})` with `w = λ / (β + λ)`
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub n_iters: usize,
    pub step: StepSize,
    pub rho: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub red_mode: RedMode,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub tv_prox: TvProxConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_iters: 50,
            step: StepSize::Auto,
            rho: 1.0,
            lambda: 0.02,
            alpha: 1.0,
            beta: 1.0,
            red_mode: RedMode::Direct,
            cg_iters: 30,
            cg_tol: 1e-8,
            tv_prox: TvProxConfig::default(),
        }
    }
}

impl SolverConfig {
    /// Checks shared by every solver. `n_iters = 0` is accepted and makes
    /// every solver return its starting image.
    pub fn validate(&self) -> Result<()> {
        if let StepSize::Fixed(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return invalid(format!("step size must be positive, got {s}"));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.cg_tol >= 0.0) {
            return invalid("CG tolerance must be non-negative");
        }
        if !(self.tv_prox.dual_step > 0.0) {
            return invalid("TV prox dual step must be positive");
        }
        Ok(())
    }

    pub fn validate_admm(&self) -> Result<()> {
        self.validate()?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return invalid(format!("ADMM penalty rho must be positive, got {}", self.rho));
        }
        Ok(())
    }

    pub fn validate_red(&self) -> Result<()> {
        self.validate()?;
        if self.red_mode == RedMode::Convex && !(self.beta + self.lambda > 0.0) {
            return invalid("convex RED update needs beta + lambda > 0");
        }
        Ok(())
    }

    /// Weight of the denoiser output in the convex RED update.
    pub fn convex_weight(&self) -> f64 {
        self.lambda / (self.beta + self.lambda)
    }
}
