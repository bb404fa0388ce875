//! Gradient descent, ADMM and RED reconstruction, plus the denoiser
//! training regimes built on RED.

mod cg;
mod config;
mod denoiser;
mod mbir;
mod pnp;
mod red;

pub use cg::{conjugate_gradient, CgOutput};
pub use config::{RedMode, SolverConfig, StepSize};
pub use denoiser::{Denoiser, IdentityDenoiser, TrainableDenoiser, TvDenoiser};
pub use mbir::{
    admm_reconstruct, admm_with_prior, gd_reconstruct, normal_equations_solve, resolve_step, AdmmPrior, AdmmState,
    SolveOutput, DIVERGENCE_PATIENCE,
};
pub use pnp::{
    fbp_init, mean_denoising_loss, pnp_run, train_denoiser_dependent, train_denoiser_independent, DenoiserSample,
    DependentOutcome, Pinned, PnpParams, StageReport,
};
pub use red::{red_reconstruct, red_regularizer_value, red_step, RedStep};
