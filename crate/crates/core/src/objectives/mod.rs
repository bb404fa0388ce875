//! Data fidelity, regularizers and training losses.

pub mod losses;
pub mod tv;
mod wls;

pub use losses::{
    edge_incoherence, mae, mse, projection_consistency_loss, ssim, tv_loss, ConsistencyMode, LossInputs,
    LossKind, LossSpec, LossTerm,
};
pub use tv::{tv_prox, tv_subgradient, tv_value, ProxOutput, TvProxConfig, TvRegularizer, TvVariant};
pub use wls::{WlsFidelity, POWER_ITERATIONS};
