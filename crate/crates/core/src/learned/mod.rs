//! Differentiable denoisers, the reverse-mode tape and the unrolled network.

mod conv;
pub mod gradcheck;
pub mod net;
pub mod optim;
pub mod tape;
pub mod train;
pub mod unrolled;

pub use gradcheck::{check_gradient, randomized_params, GradCheck};
pub use net::{param_init, zero_output_layer, ConvDenoiser, ConvNet, DEFAULT_LAYERS, DEFAULT_SCALE, DEFAULT_WIDTH};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{Gradients, Shape, Tape, Var, SCALAR};
pub use train::{fit, mean_train_loss, SampleObjective, TrainConfig, TrainOutcome};
pub use unrolled::{UnrolledInput, UnrolledNet, UnrolledSpec, DEFAULT_STAGES};
