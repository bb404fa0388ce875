//! Low-dose fan-beam CT: simulation, analytic and model-based
//! reconstruction, denoiser-driven solvers and an unrolled network.

pub mod error;
pub mod geometry;
pub mod learned;
pub mod linalg;
pub mod noise;
pub mod objectives;
pub mod phantom;
pub mod pipeline;
pub mod projector;
pub mod solvers;

pub use error::{Error, Result};
pub use geometry::{FanBeamGeometry, Image, ImageGrid, LinearOperator, Sinogram};
