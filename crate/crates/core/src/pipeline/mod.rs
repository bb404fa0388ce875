//! Dual-domain denoising workflow and the evaluation harness.

mod dual_domain;
mod metrics;

pub use dual_domain::{
    dual_domain_run, ChannelReducer, DualDomainConfig, GaussianSmoothing, IdentityFilter, SinogramFilter, SumReducer,
    Transform,
};
pub use metrics::{evaluate, psnr, MetricsReport, Psnr, SampleMetrics, PEAK_CONVENTION};
