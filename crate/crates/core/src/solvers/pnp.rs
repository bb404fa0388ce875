//! Training denoisers for RED in the iteration-independent and
//! iteration-dependent fashions, and running the trained loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SolverConfig;
use super::denoiser::{Denoiser, TrainableDenoiser};
use super::red::red_step;
use crate::error::{invalid, Result};
use crate::geometry::{Image, LinearOperator, Sinogram};
use crate::learned::{fit, SampleObjective, TrainConfig, TrainOutcome};
use crate::objectives::WlsFidelity;
use crate::projector::{fbp, FbpFilter, ProjectionOperator};

/// Low-dose measurements with their WLS weights and the clean image.
#[derive(Debug, Clone)]
pub struct DenoiserSample {
    pub sinogram: Sinogram,
    pub weights: Vec<f64>,
    pub target: Image,
}

/// A trainable denoiser pinned to one parameter vector.
pub struct Pinned<'a> {
    pub denoiser: &'a dyn TrainableDenoiser,
    pub params: &'a [f64],
}

impl Denoiser for Pinned<'_> {
    fn denoise(&self, x: &Image) -> Result<Image> {
        self.denoiser.denoise_with(self.params, x)
    }

    fn describe(&self) -> String {
        self.denoiser.describe()
    }
}

struct PairObjective<'a> {
    d: &'a dyn TrainableDenoiser,
    train: (&'a [Image], &'a [DenoiserSample]),
    val: (&'a [Image], &'a [DenoiserSample]),
}

impl SampleObjective for PairObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.0.len()
    }

    fn n_val(&self) -> usize {
        self.val.0.len()
    }

    fn train_loss_and_grad(&self, params: &[f64], i: usize) -> Result<(f64, Vec<f64>)> {
        self.d.loss_and_grad(params, &self.train.0[i], &self.train.1[i].target)
    }

    fn train_loss(&self, params: &[f64], i: usize) -> Result<f64> {
        crate::objectives::mse(&self.d.denoise_with(params, &self.train.0[i])?, &self.train.1[i].target)
    }

    fn val_loss(&self, params: &[f64], i: usize) -> Result<f64> {
        crate::objectives::mse(&self.d.denoise_with(params, &self.val.0[i])?, &self.val.1[i].target)
    }
}

/// `x⁰ᵢ = FBP(ỹᵢ)` for every sample.
pub fn fbp_init(op: &ProjectionOperator, samples: &[DenoiserSample], filter: FbpFilter) -> Result<Vec<Image>> {
    samples.par_iter().map(|s| fbp(op, &s.sinogram, filter)).collect()
}

/// Mean `MSE(D_θ(xᵢ), x̂ᵢ)`.
pub fn mean_denoising_loss(
    d: &dyn TrainableDenoiser,
    params: &[f64],
    inputs: &[Image],
    samples: &[DenoiserSample],
) -> Result<f64> {
    let losses: Result<Vec<f64>> = inputs
        .par_iter()
        .zip(samples)
        .map(|(x, s)| crate::objectives::mse(&d.denoise_with(params, x)?, &s.target))
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn check_samples(op: &ProjectionOperator, samples: &[DenoiserSample]) -> Result<()> {
    for s in samples {
        s.sinogram.check_same_geometry(op.geometry())?;
        if s.target.grid() != op.grid() {
            return invalid("target image does not match the operator grid");
        }
    }
    Ok(())
}

fn fit_stage(
    d: &dyn TrainableDenoiser,
    init: Vec<f64>,
    train: (&[Image], &[DenoiserSample]),
    val: (&[Image], &[DenoiserSample]),
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let obj = PairObjective { d, train, val };
    fit(&obj, init, &d.decay_mask(), cfg)
}

/// Fits one θ on `(FBP(ỹᵢ), x̂ᵢ)` starting from the denoiser's current
/// parameters and stores the selected θ back into `d`.
pub fn train_denoiser_independent(
    op: &ProjectionOperator,
    train: &[DenoiserSample],
    val: &[DenoiserSample],
    d: &mut dyn TrainableDenoiser,
    cfg: &TrainConfig,
    filter: FbpFilter,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return invalid("training set is empty");
    }
    check_samples(op, train)?;
    check_samples(op, val)?;
    let x_train = fbp_init(op, train, filter)?;
    let x_val = fbp_init(op, val, filter)?;
    let out = fit_stage(&*d, d.params().to_vec(), (&x_train, train), (&x_val, val), cfg)?;
    d.set_params(out.params.clone())?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub outcome: TrainOutcome,
    /// Mean training loss of θᵗ on the stage inputs xᵗᵢ.
    pub train_loss: f64,
    /// Mean training loss of θ⁰ on the same inputs.
    pub theta0_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DependentOutcome {
    pub stages: Vec<StageReport>,
}

impl DependentOutcome {
    pub fn params(&self) -> Vec<Vec<f64>> {
        self.stages.iter().map(|s| s.outcome.params.clone()).collect()
    }
}

/// Advances every sample by one RED outer iteration with θ.
fn advance(
    op: &ProjectionOperator,
    d: &dyn TrainableDenoiser,
    params: &[f64],
    xs: &[Image],
    samples: &[DenoiserSample],
    cfg: &SolverConfig,
) -> Result<Vec<Image>> {
    let pinned = Pinned { denoiser: d, params };
    xs.par_iter()
        .zip(samples)
        .map(|(x, s)| {
            let f = WlsFidelity::new(op, s.sinogram.clone(), s.weights.clone())?;
            Ok(red_step(&f, &f.rhs()?, &pinned, cfg, x)?.next)
        })
        .collect()
}

/// For `t = 0 … N_t-1`: fit θᵗ on the current iterates xᵗᵢ, then advance
/// every sample by one RED iteration using θᵗ. Stage `t > 0` starts from
/// θᵗ⁻¹. The denoiser ends holding the last stage's parameters.
pub fn train_denoiser_dependent(
    op: &ProjectionOperator,
    train: &[DenoiserSample],
    val: &[DenoiserSample],
    d: &mut dyn TrainableDenoiser,
    solver: &SolverConfig,
    cfg: &TrainConfig,
    filter: FbpFilter,
) -> Result<DependentOutcome> {
    if train.is_empty() {
        return invalid("training set is empty");
    }
    if solver.n_iters == 0 {
        return invalid("iteration-dependent training needs at least one stage");
    }
    solver.validate_red()?;
    check_samples(op, train)?;
    check_samples(op, val)?;
    let mut x_train = fbp_init(op, train, filter)?;
    let mut x_val = fbp_init(op, val, filter)?;
    let theta0 = d.params().to_vec();
    let mut current = theta0.clone();
    let mut stages = Vec::with_capacity(solver.n_iters);
    for t in 0..solver.n_iters {
        let outcome = fit_stage(&*d, current, (&x_train, train), (&x_val, val), cfg)?;
        let train_loss = mean_denoising_loss(&*d, &outcome.params, &x_train, train)?;
        let theta0_loss = mean_denoising_loss(&*d, &theta0, &x_train, train)?;
        current = outcome.params.clone();
        if t + 1 < solver.n_iters {
            x_train = advance(op, &*d, &current, &x_train, train, solver)?;
            x_val = advance(op, &*d, &current, &x_val, val, solver)?;
        }
        stages.push(StageReport {
            outcome,
            train_loss,
            theta0_loss,
        });
    }
    d.set_params(current)?;
    Ok(DependentOutcome { stages })
}

/// Parameters used inside the RED loop at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PnpParams {
    Shared(Vec<f64>),
    PerIteration(Vec<Vec<f64>>),
}

/// Runs `n_iters` RED iterations from the FBP image for each measurement
/// and returns `x^{N_t}`.
pub fn pnp_run(
    op: &ProjectionOperator,
    inputs: &[(Sinogram, Vec<f64>)],
    d: &dyn TrainableDenoiser,
    params: &PnpParams,
    cfg: &SolverConfig,
    filter: FbpFilter,
) -> Result<Vec<Image>> {
    cfg.validate_red()?;
    if let PnpParams::PerIteration(list) = params {
        if list.len() != cfg.n_iters {
            return invalid(format!(
                "{} per-iteration parameter sets for {} iterations",
                list.len(),
                cfg.n_iters
            ));
        }
    }
    inputs
        .par_iter()
        .map(|(y, w)| {
            let f = WlsFidelity::new(op, y.clone(), w.clone())?;
            let rhs = f.rhs()?;
            let mut x = fbp(op, y, filter)?;
            for t in 0..cfg.n_iters {
                let theta = match params {
                    PnpParams::Shared(p) => p.as_slice(),
                    PnpParams::PerIteration(list) => list[t].as_slice(),
                };
                let pinned = Pinned { denoiser: d, params: theta };
                x = red_step(&f, &rhs, &pinned, cfg, &x)?.next;
            }
            Ok(x)
        })
        .collect()
}
