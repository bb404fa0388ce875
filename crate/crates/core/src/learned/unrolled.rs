//! Unrolled gradient descent with a learned regularizer per stage:
//!
//! ```text
//! x⁰ = FBP(y)
//! xᵗ⁺¹ = xᵗ - αᵗ (AᵀW(Axᵗ - y) + Gᵗ(xᵗ))
//! ```
//!
//! The step is stored as `γᵗ = αᵗ·L̂`, with `L̂` the power-method estimate of
//! `||AᵀWA||` for the sample, so `γᵗ = 1` is the classic `1/L̂` step. The
//! regularizer is `Gᵗ(x) = L̂·c·Nᵗ(x/c)` with a plain conv net `Nᵗ`, which
//! keeps its image-domain effect `γᵗ·c·Nᵗ` independent of the weight scale.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::net::{check_finite, param_init, zero_output_layer, ConvNet, DEFAULT_SCALE};
use super::tape::{Tape, Var};
use super::train::{fit, SampleObjective, TrainConfig, TrainOutcome};
use crate::error::{invalid, Result};
use crate::geometry::{Image, LinearOperator, Sinogram};
use crate::objectives::{WlsFidelity, POWER_ITERATIONS};
use crate::projector::{fbp, FbpFilter, ProjectionOperator};

pub const DEFAULT_STAGES: usize = 5;

/// Per-sample data the network consumes: measurements, WLS weights, the
/// Lipschitz estimate and the FBP starting image.
#[derive(Debug, Clone)]
pub struct UnrolledInput {
    pub sinogram: Sinogram,
    pub weights: Vec<f64>,
    pub lipschitz: f64,
    pub init: Image,
}

impl UnrolledInput {
    pub fn prepare(op: &ProjectionOperator, sinogram: Sinogram, weights: Vec<f64>, filter: FbpFilter) -> Result<Self> {
        let f = WlsFidelity::new(op, sinogram.clone(), weights.clone())?;
        let lipschitz = f.lipschitz(POWER_ITERATIONS)?;
        if !(lipschitz > 0.0) {
            return invalid("system has a zero normal operator");
        }
        let init = fbp(op, &sinogram, filter)?;
        Ok(Self {
            sinogram,
            weights,
            lipschitz,
            init,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrolledSpec {
    pub stages: usize,
    pub net: ConvNet,
    pub scale: f64,
}

pub struct UnrolledNet {
    op: Arc<ProjectionOperator>,
    spec: UnrolledSpec,
    params: Vec<f64>,
}

impl UnrolledNet {
    fn check_spec(spec: &UnrolledSpec) -> Result<()> {
        if spec.stages == 0 {
            return invalid("an unrolled net needs at least one stage");
        }
        let c = spec.net.channels();
        if c[0] != 1 || c[c.len() - 1] != 1 {
            return invalid("regularizer nets must map one channel to one channel");
        }
        if !(spec.scale > 0.0) {
            return invalid("regularizer scale must be positive");
        }
        Ok(())
    }

    /// Unit steps, random hidden layers and zero output layers, so the
    /// untrained net performs classic WLS gradient descent.
    pub fn new(op: Arc<ProjectionOperator>, stages: usize, net: ConvNet, seed: u64) -> Result<Self> {
        let spec = UnrolledSpec {
            stages,
            net,
            scale: DEFAULT_SCALE,
        };
        Self::check_spec(&spec)?;
        let mut params = Vec::new();
        for t in 0..stages {
            params.push(1.0);
            let mut g = param_init(&spec.net, seed.wrapping_add(t as u64));
            zero_output_layer(&spec.net, &mut g);
            params.extend(g);
        }
        Ok(Self { op, spec, params })
    }

    pub fn with_params(op: Arc<ProjectionOperator>, spec: UnrolledSpec, params: Vec<f64>) -> Result<Self> {
        Self::check_spec(&spec)?;
        let want = spec.stages * (1 + spec.net.param_count());
        if params.len() != want {
            return invalid(format!("{} parameters for an unrolled net with {want}", params.len()));
        }
        check_finite(&params)?;
        Ok(Self { op, spec, params })
    }

    pub fn spec(&self) -> &UnrolledSpec {
        &self.spec
    }

    pub fn operator(&self) -> &Arc<ProjectionOperator> {
        &self.op
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return invalid("parameter length changed");
        }
        check_finite(&params)?;
        self.params = params;
        Ok(())
    }

    fn stage_len(&self) -> usize {
        1 + self.spec.net.param_count()
    }

    /// Offset of stage `t` in the flat parameter vector; entry 0 is `γᵗ`.
    pub fn stage_offset(&self, t: usize) -> usize {
        t * self.stage_len()
    }

    /// Weight decay applies to conv kernels only.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.params.len());
        for _ in 0..self.spec.stages {
            m.push(false);
            m.extend(self.spec.net.kernel_mask());
        }
        m
    }

    fn check_input(&self, input: &UnrolledInput) -> Result<()> {
        input.sinogram.check_same_geometry(self.op.geometry())?;
        if input.init.grid() != self.op.grid() {
            return invalid("initial image does not match the operator grid");
        }
        if input.weights.len() != input.sinogram.values().len() {
            return invalid("weight count does not match the sinogram");
        }
        Ok(())
    }

    /// Records all stages; returns every iterate `x⁰ … x^T` and the parameter leaves.
    fn record<'t>(
        &'t self,
        tape: &mut Tape<'t>,
        params: &[f64],
        input: &'t UnrolledInput,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        self.check_input(input)?;
        check_finite(params)?;
        if params.len() != self.params.len() {
            return invalid("parameter length does not match the net");
        }
        let op: &dyn LinearOperator = &*self.op;
        let geo = op.geometry();
        let y = tape.leaf(input.sinogram.values().to_vec(), [1, geo.n_views(), geo.n_dets()])?;
        let mut x = tape.image(&input.init);
        let mut iterates = vec![x];
        let mut leaves = Vec::new();
        let c = self.spec.scale;
        let inv_l = 1.0 / input.lipschitz;
        for t in 0..self.spec.stages {
            let off = self.stage_offset(t);
            let gamma = tape.leaf(vec![params[off]], super::tape::SCALAR)?;
            let g_params = self.spec.net.record_params(tape, &params[off + 1..off + self.stage_len()])?;
            leaves.push(gamma);
            leaves.extend(&g_params);

            let ax = tape.forward_project(x, op)?;
            let r = tape.sub(ax, y)?;
            let wr = tape.mul_const(r, &input.weights)?;
            let grad = tape.back_project(wr, op)?;
            let data = tape.scale(grad, inv_l)?;
            let z = tape.scale(x, 1.0 / c)?;
            let n = self.spec.net.forward(tape, z, &g_params)?;
            let reg = tape.scale(n, c)?;
            let dir = tape.add(data, reg)?;
            let step = tape.scale_by(gamma, dir)?;
            x = tape.sub(x, step)?;
            iterates.push(x);
        }
        Ok((iterates, leaves))
    }

    fn flat_grad(grads: &super::tape::Gradients, leaves: &[Var]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for v in leaves {
            out.extend(grads.get(*v)?);
        }
        Ok(out)
    }

    pub fn forward_with(&self, params: &[f64], input: &UnrolledInput) -> Result<Image> {
        Ok(self.forward_iterates(params, input)?.pop().expect("at least one iterate"))
    }

    pub fn forward(&self, input: &UnrolledInput) -> Result<Image> {
        self.forward_with(&self.params, input)
    }

    /// All iterates `x⁰ … x^T`.
    pub fn forward_iterates(&self, params: &[f64], input: &UnrolledInput) -> Result<Vec<Image>> {
        let mut tape = Tape::new();
        let (iterates, _) = self.record(&mut tape, params, input)?;
        let grid = self.op.grid();
        iterates
            .into_iter()
            .map(|v| Image::from_vec(grid, tape.value(v)?.to_vec()))
            .collect()
    }

    /// Rectifier sign pattern of a forward pass.
    pub fn activation_pattern(&self, params: &[f64], input: &UnrolledInput) -> Result<Vec<bool>> {
        let mut tape = Tape::new();
        self.record(&mut tape, params, input)?;
        Ok(tape.activation_pattern())
    }

    /// `MSE(x^T, target)` and its gradient with respect to the flat parameters.
    pub fn loss_and_grad(&self, params: &[f64], input: &UnrolledInput, target: &Image) -> Result<(f64, Vec<f64>)> {
        if target.grid() != self.op.grid() {
            return invalid("target does not match the operator grid");
        }
        let mut tape = Tape::new();
        let (iterates, leaves) = self.record(&mut tape, params, input)?;
        let t = tape.image(target);
        let loss = tape.mse(*iterates.last().expect("iterates"), t)?;
        let grads = tape.backprop(loss)?;
        Ok((tape.scalar(loss)?, Self::flat_grad(&grads, &leaves)?))
    }

    pub fn loss(&self, params: &[f64], input: &UnrolledInput, target: &Image) -> Result<f64> {
        crate::objectives::mse(&self.forward_with(params, input)?, target)
    }

    /// Fits the parameters to `(input, target)` pairs and keeps the ones
    /// with the best validation MSE (training MSE without validation pairs).
    pub fn train(
        &mut self,
        train: &[(UnrolledInput, Image)],
        val: &[(UnrolledInput, Image)],
        cfg: &TrainConfig,
    ) -> Result<TrainOutcome> {
        let obj = UnrolledObjective { net: self, train, val };
        let out = fit(&obj, self.params.clone(), &self.decay_mask(), cfg)?;
        self.params = out.params.clone();
        Ok(out)
    }
}

struct UnrolledObjective<'a> {
    net: &'a UnrolledNet,
    train: &'a [(UnrolledInput, Image)],
    val: &'a [(UnrolledInput, Image)],
}

impl SampleObjective for UnrolledObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn n_val(&self) -> usize {
        self.val.len()
    }

    fn train_loss_and_grad(&self, params: &[f64], i: usize) -> Result<(f64, Vec<f64>)> {
        let (x, t) = &self.train[i];
        self.net.loss_and_grad(params, x, t)
    }

    fn train_loss(&self, params: &[f64], i: usize) -> Result<f64> {
        let (x, t) = &self.train[i];
        self.net.loss(params, x, t)
    }

    fn val_loss(&self, params: &[f64], i: usize) -> Result<f64> {
        let (x, t) = &self.val[i];
        self.net.loss(params, x, t)
    }
}
