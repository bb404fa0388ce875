//! Plain 3×3 convolutional networks and the residual denoiser built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::geometry::Image;
use crate::solvers::{Denoiser, TrainableDenoiser};

/// Layer widths from input to output, e.g. `[1, 16, 16, 1]` for three
/// convolutions. ReLU sits between layers, not after the last one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNet {
    channels: Vec<usize>,
}

impl ConvNet {
    pub fn new(channels: Vec<usize>) -> Result<Self> {
        if channels.len() < 2 || channels.contains(&0) {
            return invalid(format!("need at least one layer with non-zero widths, got {channels:?}"));
        }
        Ok(Self { channels })
    }

    /// Single-channel in and out with `layers` convolutions of `width` hidden channels.
    pub fn single_channel(layers: usize, width: usize) -> Result<Self> {
        if layers == 0 {
            return invalid("layer count must be positive");
        }
        let mut c = vec![1];
        c.extend(std::iter::repeat(width).take(layers - 1));
        c.push(1);
        Self::new(c)
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn layers(&self) -> usize {
        self.channels.len() - 1
    }

    /// `(kernel, bias)` lengths per layer.
    pub fn layer_sizes(&self) -> Vec<(usize, usize)> {
        self.channels.windows(2).map(|w| (w[1] * w[0] * 9, w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().iter().map(|(k, b)| k + b).sum()
    }

    /// True for kernel entries, false for biases.
    pub fn kernel_mask(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.param_count());
        for (k, b) in self.layer_sizes() {
            m.extend(std::iter::repeat(true).take(k));
            m.extend(std::iter::repeat(false).take(b));
        }
        m
    }

    /// Offset of the last layer's kernel in the flat vector.
    fn output_kernel_range(&self) -> std::ops::Range<usize> {
        let sizes = self.layer_sizes();
        let start: usize = sizes[..sizes.len() - 1].iter().map(|(k, b)| k + b).sum();
        start..start + sizes[sizes.len() - 1].0
    }

    /// Records the flat parameters as one leaf per kernel and bias.
    pub fn record_params(&self, tape: &mut Tape<'_>, params: &[f64]) -> Result<Vec<Var>> {
        if params.len() != self.param_count() {
            return invalid(format!("{} parameters for a net with {}", params.len(), self.param_count()));
        }
        let mut vars = Vec::new();
        let mut off = 0;
        for (k, b) in self.layer_sizes() {
            vars.push(tape.leaf(params[off..off + k].to_vec(), [1, 1, k])?);
            off += k;
            vars.push(tape.leaf(params[off..off + b].to_vec(), [1, 1, b])?);
            off += b;
        }
        Ok(vars)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, params: &[Var]) -> Result<Var> {
        let mut h = x;
        let n = self.layers();
        for l in 0..n {
            h = tape.conv3x3(h, params[2 * l], params[2 * l + 1])?;
            if l + 1 < n {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Concatenates leaf gradients in parameter order.
    pub fn flat_grad(&self, grads: &super::tape::Gradients, params: &[Var]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.param_count());
        for v in params {
            out.extend(grads.get(*v)?);
        }
        Ok(out)
    }
}

/// Xavier-uniform kernels, `b = sqrt(6 / (fan_in + fan_out))` with
/// `fan = channels * 9`, and zero biases.
pub fn param_init(net: &ConvNet, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(net.param_count());
    for w in net.channels().windows(2) {
        let (cin, cout) = (w[0], w[1]);
        let bound = (6.0 / ((cin * 9 + cout * 9) as f64)).sqrt();
        for _ in 0..cin * cout * 9 {
            out.push(rng.random_range(-bound..bound));
        }
        out.extend(std::iter::repeat(0.0).take(cout));
    }
    out
}

/// Zeroes the output layer's kernel so the network starts as the zero map
/// while its hidden layers still receive gradients once training starts.
pub fn zero_output_layer(net: &ConvNet, params: &mut [f64]) {
    params[net.output_kernel_range()].fill(0.0);
}

pub(crate) fn check_finite(params: &[f64]) -> Result<()> {
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("network parameters".into()));
    }
    Ok(())
}

pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_WIDTH: usize = 16;
/// Attenuation scale (mm⁻¹) mapping images to unit range inside the network.
pub const DEFAULT_SCALE: f64 = 0.02;

/// `D(x) = x + c·N(x / c)` for a plain conv net `N` and attenuation scale `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvDenoiser {
    net: ConvNet,
    params: Vec<f64>,
    scale: f64,
}

impl ConvDenoiser {
    /// Random hidden layers and a zero output layer: starts as the identity.
    pub fn new(net: ConvNet, seed: u64) -> Self {
        let mut params = param_init(&net, seed);
        zero_output_layer(&net, &mut params);
        Self {
            net,
            params,
            scale: DEFAULT_SCALE,
        }
    }

    pub fn with_params(net: ConvNet, params: Vec<f64>, scale: f64) -> Result<Self> {
        if params.len() != net.param_count() {
            return invalid(format!("{} parameters for a net with {}", params.len(), net.param_count()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return invalid(format!("denoiser scale must be positive, got {scale}"));
        }
        check_finite(&params)?;
        Ok(Self { net, params, scale })
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Rectifier sign pattern of `D_θ(x)`.
    pub fn activation_pattern(&self, params: &[f64], x: &Image) -> Result<Vec<bool>> {
        let mut tape = Tape::new();
        let xv = tape.image(x);
        self.record(&mut tape, params, xv)?;
        Ok(tape.activation_pattern())
    }

    /// Records `D_θ(x)` and returns the output together with the parameter leaves.
    pub fn record<'t>(&self, tape: &mut Tape<'t>, params: &[f64], x: Var) -> Result<(Var, Vec<Var>)> {
        check_finite(params)?;
        let p = self.net.record_params(tape, params)?;
        let z = tape.scale(x, 1.0 / self.scale)?;
        let n = self.net.forward(tape, z, &p)?;
        let c = tape.scale(n, self.scale)?;
        Ok((tape.add(x, c)?, p))
    }
}

impl Denoiser for ConvDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        self.denoise_with(&self.params, x)
    }

    fn describe(&self) -> String {
        format!("conv{:?}", self.net.channels())
    }
}

impl TrainableDenoiser for ConvDenoiser {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.net.param_count() {
            return invalid("parameter length changed");
        }
        check_finite(&params)?;
        self.params = params;
        Ok(())
    }

    fn decay_mask(&self) -> Vec<bool> {
        self.net.kernel_mask()
    }

    fn denoise_with(&self, params: &[f64], x: &Image) -> Result<Image> {
        let mut tape = Tape::new();
        let xv = tape.image(x);
        let (out, _) = self.record(&mut tape, params, xv)?;
        Image::from_vec(x.grid(), tape.value(out)?.to_vec())
    }

    fn loss_and_grad(&self, params: &[f64], x: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
        x.check_same_grid(target)?;
        let mut tape = Tape::new();
        let xv = tape.image(x);
        let tv = tape.image(target);
        let (out, p) = self.record(&mut tape, params, xv)?;
        let loss = tape.mse(out, tv)?;
        let grads = tape.backprop(loss)?;
        Ok((tape.scalar(loss)?, self.net.flat_grad(&grads, &p)?))
    }
}
