//! Generic mini-batch training loop with best-validation selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            seed: 0,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// A loss that decomposes over training and validation samples.
pub trait SampleObjective: Sync {
    fn n_train(&self) -> usize;

    fn n_val(&self) -> usize;

    fn train_loss_and_grad(&self, params: &[f64], i: usize) -> Result<(f64, Vec<f64>)>;

    fn train_loss(&self, params: &[f64], i: usize) -> Result<f64>;

    fn val_loss(&self, params: &[f64], i: usize) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    /// Epoch of the selected parameters; 0 means the initial ones.
    pub best_epoch: usize,
    /// Loss used for selection at each epoch, starting with the initial parameters.
    pub selection_curve: Vec<f64>,
    /// Mean mini-batch loss seen during each epoch.
    pub batch_curve: Vec<f64>,
    /// Whether selection used the validation set (otherwise the training set).
    pub selected_on_validation: bool,
}

fn mean_ordered(losses: Vec<f64>) -> f64 {
    let n = losses.len() as f64;
    losses.into_iter().sum::<f64>() / n
}

fn selection_loss(obj: &dyn SampleObjective, params: &[f64]) -> Result<f64> {
    let losses: Result<Vec<f64>> = if obj.n_val() > 0 {
        (0..obj.n_val()).into_par_iter().map(|i| obj.val_loss(params, i)).collect()
    } else {
        (0..obj.n_train()).into_par_iter().map(|i| obj.train_loss(params, i)).collect()
    };
    Ok(mean_ordered(losses?))
}

/// Mean training loss over every training sample.
pub fn mean_train_loss(obj: &dyn SampleObjective, params: &[f64]) -> Result<f64> {
    let losses: Result<Vec<f64>> = (0..obj.n_train()).into_par_iter().map(|i| obj.train_loss(params, i)).collect();
    Ok(mean_ordered(losses?))
}

/// AdamW over shuffled mini-batches. Per-sample gradients may be computed in
/// parallel but are summed in batch order, so results do not depend on the
/// thread count. Returns the parameters with the lowest selection loss,
/// which is the validation loss when validation samples exist.
pub fn fit(obj: &dyn SampleObjective, init: Vec<f64>, decay: &[bool], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if obj.n_train() == 0 {
        return invalid("training set is empty");
    }
    if cfg.batch_size == 0 {
        return invalid("batch size must be positive");
    }
    if decay.len() != init.len() {
        return invalid("decay mask length does not match parameters");
    }
    let mut opt = AdamW::new(cfg.optimizer, init.len())?;
    let mut params = init;
    let mut best = params.clone();
    let mut best_loss = selection_loss(obj, &params)?;
    let mut best_epoch = 0;
    let mut selection_curve = vec![best_loss];
    let mut batch_curve = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..obj.n_train()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Result<Vec<(f64, Vec<f64>)>> =
                batch.par_iter().map(|&i| obj.train_loss_and_grad(&params, i)).collect();
            let results = results?;
            let inv = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            loss *= inv;
            grad.iter_mut().for_each(|g| *g *= inv);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch}, batch {b} (samples {batch:?})"
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut params, &grad, decay);
        }
        batch_curve.push(epoch_loss / obj.n_train() as f64);
        let sel = selection_loss(obj, &params)?;
        selection_curve.push(sel);
        if sel < best_loss {
            best_loss = sel;
            best.copy_from_slice(&params);
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch,
        selection_curve,
        batch_curve,
        selected_on_validation: obj.n_val() > 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Least squares `(θ - c_i)²` per sample.
    struct Centers(Vec<f64>, Vec<f64>);

    impl SampleObjective for Centers {
        fn n_train(&self) -> usize {
            self.0.len()
        }
        fn n_val(&self) -> usize {
            self.1.len()
        }
        fn train_loss_and_grad(&self, p: &[f64], i: usize) -> Result<(f64, Vec<f64>)> {
            let d = p[0] - self.0[i];
            Ok((d * d, vec![2.0 * d]))
        }
        fn train_loss(&self, p: &[f64], i: usize) -> Result<f64> {
            Ok((p[0] - self.0[i]).powi(2))
        }
        fn val_loss(&self, p: &[f64], i: usize) -> Result<f64> {
            Ok((p[0] - self.1[i]).powi(2))
        }
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            seed: 3,
            optimizer: AdamWConfig { learning_rate: 0.05, ..Default::default() },
        }
    }

    #[test]
    fn zero_epochs_keep_parameters() {
        let obj = Centers(vec![1.0, 2.0], vec![]);
        let out = fit(&obj, vec![5.0], &[true], &cfg(0)).unwrap();
        assert_eq!(out.params, vec![5.0]);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn converges_and_is_deterministic() {
        let obj = Centers(vec![1.0, 2.0, 3.0], vec![]);
        let a = fit(&obj, vec![-4.0], &[false], &cfg(400)).unwrap();
        let b = fit(&obj, vec![-4.0], &[false], &cfg(400)).unwrap();
        assert_eq!(a, b);
        assert!((a.params[0] - 2.0).abs() < 0.05, "{}", a.params[0]);
        assert!(a.selection_curve[a.best_epoch] <= a.selection_curve[0]);
    }

    #[test]
    fn selects_on_validation() {
        // training pulls towards 2, validation prefers where we started
        let obj = Centers(vec![2.0], vec![0.0]);
        let out = fit(&obj, vec![0.0], &[false], &cfg(50)).unwrap();
        assert!(out.selected_on_validation);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.params, vec![0.0]);
    }

    #[test]
    fn empty_set_rejected() {
        let obj = Centers(vec![], vec![]);
        assert!(fit(&obj, vec![0.0], &[true], &cfg(1)).is_err());
    }
}
