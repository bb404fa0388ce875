//! Runs the configured method on a simulated dataset and scores it.
//!
//! Trainable methods fit on the train split, select on the val split and
//! are scored on the test split. Results land in `recon/<method>/` under
//! the dataset directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use ldct::learned::{ConvDenoiser, TrainOutcome, UnrolledInput, UnrolledNet, UnrolledSpec};
use ldct::objectives::{TvProxConfig, TvRegularizer, TvVariant, WlsFidelity};
use ldct::pipeline::{dual_domain_run, evaluate, DualDomainConfig, GaussianSmoothing, MetricsReport};
use ldct::projector::{fbp, FbpFilter, ProjectionOperator};
use ldct::solvers::{
    admm_reconstruct, gd_reconstruct, pnp_run, train_denoiser_dependent, train_denoiser_independent, DenoiserSample,
    PnpParams, StageReport, TvDenoiser,
};
use ldct::Image;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodBlock, TrainingMode};
use crate::dataset::{image_from_array, load_split, verify_manifest, write_image, Sample, Split};
use crate::array::ArrayFile;
use crate::error::{validation, CliResult};

/// Trained parameters, enough to rebuild the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    Red {
        denoiser: ConvDenoiser,
        params: PnpParams,
    },
    Unrolled {
        spec: UnrolledSpec,
        params: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingLog {
    Single(TrainOutcome),
    PerIteration(Vec<StageReport>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub config_digest: String,
    pub data_digest: String,
    pub metrics: MetricsReport,
    /// Ram-Lak FBP on the same test split.
    pub baseline_fbp: MetricsReport,
    pub training: Option<TrainingLog>,
}

impl RunReport {
    /// Mean PSNR gain over the FBP baseline in dB.
    pub fn gain_over_fbp_db(&self) -> Option<f64> {
        Some(self.metrics.mean_psnr_db? - self.baseline_fbp.mean_psnr_db?)
    }
}

pub fn recon_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join("recon").join(cfg.method.label())
}

fn denoiser_samples(samples: &[Sample]) -> Vec<DenoiserSample> {
    samples
        .iter()
        .map(|s| DenoiserSample {
            sinogram: s.lowdose.clone(),
            weights: s.weights.clone(),
            target: s.truth.clone(),
        })
        .collect()
}

fn unrolled_pairs(op: &ProjectionOperator, samples: &[Sample], filter: FbpFilter) -> CliResult<Vec<(UnrolledInput, Image)>> {
    samples
        .par_iter()
        .map(|s| {
            let input = UnrolledInput::prepare(op, s.lowdose.clone(), s.weights.clone(), filter)?;
            Ok((input, s.truth.clone()))
        })
        .collect()
}

fn per_sample<F>(test: &[Sample], f: F) -> CliResult<Vec<Image>>
where
    F: Fn(&Sample) -> CliResult<Image> + Sync + Send,
{
    test.par_iter().map(f).collect()
}

pub struct MethodOutput {
    pub images: Vec<Image>,
    pub training: Option<TrainingLog>,
    pub checkpoint: Option<Checkpoint>,
}

/// Runs the method: trains where needed and reconstructs the test split.
pub fn run_method(
    cfg: &ExperimentConfig,
    op: &Arc<ProjectionOperator>,
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
) -> CliResult<MethodOutput> {
    let plain = |images| MethodOutput {
        images,
        training: None,
        checkpoint: None,
    };
    Ok(match &cfg.method {
        MethodBlock::Fbp(m) => plain(per_sample(test, |s| Ok(fbp(op, &s.lowdose, m.filter)?))?),
        MethodBlock::Gd(m) => {
            let r = TvRegularizer::new(m.lambda, m.tv)?;
            let solver = m.solver();
            plain(per_sample(test, |s| {
                let f = WlsFidelity::new(&**op, s.lowdose.clone(), s.weights.clone())?;
                let x0 = fbp(op, &s.lowdose, m.init_filter)?;
                Ok(gd_reconstruct(&f, &r, &solver, &x0)?.image)
            })?)
        }
        MethodBlock::Admm(m) => {
            let r = TvRegularizer::new(m.lambda, m.tv)?;
            let solver = m.solver();
            plain(per_sample(test, |s| {
                let f = WlsFidelity::new(&**op, s.lowdose.clone(), s.weights.clone())?;
                let x0 = fbp(op, &s.lowdose, m.init_filter)?;
                Ok(admm_reconstruct(&f, &r, &solver, &x0)?.image)
            })?)
        }
        MethodBlock::Red(m) => {
            let solver = m.solver();
            let tcfg = m.train.build();
            let mut d = ConvDenoiser::new(m.net.build()?, m.train.seed);
            let (tr, va) = (denoiser_samples(train), denoiser_samples(val));
            let (params, training) = match m.training {
                TrainingMode::Independent => {
                    let out = train_denoiser_independent(op, &tr, &va, &mut d, &tcfg, m.init_filter)?;
                    (PnpParams::Shared(out.params.clone()), TrainingLog::Single(out))
                }
                TrainingMode::Dependent => {
                    let out = train_denoiser_dependent(op, &tr, &va, &mut d, &solver, &tcfg, m.init_filter)?;
                    (PnpParams::PerIteration(out.params()), TrainingLog::PerIteration(out.stages))
                }
            };
            let inputs: Vec<_> = test.iter().map(|s| (s.lowdose.clone(), s.weights.clone())).collect();
            let images = pnp_run(op, &inputs, &d, &params, &solver, m.init_filter)?;
            MethodOutput {
                images,
                training: Some(training),
                checkpoint: Some(Checkpoint::Red { denoiser: d, params }),
            }
        }
        MethodBlock::Unrolled(m) => {
            let mut net = UnrolledNet::new(op.clone(), m.stages, m.net.build()?, m.train.seed)?;
            let tr = unrolled_pairs(op, train, m.init_filter)?;
            let va = unrolled_pairs(op, val, m.init_filter)?;
            let outcome = net.train(&tr, &va, &m.train.build())?;
            let te = unrolled_pairs(op, test, m.init_filter)?;
            let images: CliResult<Vec<Image>> = te.par_iter().map(|(x, _)| Ok(net.forward(x)?)).collect();
            MethodOutput {
                images: images?,
                training: Some(TrainingLog::Single(outcome)),
                checkpoint: Some(Checkpoint::Unrolled {
                    spec: net.spec().clone(),
                    params: net.params().to_vec(),
                }),
            }
        }
        MethodBlock::DualDomain(m) => {
            let mut dd = DualDomainConfig {
                transform: m.transform,
                filter: m.filter,
                ..Default::default()
            };
            if let Some(sigma) = m.projection_sigma_bins {
                dd.projection = Box::new(GaussianSmoothing::new(sigma)?);
            }
            if let Some(strength) = m.image_tv_strength {
                dd.image = Box::new(TvDenoiser {
                    regularizer: TvRegularizer::new(strength, TvVariant::Anisotropic)?,
                    step: m.image_tv_step,
                    prox: TvProxConfig::default(),
                });
            }
            plain(per_sample(test, |s| Ok(dual_domain_run(op, &dd, &s.lowdose)?))?)
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).context("encoding json")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn cmd_recon(cfg: &ExperimentConfig, root: &Path) -> CliResult<RunReport> {
    verify_manifest(cfg, root)?;
    let op = cfg.operator()?;
    let train = load_split(root, &op, cfg, Split::Train)?;
    let val = load_split(root, &op, cfg, Split::Val)?;
    let test = load_split(root, &op, cfg, Split::Test)?;
    let out = run_method(cfg, &op, &train, &val, &test)?;

    let truths: Vec<Image> = test.iter().map(|s| s.truth.clone()).collect();
    let mut metrics = evaluate(&out.images, &truths, cfg.method.label())?;
    metrics.config_digest = Some(cfg.digest());
    let fbp_images = per_sample(&test, |s| Ok(fbp(&op, &s.lowdose, FbpFilter::RamLak)?))?;
    let mut baseline_fbp = evaluate(&fbp_images, &truths, "fbp")?;
    baseline_fbp.config_digest = Some(cfg.digest());

    let dir = recon_dir(root, cfg);
    std::fs::create_dir_all(&dir)?;
    for (i, x) in out.images.iter().enumerate() {
        write_image(&dir.join(format!("{i:04}.ldct")), x, &format!("{} reconstruction of test sample {i}", cfg.method.label()))?;
    }
    if let Some(c) = &out.checkpoint {
        write_json(&dir.join("checkpoint.json"), c)?;
    }
    let report = RunReport {
        method: cfg.method.label().to_string(),
        config_digest: cfg.digest(),
        data_digest: cfg.data_digest(),
        metrics,
        baseline_fbp,
        training: out.training,
    };
    write_json(&dir.join("report.json"), &report)?;
    std::fs::write(dir.join("report.csv"), report.metrics.to_csv())?;
    Ok(report)
}

/// Recomputes the metrics of a finished run from the images on disk.
pub fn cmd_metrics(cfg: &ExperimentConfig, root: &Path) -> CliResult<MetricsReport> {
    verify_manifest(cfg, root)?;
    let op = cfg.operator()?;
    let test = load_split(root, &op, cfg, Split::Test)?;
    let dir = recon_dir(root, cfg);
    if !dir.is_dir() {
        return validation(format!("no reconstructions at {}; run recon first", dir.display()));
    }
    let images: CliResult<Vec<Image>> = (0..test.len())
        .map(|i| image_from_array(&ArrayFile::read(&dir.join(format!("{i:04}.ldct")))?, ldct::LinearOperator::grid(&*op)))
        .collect();
    let truths: Vec<Image> = test.iter().map(|s| s.truth.clone()).collect();
    let mut report = evaluate(&images?, &truths, cfg.method.label())?;
    report.config_digest = Some(cfg.digest());
    std::fs::write(dir.join("metrics.csv"), report.to_csv())?;
    Ok(report)
}
