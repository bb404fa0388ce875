//! Experiment configuration, read from TOML.
//!
//! Every block rejects unknown keys. Lengths carry their unit in the key
//! name. The method block holds exactly one table named after the method,
//! e.g. `[method.admm]`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ldct::learned::{AdamWConfig, ConvNet, TrainConfig, DEFAULT_LAYERS, DEFAULT_STAGES, DEFAULT_WIDTH};
use ldct::noise::NoiseModel;
use ldct::pipeline::Transform;
use ldct::objectives::{TvProxConfig, TvVariant};
use ldct::projector::{FbpFilter, Interpolation, ProjectionOperator};
use ldct::solvers::{RedMode, SolverConfig, StepSize};
use ldct::{FanBeamGeometry, ImageGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{validation, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub nx_px: usize,
    pub ny_px: usize,
    pub pixel_size_mm: f64,
}

/// Omitting all three distances sizes the scan to cover the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub n_views: usize,
    pub n_dets: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
    pub source_to_iso_mm: Option<f64>,
    pub source_to_det_mm: Option<f64>,
    pub det_spacing_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub i0: f64,
    pub dose_factor: f64,
    pub sigma_e2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_val")]
    pub n_val: usize,
    #[serde(default = "default_test")]
    pub n_test: usize,
    pub seed: u64,
    #[serde(default = "default_attenuation")]
    pub attenuation_per_mm: f64,
}

fn default_train() -> usize {
    60
}
fn default_val() -> usize {
    10
}
fn default_test() -> usize {
    20
}
fn default_attenuation() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetBlock {
    pub layers: usize,
    pub width: usize,
}

impl Default for NetBlock {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            width: DEFAULT_WIDTH,
        }
    }
}

impl NetBlock {
    pub fn build(&self) -> ldct::Result<ConvNet> {
        ConvNet::single_channel(self.layers, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.optimizer.learning_rate,
            weight_decay: t.optimizer.weight_decay,
            seed: t.seed,
        }
    }
}

impl TrainBlock {
    pub fn build(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: AdamWConfig {
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpMethod {
    pub filter: FbpFilter,
}

impl Default for FbpMethod {
    fn default() -> Self {
        Self { filter: FbpFilter::RamLak }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdMethod {
    pub n_iters: usize,
    /// `None` uses `1/L̂`.
    pub step: Option<f64>,
    pub lambda: f64,
    pub tv: TvVariant,
    pub init_filter: FbpFilter,
}

impl Default for GdMethod {
    fn default() -> Self {
        Self {
            n_iters: 100,
            step: None,
            lambda: 0.0,
            tv: TvVariant::Anisotropic,
            init_filter: FbpFilter::RamLak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmMethod {
    pub n_iters: usize,
    pub rho: f64,
    pub lambda: f64,
    pub tv: TvVariant,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub prox_iterations: usize,
    pub init_filter: FbpFilter,
}

impl Default for AdmmMethod {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            n_iters: s.n_iters,
            rho: s.rho,
            lambda: s.lambda,
            tv: TvVariant::Anisotropic,
            cg_iters: s.cg_iters,
            cg_tol: s.cg_tol,
            prox_iterations: s.tv_prox.iterations,
            init_filter: FbpFilter::RamLak,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// One θ trained on FBP inputs and shared by every iteration.
    #[default]
    Independent,
    /// One θᵗ per iteration, trained on that iteration's inputs.
    Dependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RedMethod {
    pub n_iters: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub mode: RedMode,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub training: TrainingMode,
    pub init_filter: FbpFilter,
    pub net: NetBlock,
    pub train: TrainBlock,
}

impl Default for RedMethod {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            n_iters: 3,
            alpha: s.alpha,
            beta: s.beta,
            lambda: s.lambda,
            mode: s.red_mode,
            cg_iters: s.cg_iters,
            cg_tol: s.cg_tol,
            training: TrainingMode::Independent,
            init_filter: FbpFilter::RamLak,
            net: NetBlock::default(),
            train: TrainBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnrolledMethod {
    pub stages: usize,
    pub init_filter: FbpFilter,
    pub net: NetBlock,
    pub train: TrainBlock,
}

impl Default for UnrolledMethod {
    fn default() -> Self {
        Self {
            stages: DEFAULT_STAGES,
            init_filter: FbpFilter::RamLak,
            net: NetBlock::default(),
            train: TrainBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualDomainMethod {
    /// Gaussian smoothing width along the detector; `None` leaves the sinogram as is.
    pub projection_sigma_bins: Option<f64>,
    pub transform: Transform,
    pub filter: FbpFilter,
    /// TV prox strength of the image-domain denoiser; `None` is the identity.
    pub image_tv_strength: Option<f64>,
    pub image_tv_step: f64,
}

impl Default for DualDomainMethod {
    fn default() -> Self {
        Self {
            projection_sigma_bins: None,
            transform: Transform::Fbp,
            filter: FbpFilter::RamLak,
            image_tv_strength: None,
            image_tv_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodBlock {
    Fbp(FbpMethod),
    Gd(GdMethod),
    Admm(AdmmMethod),
    Red(RedMethod),
    Unrolled(UnrolledMethod),
    DualDomain(DualDomainMethod),
}

impl MethodBlock {
    pub fn label(&self) -> &'static str {
        match self {
            MethodBlock::Fbp(_) => "fbp",
            MethodBlock::Gd(_) => "gd",
            MethodBlock::Admm(_) => "admm",
            MethodBlock::Red(_) => "red",
            MethodBlock::Unrolled(_) => "unrolled",
            MethodBlock::DualDomain(_) => "dual_domain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridBlock,
    pub geometry: GeometryBlock,
    pub noise: NoiseBlock,
    pub dataset: DatasetBlock,
    pub method: MethodBlock,
    pub output: OutputBlock,
}

impl GdMethod {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            n_iters: self.n_iters,
            step: self.step.map_or(StepSize::Auto, StepSize::Fixed),
            ..Default::default()
        }
    }
}

impl AdmmMethod {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            n_iters: self.n_iters,
            rho: self.rho,
            cg_iters: self.cg_iters,
            cg_tol: self.cg_tol,
            tv_prox: TvProxConfig {
                iterations: self.prox_iterations,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

impl RedMethod {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            n_iters: self.n_iters,
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            red_mode: self.mode,
            cg_iters: self.cg_iters,
            cg_tol: self.cg_tol,
            ..Default::default()
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn image_grid(&self) -> ldct::Result<ImageGrid> {
        ImageGrid::new(self.grid.nx_px, self.grid.ny_px, self.grid.pixel_size_mm)
    }

    pub fn scan(&self) -> CliResult<FanBeamGeometry> {
        let g = &self.geometry;
        let grid = self.image_grid()?;
        Ok(match (g.source_to_iso_mm, g.source_to_det_mm, g.det_spacing_mm) {
            (None, None, None) => FanBeamGeometry::covering(&grid, g.n_views, g.n_dets)?,
            (Some(sid), Some(sdd), Some(ds)) => FanBeamGeometry::full_scan(g.n_views, g.n_dets, sid, sdd, ds)?,
            _ => return validation("geometry distances must be given all together or not at all"),
        })
    }

    pub fn operator(&self) -> CliResult<Arc<ProjectionOperator>> {
        let geo = Arc::new(self.scan()?);
        Ok(Arc::new(ProjectionOperator::new(self.image_grid()?, geo, self.geometry.interpolation)?))
    }

    /// Noise model with the configured base seed.
    pub fn noise_model(&self) -> CliResult<NoiseModel> {
        let n = &self.noise;
        Ok(NoiseModel::new(n.i0, n.dose_factor, n.sigma_e2, n.seed)?)
    }

    pub fn n_samples(&self) -> usize {
        self.dataset.n_train + self.dataset.n_val + self.dataset.n_test
    }

    /// Checks every numeric constraint without assembling the projector.
    pub fn validate(&self) -> CliResult<()> {
        let grid = self.image_grid()?;
        let geo = self.scan()?;
        if geo.source_to_iso() <= grid.half_diagonal() {
            return validation("source lies inside the image");
        }
        self.noise_model()?;
        let d = &self.dataset;
        if d.n_test == 0 {
            return validation("dataset needs at least one test sample");
        }
        if !(d.attenuation_per_mm > 0.0 && d.attenuation_per_mm.is_finite()) {
            return validation("attenuation_per_mm must be positive");
        }
        let check_train = |t: &TrainBlock, net: &NetBlock| -> CliResult<()> {
            if d.n_train == 0 {
                return validation("trainable methods need at least one training sample");
            }
            if t.batch_size == 0 {
                return validation("batch_size must be positive");
            }
            t.build().optimizer.validate()?;
            net.build()?;
            Ok(())
        };
        match &self.method {
            MethodBlock::Fbp(_) => {}
            MethodBlock::Gd(m) => {
                m.solver().validate()?;
                if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
                    return validation("TV lambda must be non-negative");
                }
            }
            MethodBlock::Admm(m) => {
                m.solver().validate_admm()?;
                if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
                    return validation("TV lambda must be non-negative");
                }
            }
            MethodBlock::Red(m) => {
                m.solver().validate_red()?;
                if m.training == TrainingMode::Dependent && m.n_iters == 0 {
                    return validation("dependent training needs n_iters >= 1");
                }
                check_train(&m.train, &m.net)?;
            }
            MethodBlock::Unrolled(m) => {
                if m.stages == 0 {
                    return validation("unrolled net needs at least one stage");
                }
                check_train(&m.train, &m.net)?;
            }
            MethodBlock::DualDomain(m) => {
                if let Some(s) = m.projection_sigma_bins {
                    ldct::pipeline::GaussianSmoothing::new(s)?;
                }
                if let Some(s) = m.image_tv_strength {
                    if !(s >= 0.0 && s.is_finite()) || !(m.image_tv_step > 0.0) {
                        return validation("image TV strength and step must be non-negative and positive");
                    }
                }
            }
        }
        Ok(())
    }

    /// Sets the dataset, noise and training seeds to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.noise.seed = seed;
        match &mut self.method {
            MethodBlock::Red(m) => m.train.seed = seed,
            MethodBlock::Unrolled(m) => m.train.seed = seed,
            _ => {}
        }
    }

    /// Digest of the whole configuration.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Digest of the blocks that determine the dataset.
    pub fn data_digest(&self) -> String {
        let v = serde_json::json!({
            "grid": self.grid,
            "geometry": self.geometry,
            "noise": self.noise,
            "dataset": self.dataset,
        });
        sha256_hex(&serde_json::to_vec(&v).expect("blocks serialize"))
    }
}
