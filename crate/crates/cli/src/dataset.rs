//! Synthetic phantom datasets on disk.
//!
//! Layout under the output directory:
//! `data/<split>/<index>_{truth,clean,lowdose,weights}.ldct` plus sidecars,
//! `config.toml` and `manifest.json` with a SHA-256 digest of every file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use ldct::noise::{simulate_low_dose, wls_weights};
use ldct::phantom::{random_phantom, rasterize};
use ldct::projector::ProjectionOperator;
use ldct::{FanBeamGeometry, Image, ImageGrid, LinearOperator, Sinogram};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{write_with_sidecar, ArrayFile, ArrayKind, Dtype};
use crate::config::ExperimentConfig;
use crate::error::{validation, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn len(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Split::Train => cfg.dataset.n_train,
            Split::Val => cfg.dataset.n_val,
            Split::Test => cfg.dataset.n_test,
        }
    }

    /// Position of the split's first sample in the global sample order.
    fn offset(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => cfg.dataset.n_train,
            Split::Test => cfg.dataset.n_train + cfg.dataset.n_val,
        }
    }
}

/// SplitMix64 finalizer applied to `base + index`, giving decorrelated
/// per-sample seeds from one base seed.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub truth: Image,
    pub clean: Sinogram,
    pub lowdose: Sinogram,
    pub weights: Vec<f64>,
}

/// Generates the sample at global position `index`.
pub fn generate_sample(cfg: &ExperimentConfig, op: &ProjectionOperator, index: usize) -> CliResult<Sample> {
    let grid = op.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.dataset.seed, index as u64));
    let radius = 0.5 * grid.extent().0.min(grid.extent().1);
    let truth = rasterize(grid, &random_phantom(&mut rng, radius, cfg.dataset.attenuation_per_mm));
    let clean = op.forward_project(&truth)?;
    let model = cfg.noise_model()?.with_seed(sample_seed(cfg.noise.seed, index as u64));
    let lowdose = simulate_low_dose(&clean, &model)?;
    let weights = wls_weights(&lowdose, &model)?;
    Ok(Sample {
        truth,
        clean,
        lowdose,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub data_digest: String,
    pub config_digest: String,
    pub counts: BTreeMap<String, usize>,
    /// Relative path to SHA-256 hex.
    pub files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sample_stem(split: Split, i: usize) -> String {
    format!("data/{}/{i:04}", split.name())
}

fn image_array(x: &Image) -> ArrayFile {
    let g = x.grid();
    ArrayFile::new(Dtype::F64, vec![g.ny(), g.nx()], x.values().to_vec()).expect("image dims")
}

fn sino_array(geo: &FanBeamGeometry, values: &[f64]) -> ArrayFile {
    ArrayFile::new(Dtype::F64, vec![geo.n_views(), geo.n_dets()], values.to_vec()).expect("sinogram dims")
}

pub fn image_from_array(a: &ArrayFile, grid: ImageGrid) -> CliResult<Image> {
    if a.dims != [grid.ny(), grid.nx()] {
        return validation(format!("image dims {:?} do not match the {}x{} grid", a.dims, grid.nx(), grid.ny()));
    }
    Ok(Image::from_vec(grid, a.data.clone())?)
}

fn sino_values(a: &ArrayFile, geo: &FanBeamGeometry) -> CliResult<Vec<f64>> {
    if a.dims != [geo.n_views(), geo.n_dets()] {
        return validation(format!(
            "sinogram dims {:?} do not match {} views x {} dets",
            a.dims,
            geo.n_views(),
            geo.n_dets()
        ));
    }
    Ok(a.data.clone())
}

/// Writes one sample's four arrays and returns their relative paths.
fn write_sample(root: &Path, split: Split, i: usize, s: &Sample) -> CliResult<Vec<String>> {
    let stem = sample_stem(split, i);
    let geo = s.clean.geometry();
    let items = [
        ("truth", image_array(&s.truth), ArrayKind::Image, "ground-truth attenuation (1/mm)"),
        ("clean", sino_array(geo, s.clean.values()), ArrayKind::Sinogram, "noiseless line integrals"),
        ("lowdose", sino_array(geo, s.lowdose.values()), ArrayKind::Sinogram, "low-dose line integrals"),
        ("weights", sino_array(geo, &s.weights), ArrayKind::Weights, "inverse noise-variance weights"),
    ];
    let mut rel = Vec::new();
    for (name, array, kind, desc) in items {
        let r = format!("{stem}_{name}.ldct");
        write_with_sidecar(&root.join(&r), &array, kind, desc)?;
        rel.push(r);
    }
    Ok(rel)
}

/// Simulates every split into `root` and writes the manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig, root: &Path) -> CliResult<Manifest> {
    let op = cfg.operator()?;
    for split in SPLITS {
        std::fs::create_dir_all(root.join("data").join(split.name()))?;
    }
    let config_path = root.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml_string())?;
    let mut files = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for split in SPLITS {
        let n = split.len(cfg);
        counts.insert(split.name().to_string(), n);
        let written: CliResult<Vec<Vec<String>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let s = generate_sample(cfg, &op, split.offset(cfg) + i)?;
                write_sample(root, split, i, &s)
            })
            .collect();
        for rel in written?.into_iter().flatten() {
            let side = format!("{rel}.json");
            files.insert(rel.clone(), sha256_file(&root.join(&rel))?);
            files.insert(side.clone(), sha256_file(&root.join(&side))?);
        }
    }
    files.insert("config.toml".into(), sha256_file(&config_path)?);
    let manifest = Manifest {
        data_digest: cfg.data_digest(),
        config_digest: cfg.digest(),
        counts,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).context("encoding manifest")?;
    std::fs::write(root.join(MANIFEST), text)?;
    Ok(manifest)
}

/// Loads the manifest and checks it against the config and the files on disk.
pub fn verify_manifest(cfg: &ExperimentConfig, root: &Path) -> CliResult<Manifest> {
    let path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| crate::error::CliError::Validation(format!("no dataset at {}: {e}", root.display())))?;
    let m: Manifest = serde_json::from_str(&text).context("decoding manifest")?;
    if m.data_digest != cfg.data_digest() {
        return validation("dataset was simulated with different grid, geometry, noise or dataset settings");
    }
    for split in SPLITS {
        if m.counts.get(split.name()).copied() != Some(split.len(cfg)) {
            return validation(format!("manifest sample count for {} disagrees with the config", split.name()));
        }
    }
    for (rel, digest) in &m.files {
        if rel == "config.toml" {
            continue;
        }
        if &sha256_file(&root.join(rel))? != digest {
            return validation(format!("{rel} does not match its manifest digest"));
        }
    }
    Ok(m)
}

pub fn load_split(root: &Path, op: &Arc<ProjectionOperator>, cfg: &ExperimentConfig, split: Split) -> CliResult<Vec<Sample>> {
    let geo = op.geometry().clone();
    (0..split.len(cfg))
        .map(|i| {
            let stem = root.join(sample_stem(split, i));
            let read = |name: &str| ArrayFile::read(&PathBuf::from(format!("{}_{name}.ldct", stem.display())));
            Ok(Sample {
                truth: image_from_array(&read("truth")?, op.grid())?,
                clean: Sinogram::from_vec(geo.clone(), sino_values(&read("clean")?, &geo)?)?,
                lowdose: Sinogram::from_vec(geo.clone(), sino_values(&read("lowdose")?, &geo)?)?,
                weights: sino_values(&read("weights")?, &geo)?,
            })
        })
        .collect()
}

pub fn write_image(path: &Path, x: &Image, description: &str) -> CliResult<()> {
    write_with_sidecar(path, &image_array(x), ArrayKind::Image, description)
}

#[cfg(test)]
mod tests {
    use super::sample_seed;

    #[test]
    fn sample_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| sample_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(sample_seed(0, 0), sample_seed(1, 0));
    }
}
