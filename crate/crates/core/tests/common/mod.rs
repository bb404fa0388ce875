#![allow(dead_code)]

use std::sync::Arc;

use ldct::noise::{simulate_low_dose, wls_weights, NoiseModel};
use ldct::phantom::{random_phantom, rasterize};
use ldct::projector::{Interpolation, ProjectionOperator};
use ldct::{FanBeamGeometry, Image, ImageGrid, Sinogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub op: Arc<ProjectionOperator>,
    pub truth: Image,
    pub clean: Sinogram,
    pub noisy: Sinogram,
    pub weights: Vec<f64>,
}

pub fn operator(n: usize, pixel_mm: f64, views: usize, dets: usize) -> Arc<ProjectionOperator> {
    let grid = ImageGrid::new(n, n, pixel_mm).unwrap();
    let geo = Arc::new(FanBeamGeometry::covering(&grid, views, dets).unwrap());
    Arc::new(ProjectionOperator::new(grid, geo, Interpolation::Joseph).unwrap())
}

/// Random ellipse phantom with low-dose measurements (I0 = 1e5, a = 0.2, σe² = 8.2).
pub fn sample(op: &Arc<ProjectionOperator>, seed: u64) -> Instance {
    let grid = ldct::LinearOperator::grid(&**op);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 0.5 * grid.extent().0;
    let truth = rasterize(grid, &random_phantom(&mut rng, radius, 0.02));
    let clean = op.forward_project(&truth).unwrap();
    let model = NoiseModel::new(1e5, 0.2, 8.2, seed ^ 0x5eed).unwrap();
    let noisy = simulate_low_dose(&clean, &model).unwrap();
    let weights = wls_weights(&noisy, &model).unwrap();
    Instance {
        op: op.clone(),
        truth,
        clean,
        noisy,
        weights,
    }
}

/// Weights divided by their mean; conditions 16² solver instances without
/// changing the WLS minimizer.
pub fn normalized(w: &[f64]) -> Vec<f64> {
    let m = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|v| v / m).collect()
}

pub fn random_image(grid: ImageGrid, seed: u64, lo: f64, hi: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(grid, |_, _| rng.random_range(lo..hi))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
