//! Built-in oracle checks. Each one reports a measured value against a
//! fixed tolerance; `ldct verify` prints the table and fails if any check
//! does.

use std::sync::Arc;

use ldct::learned::{check_gradient, randomized_params, ConvDenoiser, ConvNet, UnrolledInput, UnrolledNet, UnrolledSpec, DEFAULT_SCALE};
use ldct::linalg::rel_l2;
use ldct::noise::{simulate_low_dose, wls_weights, NoiseModel};
use ldct::objectives::{mse, TvRegularizer, TvVariant, WlsFidelity};
use ldct::phantom::{analytic_sinogram, random_phantom, rasterize, Ellipse};
use ldct::projector::{fbp, vvbp_stack, FbpFilter, Interpolation, ProjectionOperator};
use ldct::solvers::{
    admm_reconstruct, gd_reconstruct, normal_equations_solve, red_reconstruct, IdentityDenoiser, SolverConfig, StepSize,
    TrainableDenoiser,
};
use ldct::geometry::adjoint_mismatch;
use ldct::{FanBeamGeometry, Image, ImageGrid, LinearOperator, Sinogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ADJOINT_TOL: f64 = 1e-10;
pub const DISK_TOL: f64 = 0.01;
pub const NOISE_VAR_TOL: f64 = 0.05;
pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;
pub const SOLVER_TOL: f64 = 1e-4;
pub const UNROLLED_TOL: f64 = 1e-10;
pub const VVBP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<28} {:.3e} (tol {:.2e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.detail
        )
    }
}

/// Forward projection scaled by 1.05, adjoint left alone: breaks both
/// the adjoint identity and the analytic oracle. Used as a negative control.
struct Corrupted(ProjectionOperator);

impl LinearOperator for Corrupted {
    fn grid(&self) -> ImageGrid {
        self.0.grid()
    }

    fn geometry(&self) -> &Arc<FanBeamGeometry> {
        self.0.geometry()
    }

    fn apply(&self, x: &Image) -> ldct::Result<Sinogram> {
        let y = self.0.apply(x)?;
        let v = y.values().iter().map(|v| v * 1.05).collect();
        Sinogram::from_vec(y.geometry_arc().clone(), v)
    }

    fn adjoint(&self, y: &Sinogram) -> ldct::Result<Image> {
        self.0.adjoint(y)
    }
}

fn operator_for(op: ProjectionOperator, corrupt: bool) -> Box<dyn LinearOperator> {
    if corrupt {
        Box::new(Corrupted(op))
    } else {
        Box::new(op)
    }
}

pub fn square_operator(n: usize, pixel_mm: f64, views: usize, dets: usize, mode: Interpolation) -> ldct::Result<ProjectionOperator> {
    let grid = ImageGrid::new(n, n, pixel_mm)?;
    let geo = Arc::new(FanBeamGeometry::covering(&grid, views, dets)?);
    ProjectionOperator::new(grid, geo, mode)
}

/// Random phantom with low-dose data at I0 = 1e5, a = 0.2, σe² = 8.2.
pub struct Instance {
    pub truth: Image,
    pub noisy: Sinogram,
    pub weights: Vec<f64>,
}

pub fn synthetic_instance(op: &ProjectionOperator, seed: u64) -> ldct::Result<Instance> {
    let grid = op.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = rasterize(grid, &random_phantom(&mut rng, 0.5 * grid.extent().0, 0.02));
    let model = NoiseModel::new(1e5, 0.2, 8.2, seed ^ 0x5eed)?;
    let noisy = simulate_low_dose(&op.forward_project(&truth)?, &model)?;
    let weights = wls_weights(&noisy, &model)?;
    Ok(Instance { truth, noisy, weights })
}

/// Worst `|<Ax,y> - <x,Aᵀy>| / (|Ax||y|)` over random dense pairs.
pub fn adjoint_check(mode: Interpolation, n: usize, views: usize, dets: usize, instances: u64, corrupt: bool) -> ldct::Result<Check> {
    let op = operator_for(square_operator(n, 1.0, views, dets, mode)?, corrupt);
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Image::from_fn(op.grid(), |_, _| rng.random_range(-1.0..1.0));
        let geo = op.geometry().clone();
        let y = Sinogram::from_vec(geo.clone(), (0..geo.n_rays()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        worst = worst.max(adjoint_mismatch(&*op, &x, &y)?);
    }
    let name = match mode {
        Interpolation::Joseph => "adjoint_joseph",
        Interpolation::DistanceDriven => "adjoint_distance_driven",
    };
    Ok(Check::at_most(name, worst, ADJOINT_TOL, format!("{instances} pairs, {n}^2, {views} views")))
}

/// Relative L2 error of a projected centred disk against exact chord lengths.
pub fn disk_oracle_check(corrupt: bool) -> ldct::Result<Check> {
    let grid = ImageGrid::new(128, 128, 0.25)?;
    let geo = Arc::new(FanBeamGeometry::covering(&grid, 90, 192)?);
    let disk = Ellipse::circle([0.0, 0.0], 10.0, 0.02)?;
    let exact = analytic_sinogram(&[disk], &geo);
    let img = rasterize(grid, &[disk]);
    let mut worst: f64 = 0.0;
    for mode in [Interpolation::Joseph, Interpolation::DistanceDriven] {
        let op = operator_for(ProjectionOperator::new(grid, geo.clone(), mode)?, corrupt);
        worst = worst.max(rel_l2(op.apply(&img)?.values(), exact.values()));
    }
    Ok(Check::at_most("disk_oracle", worst, DISK_TOL, "r = 10 mm disk, 128^2 at 0.25 mm, both modes"))
}

/// Worst relative error of the empirical added-noise variance over three
/// dose settings and six line-integral levels.
pub fn noise_variance_check(draws: u64) -> ldct::Result<Check> {
    let ys = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5];
    let geo = Arc::new(FanBeamGeometry::full_scan(1, ys.len(), 100.0, 200.0, 1.0)?);
    let y = Sinogram::from_vec(geo, ys.to_vec())?;
    let mut worst: f64 = 0.0;
    for (i0, a, se) in [(1e5, 0.2, 8.2), (1e4, 0.5, 0.0), (2e5, 0.1, 20.0)] {
        let model = NoiseModel::new(i0, a, se, 0)?;
        let mut s1 = [0.0; 6];
        let mut s2 = [0.0; 6];
        for seed in 0..draws {
            let out = simulate_low_dose(&y, &model.with_seed(seed))?;
            for (k, (o, c)) in out.values().iter().zip(&ys).enumerate() {
                s1[k] += o - c;
                s2[k] += (o - c) * (o - c);
            }
        }
        for (k, &yk) in ys.iter().enumerate() {
            let mean = s1[k] / draws as f64;
            let var = s2[k] / draws as f64 - mean * mean;
            let want = model.added_variance(yk);
            worst = worst.max((var - want).abs() / want);
        }
    }
    Ok(Check::at_most("noise_variance", worst, NOISE_VAR_TOL, format!("{draws} draws x 18 settings")))
}

/// Count of bins where `a = 1` changes the sinogram; must be zero.
pub fn full_dose_check() -> ldct::Result<Check> {
    let op = square_operator(32, 1.0, 60, 64, Interpolation::Joseph)?;
    let inst = synthetic_instance(&op, 3)?;
    let clean = op.forward_project(&inst.truth)?;
    let mut changed = 0usize;
    for seed in [0, 1, 99] {
        let out = simulate_low_dose(&clean, &NoiseModel::new(1e5, 1.0, 8.2, seed)?)?;
        changed += out.values().iter().zip(clean.values()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    Ok(Check::at_most("full_dose_identity", changed as f64, 0.0, "bins changed at a = 1, 3 seeds"))
}

/// Outcome of a gradient check over several instances; instances whose
/// finite-difference stencil crosses a ReLU kink are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSweep {
    pub worst_rel: f64,
    pub kink_free: usize,
    pub skipped: usize,
}

fn sweep_check(name: &str, s: &GradSweep, required: usize) -> Check {
    let mut c = Check::at_most(
        name,
        s.worst_rel,
        FD_TOL,
        format!("{} kink-free, {} skipped, h = {FD_STEP:e}", s.kink_free, s.skipped),
    );
    if s.kink_free < required {
        c.passed = false;
        c.detail = format!("{} (needs {required} kink-free instances)", c.detail);
    }
    c
}

/// Gradient check of `MSE(D_θ(x), x̂)` for a 3-layer denoiser of `width`.
pub fn denoiser_gradient_sweep(width: usize, seeds: std::ops::Range<u64>, wanted: usize) -> ldct::Result<GradSweep> {
    let op = square_operator(16, 4.0, 24, 24, Interpolation::Joseph)?;
    let net = ConvNet::single_channel(3, width)?;
    let mut out = GradSweep {
        worst_rel: 0.0,
        kink_free: 0,
        skipped: 0,
    };
    for seed in seeds {
        let s = synthetic_instance(&op, 40 + seed)?;
        let x = fbp(&op, &s.noisy, FbpFilter::RamLak)?;
        let params = randomized_params(&net, seed);
        let d = ConvDenoiser::with_params(net.clone(), params.clone(), DEFAULT_SCALE)?;
        let (_, g) = d.loss_and_grad(&params, &x, &s.truth)?;
        match check_gradient(|p| mse(&d.denoise_with(p, &x)?, &s.truth), |p| d.activation_pattern(p, &x), &params, &g, FD_STEP)? {
            Some(r) => {
                out.worst_rel = out.worst_rel.max(r.worst_rel);
                out.kink_free += 1;
            }
            None => out.skipped += 1,
        }
        if out.kink_free == wanted {
            break;
        }
    }
    Ok(out)
}

/// Random step sizes in [0.5, 1] and randomized regularizer layers.
fn random_unrolled(op: &Arc<ProjectionOperator>, stages: usize, width: usize, seed: u64) -> ldct::Result<UnrolledNet> {
    let net = ConvNet::single_channel(3, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for t in 0..stages {
        params.push(rng.random_range(0.5..1.0));
        params.extend(randomized_params(&net, seed * 31 + t as u64));
    }
    let spec = UnrolledSpec {
        stages,
        net,
        scale: DEFAULT_SCALE,
    };
    UnrolledNet::with_params(op.clone(), spec, params)
}

/// Gradient check of the unrolled training loss, T = 3, width 4.
pub fn unrolled_gradient_sweep(seeds: std::ops::Range<u64>, wanted: usize) -> ldct::Result<GradSweep> {
    let op = Arc::new(square_operator(16, 4.0, 24, 24, Interpolation::Joseph)?);
    let mut out = GradSweep {
        worst_rel: 0.0,
        kink_free: 0,
        skipped: 0,
    };
    for seed in seeds {
        let net = random_unrolled(&op, 3, 4, seed)?;
        let s = synthetic_instance(&op, 70 + seed)?;
        let input = UnrolledInput::prepare(&op, s.noisy, s.weights, FbpFilter::RamLak)?;
        let params = net.params().to_vec();
        let (_, g) = net.loss_and_grad(&params, &input, &s.truth)?;
        match check_gradient(|p| net.loss(p, &input, &s.truth), |p| net.activation_pattern(p, &input), &params, &g, FD_STEP)? {
            Some(r) => {
                out.worst_rel = out.worst_rel.max(r.worst_rel);
                out.kink_free += 1;
            }
            None => out.skipped += 1,
        }
        if out.kink_free == wanted {
            break;
        }
    }
    Ok(out)
}

pub fn gradient_checks() -> ldct::Result<Vec<Check>> {
    let mut out = Vec::new();
    for width in [4, 8, 16] {
        let s = denoiser_gradient_sweep(width, 0..8, 2)?;
        out.push(sweep_check(&format!("gradient_denoiser_w{width}"), &s, 1));
    }
    let s = unrolled_gradient_sweep(0..32, 3)?;
    out.push(sweep_check("gradient_unrolled", &s, 3));
    Ok(out)
}

/// GD, ADMM and identity-RED against a converged CG solve of the normal
/// equations on a 16² instance with mean-normalized weights.
pub fn solver_agreement_check() -> ldct::Result<Check> {
    let op = square_operator(16, 4.0, 90, 48, Interpolation::Joseph)?;
    let s = synthetic_instance(&op, 11)?;
    let m = s.weights.iter().sum::<f64>() / s.weights.len() as f64;
    let w: Vec<f64> = s.weights.iter().map(|v| v / m).collect();
    let f = WlsFidelity::new(&op, s.noisy.clone(), w)?;
    let x0 = Image::zeros(op.grid());
    let no_tv = TvRegularizer::new(0.0, TvVariant::Anisotropic)?;
    let reference = normal_equations_solve(&f, &x0, 5000, 1e-15)?;
    let gd = gd_reconstruct(&f, &no_tv, &SolverConfig { n_iters: 2000, ..Default::default() }, &x0)?;
    let cfg = SolverConfig { n_iters: 50, ..Default::default() };
    let admm = admm_reconstruct(&f, &no_tv, &cfg, &x0)?;
    let red = red_reconstruct(&f, &IdentityDenoiser, &cfg, &x0)?;
    let errs = [gd.image, admm.image, red.image].map(|x| rel_l2(x.values(), reference.values()));
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Ok(Check::at_most(
        "solver_agreement",
        worst,
        SOLVER_TOL,
        format!("rel L2 to CG: gd {:.1e}, admm {:.1e}, red {:.1e}", errs[0], errs[1], errs[2]),
    ))
}

/// Untrained unrolled net against GD with step `1/L̂` for T = 1..=5.
pub fn unrolled_equivalence_check() -> ldct::Result<Check> {
    let op = Arc::new(square_operator(32, 4.0, 30, 48, Interpolation::Joseph)?);
    let s = synthetic_instance(&op, 9)?;
    let input = UnrolledInput::prepare(&op, s.noisy, s.weights, FbpFilter::RamLak)?;
    let f = WlsFidelity::new(&*op, input.sinogram.clone(), input.weights.clone())?;
    let no_tv = TvRegularizer::new(0.0, TvVariant::Anisotropic)?;
    let mut worst: f64 = 0.0;
    for stages in 1..=5 {
        let net = UnrolledNet::new(op.clone(), stages, ConvNet::single_channel(3, 4)?, 3)?;
        let out = net.forward(&input)?;
        let cfg = SolverConfig {
            n_iters: stages,
            step: StepSize::Fixed(1.0 / input.lipschitz),
            ..Default::default()
        };
        let gd = gd_reconstruct(&f, &no_tv, &cfg, &input.init)?;
        let d = out.values().iter().zip(gd.image.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
    }
    Ok(Check::at_most("unrolled_equals_gd", worst, UNROLLED_TOL, "max abs diff, T = 1..5, 32^2"))
}

/// Sum of view-by-view channels against FBP, relative max error.
pub fn vvbp_check() -> ldct::Result<Check> {
    let op = square_operator(32, 1.0, 60, 64, Interpolation::Joseph)?;
    let s = synthetic_instance(&op, 5)?;
    let mut worst: f64 = 0.0;
    for filter in [FbpFilter::RamLak, FbpFilter::Hann] {
        let full = fbp(&op, &s.noisy, filter)?;
        let mut sum = vec![0.0; full.values().len()];
        for c in vvbp_stack(&op, &s.noisy, filter)? {
            sum.iter_mut().zip(c.values()).for_each(|(a, v)| *a += v);
        }
        let peak = full.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = sum.iter().zip(full.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d / peak);
    }
    Ok(Check::at_most("vvbp_sums_to_fbp", worst, VVBP_TOL, "both filters"))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Negative control: scales the forward projector used by the
    /// adjoint and disk checks.
    pub corrupt_projector: bool,
}

pub fn run_checks(opts: VerifyOptions) -> ldct::Result<Vec<Check>> {
    let c = opts.corrupt_projector;
    let mut out = vec![
        adjoint_check(Interpolation::Joseph, 32, 60, 64, 20, c)?,
        adjoint_check(Interpolation::DistanceDriven, 32, 60, 64, 20, c)?,
        disk_oracle_check(c)?,
        noise_variance_check(10_000)?,
        full_dose_check()?,
    ];
    out.extend(gradient_checks()?);
    out.push(solver_agreement_check()?);
    out.push(unrolled_equivalence_check()?);
    out.push(vvbp_check()?);
    Ok(out)
}
