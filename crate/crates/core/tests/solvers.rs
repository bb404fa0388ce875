mod common;

use ldct::linalg::rel_l2;
use ldct::objectives::{TvRegularizer, TvVariant, WlsFidelity};
use ldct::phantom::shepp_logan;
use ldct::pipeline::psnr;
use ldct::projector::{fbp, FbpFilter};
use ldct::solvers::{
    admm_reconstruct, gd_reconstruct, normal_equations_solve, red_reconstruct, red_regularizer_value, red_step,
    Denoiser, IdentityDenoiser, RedMode, SolverConfig, StepSize, TvDenoiser,
};
use ldct::{Error, Image, LinearOperator, Result};
use proptest::prelude::*;

fn no_tv() -> TvRegularizer {
    TvRegularizer::new(0.0, TvVariant::Anisotropic).unwrap()
}

/// 16², 90 views × 48 detectors, low-dose data with mean-normalized weights.
fn small() -> (common::Instance, Vec<f64>) {
    let op = common::operator(16, 4.0, 90, 48);
    let s = common::sample(&op, 11);
    let w = common::normalized(&s.weights);
    (s, w)
}

#[test]
fn three_way_agreement_without_regularization() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.noisy.clone(), w).unwrap();
    let x0 = Image::zeros(s.op.grid());
    let reference = normal_equations_solve(&f, &x0, 5000, 1e-15).unwrap();
    let gd = gd_reconstruct(&f, &no_tv(), &SolverConfig { n_iters: 2000, ..Default::default() }, &x0).unwrap();
    let cfg = SolverConfig { n_iters: 50, ..Default::default() };
    let admm = admm_reconstruct(&f, &no_tv(), &cfg, &x0).unwrap();
    let red = red_reconstruct(&f, &IdentityDenoiser, &cfg, &x0).unwrap();
    for (name, x) in [("gd", &gd.image), ("admm", &admm.image), ("red", &red.image)] {
        let e = rel_l2(x.values(), reference.values());
        assert!(e < 1e-4, "{name}: relative error {e}");
    }
}

#[test]
fn gd_noiseless_converges_to_high_psnr() {
    let op = common::operator(64, 4.0, 180, 128);
    let truth = shepp_logan(op.grid(), 0.02).unwrap();
    let y = op.apply(&truth).unwrap();
    let f = WlsFidelity::unweighted(&*op, y.clone()).unwrap();
    let x0 = fbp(&op, &y, FbpFilter::RamLak).unwrap();
    let out = gd_reconstruct(&f, &no_tv(), &SolverConfig { n_iters: 1000, ..Default::default() }, &x0).unwrap();
    let db = psnr(&out.image, &truth, truth.max()).unwrap().db().unwrap();
    assert!(db >= 40.0, "{db} dB");
}

#[test]
fn zero_iterations_return_start() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.noisy.clone(), w).unwrap();
    let x0 = common::random_image(s.op.grid(), 3, 0.0, 0.02);
    let cfg = SolverConfig { n_iters: 0, ..Default::default() };
    let tv = TvRegularizer::new(1.0, TvVariant::Isotropic).unwrap();
    assert_eq!(gd_reconstruct(&f, &tv, &cfg, &x0).unwrap().image, x0);
    assert_eq!(admm_reconstruct(&f, &tv, &cfg, &x0).unwrap().image, x0);
    assert_eq!(red_reconstruct(&f, &IdentityDenoiser, &cfg, &x0).unwrap().image, x0);
}

#[test]
fn oversized_step_is_reported_as_divergence() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.noisy.clone(), w).unwrap();
    let step = 10.0 / f.lipschitz(50).unwrap();
    let cfg = SolverConfig { n_iters: 200, step: StepSize::Fixed(step), ..Default::default() };
    let err = gd_reconstruct(&f, &no_tv(), &cfg, &Image::zeros(s.op.grid())).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn admm_primal_residual_vanishes() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.noisy.clone(), w).unwrap();
    let tv = TvRegularizer::new(0.5, TvVariant::Anisotropic).unwrap();
    let x0 = fbp(&s.op, &s.noisy, FbpFilter::RamLak).unwrap();
    let cfg = SolverConfig { n_iters: 100, rho: 100.0, ..Default::default() };
    let out = admm_reconstruct(&f, &tv, &cfg, &x0).unwrap();
    let scale = ldct::linalg::norm(out.image.values());
    let last = *out.primal_residual.last().unwrap();
    assert!(last < 1e-3 * scale, "residual {last} vs |x| {scale}");
    assert!(last < out.primal_residual[0]);
}

#[test]
fn admm_keeps_exact_solution_fixed() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.clean.clone(), w).unwrap();
    let cfg = SolverConfig { n_iters: 10, ..Default::default() };
    let out = admm_reconstruct(&f, &no_tv(), &cfg, &s.truth).unwrap();
    assert!(rel_l2(out.image.values(), s.truth.values()) < 1e-6);
}

#[test]
fn cg_budget_shortfall_is_flagged_not_fatal() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.noisy.clone(), w).unwrap();
    let cfg = SolverConfig { n_iters: 3, cg_iters: 1, ..Default::default() };
    let out = admm_reconstruct(&f, &no_tv(), &cfg, &Image::zeros(s.op.grid())).unwrap();
    assert_eq!(out.cg_unconverged, 3);
}

#[test]
fn identity_prior_vanishes() {
    for seed in 0..5 {
        let x = common::random_image(ldct::ImageGrid::new(9, 7, 1.0).unwrap(), seed, -1.0, 1.0);
        assert_eq!(red_regularizer_value(&IdentityDenoiser, &x).unwrap(), 0.0);
    }
}

fn tv_denoiser() -> TvDenoiser {
    TvDenoiser {
        regularizer: TvRegularizer::new(0.002, TvVariant::Anisotropic).unwrap(),
        step: 1.0,
        prox: Default::default(),
    }
}

#[test]
fn convex_mode_limits() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.noisy.clone(), w).unwrap();
    let rhs = f.rhs().unwrap();
    let d = tv_denoiser();
    let x = fbp(&s.op, &s.noisy, FbpFilter::RamLak).unwrap();
    // λ = 0: denoiser bypassed
    let cfg = SolverConfig { red_mode: RedMode::Convex, lambda: 0.0, ..Default::default() };
    let st = red_step(&f, &rhs, &d, &cfg, &x).unwrap();
    assert_eq!(st.next, st.half);
    // β = 0: same as the direct update
    let cfg = SolverConfig { red_mode: RedMode::Convex, beta: 0.0, lambda: 0.5, ..Default::default() };
    let convex = red_step(&f, &rhs, &d, &cfg, &x).unwrap();
    let direct = red_step(&f, &rhs, &d, &SolverConfig::default(), &x).unwrap();
    assert_eq!(convex.next, direct.next);
    assert!(SolverConfig { red_mode: RedMode::Convex, beta: 0.0, lambda: 0.0, ..Default::default() }
        .validate_red()
        .is_err());
}

struct Poison;

impl Denoiser for Poison {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(x.map(|_| f64::NAN))
    }

    fn describe(&self) -> String {
        "poison".into()
    }
}

#[test]
fn non_finite_denoiser_output_is_fatal() {
    let (s, w) = small();
    let f = WlsFidelity::new(&*s.op, s.noisy.clone(), w).unwrap();
    let cfg = SolverConfig { n_iters: 2, ..Default::default() };
    let err = red_reconstruct(&f, &Poison, &cfg, &Image::zeros(s.op.grid())).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gd_objective_non_increasing(seed in 0u64..10_000) {
        let op = common::operator(16, 4.0, 30, 32);
        let s = common::sample(&op, seed);
        let f = WlsFidelity::new(&*op, s.noisy.clone(), common::normalized(&s.weights)).unwrap();
        let out = gd_reconstruct(&f, &no_tv(), &SolverConfig { n_iters: 40, ..Default::default() }, &Image::zeros(op.grid())).unwrap();
        for w in out.objective.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn half_step_is_optimal_and_convex_update_is_bounded(seed in 0u64..10_000, lambda in 0.01f64..5.0, beta in 0.0f64..5.0) {
        let op = common::operator(16, 4.0, 30, 32);
        let s = common::sample(&op, seed);
        let f = WlsFidelity::new(&*op, s.noisy.clone(), common::normalized(&s.weights)).unwrap();
        let rhs = f.rhs().unwrap();
        let x = common::random_image(op.grid(), seed, 0.0, 0.03);
        let cfg = SolverConfig { red_mode: RedMode::Convex, lambda, beta, cg_iters: 200, ..Default::default() };
        let d = tv_denoiser();
        let st = red_step(&f, &rhs, &d, &cfg, &x).unwrap();
        prop_assert!(st.cg.converged);
        // AᵀW(Ax - y) + α(x - xᵗ)
        let mut g = f.gradient(&st.half).unwrap().into_values();
        for ((gi, h), xi) in g.iter_mut().zip(st.half.values()).zip(x.values()) {
            *gi += cfg.alpha * (h - xi);
        }
        let b_norm = ldct::linalg::norm(&rhs.iter().zip(x.values()).map(|(r, xi)| r + cfg.alpha * xi).collect::<Vec<_>>());
        prop_assert!(ldct::linalg::norm(&g) <= 1e-6 * b_norm);
        let dh = d.denoise(&st.half).unwrap();
        for ((n, h), g) in st.next.values().iter().zip(st.half.values()).zip(dh.values()) {
            let lo = h.min(*g);
            let hi = h.max(*g);
            prop_assert!(*n >= lo - 1e-15 && *n <= hi + 1e-15);
        }
    }
}
