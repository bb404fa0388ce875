mod common;

use ldct::noise::{simulate_low_dose, NoiseModel};
use ldct::phantom::shepp_logan;
use ldct::pipeline::{
    dual_domain_run, evaluate, DualDomainConfig, GaussianSmoothing, SinogramFilter, Transform,
};
use ldct::projector::{fbp, FbpFilter};
use ldct::LinearOperator;

#[test]
fn identity_pipeline_is_fbp_bitwise() {
    let op = common::operator(32, 4.0, 40, 64);
    let s = common::sample(&op, 3);
    for filter in [FbpFilter::RamLak, FbpFilter::Hann] {
        let cfg = DualDomainConfig { filter, ..Default::default() };
        let out = dual_domain_run(&op, &cfg, &s.noisy).unwrap();
        assert_eq!(out, fbp(&op, &s.noisy, filter).unwrap());
    }
}

#[test]
fn vvbp_sum_matches_fbp() {
    let op = common::operator(32, 4.0, 40, 64);
    let s = common::sample(&op, 5);
    let cfg = DualDomainConfig { transform: Transform::Vvbp, ..Default::default() };
    let out = dual_domain_run(&op, &cfg, &s.noisy).unwrap();
    let full = fbp(&op, &s.noisy, FbpFilter::RamLak).unwrap();
    assert!(common::max_abs_diff(out.values(), full.values()) <= 1e-10);
}

#[test]
fn bp_transform_is_adjoint() {
    let op = common::operator(16, 4.0, 12, 24);
    let s = common::sample(&op, 1);
    let cfg = DualDomainConfig { transform: Transform::Bp, ..Default::default() };
    assert_eq!(dual_domain_run(&op, &cfg, &s.noisy).unwrap(), op.adjoint(&s.noisy).unwrap());
}

#[test]
fn gaussian_smoothing_preserves_constants() {
    let op = common::operator(16, 4.0, 6, 30);
    let mut y = op.apply(&ldct::Image::filled(op.grid(), 1.0)).unwrap();
    y.values_mut().iter_mut().for_each(|v| *v = 2.5);
    let out = GaussianSmoothing::new(1.7).unwrap().filter(&y).unwrap();
    assert!(out.values().iter().all(|v| (v - 2.5).abs() < 1e-14));
    assert!(GaussianSmoothing::new(0.0).is_err());
}

/// Shepp–Logan at 64² on the 60 × 96 experiment geometry, a = 0.2, σe² = 8.2,
/// with I0 = 1e3 so that quantum noise dominates the FBP error.
#[test]
fn gaussian_smoothing_beats_plain_fbp_on_noisy_phantom() {
    let op = common::operator(64, 4.0, 60, 96);
    let truth = shepp_logan(op.grid(), 0.02).unwrap();
    let clean = op.apply(&truth).unwrap();
    let cfg = DualDomainConfig {
        projection: Box::new(GaussianSmoothing::new(0.5).unwrap()),
        ..Default::default()
    };
    let (mut plain, mut smooth, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5 {
        let noisy = simulate_low_dose(&clean, &NoiseModel::new(1e3, 0.2, 8.2, seed).unwrap()).unwrap();
        plain.push(fbp(&op, &noisy, FbpFilter::RamLak).unwrap());
        smooth.push(dual_domain_run(&op, &cfg, &noisy).unwrap());
        refs.push(truth.clone());
    }
    let a = evaluate(&plain, &refs, "fbp").unwrap().mean_psnr_db.unwrap();
    let b = evaluate(&smooth, &refs, "smooth").unwrap().mean_psnr_db.unwrap();
    assert!(b >= a, "smoothed {b} dB vs fbp {a} dB");
}

#[test]
fn geometry_mismatch_rejected() {
    let op = common::operator(16, 4.0, 12, 24);
    let other = common::operator(16, 4.0, 13, 24);
    let y = other.apply(&shepp_logan(other.grid(), 0.02).unwrap()).unwrap();
    assert!(dual_domain_run(&op, &DualDomainConfig::default(), &y).is_err());
}
