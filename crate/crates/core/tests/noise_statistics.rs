use std::sync::Arc;

use ldct::noise::{simulate_low_dose, NoiseModel};
use ldct::{FanBeamGeometry, Sinogram};

fn sino(values: Vec<f64>) -> Sinogram {
    let n = values.len();
    let geo = Arc::new(FanBeamGeometry::full_scan(1, n, 100.0, 200.0, 1.0).unwrap());
    Sinogram::from_vec(geo, values).unwrap()
}

#[test]
fn empirical_variance_matches_closed_form() {
    let ys = vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5];
    let y = sino(ys.clone());
    let n = 10_000;
    for &(i0, a, se) in &[(1e5, 0.2, 8.2), (1e4, 0.5, 0.0), (2e5, 0.1, 20.0)] {
        let mut s1 = vec![0.0; ys.len()];
        let mut s2 = vec![0.0; ys.len()];
        for seed in 0..n {
            let m = NoiseModel::new(i0, a, se, seed).unwrap();
            let out = simulate_low_dose(&y, &m).unwrap();
            for (k, (o, c)) in out.values().iter().zip(&ys).enumerate() {
                let d = o - c;
                s1[k] += d;
                s2[k] += d * d;
            }
        }
        let model = NoiseModel::new(i0, a, se, 0).unwrap();
        for (k, &yk) in ys.iter().enumerate() {
            let mean = s1[k] / n as f64;
            let var = s2[k] / n as f64 - mean * mean;
            let want = model.added_variance(yk);
            let rel = (var - want).abs() / want;
            assert!(rel < 0.05, "i0={i0} a={a} y={yk}: {var} vs {want}");
            // mean offset within 4 standard errors
            assert!(mean.abs() < 4.0 * (want / n as f64).sqrt());
        }
    }
}

#[test]
fn bins_are_uncorrelated() {
    let y = sino(vec![2.0; 2]);
    let m0 = NoiseModel::new(1e5, 0.2, 8.2, 0).unwrap();
    let sd = m0.added_variance(2.0).sqrt();
    let n = 10_000;
    let mut c = 0.0;
    for seed in 0..n {
        let out = simulate_low_dose(&y, &m0.with_seed(seed)).unwrap();
        c += (out.values()[0] - 2.0) * (out.values()[1] - 2.0) / (sd * sd);
    }
    assert!((c / n as f64).abs() < 0.04);
}

#[test]
fn full_dose_is_bit_identical() {
    let values: Vec<f64> = (0..200).map(|k| 0.03 * k as f64).collect();
    let y = sino(values);
    for seed in [0, 1, 99] {
        let out = simulate_low_dose(&y, &NoiseModel::new(1e5, 1.0, 8.2, seed).unwrap()).unwrap();
        assert!(out.values().iter().zip(y.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn realization_independent_of_thread_count() {
    let values: Vec<f64> = (0..5000).map(|k| (k % 97) as f64 * 0.05).collect();
    let y = sino(values);
    let m = NoiseModel::new(1e5, 0.2, 8.2, 12).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| simulate_low_dose(&y, &m).unwrap());
    let b = three.install(|| simulate_low_dose(&y, &m).unwrap());
    assert_eq!(a, b);
}
