//! Small dense vector kernels shared by the solvers.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &mut [f64], alpha: f64) {
    for v in a {
        *v *= alpha;
    }
}

/// Relative L2 distance `||a - b|| / ||b||`; falls back to the absolute
/// distance when `b` is zero.
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff = norm(&sub(a, b));
    let denom = norm(b);
    if denom > 0.0 {
        diff / denom
    } else {
        diff
    }
}
