use crate::error::Result;
use crate::linalg::{axpy, dot, norm};

#[derive(Debug, Clone)]
pub struct CgOutput {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - Mx|| / ||b||` at exit.
    pub rel_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive definite `M`, stopping once
/// the relative residual is at most `tol` or after `max_iters` iterations.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    x0: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<CgOutput> {
    let mut x = x0.to_vec();
    let bn = norm(b);
    if bn == 0.0 {
        return Ok(CgOutput {
            x: vec![0.0; b.len()],
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    let mx = apply(&x)?;
    let mut r: Vec<f64> = b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while it < max_iters && rr.sqrt() > tol * bn {
        let mp = apply(&p)?;
        let pmp = dot(&p, &mp);
        if !(pmp > 0.0) {
            break;
        }
        let a = rr / pmp;
        axpy(&mut x, a, &p);
        axpy(&mut r, -a, &mp);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
        it += 1;
    }
    // report the true residual, not the recursively updated one
    let mx = apply(&x)?;
    let res: Vec<f64> = b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect();
    let rel = norm(&res) / bn;
    Ok(CgOutput {
        x,
        iterations: it,
        rel_residual: rel,
        converged: rr.sqrt() <= tol * bn,
    })
}
