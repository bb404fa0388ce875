//! 3×3 convolution kernels with zero padding, stride 1.
//!
//! Tensors are channel-major `[c][h][w]`. Kernels are `[cout][cin][3][3]`.

/// Row range of output positions whose input `x + d` is in bounds.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

pub(crate) fn forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias[co]);
        for ci in 0..cin {
            let src = &x[ci * plane..(ci + 1) * plane];
            let k = &kernel[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for (t, &kv) in k.iter().enumerate() {
                if kv == 0.0 {
                    continue;
                }
                let dy = t as isize / 3 - 1;
                let dx = t as isize % 3 - 1;
                let (ylo, yhi) = valid_range(h, dy);
                let (xlo, xhi) = valid_range(w, dx);
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let orow = &mut o[y * w + xlo..y * w + xhi];
                    let start = (sy * w) as isize + xlo as isize + dx;
                    let srow = &src[start as usize..start as usize + (xhi - xlo)];
                    for (a, b) in orow.iter_mut().zip(srow) {
                        *a += kv * b;
                    }
                }
            }
        }
    }
    out
}

/// Gradients with respect to input, kernel and bias.
pub(crate) fn backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    cout: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut gx = vec![0.0; cin * plane];
    let mut gk = vec![0.0; kernel.len()];
    let mut gb = vec![0.0; cout];
    for co in 0..cout {
        let g = &grad_out[co * plane..(co + 1) * plane];
        gb[co] = g.iter().sum();
        for ci in 0..cin {
            let src = &x[ci * plane..(ci + 1) * plane];
            let dst = &mut gx[ci * plane..(ci + 1) * plane];
            let base = (co * cin + ci) * 9;
            for t in 0..9 {
                let kv = kernel[base + t];
                let dy = t as isize / 3 - 1;
                let dx = t as isize % 3 - 1;
                let (ylo, yhi) = valid_range(h, dy);
                let (xlo, xhi) = valid_range(w, dx);
                let mut acc = 0.0;
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let grow = &g[y * w + xlo..y * w + xhi];
                    let start = ((sy * w) as isize + xlo as isize + dx) as usize;
                    let len = xhi - xlo;
                    let srow = &src[start..start + len];
                    acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                    if kv != 0.0 {
                        for (d, a) in dst[start..start + len].iter_mut().zip(grow) {
                            *d += kv * a;
                        }
                    }
                }
                gk[base + t] = acc;
            }
        }
    }
    (gx, gk, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], cin: usize, h: usize, w: usize, k: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (sy, sx) = (y + ky, xx + kx);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let kv = k[(co * cin + ci) * 9 + ((ky + 1) * 3 + kx + 1) as usize];
                                s += kv * x[ci * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out[co * h * w + y as usize * w + xx as usize] = s;
                }
            }
        }
        out
    }

    fn seq(n: usize, a: f64, b: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * a + b).sin()).collect()
    }

    #[test]
    fn matches_naive_loops() {
        let (cin, cout, h, w) = (2, 3, 5, 7);
        let x = seq(cin * h * w, 0.7, 0.1);
        let k = seq(cout * cin * 9, 1.3, 0.4);
        let b = seq(cout, 2.1, 0.0);
        let fast = forward(&x, cin, h, w, &k, &b, cout);
        let slow = naive(&x, cin, h, w, &k, &b, cout);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let (cin, cout, h, w) = (2, 2, 4, 6);
        let x = seq(cin * h * w, 0.3, 0.9);
        let k = seq(cout * cin * 9, 0.8, 0.2);
        let zero_b = vec![0.0; cout];
        let g = seq(cout * h * w, 1.7, 0.5);
        let (gx, gk, gb) = backward(&x, cin, h, w, &k, cout, &g);
        // forward is bilinear in (x, k): <g, conv(x, k)> = <gx, x> = <gk, k>
        let y = forward(&x, cin, h, w, &k, &zero_b, cout);
        let lhs: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum();
        let via_x: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_k: f64 = gk.iter().zip(&k).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - via_k).abs() < 1e-10 * lhs.abs().max(1.0));
        for co in 0..cout {
            let s: f64 = g[co * h * w..(co + 1) * h * w].iter().sum();
            assert!((gb[co] - s).abs() < 1e-12);
        }
    }
}
