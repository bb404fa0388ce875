//! Distance-driven weights for one view.
//!
//! Pixel boundaries along the row (or column) axis are projected onto the
//! detector from the source; each bin receives the fraction of its width
//! covered by a pixel footprint times the ray's path length through that
//! row (or column).

use crate::geometry::{FanBeamGeometry, ImageGrid};

/// Per-bin `(pixel, weight)` rows for view `v`.
pub(crate) fn view_weights(grid: &ImageGrid, geo: &FanBeamGeometry, v: usize) -> Vec<Vec<(u32, f64)>> {
    let frame = geo.view(v);
    let n_dets = geo.n_dets();
    let ds = geo.det_spacing();
    let edge0 = geo.det_offset(0) - 0.5 * ds;
    let ps = grid.pixel_size();
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_dets];

    // rays mostly vertical: sweep rows and project x-boundaries
    let vertical = frame.central[1].abs() >= frame.central[0].abs();
    let path: Vec<f64> = (0..n_dets)
        .map(|k| {
            let (_, d) = geo.ray(v, k);
            ps / if vertical { d[1].abs() } else { d[0].abs() }
        })
        .collect();

    let (n_lines, n_along) = if vertical {
        (grid.ny(), grid.nx())
    } else {
        (grid.nx(), grid.ny())
    };
    let along0 = if vertical { grid.x0() } else { grid.y0() } - 0.5 * ps;
    let mut bounds = vec![0.0; n_along + 1];
    for line in 0..n_lines {
        let c = if vertical {
            grid.y_center(line)
        } else {
            grid.x_center(line)
        };
        for (b, t) in bounds.iter_mut().enumerate() {
            let a = along0 + b as f64 * ps;
            let p = if vertical { [a, c] } else { [c, a] };
            *t = frame.project(p);
        }
        for m in 0..n_along {
            let (lo, hi) = if bounds[m] <= bounds[m + 1] {
                (bounds[m], bounds[m + 1])
            } else {
                (bounds[m + 1], bounds[m])
            };
            let k_lo = ((lo - edge0) / ds).floor().max(0.0);
            let k_hi = ((hi - edge0) / ds).floor().min(n_dets as f64 - 1.0);
            if k_hi < k_lo {
                continue;
            }
            let pixel = if vertical {
                grid.index(m, line)
            } else {
                grid.index(line, m)
            } as u32;
            for k in k_lo as usize..=k_hi as usize {
                let e_lo = edge0 + k as f64 * ds;
                let overlap = hi.min(e_lo + ds) - lo.max(e_lo);
                if overlap > 0.0 {
                    rows[k].push((pixel, overlap / ds * path[k]));
                }
            }
        }
    }
    rows
}
