//! Joseph's method: step along the dominant axis one pixel column (or row)
//! at a time and interpolate linearly between the two nearest pixels.

use crate::geometry::ImageGrid;

/// Appends the `(pixel, weight)` pairs of the line `origin + t * dir`
/// (unit `dir`) to `out`.
pub(crate) fn ray_weights(grid: &ImageGrid, origin: [f64; 2], dir: [f64; 2], out: &mut Vec<(u32, f64)>) {
    let ps = grid.pixel_size();
    let (nx, ny) = (grid.nx(), grid.ny());
    if dir[0].abs() >= dir[1].abs() {
        let step = ps / dir[0].abs();
        for i in 0..nx {
            let t = (grid.x_center(i) - origin[0]) / dir[0];
            let fj = (origin[1] + t * dir[1] - grid.y0()) / ps;
            push_pair(out, fj, ny, step, |j| grid.index(i, j));
        }
    } else {
        let step = ps / dir[1].abs();
        for j in 0..ny {
            let t = (grid.y_center(j) - origin[1]) / dir[1];
            let fi = (origin[0] + t * dir[0] - grid.x0()) / ps;
            push_pair(out, fi, nx, step, |i| grid.index(i, j));
        }
    }
}

#[inline]
fn push_pair(out: &mut Vec<(u32, f64)>, pos: f64, n: usize, step: f64, index: impl Fn(usize) -> usize) {
    if !(pos > -1.0 && pos < n as f64) {
        return;
    }
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = lo as i64;
    if lo >= 0 && frac < 1.0 {
        let w = (1.0 - frac) * step;
        if w > 0.0 {
            out.push((index(lo as usize) as u32, w));
        }
    }
    let hi = lo + 1;
    if hi < n as i64 && frac > 0.0 {
        out.push((index(hi as usize) as u32, frac * step));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_ray_through_pixel_centers() {
        let grid = ImageGrid::new(4, 4, 1.0).unwrap();
        let mut w = Vec::new();
        // horizontal line through the center of row 1 (y = -0.5)
        ray_weights(&grid, [-10.0, -0.5], [1.0, 0.0], &mut w);
        assert_eq!(w.len(), 4);
        for (k, &(p, wt)) in w.iter().enumerate() {
            assert_eq!(p as usize, grid.index(k, 1));
            assert!((wt - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ray_between_rows_splits_weight() {
        let grid = ImageGrid::new(4, 4, 1.0).unwrap();
        let mut w = Vec::new();
        ray_weights(&grid, [-10.0, 0.0], [1.0, 0.0], &mut w);
        let total: f64 = w.iter().map(|x| x.1).sum();
        assert_eq!(w.len(), 8);
        assert!((total - 4.0).abs() < 1e-14);
    }

    #[test]
    fn ray_missing_grid_has_no_weights() {
        let grid = ImageGrid::new(4, 4, 1.0).unwrap();
        let mut w = Vec::new();
        ray_weights(&grid, [-10.0, 3.1], [1.0, 0.0], &mut w);
        assert!(w.is_empty());
    }
}
