//! Image lattices, fan-beam scan descriptions and the arrays living on them.
//!
//! Coordinates are in millimetres with the origin at the rotation
//! isocenter. Pixel `(i, j)` (column `i`, row `j`) has its center at
//! `x = (i - (nx-1)/2) * pixel_size`, `y = (j - (ny-1)/2) * pixel_size`,
//! and is stored at offset `j * nx + i`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    nx: usize,
    ny: usize,
    pixel_size: f64,
}

impl ImageGrid {
    pub fn new(nx: usize, ny: usize, pixel_size: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return invalid(format!("grid needs at least one pixel, got {nx}x{ny}"));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return invalid(format!("pixel size must be positive, got {pixel_size}"));
        }
        Ok(Self { nx, ny, pixel_size })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Physical extent `(width, height)` in mm.
    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.pixel_size, self.ny as f64 * self.pixel_size)
    }

    /// Radius of the circle circumscribing the pixel lattice.
    pub fn half_diagonal(&self) -> f64 {
        let (w, h) = self.extent();
        0.5 * (w * w + h * h).sqrt()
    }

    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.nx as f64 - 1.0)) * self.pixel_size
    }

    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.ny as f64 - 1.0)) * self.pixel_size
    }

    /// x coordinate of the center of column 0.
    pub fn x0(&self) -> f64 {
        self.x_center(0)
    }

    /// y coordinate of the center of row 0.
    pub fn y0(&self) -> f64 {
        self.y_center(0)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

/// Attenuation map in mm⁻¹, row-major over its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: ImageGrid,
    values: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn filled(grid: ImageGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_vec(grid: ImageGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return mismatch(format!(
                "image of {}x{} needs {} values, got {}",
                grid.nx(),
                grid.ny(),
                grid.len(),
                values.len()
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite(format!("image value at index {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = grid.y_center(j);
            for i in 0..grid.nx() {
                values.push(f(grid.x_center(i), y));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_same_grid(&self, other: &Image) -> Result<()> {
        if self.grid != other.grid {
            return mismatch(format!(
                "grid {:?} does not match {:?}",
                self.grid, other.grid
            ));
        }
        Ok(())
    }

    pub(crate) fn with_values(grid: ImageGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }
}

/// Circular fan-beam scan with a flat, equispaced detector.
///
/// The source for view angle `beta` sits at `source_to_iso * (cos beta, sin beta)`;
/// the detector line is perpendicular to the central ray at distance
/// `source_to_det` from the source, with its axis along `(-sin beta, cos beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    n_dets: usize,
    source_to_iso: f64,
    source_to_det: f64,
    det_spacing: f64,
    angles: Vec<f64>,
}

impl FanBeamGeometry {
    pub fn new(
        n_dets: usize,
        source_to_iso: f64,
        source_to_det: f64,
        det_spacing: f64,
        angles: Vec<f64>,
    ) -> Result<Self> {
        if angles.is_empty() {
            return invalid("scan needs at least one view");
        }
        if n_dets == 0 {
            return invalid("detector needs at least one bin");
        }
        if !(source_to_iso > 0.0 && source_to_iso.is_finite()) {
            return invalid(format!("source_to_iso must be positive, got {source_to_iso}"));
        }
        if !(source_to_det > source_to_iso && source_to_det.is_finite()) {
            return invalid(format!(
                "source_to_det ({source_to_det}) must exceed source_to_iso ({source_to_iso})"
            ));
        }
        if !(det_spacing > 0.0 && det_spacing.is_finite()) {
            return invalid(format!("det_spacing must be positive, got {det_spacing}"));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return invalid("view angles must be finite");
        }
        Ok(Self {
            n_dets,
            source_to_iso,
            source_to_det,
            det_spacing,
            angles,
        })
    }

    /// Full 2π scan with `n_views` equispaced angles starting at 0.
    pub fn full_scan(
        n_views: usize,
        n_dets: usize,
        source_to_iso: f64,
        source_to_det: f64,
        det_spacing: f64,
    ) -> Result<Self> {
        let angles = (0..n_views)
            .map(|v| 2.0 * PI * v as f64 / n_views as f64)
            .collect();
        Self::new(n_dets, source_to_iso, source_to_det, det_spacing, angles)
    }

    /// Full scan sized so that the fan covers the whole pixel lattice of
    /// `grid` (plus a 2% margin), with the source at three times that radius
    /// and magnification 2.
    pub fn covering(grid: &ImageGrid, n_views: usize, n_dets: usize) -> Result<Self> {
        let radius = 1.02 * grid.half_diagonal();
        let source_to_iso = 3.0 * radius;
        let source_to_det = 2.0 * source_to_iso;
        let half_fan = (radius / source_to_iso).asin();
        let det_spacing = 2.0 * source_to_det * half_fan.tan() / n_dets.max(1) as f64;
        Self::full_scan(n_views, n_dets, source_to_iso, source_to_det, det_spacing)
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn n_dets(&self) -> usize {
        self.n_dets
    }

    pub fn n_rays(&self) -> usize {
        self.n_views() * self.n_dets
    }

    pub fn source_to_iso(&self) -> f64 {
        self.source_to_iso
    }

    pub fn source_to_det(&self) -> f64 {
        self.source_to_det
    }

    pub fn det_spacing(&self) -> f64 {
        self.det_spacing
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Detector coordinate of the center of bin `k`.
    pub fn det_offset(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.n_dets as f64 - 1.0)) * self.det_spacing
    }

    pub fn view(&self, v: usize) -> ViewFrame {
        let beta = self.angles[v];
        let (sin, cos) = beta.sin_cos();
        ViewFrame {
            source: [self.source_to_iso * cos, self.source_to_iso * sin],
            central: [-cos, -sin],
            det_axis: [-sin, cos],
            source_to_det: self.source_to_det,
        }
    }

    /// Ray for view `v` and bin `k`, as (source point, unit direction).
    pub fn ray(&self, v: usize, k: usize) -> ([f64; 2], [f64; 2]) {
        let f = self.view(v);
        let t = self.det_offset(k);
        let d = [
            f.source_to_det * f.central[0] + t * f.det_axis[0],
            f.source_to_det * f.central[1] + t * f.det_axis[1],
        ];
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
        (f.source, [d[0] / n, d[1] / n])
    }
}

/// Per-view source position and detector frame.
#[derive(Debug, Clone, Copy)]
pub struct ViewFrame {
    pub source: [f64; 2],
    /// Unit vector from the source through the isocenter.
    pub central: [f64; 2],
    /// Unit vector along increasing detector coordinate.
    pub det_axis: [f64; 2],
    pub source_to_det: f64,
}

impl ViewFrame {
    /// Central projection of point `p` onto the flat detector.
    pub fn project(&self, p: [f64; 2]) -> f64 {
        let rel = [p[0] - self.source[0], p[1] - self.source[1]];
        let depth = rel[0] * self.central[0] + rel[1] * self.central[1];
        let lateral = rel[0] * self.det_axis[0] + rel[1] * self.det_axis[1];
        lateral * self.source_to_det / depth
    }

    /// Distance from the source to `p` measured along the central ray.
    pub fn depth(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.source[0]) * self.central[0] + (p[1] - self.source[1]) * self.central[1]
    }
}

/// Line integrals, view-major: value `(v, k)` at `v * n_dets + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: Arc<FanBeamGeometry>,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(geometry: Arc<FanBeamGeometry>) -> Self {
        let n = geometry.n_rays();
        Self {
            geometry,
            values: vec![0.0; n],
        }
    }

    pub fn from_vec(geometry: Arc<FanBeamGeometry>, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.n_rays() {
            return mismatch(format!(
                "sinogram of {}x{} needs {} values, got {}",
                geometry.n_views(),
                geometry.n_dets(),
                geometry.n_rays(),
                values.len()
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite(format!("sinogram value at index {k}")));
        }
        Ok(Self { geometry, values })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geometry
    }

    pub fn geometry_arc(&self) -> &Arc<FanBeamGeometry> {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn view(&self, v: usize) -> &[f64] {
        let n = self.geometry.n_dets();
        &self.values[v * n..(v + 1) * n]
    }

    pub fn get(&self, v: usize, k: usize) -> f64 {
        self.values[v * self.geometry.n_dets() + k]
    }

    pub fn check_same_geometry(&self, other: &FanBeamGeometry) -> Result<()> {
        if *self.geometry != *other {
            return mismatch("sinogram geometry does not match");
        }
        Ok(())
    }

    pub(crate) fn with_values(geometry: Arc<FanBeamGeometry>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.n_rays());
        Self { geometry, values }
    }
}

/// A linear map from images to sinograms together with its adjoint.
///
/// Implementations must satisfy `<apply(x), y> = <x, adjoint(y)>` up to
/// rounding.
pub trait LinearOperator: Send + Sync {
    fn grid(&self) -> ImageGrid;
    fn geometry(&self) -> &Arc<FanBeamGeometry>;
    fn apply(&self, x: &Image) -> Result<Sinogram>;
    fn adjoint(&self, y: &Sinogram) -> Result<Image>;
}

/// Relative adjoint mismatch `|<Ax,y> - <x,A'y>| / (||Ax|| ||y||)`.
pub fn adjoint_mismatch(op: &dyn LinearOperator, x: &Image, y: &Sinogram) -> Result<f64> {
    use crate::linalg::{dot, norm};
    let ax = op.apply(x)?;
    let aty = op.adjoint(y)?;
    let lhs = dot(ax.values(), y.values());
    let rhs = dot(x.values(), aty.values());
    let scale = norm(ax.values()) * norm(y.values());
    Ok(if scale > 0.0 {
        (lhs - rhs).abs() / scale
    } else {
        (lhs - rhs).abs()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_extent() {
        let g = ImageGrid::new(64, 64, 1.0).unwrap();
        assert_eq!(g.extent(), (64.0, 64.0));
        let g = ImageGrid::new(1, 1, 2.5).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.x_center(0), 0.0);
        assert_eq!(g.y_center(0), 0.0);
        let g = ImageGrid::new(128, 128, 0.7).unwrap();
        let (w, h) = g.extent();
        assert!((w - 89.6).abs() < 1e-12 && (h - 89.6).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(ImageGrid::new(0, 4, 1.0).is_err());
        assert!(ImageGrid::new(4, 0, 1.0).is_err());
        assert!(ImageGrid::new(4, 4, 0.0).is_err());
        assert!(ImageGrid::new(4, 4, -1.0).is_err());
    }

    #[test]
    fn grid_is_centered() {
        let g = ImageGrid::new(4, 3, 2.0).unwrap();
        assert_eq!(g.x_center(0), -3.0);
        assert_eq!(g.x_center(3), 3.0);
        assert_eq!(g.y_center(0), -2.0);
        assert_eq!(g.y_center(1), 0.0);
    }

    #[test]
    fn geometry_validation() {
        assert!(FanBeamGeometry::full_scan(10, 8, 100.0, 200.0, 1.0).is_ok());
        assert!(FanBeamGeometry::full_scan(10, 8, 100.0, 100.0, 1.0).is_err());
        assert!(FanBeamGeometry::full_scan(0, 8, 100.0, 200.0, 1.0).is_err());
        assert!(FanBeamGeometry::full_scan(10, 8, 100.0, 200.0, 0.0).is_err());
    }

    #[test]
    fn projection_of_isocenter_is_detector_center() {
        let g = FanBeamGeometry::full_scan(7, 8, 100.0, 200.0, 1.0).unwrap();
        for v in 0..7 {
            let f = g.view(v);
            assert!(f.project([0.0, 0.0]).abs() < 1e-12);
            assert!((f.depth([0.0, 0.0]) - 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn image_rejects_non_finite() {
        let g = ImageGrid::new(2, 1, 1.0).unwrap();
        assert!(Image::from_vec(g, vec![0.0, f64::NAN]).is_err());
        assert!(Image::from_vec(g, vec![0.0]).is_err());
    }
}
