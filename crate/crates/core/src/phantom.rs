//! Ellipse phantoms: pixel rasterization and exact line integrals.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{FanBeamGeometry, Image, ImageGrid, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// Center (mm).
    pub center: [f64; 2],
    /// Semi-axes (mm) along the rotated x and y directions.
    pub semi_axes: [f64; 2],
    /// Counter-clockwise rotation (rad).
    pub rotation: f64,
    /// Additive attenuation (mm⁻¹); negative values carve nested regions.
    pub density: f64,
}

impl Ellipse {
    pub fn new(center: [f64; 2], semi_axes: [f64; 2], rotation: f64, density: f64) -> Result<Self> {
        if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
            return invalid(format!("ellipse semi-axes must be positive, got {semi_axes:?}"));
        }
        Ok(Self {
            center,
            semi_axes,
            rotation,
            density,
        })
    }

    pub fn circle(center: [f64; 2], radius: f64, density: f64) -> Result<Self> {
        Self::new(center, [radius, radius], 0.0, density)
    }

    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [dx * c + dy * s, -dx * s + dy * c]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let q = self.to_local(p);
        let u = q[0] / self.semi_axes[0];
        let w = q[1] / self.semi_axes[1];
        u * u + w * w <= 1.0
    }

    /// Length of the intersection of the line `origin + t * dir` (unit `dir`)
    /// with the ellipse.
    pub fn chord(&self, origin: [f64; 2], dir: [f64; 2]) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        let q = self.to_local(origin);
        let e = [dir[0] * c + dir[1] * s, -dir[0] * s + dir[1] * c];
        let q = [q[0] / self.semi_axes[0], q[1] / self.semi_axes[1]];
        let e = [e[0] / self.semi_axes[0], e[1] / self.semi_axes[1]];
        let a = e[0] * e[0] + e[1] * e[1];
        let b = 2.0 * (q[0] * e[0] + q[1] * e[1]);
        let cc = q[0] * q[0] + q[1] * q[1] - 1.0;
        let disc = b * b - 4.0 * a * cc;
        if disc <= 0.0 {
            0.0
        } else {
            disc.sqrt() / a
        }
    }

    pub fn scaled_density(mut self, factor: f64) -> Self {
        self.density *= factor;
        self
    }
}

/// Modified Shepp–Logan table (Toft's high-contrast densities) in
/// normalized coordinates: `(cx, cy, a, b, rotation_deg, density)`.
pub const SHEPP_LOGAN_TABLE: [[f64; 6]; 10] = [
    [0.0, 0.0, 0.69, 0.92, 0.0, 1.0],
    [0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8],
    [0.22, 0.0, 0.11, 0.31, -18.0, -0.2],
    [-0.22, 0.0, 0.16, 0.41, 18.0, -0.2],
    [0.0, 0.35, 0.21, 0.25, 0.0, 0.1],
    [0.0, 0.1, 0.046, 0.046, 0.0, 0.1],
    [0.0, -0.1, 0.046, 0.046, 0.0, 0.1],
    [-0.08, -0.605, 0.046, 0.023, 0.0, 0.1],
    [0.0, -0.605, 0.023, 0.023, 0.0, 0.1],
    [0.06, -0.605, 0.023, 0.046, 0.0, 0.1],
];

/// Shepp–Logan ellipses filling a disc of `radius` mm, densities times `scale`.
pub fn shepp_logan_ellipses(radius: f64, scale: f64) -> Vec<Ellipse> {
    SHEPP_LOGAN_TABLE
        .iter()
        .map(|r| Ellipse {
            center: [r[0] * radius, r[1] * radius],
            semi_axes: [r[2] * radius, r[3] * radius],
            rotation: r[4].to_radians(),
            density: r[5] * scale,
        })
        .collect()
}

/// Sum of ellipse densities at each pixel center.
pub fn rasterize(grid: ImageGrid, ellipses: &[Ellipse]) -> Image {
    Image::from_fn(grid, |x, y| {
        ellipses
            .iter()
            .filter(|e| e.contains([x, y]))
            .map(|e| e.density)
            .sum()
    })
}

/// Shepp–Logan phantom inscribed in the grid (radius = half the shorter side).
pub fn shepp_logan(grid: ImageGrid, scale: f64) -> Result<Image> {
    if !(scale > 0.0) {
        return invalid(format!("phantom scale must be positive, got {scale}"));
    }
    let (w, h) = grid.extent();
    Ok(rasterize(grid, &shepp_logan_ellipses(0.5 * w.min(h), scale)))
}

/// Exact fan-beam line integrals of an ellipse set.
pub fn analytic_sinogram(ellipses: &[Ellipse], geometry: &Arc<FanBeamGeometry>) -> Sinogram {
    let n_dets = geometry.n_dets();
    let values: Vec<f64> = (0..geometry.n_rays())
        .into_par_iter()
        .map(|r| {
            let (origin, dir) = geometry.ray(r / n_dets, r % n_dets);
            ellipses.iter().map(|e| e.density * e.chord(origin, dir)).sum()
        })
        .collect();
    Sinogram::with_values(geometry.clone(), values)
}

/// Random soft-tissue style phantom inside a disc of `radius` mm: one body
/// ellipse of density `scale` and 3 to 7 inner structures with
/// contrasts in `[-0.4, 0.6] * scale`.
pub fn random_phantom<R: Rng>(rng: &mut R, radius: f64, scale: f64) -> Vec<Ellipse> {
    let mut out = Vec::new();
    let ax = radius * rng.random_range(0.75..0.92);
    let ay = radius * rng.random_range(0.65..0.9);
    let body = Ellipse {
        center: [0.0, 0.0],
        semi_axes: [ax, ay],
        rotation: rng.random_range(-0.3..0.3),
        density: scale,
    };
    out.push(body);
    let n_inner = rng.random_range(3..=7);
    for _ in 0..n_inner {
        let a = radius * rng.random_range(0.05..0.3);
        let b = radius * rng.random_range(0.05..0.3);
        // keep the inner structure within the body's inscribed circle
        let reach = (ax.min(ay) - a.max(b)).max(0.0);
        let r = reach * rng.random_range(0.0f64..1.0).sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let mut contrast: f64 = rng.random_range(-0.4..0.6);
        if contrast.abs() < 0.1 {
            contrast = 0.1f64.copysign(contrast);
        }
        out.push(Ellipse {
            center: [r * phi.cos(), r * phi.sin()],
            semi_axes: [a, b],
            rotation: rng.random_range(0.0..std::f64::consts::PI),
            density: contrast * scale,
        });
    }
    out
}
