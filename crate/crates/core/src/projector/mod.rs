//! Matched fan-beam forward projection and backprojection.
//!
//! The system matrix is assembled once per operator and stored twice, by
//! ray and by pixel, so both directions are gathers with a fixed summation
//! order: outputs do not depend on the thread count.

mod distance_driven;
mod fbp;
mod joseph;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fbp::{fbp, filter_sinogram, vvbp_stack, FbpFilter};

use crate::error::{invalid, Result};
use crate::geometry::{FanBeamGeometry, Image, ImageGrid, LinearOperator, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Joseph,
    DistanceDriven,
}

/// Compressed sparse rows of `A` together with the rows of `Aᵀ`.
#[derive(Debug)]
struct SystemMatrix {
    ray_ptr: Vec<usize>,
    ray_pixels: Vec<u32>,
    ray_weights: Vec<f64>,
    pix_ptr: Vec<usize>,
    pix_rays: Vec<u32>,
    pix_weights: Vec<f64>,
}

impl SystemMatrix {
    fn assemble(grid: &ImageGrid, geo: &FanBeamGeometry, mode: Interpolation) -> Self {
        let n_dets = geo.n_dets();
        let per_view: Vec<Vec<Vec<(u32, f64)>>> = (0..geo.n_views())
            .into_par_iter()
            .map(|v| match mode {
                Interpolation::Joseph => (0..n_dets)
                    .map(|k| {
                        let (origin, dir) = geo.ray(v, k);
                        let mut row = Vec::with_capacity(2 * grid.nx().max(grid.ny()));
                        joseph::ray_weights(grid, origin, dir, &mut row);
                        row
                    })
                    .collect(),
                Interpolation::DistanceDriven => distance_driven::view_weights(grid, geo, v),
            })
            .collect();

        let nnz: usize = per_view.iter().flatten().map(Vec::len).sum();
        let mut ray_ptr = Vec::with_capacity(geo.n_rays() + 1);
        let mut ray_pixels = Vec::with_capacity(nnz);
        let mut ray_weights = Vec::with_capacity(nnz);
        let mut counts = vec![0usize; grid.len() + 1];
        ray_ptr.push(0);
        for row in per_view.into_iter().flatten() {
            for (p, w) in row {
                ray_pixels.push(p);
                ray_weights.push(w);
                counts[p as usize + 1] += 1;
            }
            ray_ptr.push(ray_pixels.len());
        }

        // counting-sort transpose; entries of each pixel stay in ray order
        for p in 0..grid.len() {
            counts[p + 1] += counts[p];
        }
        let pix_ptr = counts.clone();
        let mut fill = counts;
        let mut pix_rays = vec![0u32; nnz];
        let mut pix_weights = vec![0.0; nnz];
        for r in 0..geo.n_rays() {
            for e in ray_ptr[r]..ray_ptr[r + 1] {
                let p = ray_pixels[e] as usize;
                let slot = fill[p];
                pix_rays[slot] = r as u32;
                pix_weights[slot] = ray_weights[e];
                fill[p] += 1;
            }
        }
        Self {
            ray_ptr,
            ray_pixels,
            ray_weights,
            pix_ptr,
            pix_rays,
            pix_weights,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.ray_ptr.len() - 1)
            .into_par_iter()
            .with_min_len(64)
            .map(|r| {
                let span = self.ray_ptr[r]..self.ray_ptr[r + 1];
                self.ray_pixels[span.clone()]
                    .iter()
                    .zip(&self.ray_weights[span])
                    .fold(0.0, |acc, (&p, &w)| acc + w * x[p as usize])
            })
            .collect()
    }

    fn backward(&self, y: &[f64]) -> Vec<f64> {
        (0..self.pix_ptr.len() - 1)
            .into_par_iter()
            .with_min_len(64)
            .map(|p| {
                let span = self.pix_ptr[p]..self.pix_ptr[p + 1];
                self.pix_rays[span.clone()]
                    .iter()
                    .zip(&self.pix_weights[span])
                    .fold(0.0, |acc, (&r, &w)| acc + w * y[r as usize])
            })
            .collect()
    }

    fn ray(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.ray_ptr[r]..self.ray_ptr[r + 1];
        self.ray_pixels[span.clone()]
            .iter()
            .zip(&self.ray_weights[span])
            .map(|(&p, &w)| (p as usize, w))
    }
}

/// The system matrix `A` of a grid/scan pair and its exact transpose.
#[derive(Debug)]
pub struct ProjectionOperator {
    grid: ImageGrid,
    geometry: Arc<FanBeamGeometry>,
    mode: Interpolation,
    matrix: SystemMatrix,
}

impl ProjectionOperator {
    pub fn new(grid: ImageGrid, geometry: Arc<FanBeamGeometry>, mode: Interpolation) -> Result<Self> {
        if grid.len() > u32::MAX as usize || geometry.n_rays() > u32::MAX as usize {
            return invalid("problem too large for 32-bit indices");
        }
        if geometry.source_to_iso() <= grid.half_diagonal() {
            return invalid(format!(
                "source at {} mm lies inside the image (half diagonal {} mm)",
                geometry.source_to_iso(),
                grid.half_diagonal()
            ));
        }
        let matrix = SystemMatrix::assemble(&grid, &geometry, mode);
        Ok(Self {
            grid,
            geometry,
            mode,
            matrix,
        })
    }

    pub fn mode(&self) -> Interpolation {
        self.mode
    }

    pub fn nnz(&self) -> usize {
        self.matrix.ray_weights.len()
    }

    /// `(pixel, weight)` entries of the row of `A` for view `v`, bin `k`.
    pub fn ray_footprint(&self, v: usize, k: usize) -> Vec<(usize, f64)> {
        self.matrix.ray(v * self.geometry.n_dets() + k).collect()
    }

    pub fn forward_project(&self, x: &Image) -> Result<Sinogram> {
        if x.grid() != self.grid {
            return invalid(format!("image grid {:?} does not match operator grid {:?}", x.grid(), self.grid));
        }
        Ok(self.forward_values(x.values()))
    }

    pub fn back_project(&self, y: &Sinogram) -> Result<Image> {
        if *y.geometry() != *self.geometry {
            return invalid("sinogram geometry does not match operator geometry");
        }
        Ok(self.back_values(y.values()))
    }

    pub(crate) fn forward_values(&self, x: &[f64]) -> Sinogram {
        Sinogram::with_values(self.geometry.clone(), self.matrix.forward(x))
    }

    pub(crate) fn back_values(&self, y: &[f64]) -> Image {
        Image::with_values(self.grid, self.matrix.backward(y))
    }
}

impl LinearOperator for ProjectionOperator {
    fn grid(&self) -> ImageGrid {
        self.grid
    }

    fn geometry(&self) -> &Arc<FanBeamGeometry> {
        &self.geometry
    }

    fn apply(&self, x: &Image) -> Result<Sinogram> {
        self.forward_project(x)
    }

    fn adjoint(&self, y: &Sinogram) -> Result<Image> {
        self.back_project(y)
    }
}
