use crate::error::{invalid, mismatch, Result};
use crate::geometry::{Image, LinearOperator, Sinogram};
use crate::linalg::{dot, norm, scale};

/// `½ (ỹ - Ax)ᵀ W (ỹ - Ax)` with diagonal weights `W = Σ⁻¹`.
#[derive(Clone)]
pub struct WlsFidelity<'a> {
    op: &'a dyn LinearOperator,
    y: Sinogram,
    weights: Vec<f64>,
}

impl<'a> WlsFidelity<'a> {
    pub fn new(op: &'a dyn LinearOperator, y: Sinogram, weights: Vec<f64>) -> Result<Self> {
        y.check_same_geometry(op.geometry())?;
        if weights.len() != y.values().len() {
            return mismatch(format!(
                "{} weights for {} sinogram bins",
                weights.len(),
                y.values().len()
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return invalid("WLS weights must be positive and finite");
        }
        Ok(Self { op, y, weights })
    }

    /// Unit weights: ordinary least squares.
    pub fn unweighted(op: &'a dyn LinearOperator, y: Sinogram) -> Result<Self> {
        let n = y.values().len();
        Self::new(op, y, vec![1.0; n])
    }

    pub fn operator(&self) -> &'a dyn LinearOperator {
        self.op
    }

    pub fn data(&self) -> &Sinogram {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_scaled_weights(&self, factor: f64) -> Result<Self> {
        let w = self.weights.iter().map(|w| w * factor).collect();
        Self::new(self.op, self.y.clone(), w)
    }

    fn check(&self, x: &Image) -> Result<()> {
        if x.grid() != self.op.grid() {
            return mismatch("image grid does not match the fidelity operator");
        }
        Ok(())
    }

    /// `Ax - ỹ`
    pub fn residual(&self, x: &Image) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut r = self.op.apply(x)?.into_values();
        for (ri, yi) in r.iter_mut().zip(self.y.values()) {
            *ri -= yi;
        }
        Ok(r)
    }

    pub fn value(&self, x: &Image) -> Result<f64> {
        let r = self.residual(x)?;
        Ok(0.5
            * r.iter()
                .zip(&self.weights)
                .map(|(ri, wi)| wi * ri * ri)
                .sum::<f64>())
    }

    /// `AᵀW(Ax - ỹ)`
    pub fn gradient(&self, x: &Image) -> Result<Image> {
        let mut r = self.residual(x)?;
        for (ri, wi) in r.iter_mut().zip(&self.weights) {
            *ri *= wi;
        }
        self.op
            .adjoint(&Sinogram::from_vec(self.op.geometry().clone(), r)?)
    }

    /// `AᵀWAx`
    pub fn normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let img = Image::from_vec(self.op.grid(), x.to_vec())?;
        let mut ax = self.op.apply(&img)?.into_values();
        for (v, w) in ax.iter_mut().zip(&self.weights) {
            *v *= w;
        }
        Ok(self
            .op
            .adjoint(&Sinogram::from_vec(self.op.geometry().clone(), ax)?)?
            .into_values())
    }

    /// `AᵀWỹ`
    pub fn rhs(&self) -> Result<Vec<f64>> {
        let wy: Vec<f64> = self
            .y
            .values()
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| y * w)
            .collect();
        Ok(self
            .op
            .adjoint(&Sinogram::from_vec(self.op.geometry().clone(), wy)?)?
            .into_values())
    }

    /// Power-method estimate of `||AᵀWA||₂`, started from the all-ones image.
    pub fn lipschitz(&self, iterations: usize) -> Result<f64> {
        let n = self.op.grid().len();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut est = 0.0;
        for _ in 0..iterations.max(1) {
            let w = self.normal(&v)?;
            est = dot(&v, &w);
            let nw = norm(&w);
            if nw == 0.0 {
                return Ok(0.0);
            }
            v = w;
            scale(&mut v, 1.0 / nw);
        }
        Ok(est)
    }
}

/// Power iterations used when a solver picks its step automatically.
pub const POWER_ITERATIONS: usize = 50;
