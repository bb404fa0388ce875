//! PSNR/SSIM evaluation against reference images.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::geometry::Image;
use crate::objectives::{mse, ssim};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Zero error; PSNR is unbounded.
    ExactMatch,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::ExactMatch => None,
        }
    }
}

/// `10 log10(peak² / MSE)`
pub fn psnr(x: &Image, reference: &Image, peak: f64) -> Result<Psnr> {
    if !(peak > 0.0 && peak.is_finite()) {
        return invalid(format!("PSNR peak must be positive, got {peak}"));
    }
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(Psnr::ExactMatch);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / m).log10()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    /// `None` for an exact match.
    pub psnr_db: Option<f64>,
    pub exact_match: bool,
    pub ssim: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub peak_convention: String,
    pub samples: Vec<SampleMetrics>,
    /// Over samples with finite PSNR; `None` when every sample matches exactly.
    pub mean_psnr_db: Option<f64>,
    pub std_psnr_db: Option<f64>,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    pub exact_matches: usize,
    pub config_digest: Option<String>,
}

pub const PEAK_CONVENTION: &str = "max(reference)";

/// Mean and population standard deviation. Values are sorted before summing
/// so the result does not depend on sample order.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

/// Per-sample PSNR and SSIM with peak and data range `max(reference)`.
pub fn evaluate(outputs: &[Image], refs: &[Image], method: &str) -> Result<MetricsReport> {
    if outputs.len() != refs.len() {
        return mismatch(format!("{} outputs for {} references", outputs.len(), refs.len()));
    }
    if outputs.is_empty() {
        return invalid("nothing to evaluate");
    }
    let mut samples = Vec::with_capacity(outputs.len());
    for (i, (x, r)) in outputs.iter().zip(refs).enumerate() {
        let peak = r.max();
        if !(peak > 0.0) {
            return invalid(format!("reference {i} has no positive peak"));
        }
        let p = psnr(x, r, peak)?;
        samples.push(SampleMetrics {
            index: i,
            psnr_db: p.db(),
            exact_match: p == Psnr::ExactMatch,
            ssim: ssim(x, r, peak)?,
            peak,
        });
    }
    let finite: Vec<f64> = samples.iter().filter_map(|s| s.psnr_db).collect();
    let (mean_psnr_db, std_psnr_db) = if finite.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&finite);
        (Some(m), Some(s))
    };
    let ssims: Vec<f64> = samples.iter().map(|s| s.ssim).collect();
    let (mean_ssim, std_ssim) = mean_std(&ssims);
    Ok(MetricsReport {
        method: method.to_string(),
        peak_convention: PEAK_CONVENTION.to_string(),
        exact_matches: samples.iter().filter(|s| s.exact_match).count(),
        samples,
        mean_psnr_db,
        std_psnr_db,
        mean_ssim,
        std_ssim,
        config_digest: None,
    })
}

impl MetricsReport {
    /// One row per sample, then mean and std rows.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "inf".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("method,sample,psnr_db,ssim,peak,exact_match\n");
        for m in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6e},{}",
                self.method,
                m.index,
                fmt(m.psnr_db),
                m.ssim,
                m.peak,
                m.exact_match
            );
        }
        let _ = writeln!(s, "{},mean,{},{:.6},,", self.method, fmt(self.mean_psnr_db), self.mean_ssim);
        let _ = writeln!(s, "{},std,{},{:.6},,", self.method, fmt(self.std_psnr_db), self.std_ssim);
        s
    }
}
