//! Binary array files: `LDCT` magic, u16 version, u8 dtype, u8 rank, u32
//! dims, then little-endian samples in row-major order. Each file gets a
//! JSON sidecar at `<path>.json` describing what the array holds.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

pub const MAGIC: &[u8; 4] = b"LDCT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }

    fn from_code(c: u8) -> anyhow::Result<Self> {
        Ok(match c {
            0 => Dtype::F64,
            1 => Dtype::F32,
            _ => bail!("unknown dtype code {c}"),
        })
    }

    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// Samples are held as f64 in memory; `F32` files round on write.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayFile {
    pub fn new(dtype: Dtype, dims: Vec<usize>, data: Vec<f64>) -> anyhow::Result<Self> {
        ensure!(!dims.is_empty() && dims.len() <= u8::MAX as usize, "rank must be 1..=255");
        ensure!(dims.iter().all(|&d| d <= u32::MAX as usize), "dimension exceeds u32");
        let n: usize = dims.iter().product();
        ensure!(n == data.len(), "dims {dims:?} hold {n} samples, got {}", data.len());
        Ok(Self { dtype, dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + self.dtype.width() * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self.dtype {
            Dtype::F64 => self.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Dtype::F32 => self.data.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> anyhow::Result<Self> {
        ensure!(bytes.len() >= 8 && &bytes[..4] == MAGIC, "not an LDCT array file");
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        ensure!(version == VERSION, "unsupported array version {version}");
        let dtype = Dtype::from_code(bytes[6])?;
        let rank = bytes[7] as usize;
        ensure!(rank > 0, "array has rank 0");
        let header = 8 + 4 * rank;
        ensure!(bytes.len() >= header, "truncated header");
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .context("array size overflows")?;
        let body = &bytes[header..];
        ensure!(
            Some(body.len()) == n.checked_mul(dtype.width()),
            "expected {n} samples of {} bytes, found {} bytes",
            dtype.width(),
            body.len()
        );
        let data = match dtype {
            Dtype::F64 => body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        Ok(Self { dtype, dims, data })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayKind {
    /// Attenuation image in mm⁻¹, dims `[ny, nx]`.
    Image,
    /// Line integrals, dims `[views, dets]`.
    Sinogram,
    /// Inverse-variance weights, dims `[views, dets]`.
    Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: ArrayKind,
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub description: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the array and its sidecar.
pub fn write_with_sidecar(path: &Path, array: &ArrayFile, kind: ArrayKind, description: &str) -> CliResult<()> {
    array.write(path)?;
    let meta = Sidecar {
        kind,
        dtype: array.dtype,
        dims: array.dims.clone(),
        description: description.to_string(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).context("encoding sidecar")?;
    std::fs::write(&side, text).with_context(|| format!("writing {}", side.display()))?;
    Ok(())
}
