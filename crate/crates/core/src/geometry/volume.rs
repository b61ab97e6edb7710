//! Regular voxel grids of truncated signed distances and their on-disk form.
//!
//! A volume is stored as a raw little-endian `f32` array (x fastest, then y,
//! then z) plus a sidecar JSON header next to it with the `.json` extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::camera::Vec3;
use crate::error::{Error, Result};

/// Voxel-center lattice: voxel `(i, j, k)` sits at `origin + voxel_size * (i, j, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: f64) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("grid dims must be >= 2 per axis, got {dims:?}")));
        }
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(Self { dims, origin, voxel_size })
    }

    /// `n^3` voxels tiling a cube of the given side centered on the world origin.
    pub fn centered_cube(side: f64, n: usize) -> Result<Self> {
        let v = side / n as f64;
        let o = -side / 2.0 + v / 2.0;
        Self::new([n, n, n], [o, o, o], v)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.point(i as f64, j as f64, k as f64)
    }

    /// World position of fractional lattice coordinates.
    pub fn point(&self, i: f64, j: f64, k: f64) -> Vec3 {
        Vec3::new(self.origin[0], self.origin[1], self.origin[2]) + Vec3::new(i, j, k) * self.voxel_size
    }

    pub fn diagonal(&self) -> f64 {
        let d = self.dims;
        Vec3::new((d[0] - 1) as f64, (d[1] - 1) as f64, (d[2] - 1) as f64).norm() * self.voxel_size
    }

    /// All voxel centers in storage order.
    pub fn centers(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }
}

/// A voxel field whose values are clamped to `[min_trunc, max_trunc]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    grid: GridSpec,
    min_trunc: f64,
    max_trunc: f64,
    values: Vec<f64>,
}

impl TsdfVolume {
    /// Builds a volume, clamping every value into the truncation bounds.
    pub fn new(grid: GridSpec, min_trunc: f64, max_trunc: f64, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!("{} values for a grid of {}", values.len(), grid.len())));
        }
        if !(min_trunc <= max_trunc) || !min_trunc.is_finite() || !max_trunc.is_finite() {
            return Err(Error::invalid(format!("bad truncation bounds [{min_trunc}, {max_trunc}]")));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite { what: "volume value".into(), detail: format!("voxel {i}") });
        }
        for v in &mut values {
            *v = v.clamp(min_trunc, max_trunc);
        }
        Ok(Self { grid, min_trunc, max_trunc, values })
    }

    pub fn constant(grid: GridSpec, min_trunc: f64, max_trunc: f64, value: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, min_trunc, max_trunc, vec![value; n])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn min_trunc(&self) -> f64 {
        self.min_trunc
    }

    pub fn max_trunc(&self) -> f64 {
        self.max_trunc
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn negated(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            min_trunc: -self.max_trunc,
            max_trunc: -self.min_trunc,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    /// `self + weight * other` with bounds widened accordingly.
    pub fn add_scaled(&self, other: &TsdfVolume, weight: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("volumes live on different grids".into()));
        }
        let (lo, hi) = if weight >= 0.0 {
            (other.min_trunc * weight, other.max_trunc * weight)
        } else {
            (other.max_trunc * weight, other.min_trunc * weight)
        };
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + weight * b).collect();
        Self::new(self.grid.clone(), self.min_trunc + lo, self.max_trunc + hi, values)
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: self.grid.dims,
            origin: self.grid.origin,
            voxel_size: self.grid.voxel_size,
            min_trunc: self.min_trunc,
            max_trunc: self.max_trunc,
        }
    }

    pub fn write(&self, bin_path: &Path) -> Result<()> {
        write_raw(bin_path, &self.header(), &self.values)
    }

    pub fn read(bin_path: &Path) -> Result<Self> {
        let (header, values) = read_raw(bin_path)?;
        let grid = GridSpec::new(header.dims, header.origin, header.voxel_size)?;
        Self::new(grid, header.min_trunc, header.max_trunc, values)
    }
}

/// Sidecar header shared by volumes and depth maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub min_trunc: f64,
    pub max_trunc: f64,
}

pub fn header_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

pub fn write_raw(bin_path: &Path, header: &VolumeHeader, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
    let hp = header_path(bin_path);
    let text = serde_json::to_string_pretty(header)?;
    std::fs::write(&hp, text).map_err(|e| Error::io(&hp, e))
}

pub fn read_raw(bin_path: &Path) -> Result<(VolumeHeader, Vec<f64>)> {
    let hp = header_path(bin_path);
    let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: VolumeHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Format { format: "volume header", path: hp.clone(), message: e.to_string() })?;
    let bytes = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Format {
            format: "raw volume",
            path: bin_path.to_owned(),
            message: format!("{} bytes for {} floats", bytes.len(), n),
        });
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((header, values))
}
