use std::path::Path;

use serde::{Deserialize, Serialize};

use super::energy::Weights;
use crate::error::{Error, Result};
use crate::geometry::camera::Vec3;
use crate::io::{read_json, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    /// Number of deformation bases.
    #[serde(rename = "K")]
    pub k: usize,
    /// Points per shape.
    pub points: usize,
    /// Outer iterations.
    pub iters: usize,
    /// Gradient steps on the mean and bases per outer iteration.
    pub inner_steps: usize,
    /// Gradient steps on each coefficient vector per outer iteration.
    pub alpha_steps: usize,
    /// Relative energy change that ends learning.
    pub tol: f64,
    /// Nearest points per boundary pixel or keypoint.
    pub m: usize,
    /// Neighbours per point in the smoothness term.
    pub neighbors: usize,
    /// Neighbourhood size for normals.
    pub normal_k: usize,
    pub weights: Weights,
    /// Initial step as a fraction of the shape diameter.
    pub eta0: f64,
    /// Step decay: `eta_t = eta0 / (1 + t / tau)`.
    pub tau: f64,
    /// Voxels per side of the initialization grid.
    pub grid_size: usize,
    pub fit: FitConfig,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            k: 2,
            points: 1500,
            iters: 60,
            inner_steps: 3,
            alpha_steps: 5,
            tol: 1e-5,
            m: 4,
            neighbors: 6,
            normal_k: 8,
            weights: Weights::default(),
            eta0: 1e-2,
            tau: 50.0,
            grid_size: 48,
            fit: FitConfig::default(),
        }
    }
}

impl BasisConfig {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let bad = |k: &str, m: String| Err((k.to_string(), m));
        if self.points < 4 {
            return bad("points", format!("must be at least 4, got {}", self.points));
        }
        if self.m == 0 || self.m > self.points {
            return bad("m", format!("must be in 1..={}, got {}", self.points, self.m));
        }
        if self.neighbors == 0 || self.neighbors >= self.points {
            return bad("neighbors", format!("must be in 1..{}, got {}", self.points, self.neighbors));
        }
        if self.normal_k < 3 || self.normal_k > self.points {
            return bad("normal_k", format!("must be in 3..={}, got {}", self.points, self.normal_k));
        }
        if !(self.tol >= 0.0) {
            return bad("tol", "must be >= 0".into());
        }
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return bad("eta0", format!("must be positive, got {}", self.eta0));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau", format!("must be positive, got {}", self.tau));
        }
        if self.grid_size < 4 {
            return bad("grid_size", "must be at least 4".into());
        }
        self.weights.validate().map_err(|(k, m)| (format!("weights.{k}"), m))?;
        self.fit.validate().map_err(|(k, m)| (format!("fit.{k}"), m))
    }
}

/// Settings for fitting a learned model to one silhouette.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub iters: usize,
    pub alpha_steps: usize,
    pub camera_steps: usize,
    pub tol: f64,
    pub optimize_scale: bool,
    pub optimize_rotation: bool,
    pub optimize_translation: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { iters: 80, alpha_steps: 3, camera_steps: 2, tol: 1e-6, optimize_scale: true, optimize_rotation: true, optimize_translation: true }
    }
}

impl FitConfig {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if !(self.tol >= 0.0) {
            return Err(("tol".into(), "must be >= 0".into()));
        }
        Ok(())
    }
}

/// `S(alpha) = mean + sum_k alpha_k * bases[k]`, with every basis scaled to
/// Frobenius norm `basis_norm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisShapeModel {
    pub mean: Vec<Vec3>,
    pub bases: Vec<Vec<Vec3>>,
    pub basis_norm: f64,
    /// Rest length of the smoothness term.
    pub delta: f64,
    /// Neighbour lists of the smoothness term.
    pub neighbors: Vec<Vec<usize>>,
    pub config: BasisConfig,
}

impl BasisShapeModel {
    pub fn points(&self) -> usize {
        self.mean.len()
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn shape(&self, alpha: &[f64]) -> Vec<Vec3> {
        let mut s = self.mean.clone();
        for (b, a) in self.bases.iter().zip(alpha) {
            if *a != 0.0 {
                for (x, v) in s.iter_mut().zip(b) {
                    *x += v * *a;
                }
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if n == 0 {
            return Err(Error::invalid("basis model has no points"));
        }
        if self.bases.iter().any(|b| b.len() != n) || self.neighbors.len() != n {
            return Err(Error::invalid("basis model arrays disagree in length"));
        }
        if self.neighbors.iter().flatten().any(|&j| j >= n) {
            return Err(Error::invalid("neighbour index out of range"));
        }
        let finite = self.mean.iter().chain(self.bases.iter().flatten()).all(|p| p.iter().all(|x| x.is_finite()));
        if !finite || !self.delta.is_finite() || !(self.basis_norm > 0.0) {
            return Err(Error::NonFinite { what: "basis model".into(), detail: "non-finite or non-positive entry".into() });
        }
        self.config.validate().map_err(|(path, message)| Error::Config { path, message })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = read_json(path, "basis model")?;
        m.validate()?;
        Ok(m)
    }
}

pub fn frobenius(v: &[Vec3]) -> f64 {
    v.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt()
}
