use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::camera::{OrthoCamera, Vec2, Vec3};
use crate::io::{read_json, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NrsfmConfig {
    /// Number of deformation bases `m`.
    pub bases: usize,
    /// Weight of the in-mask hinge penalty on camera updates.
    pub mask_penalty: f64,
    /// Relative log-likelihood change that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Add horizontally mirrored copies of every instance.
    pub mirror: bool,
}

impl Default for NrsfmConfig {
    fn default() -> Self {
        Self { bases: 2, mask_penalty: 10.0, tol: 1e-6, max_iter: 300, mirror: true }
    }
}

impl NrsfmConfig {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if !(self.mask_penalty >= 0.0) || !self.mask_penalty.is_finite() {
            return Err(("mask_penalty".into(), format!("must be finite and >= 0, got {}", self.mask_penalty)));
        }
        if !(self.tol > 0.0) {
            return Err(("tol".into(), format!("must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(("max_iter".into(), "must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NrsfmInstance {
    pub id: String,
    pub camera: OrthoCamera,
    /// Posterior mean of the deformation coefficients.
    pub z: Vec<f64>,
    #[serde(default)]
    pub mirrored: bool,
}

/// Sparse deformable keypoint model with one camera per instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NrsfmModel {
    pub keypoint_names: Vec<String>,
    pub mean_shape: Vec<Vec3>,
    /// `basis[j][k]` is the displacement of keypoint `k` along basis `j`.
    pub basis: Vec<Vec<Vec3>>,
    pub noise_variance: f64,
    pub instances: Vec<NrsfmInstance>,
    /// Set when the keypoint tracks did not span three dimensions.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub log_likelihood: f64,
    #[serde(default)]
    pub iterations: usize,
}

impl NrsfmModel {
    pub fn keypoints(&self) -> usize {
        self.mean_shape.len()
    }

    pub fn bases(&self) -> usize {
        self.basis.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.keypoints();
        if self.keypoint_names.len() != k || self.basis.iter().any(|b| b.len() != k) {
            return Err(Error::invalid("keypoint count differs between mean shape, names and bases"));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::invalid(format!("noise variance must be >= 0, got {}", self.noise_variance)));
        }
        if let Some(i) = self.instances.iter().find(|i| i.z.len() != self.bases()) {
            return Err(Error::invalid(format!("instance {} has {} coefficients, model has {} bases", i.id, i.z.len(), self.bases())));
        }
        Ok(())
    }

    /// `S̄ + sum_j z_j V_j`.
    pub fn shape(&self, z: &[f64]) -> Vec<Vec3> {
        (0..self.keypoints())
            .map(|k| self.mean_shape[k] + self.basis.iter().zip(z).map(|(b, zj)| b[k] * *zj).sum::<Vec3>())
            .collect()
    }

    /// Model keypoint projections for instance `n`.
    pub fn predict(&self, n: usize) -> Vec<Vec2> {
        let inst = &self.instances[n];
        inst.camera.project(&self.shape(&inst.z))
    }

    pub fn instance(&self, id: &str) -> Option<&NrsfmInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn diameter(&self) -> f64 {
        crate::geometry::cloud::bbox_diagonal(&self.mean_shape)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = read_json(path, "nrsfm model")?;
        m.validate()?;
        Ok(m)
    }
}
