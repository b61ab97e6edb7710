use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::camera::OrthoCamera;
use crate::geometry::chamfer::{signed_boundary_distance, Raster};
use crate::geometry::mask::SilhouetteMask;
use crate::geometry::volume::{GridSpec, TsdfVolume};

/// Default lower truncation for the robust mode, in voxels.
pub const ROBUST_TRUNC_VOXELS: f64 = 2.0;

/// Finite stand-in for an unbounded upper truncation: ten grid diagonals.
pub fn max_trunc_sentinel(grid: &GridSpec) -> f64 {
    10.0 * grid.diagonal()
}

fn check_bounds(l: f64, big_l: f64) -> Result<()> {
    if !(l <= 0.0 && big_l > 0.0) || !l.is_finite() || !big_l.is_finite() {
        return Err(Error::invalid(format!("truncation needs l <= 0 < L (finite), got [{l}, {big_l}]")));
    }
    Ok(())
}

/// A silhouette cone prepared for repeated sampling.
pub struct Cone {
    field: Raster,
    camera: OrthoCamera,
}

impl Cone {
    pub fn new(mask: &SilhouetteMask, camera: &OrthoCamera) -> Self {
        Self { field: signed_boundary_distance(mask), camera: camera.clone() }
    }

    /// Signed distance to the cone surface in world units (positive outside).
    pub fn distance(&self, x: &crate::geometry::camera::Vec3) -> f64 {
        self.field.sample(&self.camera.project_point(x)) / self.camera.scale()
    }

    fn sees(&self, grid: &GridSpec) -> bool {
        let (w, h) = (self.field.width() as f64, self.field.height() as f64);
        (0..grid.len()).any(|i| {
            let p = self.camera.project_point(&grid.center(i));
            p.x >= -0.5 && p.y >= -0.5 && p.x <= w - 0.5 && p.y <= h - 0.5
        })
    }
}

/// Truncated signed distance to the visual cone of one silhouette, sampled at
/// every voxel center.
pub fn cone_tsdf(mask: &SilhouetteMask, cam: &OrthoCamera, grid: &GridSpec, l: f64, big_l: f64) -> Result<TsdfVolume> {
    check_bounds(l, big_l)?;
    let cone = Cone::new(mask, cam);
    if !cone.sees(grid) {
        return Err(Error::GridCameraMismatch { width: mask.width(), height: mask.height() });
    }
    let values = (0..grid.len()).into_par_iter().map(|i| cone.distance(&grid.center(i)).clamp(l, big_l)).collect();
    TsdfVolume::new(grid.clone(), l, big_l, values)
}

/// `sum_i w_i * cone_tsdf(mask_i, cam_i)`, accumulated per voxel in member
/// order; the bounds widen to `[sum w * l, sum w * L]`.
pub fn learn_prototype(
    members: &[(&SilhouetteMask, &OrthoCamera)],
    weights: &[f64],
    grid: &GridSpec,
    l: f64,
    big_l: f64,
) -> Result<TsdfVolume> {
    check_bounds(l, big_l)?;
    if members.is_empty() {
        return Err(Error::invalid("a prototype needs at least one member"));
    }
    if weights.len() != members.len() {
        return Err(Error::invalid(format!("{} weights for {} members", weights.len(), members.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("member weights must be finite and non-negative"));
    }
    let cones: Vec<Cone> = members.iter().map(|(m, c)| Cone::new(m, c)).collect();
    for (cone, (m, _)) in cones.iter().zip(members) {
        if !cone.sees(grid) {
            return Err(Error::GridCameraMismatch { width: m.width(), height: m.height() });
        }
    }
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.center(i);
            let mut acc = 0.0;
            for (cone, w) in cones.iter().zip(weights) {
                acc += w * cone.distance(&x).clamp(l, big_l);
            }
            acc
        })
        .collect();
    let total: f64 = weights.iter().sum();
    TsdfVolume::new(grid.clone(), total * l, total * big_l, values)
}

/// Voxels with value `<= iso`.
pub fn occupancy(vol: &TsdfVolume, iso: f64) -> Vec<bool> {
    vol.values().iter().map(|&v| v <= iso).collect()
}
