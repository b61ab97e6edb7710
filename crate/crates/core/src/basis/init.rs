//! Initial point clouds from the soft visual hull, and point-cloud meshing.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::camera::Vec3;
use crate::geometry::cloud::{bbox, estimate_normals, kdtree3};
use crate::geometry::marching::extract_isosurface;
use crate::geometry::mesh::TriMesh;
use crate::geometry::volume::{GridSpec, TsdfVolume};
use crate::instance::Instance;
use crate::prototype::{learn_prototype, max_trunc_sentinel};
use crate::seed;

/// Lower truncation of the soft hull, in voxels.
pub const SOFT_TRUNC_VOXELS: f64 = 2.0;

/// Sum of every instance's cone distance clamped to `[-2 voxels, L]`.
pub fn soft_visual_hull(instances: &[Instance], grid: &GridSpec) -> Result<TsdfVolume> {
    let members: Vec<_> = instances.iter().map(|i| (&i.mask, &i.camera)).collect();
    let weights = vec![1.0; members.len()];
    learn_prototype(&members, &weights, grid, -SOFT_TRUNC_VOXELS * grid.voxel_size, max_trunc_sentinel(grid))
}

/// `n` points sampled uniformly over the zero level of the soft visual hull.
/// An empty zero level falls back to the 5th percentile of the field.
pub fn soft_visual_hull_init(instances: &[Instance], grid: &GridSpec, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let vol = soft_visual_hull(instances, grid)?;
    let mut mesh = extract_isosurface(&vol, 0.0);
    if mesh.is_empty() {
        let mut v = vol.values().to_vec();
        v.sort_by(f64::total_cmp);
        let level = v[(v.len() - 1) * 5 / 100];
        log::warn!("soft visual hull has no zero level, extracting at {level:.4e} instead");
        mesh = extract_isosurface(&vol, level);
        if mesh.is_empty() {
            return Err(Error::invalid("soft visual hull is flat; no surface to initialize from"));
        }
    }
    mesh.sample_surface(n, &mut seed::rng(seed))
}

/// A cubic grid of `n` voxels per side holding every instance's object: the
/// center is the least-squares back-projection of the mask centroids, the
/// side 1.4 times the largest mask extent in world units.
pub fn grid_from_instances(instances: &[Instance], n: usize) -> Result<GridSpec> {
    if instances.is_empty() {
        return Err(Error::invalid("no instances"));
    }
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    let mut extent: f64 = 0.0;
    for inst in instances {
        let occ = inst.mask.occupancy();
        let w = inst.width();
        let (mut sum, mut count) = (nalgebra::Vector2::zeros(), 0usize);
        let (mut lo, mut hi) = ([usize::MAX; 2], [0usize; 2]);
        for (idx, _) in occ.iter().enumerate().filter(|(_, &o)| o) {
            let (x, y) = (idx % w, idx / w);
            sum += nalgebra::Vector2::new(x as f64, y as f64);
            count += 1;
            lo = [lo[0].min(x), lo[1].min(y)];
            hi = [hi[0].max(x), hi[1].max(y)];
        }
        if count == 0 {
            return Err(Error::EmptySilhouette);
        }
        let a = inst.camera.linear();
        ata += a.transpose() * a;
        atb += a.transpose() * (sum / count as f64 - inst.camera.translation());
        let px = (hi[0] - lo[0] + 1).max(hi[1] - lo[1] + 1) as f64;
        extent = extent.max(px / inst.camera.scale());
    }
    let svd = ata.svd(true, true);
    let tol = 1e-9 * svd.singular_values.max();
    let center = svd.solve(&atb, tol).map_err(|e| Error::invalid(e.to_string()))?;
    cube_around(&center, 1.4 * extent, n)
}

/// A cubic grid of `n` voxels per side around the points, with the given
/// side as a multiple of their largest extent.
pub fn grid_around(points: &[Vec3], n: usize, margin: f64) -> Result<GridSpec> {
    if points.is_empty() {
        return Err(Error::invalid("no points"));
    }
    let (lo, hi) = bbox(points);
    let side = (hi - lo).max() * margin;
    cube_around(&((lo + hi) / 2.0), side, n)
}

fn cube_around(center: &Vec3, side: f64, n: usize) -> Result<GridSpec> {
    let v = side / n as f64;
    let o = center - Vec3::repeat(side / 2.0 - v / 2.0);
    GridSpec::new([n, n, n], [o.x, o.y, o.z], v)
}

/// Zero level of the signed distance to the cloud: at each voxel, the mean
/// offset along the estimated normals of its `k` nearest points.
pub fn mesh_points(points: &[Vec3], grid: &GridSpec, k: usize) -> Result<TriMesh> {
    let normals = estimate_normals(points, k)?;
    let tree = kdtree3(points);
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.center(i);
            let hits = tree.nearest(&[x.x, x.y, x.z], k)?;
            let (mut sum, mut n) = (0.0, 0usize);
            for h in &hits {
                if let Some(nj) = normals[h.index] {
                    sum += (x - points[h.index]).dot(&nj);
                    n += 1;
                }
            }
            Ok(if n > 0 { sum / n as f64 } else { hits[0].dist2.sqrt() })
        })
        .collect::<Result<_>>()?;
    let bound = grid.diagonal();
    let vol = TsdfVolume::new(grid.clone(), -bound, bound, values)?;
    let mesh = extract_isosurface(&vol, 0.0);
    if mesh.is_empty() {
        return Err(Error::invalid("point cloud encloses no volume on this grid"));
    }
    Ok(mesh)
}
