use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cluster::{cluster_instances, view_weights};
use super::cone::{cone_tsdf, learn_prototype, max_trunc_sentinel, ROBUST_TRUNC_VOXELS};
use crate::error::{Error, Result};
use crate::geometry::camera::OrthoCamera;
use crate::geometry::mask::SilhouetteMask;
use crate::geometry::volume::{GridSpec, TsdfVolume};
use crate::instance::Instance;
use crate::io::{read_json, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtoConfig {
    /// Number of visual clusters.
    #[serde(rename = "K")]
    pub k: usize,
    /// Lower truncation in voxels (`l = -neg_trunc * voxel_size`).
    pub neg_trunc: f64,
    /// Upper truncation in world units; `None` means the finite sentinel.
    pub max_trunc: Option<f64>,
    pub view_thresh_deg: f64,
    pub grid_size: usize,
    /// Grid side as a multiple of the keypoint mean-shape diameter.
    pub grid_margin: f64,
    /// Blend weight; `None` means `1 / |cluster|`.
    pub lambda: Option<f64>,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        Self {
            k: 4,
            neg_trunc: ROBUST_TRUNC_VOXELS,
            max_trunc: None,
            view_thresh_deg: 20.0,
            grid_size: 64,
            grid_margin: 2.2,
            lambda: None,
        }
    }
}

impl ProtoConfig {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let bad = |k: &str, m: String| Err((k.to_string(), m));
        if self.k == 0 {
            return bad("K", "must be at least 1".into());
        }
        if !(self.neg_trunc >= 0.0) {
            return bad("neg_trunc", format!("must be >= 0, got {}", self.neg_trunc));
        }
        if let Some(m) = self.max_trunc {
            if !(m > 0.0) || !m.is_finite() {
                return bad("max_trunc", format!("must be positive and finite, got {m}"));
            }
        }
        if !(self.view_thresh_deg >= 0.0) {
            return bad("view_thresh_deg", "must be >= 0".into());
        }
        if self.grid_size < 2 {
            return bad("grid_size", "must be at least 2".into());
        }
        if !(self.grid_margin > 0.0) {
            return bad("grid_margin", "must be positive".into());
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return bad("lambda", format!("must be finite and >= 0, got {l}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeCluster {
    pub prototype: TsdfVolume,
    pub alpha_centroid: Vec<f64>,
    pub members: Vec<String>,
}

/// Visual-cluster prototypes sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeModel {
    clusters: Vec<PrototypeCluster>,
    pub lambda: Option<f64>,
    pub min_trunc: f64,
    pub max_trunc: f64,
}

impl PrototypeModel {
    pub fn new(clusters: Vec<PrototypeCluster>, lambda: Option<f64>, min_trunc: f64, max_trunc: f64) -> Result<Self> {
        let first = clusters.first().ok_or_else(|| Error::invalid("a prototype model needs at least one cluster"))?;
        let (grid, dim) = (first.prototype.grid().clone(), first.alpha_centroid.len());
        for c in &clusters {
            if *c.prototype.grid() != grid {
                return Err(Error::GridMismatch("prototypes live on different grids".into()));
            }
            if c.alpha_centroid.len() != dim {
                return Err(Error::invalid("coefficient centroids differ in dimension"));
            }
        }
        Ok(Self { clusters, lambda, min_trunc, max_trunc })
    }

    pub fn clusters(&self) -> &[PrototypeCluster] {
        &self.clusters
    }

    pub fn grid(&self) -> &GridSpec {
        self.clusters[0].prototype.grid()
    }

    pub fn alpha_dim(&self) -> usize {
        self.clusters[0].alpha_centroid.len()
    }

    /// Cluster whose centroid is nearest to `alpha` (lowest index on ties).
    pub fn nearest_cluster(&self, alpha: &[f64]) -> Result<usize> {
        if alpha.len() != self.alpha_dim() {
            return Err(Error::invalid(format!("coefficient vector has {} entries, model expects {}", alpha.len(), self.alpha_dim())));
        }
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.clusters.iter().enumerate() {
            let d: f64 = alpha.iter().zip(&c.alpha_centroid).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }

    pub fn blend_weight(&self, cluster: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / self.clusters[cluster].members.len().max(1) as f64)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut entries = Vec::new();
        for (k, c) in self.clusters.iter().enumerate() {
            let name = format!("proto_{k:03}.bin");
            let path = dir.join(&name);
            c.prototype.write(&path)?;
            written.extend([path.clone(), path.with_extension("json")]);
            entries.push(ClusterEntry { volume: name, alpha_centroid: c.alpha_centroid.clone(), members: c.members.clone() });
        }
        let index = ModelIndex { lambda: self.lambda, min_trunc: self.min_trunc, max_trunc: self.max_trunc, clusters: entries };
        let path = dir.join("index.json");
        write_json(&path, &index)?;
        written.push(path);
        Ok(written)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let index: ModelIndex = read_json(&dir.join("index.json"), "prototype index")?;
        let clusters = index
            .clusters
            .into_iter()
            .map(|e| {
                Ok(PrototypeCluster {
                    prototype: TsdfVolume::read(&dir.join(&e.volume))?,
                    alpha_centroid: e.alpha_centroid,
                    members: e.members,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clusters, index.lambda, index.min_trunc, index.max_trunc)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelIndex {
    lambda: Option<f64>,
    min_trunc: f64,
    max_trunc: f64,
    clusters: Vec<ClusterEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterEntry {
    volume: String,
    alpha_centroid: Vec<f64>,
    members: Vec<String>,
}

/// Grid centered on the origin whose side is `margin` times `diameter`.
pub fn grid_for_diameter(diameter: f64, margin: f64, n: usize) -> Result<GridSpec> {
    GridSpec::centered_cube(margin * diameter, n)
}

/// Clusters the instances by their coefficient vectors and learns one
/// view-weighted prototype per cluster.
pub fn learn_prototypes(instances: &[Instance], alphas: &[Vec<f64>], grid: &GridSpec, config: &ProtoConfig, seed: u64) -> Result<PrototypeModel> {
    config.validate().map_err(|(path, message)| Error::Config { path, message })?;
    if instances.len() != alphas.len() {
        return Err(Error::invalid(format!("{} instances but {} coefficient vectors", instances.len(), alphas.len())));
    }
    let k = config.k.min(instances.len());
    let clustering = cluster_instances(alphas, k, seed)?;
    let l = -config.neg_trunc * grid.voxel_size;
    let big_l = config.max_trunc.unwrap_or_else(|| max_trunc_sentinel(grid));
    let mut clusters = Vec::new();
    for c in 0..k {
        let idx = clustering.members(c);
        let cams: Vec<OrthoCamera> = idx.iter().map(|&i| instances[i].camera.clone()).collect();
        let weights = view_weights(&cams, config.view_thresh_deg);
        let members: Vec<(&SilhouetteMask, &OrthoCamera)> = idx.iter().map(|&i| (&instances[i].mask, &instances[i].camera)).collect();
        let prototype = learn_prototype(&members, &weights, grid, l, big_l)?;
        clusters.push(PrototypeCluster {
            prototype,
            alpha_centroid: clustering.centroids[c].clone(),
            members: idx.iter().map(|&i| instances[i].id.clone()).collect(),
        });
    }
    PrototypeModel::new(clusters, config.lambda, l, big_l)
}

/// The instance's own cone TSDF plus `lambda` times the prototype of the
/// nearest cluster. Returns the volume and the chosen cluster.
pub fn infer_dense_shape(mask: &SilhouetteMask, cam: &OrthoCamera, alpha: &[f64], model: &PrototypeModel) -> Result<(TsdfVolume, usize)> {
    let j = model.nearest_cluster(alpha)?;
    let own = cone_tsdf(mask, cam, model.grid(), model.min_trunc, model.max_trunc)?;
    let vol = own.add_scaled(&model.clusters[j].prototype, model.blend_weight(j))?;
    Ok((vol, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera::Vec2;
    use nalgebra::Matrix3;

    fn toy_model(lambda: Option<f64>, centroids: &[Vec<f64>]) -> (PrototypeModel, SilhouetteMask, OrthoCamera) {
        let mask = SilhouetteMask::from_fn(32, 32, |x, y| (x as f64 - 15.5).hypot(y as f64 - 15.5) < 9.0).unwrap();
        let cam = OrthoCamera::new(10.0, Matrix3::identity(), Vec2::new(15.5, 15.5)).unwrap();
        let grid = GridSpec::centered_cube(2.4, 12).unwrap();
        let clusters = centroids
            .iter()
            .enumerate()
            .map(|(k, a)| PrototypeCluster {
                prototype: TsdfVolume::constant(grid.clone(), -1.0, 1.0, 0.25 * k as f64).unwrap(),
                alpha_centroid: a.clone(),
                members: vec![format!("{k}")],
            })
            .collect();
        (PrototypeModel::new(clusters, lambda, -0.2, 5.0).unwrap(), mask, cam)
    }

    #[test]
    fn zero_lambda_is_the_cone() {
        let (model, mask, cam) = toy_model(Some(0.0), &[vec![0.0], vec![1.0]]);
        let (v, _) = infer_dense_shape(&mask, &cam, &[0.3], &model).unwrap();
        let cone = cone_tsdf(&mask, &cam, model.grid(), -0.2, 5.0).unwrap();
        assert_eq!(v.values(), cone.values());
    }

    #[test]
    fn exact_alpha_selects_its_cluster() {
        let (model, mask, cam) = toy_model(None, &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 2.0]]);
        assert_eq!(infer_dense_shape(&mask, &cam, &[0.5, 2.0], &model).unwrap().1, 2);
        assert!(model.nearest_cluster(&[0.5]).is_err());
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let (model, _, _) = toy_model(None, &[vec![1.0], vec![-1.0]]);
        assert_eq!(model.nearest_cluster(&[0.0]).unwrap(), 0);
    }

    #[test]
    fn model_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (model, _, _) = toy_model(Some(0.5), &[vec![0.0], vec![1.0]]);
        model.write(dir.path()).unwrap();
        assert_eq!(PrototypeModel::read(dir.path()).unwrap(), model);
    }
}
