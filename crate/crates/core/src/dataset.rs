//! Dataset directories: `NNN_mask.pgm`, `NNN_camera.json`,
//! `NNN_keypoints.json`, `NNN_depth.bin` (+ `.json` header), `NNN_gt.obj`
//! and a `manifest.json` describing how the set was generated.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::camera::OrthoCamera;
use crate::geometry::mask::SilhouetteMask;
use crate::geometry::mesh::TriMesh;
use crate::instance::{Instance, KeypointFile};
use crate::io::{read_json, write_json};
use crate::synth::{GroundTruthInstance, SceneSpec, Shape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: SceneSpec,
    pub seed: u64,
    pub instances: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub shape: Shape,
    pub latents: Vec<f64>,
    pub true_camera: OrthoCamera,
}

pub fn file_id(id: usize) -> String {
    format!("{id:03}")
}

/// Writes every instance and the manifest; returns the written paths in a
/// fixed order.
pub fn write_dataset(dir: &Path, spec: &SceneSpec, data: &[GroundTruthInstance]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for inst in data {
        let id = file_id(inst.id);
        let mask = dir.join(format!("{id}_mask.pgm"));
        inst.mask.write_pgm(&mask)?;
        let camera = dir.join(format!("{id}_camera.json"));
        write_json(&camera, &inst.camera)?;
        let kp = dir.join(format!("{id}_keypoints.json"));
        let file = KeypointFile {
            keypoints: inst.keypoints.to_records(),
            mask: format!("{id}_mask.pgm"),
            mirror_pairs: inst.keypoints.mirror_pairs.iter().map(|(a, b)| [a.clone(), b.clone()]).collect(),
        };
        write_json(&kp, &file)?;
        let depth = dir.join(format!("{id}_depth.bin"));
        inst.depth.write(&depth)?;
        let gt = dir.join(format!("{id}_gt.obj"));
        inst.mesh.write_obj(&gt)?;
        written.extend([mask, camera, kp, depth.clone(), depth.with_extension("json"), gt]);
    }
    let manifest = Manifest {
        spec: spec.clone(),
        seed: spec.seed,
        instances: data
            .iter()
            .map(|i| ManifestEntry {
                id: file_id(i.id),
                shape: i.shape.clone(),
                latents: i.latents.clone(),
                true_camera: i.true_camera.clone(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    written.push(path);
    Ok(written)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join("manifest.json"), "dataset manifest")
}

/// Instance ids present in `dir`, sorted.
pub fn instance_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_mask.pgm")).map(str::to_owned))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::invalid(format!("no *_mask.pgm files in {}", dir.display())));
    }
    Ok(ids)
}

pub fn read_instance(dir: &Path, id: &str) -> Result<Instance> {
    let mask = SilhouetteMask::read_pgm(&dir.join(format!("{id}_mask.pgm")))?;
    let camera: OrthoCamera = read_json(&dir.join(format!("{id}_camera.json")), "camera")?;
    let kp_path = dir.join(format!("{id}_keypoints.json"));
    let keypoints = if kp_path.exists() {
        let file: KeypointFile = read_json(&kp_path, "keypoints")?;
        Some(file.to_set()?)
    } else {
        None
    };
    Ok(Instance::new(id, mask, camera, keypoints))
}

pub fn read_instances(dir: &Path) -> Result<Vec<Instance>> {
    instance_ids(dir)?.iter().map(|id| read_instance(dir, id)).collect()
}

pub fn read_gt_mesh(dir: &Path, id: &str) -> Result<TriMesh> {
    TriMesh::read_obj(&dir.join(format!("{id}_gt.obj")))
}
