//! The pipeline subcommands. Each one resolves its outputs, does its work,
//! then writes a run manifest beside what it produced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use silcarve::basis::{fit_instance, grid_around, learn_basis, lift_keypoints, mesh_points, BasisShapeModel};
use silcarve::dataset::{instance_ids, read_gt_mesh, read_instance, read_instances, write_dataset};
use silcarve::eval::{hausdorff_norm, median_spacing, point_silhouette, render_depth, render_point_depth, zmae, DepthMap};
use silcarve::geometry::{extract_isosurface, occupancy_iou, OrthoCamera, SilhouetteMask, TriMesh, TsdfVolume};
use silcarve::io::{read_json, write_json};
use silcarve::nrsfm::{fit_nrsfm, NrsfmModel};
use silcarve::prototype::{grid_for_diameter, infer_dense_shape, learn_prototypes, PrototypeModel};
use silcarve::seed::{derive_seed, rng};
use silcarve::synth::{make_dataset, render_mask, SceneSpec};
use silcarve::{Error, Result};

use crate::config::{Metric, RunConfig};
use crate::manifest::{digests, manifest_path, FileDigest, RunManifest};
use crate::{Command, EvalArgs, Export, FitArgs, InferProtoArgs, LearnBasisArgs, LearnProtoArgs, MeshArgs, NrsfmArgs, SynthArgs};

/// Inputs and artifacts of one run, for the manifest.
struct Outcome {
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    /// Where the manifest goes.
    anchor: PathBuf,
}

pub fn dispatch(cmd: Command, mut cfg: RunConfig, args: Vec<String>) -> Result<()> {
    let name = cmd.name();
    let outcome = match cmd {
        Command::Synth(a) => synth(a, &mut cfg)?,
        Command::Nrsfm(a) => nrsfm(a, &mut cfg)?,
        Command::LearnProto(a) => learn_proto(a, &mut cfg)?,
        Command::InferProto(a) => infer_proto(a, &mut cfg)?,
        Command::LearnBasis(a) => learn_basis_cmd(a, &mut cfg)?,
        Command::Fit(a) => fit(a, &mut cfg)?,
        Command::Mesh(a) => mesh(a, &mut cfg)?,
        Command::Eval(a) => eval(a, &mut cfg)?,
    };
    let seed = cfg.seed.unwrap_or(0);
    cfg.seed = Some(seed);
    let hash = |paths: &[PathBuf]| -> Result<Vec<FileDigest>> {
        let mut all = Vec::new();
        for p in paths {
            all.extend(digests(p)?);
        }
        Ok(all)
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        args,
        seed,
        config: cfg,
        inputs: hash(&outcome.inputs)?,
        artifacts: hash(&outcome.artifacts)?,
    };
    let path = manifest_path(&outcome.anchor);
    manifest.write(&path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn output(flag: Option<PathBuf>, cfg: &RunConfig, default: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.out.as_ref().map(|d| d.join(default)))
        .ok_or_else(|| Error::Config { path: "--out".into(), message: "no output given (pass --out or set `out` in the config)".into() })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn synth(a: SynthArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    let mut spec: SceneSpec = read_json(&a.spec, "scene spec")?;
    match cfg.seed {
        Some(s) => spec.seed = s,
        None => cfg.seed = Some(spec.seed),
    }
    let out = a.out.or_else(|| cfg.out.clone()).ok_or_else(|| Error::Config { path: "--out".into(), message: "no output directory given".into() })?;
    let data = make_dataset(&spec)?;
    let written = write_dataset(&out, &spec, &data)?;
    log::info!("{} instances written to {}", data.len(), out.display());
    Ok(Outcome { inputs: vec![a.spec], artifacts: written, anchor: out })
}

fn nrsfm(a: NrsfmArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    let c = &mut cfg.nrsfm;
    if let Some(m) = a.bases {
        c.bases = m;
    }
    if let Some(mu) = a.mask_penalty {
        c.mask_penalty = mu;
    }
    if let Some(n) = a.max_iter {
        c.max_iter = n;
    }
    if a.no_mirror {
        c.mirror = false;
    }
    cfg.validate()?;
    let out = output(a.out, cfg, "nrsfm.json")?;
    let instances = read_instances(&a.input)?;
    let model = fit_nrsfm(&instances, &cfg.nrsfm, cfg.seed.unwrap_or(0))?;
    log::info!("nrsfm: {} iterations, log-likelihood {:.6e}", model.iterations, model.log_likelihood);
    ensure_parent(&out)?;
    model.write(&out)?;
    Ok(Outcome { inputs: vec![a.input], artifacts: vec![out.clone()], anchor: out })
}

/// Dataset instances re-posed with the keypoint model's cameras, and their
/// deformation coefficients.
fn posed_instances(data: &Path, model: &NrsfmModel) -> Result<(Vec<silcarve::instance::Instance>, Vec<Vec<f64>>)> {
    let mut posed = Vec::new();
    let mut alphas = Vec::new();
    for inst in read_instances(data)? {
        let n = model
            .instances
            .iter()
            .find(|n| n.id == inst.id && !n.mirrored)
            .ok_or_else(|| Error::invalid(format!("instance {} is missing from the keypoint model", inst.id)))?;
        alphas.push(n.z.clone());
        posed.push(inst.with_camera(n.camera.clone()));
    }
    Ok((posed, alphas))
}

fn learn_proto(a: LearnProtoArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    let c = &mut cfg.proto;
    if let Some(k) = a.k {
        c.k = k;
    }
    if let Some(t) = a.neg_trunc {
        c.neg_trunc = t;
    }
    if let Some(t) = a.view_thresh {
        c.view_thresh_deg = t;
    }
    if let Some(n) = a.grid_size {
        c.grid_size = n;
    }
    cfg.validate()?;
    let out = output(a.out, cfg, "proto")?;
    let nrsfm = NrsfmModel::read(&a.model)?;
    let (instances, alphas) = posed_instances(&a.data, &nrsfm)?;
    let grid = grid_for_diameter(nrsfm.diameter(), cfg.proto.grid_margin, cfg.proto.grid_size)?;
    let model = learn_prototypes(&instances, &alphas, &grid, &cfg.proto, cfg.seed.unwrap_or(0))?;
    let written = model.write(&out)?;
    log::info!("{} prototypes written to {}", model.clusters().len(), out.display());
    Ok(Outcome { inputs: vec![a.data, a.model], artifacts: written, anchor: out })
}

fn infer_proto(a: InferProtoArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let out = output(a.out, cfg, "volume.bin")?;
    let mask = SilhouetteMask::read_pgm(&a.mask)?;
    let cam: OrthoCamera = read_json(&a.camera, "camera")?;
    let alpha: Vec<f64> = read_json(&a.alpha, "coefficients")?;
    let model = PrototypeModel::read(&a.model)?;
    let (vol, cluster) = infer_dense_shape(&mask, &cam, &alpha, &model)?;
    log::info!("nearest cluster {cluster}");
    ensure_parent(&out)?;
    vol.write(&out)?;
    Ok(Outcome {
        inputs: vec![a.mask, a.camera, a.alpha, a.model],
        artifacts: vec![out.clone(), out.with_extension("json")],
        anchor: out,
    })
}

fn learn_basis_cmd(a: LearnBasisArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    let c = &mut cfg.basis;
    if let Some(k) = a.k {
        c.k = k;
    }
    if let Some(n) = a.points {
        c.points = n;
    }
    if let Some(t) = a.iters {
        c.iters = t;
    }
    cfg.validate()?;
    let out = output(a.out, cfg, "basis.json")?;
    let instances = read_instances(&a.data)?;
    let mut inputs = vec![a.data];
    let keypoints = match &a.nrsfm {
        Some(p) => {
            let model = NrsfmModel::read(p)?;
            inputs.push(p.clone());
            Some(instances.iter().map(|i| lift_keypoints(&model, i)).collect::<Vec<_>>())
        }
        None => None,
    };
    let learned = learn_basis(&instances, keypoints.as_deref(), &cfg.basis, cfg.seed.unwrap_or(0))?;
    if let Some(last) = learned.log.last() {
        log::info!("learn-basis: {} iterations, energy {:.6e}", last.iteration + 1, last.energy.total);
    }
    ensure_parent(&out)?;
    learned.model.write(&out)?;
    Ok(Outcome { inputs, artifacts: vec![out.clone()], anchor: out })
}

fn fit(a: FitArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    let f = &mut cfg.basis.fit;
    if let Some(n) = a.iters {
        f.iters = n;
    }
    if a.fixed_scale {
        f.optimize_scale = false;
    }
    if a.fixed_rotation {
        f.optimize_rotation = false;
    }
    if a.fixed_translation {
        f.optimize_translation = false;
    }
    cfg.validate()?;
    let out = output(a.out, cfg, "fit.json")?;
    let mask = SilhouetteMask::read_pgm(&a.mask)?;
    let cam: OrthoCamera = read_json(&a.camera, "camera")?;
    let model = BasisShapeModel::read(&a.model)?;
    let result = fit_instance(&mask, &cam, &model, &cfg.basis.fit)?;
    log::info!("fit: {} iterations, energy {:.6e}", result.iterations, result.energy.total);
    ensure_parent(&out)?;
    write_json(&out, &result)?;
    let mut artifacts = vec![out.clone()];
    if let Some(path) = a.mesh {
        let obj = match a.export {
            Export::Points => TriMesh::new(result.shape.clone(), Vec::new())?,
            Export::Mesh => {
                let grid = grid_around(&result.shape, cfg.basis.grid_size, 1.3)?;
                mesh_points(&result.shape, &grid, cfg.basis.normal_k)?
            }
        };
        ensure_parent(&path)?;
        obj.write_obj(&path)?;
        artifacts.push(path);
    }
    Ok(Outcome { inputs: vec![a.mask, a.camera, a.model], artifacts, anchor: out })
}

fn mesh(a: MeshArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    if let Some(iso) = a.iso {
        cfg.mesh.iso = iso;
    }
    cfg.validate()?;
    let out = output(a.out, cfg, "shape.obj")?;
    let vol = TsdfVolume::read(&a.volume)?;
    let m = extract_isosurface(&vol, cfg.mesh.iso);
    if m.is_empty() {
        return Err(Error::invalid(format!("the volume has no surface at level {}", cfg.mesh.iso)));
    }
    ensure_parent(&out)?;
    m.write_obj(&out)?;
    Ok(Outcome { inputs: vec![a.volume.clone(), a.volume.with_extension("json")], artifacts: vec![out.clone()], anchor: out })
}

/// One prediction to score against its ground truth.
struct Case {
    id: String,
    pred: TriMesh,
    gt: TriMesh,
    camera: OrthoCamera,
    width: usize,
    height: usize,
}

fn score(case: &Case, metrics: &[Metric], cfg: &RunConfig, stream: u64) -> Result<Vec<(Metric, f64)>> {
    let e = &cfg.eval;
    let points = case.pred.faces.is_empty();
    let seed = cfg.seed.unwrap_or(0);
    let radius = || e.splat_radius.unwrap_or_else(|| 2.0 * case.camera.scale() * median_spacing(&case.pred.vertices));
    let (w, h) = (case.width, case.height);
    metrics
        .iter()
        .map(|&m| {
            let v = match m {
                Metric::Hausdorff => {
                    let a = if points {
                        case.pred.vertices.clone()
                    } else {
                        case.pred.sample_surface(e.samples, &mut rng(derive_seed(seed, 2 * stream)))?
                    };
                    let b = case.gt.sample_surface(e.samples, &mut rng(derive_seed(seed, 2 * stream + 1)))?;
                    hausdorff_norm(&a, &b, case.gt.bbox_diagonal())?
                }
                Metric::Zmae => {
                    let gt = render_depth(&case.gt, &case.camera, w, h)?;
                    let pred: DepthMap = if points {
                        render_point_depth(&case.pred.vertices, &case.camera, w, h, radius())?
                    } else {
                        render_depth(&case.pred, &case.camera, w, h)?
                    };
                    zmae(&pred, &gt, case.gt.bbox_diagonal())?
                }
                Metric::Iou => {
                    let gt = render_mask(&case.gt, &case.camera, w, h)?;
                    let pred = if points {
                        point_silhouette(&case.pred.vertices, &case.camera, w, h, Some(radius()))
                    } else {
                        render_mask(&case.pred, &case.camera, w, h)?.occupancy().to_vec()
                    };
                    occupancy_iou(&pred, gt.occupancy())
                }
            };
            Ok((m, v))
        })
        .collect()
}

fn eval(a: EvalArgs, cfg: &mut RunConfig) -> Result<Outcome> {
    if let Some(m) = a.metrics {
        cfg.eval.metrics = m;
    }
    cfg.validate()?;
    let out = output(a.out, cfg, "report.csv")?;
    let mut inputs = vec![a.pred.clone(), a.gt.clone()];
    let cases: Vec<Case> = if a.pred.is_dir() {
        let mut cases = Vec::new();
        for id in instance_ids(&a.gt)? {
            let p = a.pred.join(format!("{id}.obj"));
            if !p.exists() {
                continue;
            }
            let inst = read_instance(&a.gt, &id)?;
            cases.push(Case {
                pred: TriMesh::read_obj(&p)?,
                gt: read_gt_mesh(&a.gt, &id)?,
                camera: inst.camera.clone(),
                width: inst.width(),
                height: inst.height(),
                id,
            });
        }
        if cases.is_empty() {
            return Err(Error::invalid(format!("no <id>.obj in {} matches an instance of {}", a.pred.display(), a.gt.display())));
        }
        cases
    } else {
        let cam_path = a.camera.clone().ok_or_else(|| Error::Config { path: "--camera".into(), message: "required when --pred is a file".into() })?;
        let camera: OrthoCamera = read_json(&cam_path, "camera")?;
        inputs.push(cam_path);
        let (width, height) = match &a.mask {
            Some(m) => {
                inputs.push(m.clone());
                let mask = SilhouetteMask::read_pgm(m)?;
                (mask.width(), mask.height())
            }
            None => (cfg.eval.image_size, cfg.eval.image_size),
        };
        let stem = a.gt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let id = stem.strip_suffix("_gt").unwrap_or(&stem).to_owned();
        vec![Case { id, pred: TriMesh::read_obj(&a.pred)?, gt: TriMesh::read_obj(&a.gt)?, camera, width, height }]
    };
    let metrics = cfg.eval.metrics.clone();
    let cfg_ref = &*cfg;
    let rows: Vec<Vec<(Metric, f64)>> =
        cases.par_iter().enumerate().map(|(i, c)| score(c, &metrics, cfg_ref, i as u64)).collect::<Result<_>>()?;
    let mut csv = String::from("instance_id,metric,value\n");
    for (c, r) in cases.iter().zip(&rows) {
        for (m, v) in r {
            let _ = writeln!(csv, "{},{},{}", c.id, m.name(), v);
        }
    }
    ensure_parent(&out)?;
    std::fs::write(&out, csv).map_err(|e| Error::io(&out, e))?;
    Ok(Outcome { inputs, artifacts: vec![out.clone()], anchor: out })
}
