//! Fits a learned model to one silhouette: coefficients and camera.

use serde::{Deserialize, Serialize};

use super::energy::{data_eval, instance_energy, lift, EnergyBreakdown, Frozen, Target};
use super::learn::{alpha_step, MAX_HALVINGS};
use super::model::{BasisShapeModel, FitConfig};
use crate::error::{Error, Result};
use crate::geometry::camera::{OrthoCamera, Vec2, Vec3};
use crate::geometry::cloud::bbox_diagonal;
use crate::geometry::mask::SilhouetteMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFit {
    pub alpha: Vec<f64>,
    pub camera: OrthoCamera,
    /// Fitted point cloud in the world frame of `camera`.
    pub shape: Vec<Vec3>,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
}

struct Problem<'a> {
    model: &'a BasisShapeModel,
    target: Target,
}

impl Problem<'_> {
    fn objective(&self, alpha: &[f64], cam: &OrthoCamera, frozen: &Frozen) -> f64 {
        let w = &self.model.config.weights;
        let e = data_eval(&self.model.shape(alpha), cam, &self.target, frozen, w);
        e.value + w.regularizer * self.model.basis_norm.powi(2) * alpha.iter().map(|a| a * a).sum::<f64>()
    }

    fn alpha_grad(&self, alpha: &[f64], cam: &OrthoCamera, frozen: &Frozen) -> (f64, Vec<f64>) {
        let w = &self.model.config.weights;
        let e = data_eval(&self.model.shape(alpha), cam, &self.target, frozen, w);
        let bn2 = self.model.basis_norm.powi(2);
        let g = e.grad(cam);
        let ga = self
            .model
            .bases
            .iter()
            .zip(alpha)
            .map(|(b, a)| b.iter().zip(&g).map(|(v, gi)| v.dot(gi)).sum::<f64>() + 2.0 * w.regularizer * bn2 * a)
            .collect();
        (e.value + w.regularizer * bn2 * alpha.iter().map(|a| a * a).sum::<f64>(), ga)
    }

    /// Tries `make(s)` for halving `s` until the objective drops below `e0`.
    fn backtrack(&self, alpha: &[f64], frozen: &Frozen, e0: f64, mut s: f64, make: impl Fn(f64) -> Result<OrthoCamera>) -> Option<(OrthoCamera, f64)> {
        for _ in 0..=MAX_HALVINGS {
            if let Ok(c) = make(s) {
                let e = self.objective(alpha, &c, frozen);
                if e < e0 {
                    return Some((c, e));
                }
            }
            s *= 0.5;
        }
        None
    }

    /// One backtracking step on each free camera parameter in turn.
    fn camera_step(&self, alpha: &[f64], cam: &mut OrthoCamera, frozen: &Frozen, eta: f64, cfg: &FitConfig) {
        let shape = self.model.shape(alpha);
        let w = &self.model.config.weights;
        if cfg.optimize_translation {
            let g: Vec2 = data_eval(&shape, cam, &self.target, frozen, w).image_grad.iter().sum();
            let gn = g.norm();
            if gn > 0.0 {
                let e0 = self.objective(alpha, cam, frozen);
                let d = -g / gn;
                let base = cam.clone();
                if let Some((c, _)) = self.backtrack(alpha, frozen, e0, eta * cam.scale(), |s| Ok(base.with_translation(base.translation() + d * s))) {
                    *cam = c;
                }
            }
        }
        if cfg.optimize_scale {
            let e = data_eval(&shape, cam, &self.target, frozen, w);
            let rows = cam.rows();
            let g: f64 = e.image_grad.iter().zip(&shape).map(|(g, x)| g.dot(&(rows * x))).sum();
            let reach = shape.iter().map(|x| (rows * x).norm()).fold(0.0, f64::max);
            if g != 0.0 && reach > 0.0 {
                let e0 = self.objective(alpha, cam, frozen);
                let d = -g.signum();
                let base = cam.clone();
                if let Some((c, _)) = self.backtrack(alpha, frozen, e0, eta * cam.scale() / reach, |s| base.with_scale(base.scale() + d * s)) {
                    *cam = c;
                }
            }
        }
        if cfg.optimize_rotation {
            let e = data_eval(&shape, cam, &self.target, frozen, w);
            let g: Vec3 = e.image_grad.iter().zip(&shape).map(|(g, x)| x.cross(&lift(cam, g))).sum();
            let gn = g.norm();
            let reach = shape.iter().map(|x| x.norm()).fold(0.0, f64::max);
            if gn > 0.0 && reach > 0.0 {
                let e0 = self.objective(alpha, cam, frozen);
                let d = -g / gn;
                let base = cam.clone();
                if let Some((c, _)) = self.backtrack(alpha, frozen, e0, eta / reach, |s| Ok(base.rotated_by(&(d * s)))) {
                    *cam = c;
                }
            }
        }
    }
}

/// Fits the coefficients (starting at zero) and the free camera parameters
/// to one silhouette. Keypoint energies do not take part.
pub fn fit_instance(mask: &SilhouetteMask, cam_init: &OrthoCamera, model: &BasisShapeModel, config: &FitConfig) -> Result<InstanceFit> {
    config.validate().map_err(|(path, message)| Error::Config { path: format!("fit.{path}"), message })?;
    if mask.area() == 0 {
        return Err(Error::EmptySilhouette);
    }
    let mcfg = &model.config;
    let p = Problem { model, target: Target { silhouette: super::energy::Silhouette::new(mask), camera: cam_init.clone(), keypoints: None } };
    let mut alpha = vec![0.0; model.dim()];
    let mut cam = cam_init.clone();
    let diam = bbox_diagonal(&model.mean);
    let energy_of = |a: &[f64], c: &OrthoCamera| -> Result<EnergyBreakdown> {
        let mut e = instance_energy(&model.shape(a), c, &p.target, mcfg.m, mcfg.normal_k, &mcfg.weights)?;
        e.regularizer = model.basis_norm.powi(2) * a.iter().map(|x| x * x).sum::<f64>();
        let w = &mcfg.weights;
        e.total = w.silhouette * e.silhouette + w.coverage * e.coverage + w.normal * e.normal + w.regularizer * e.regularizer;
        e.check_finite()?;
        Ok(e)
    };
    let mut energy = energy_of(&alpha, &cam)?;
    let mut iterations = 0;
    for t in 0..config.iters {
        iterations = t + 1;
        let eta = mcfg.eta0 * diam / (1.0 + t as f64 / mcfg.tau);
        let shape = model.shape(&alpha);
        let frozen = Frozen::new(&shape, &cam, &p.target, mcfg.m, mcfg.normal_k, mcfg.weights.normal > 0.0)?;
        for _ in 0..config.alpha_steps {
            if !alpha_step(&mut alpha, eta, model, |a, g| if g { p.alpha_grad(a, &cam, &frozen) } else { (p.objective(a, &cam, &frozen), Vec::new()) }) {
                break;
            }
        }
        for _ in 0..config.camera_steps {
            p.camera_step(&alpha, &mut cam, &frozen, eta, config);
        }
        let next = energy_of(&alpha, &cam)?;
        let done = (energy.total - next.total).abs() <= config.tol * energy.total.abs().max(f64::MIN_POSITIVE);
        energy = next;
        if done {
            break;
        }
    }
    Ok(InstanceFit { shape: model.shape(&alpha), alpha, camera: cam, energy, iterations })
}
