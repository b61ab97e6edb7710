//! Alternating gradient descent on the mean shape, the bases and the
//! per-instance coefficients.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::energy::{data_eval, e_local, knn_graph, total_energy, EnergyBreakdown, Frozen, Target, Weights};
use super::init::{grid_from_instances, soft_visual_hull_init};
use super::model::{frobenius, BasisConfig, BasisShapeModel};
use crate::error::{Error, Result};
use crate::geometry::camera::{OrthoCamera, Vec3};
use crate::geometry::cloud::{bbox_diagonal, centroid};
use crate::instance::Instance;
use crate::nrsfm::NrsfmModel;
use crate::seed;

/// Halvings tried before a step is dropped.
pub const MAX_HALVINGS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLog {
    pub iteration: usize,
    /// Largest point displacement allowed in this iteration.
    pub step: f64,
    pub energy: EnergyBreakdown,
}

#[derive(Clone, Debug)]
pub struct LearnedBasis {
    pub model: BasisShapeModel,
    pub alphas: Vec<Vec<f64>>,
    pub log: Vec<EnergyLog>,
}

/// The NRSfM reconstruction of an instance's keypoints, moved into the world
/// frame of the instance's own camera so that both cameras project them to
/// the same pixels.
pub fn lift_keypoints(nrsfm: &NrsfmModel, inst: &Instance) -> Option<Vec<Vec3>> {
    let n = nrsfm.instances.iter().find(|n| n.id == inst.id && !n.mirrored)?;
    let (cn, cd) = (&n.camera, &inst.camera);
    let rot = cd.rotation().transpose() * cn.rotation();
    let ratio = cn.scale() / cd.scale();
    let offset = cd.rows().transpose() * (cn.translation() - cd.translation()) / cd.scale();
    Some(nrsfm.shape(&n.z).iter().map(|x| rot * x * ratio + offset).collect())
}

/// Shifts keypoints along the viewing direction so their centroid has the
/// depth of `center`.
fn match_depth(keypoints: &mut [Vec3], camera: &OrthoCamera, center: &Vec3) {
    let v = camera.view_direction();
    let shift = v * v.dot(&(center - centroid(keypoints)));
    for k in keypoints {
        *k += shift;
    }
}

/// Learns a model from silhouettes and cameras, starting from the soft
/// visual hull. `keypoints[i]`, when present, are 3D keypoints of instance
/// `i` in its camera's world frame.
pub fn learn_basis(instances: &[Instance], keypoints: Option<&[Option<Vec<Vec3>>]>, config: &BasisConfig, seed: u64) -> Result<LearnedBasis> {
    config.validate().map_err(|(path, message)| Error::Config { path, message })?;
    if instances.len() < 2 {
        return Err(Error::invalid(format!("basis learning needs at least 2 instances, got {}", instances.len())));
    }
    if let Some(k) = keypoints {
        if k.len() != instances.len() {
            return Err(Error::invalid(format!("{} keypoint sets for {} instances", k.len(), instances.len())));
        }
    }
    let grid = grid_from_instances(instances, config.grid_size)?;
    let init = soft_visual_hull_init(instances, &grid, config.points, seed::derive_seed(seed, 0))?;
    let center = centroid(&init);
    let targets: Vec<Target> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut kp = keypoints.and_then(|k| k[i].clone());
            if let Some(k) = kp.as_mut() {
                match_depth(k, &inst.camera, &center);
            }
            Target::from_instance(inst, kp)
        })
        .collect();
    learn_from_init(init, &targets, config, seed)
}

/// Gaussian fields with standard deviation 1e-2, rescaled to unit norm.
fn initial_bases(n: usize, k: usize, rng: &mut seed::Rng) -> Vec<Vec<Vec3>> {
    (0..k)
        .map(|_| {
            let mut b: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| 1e-2 * Distribution::<f64>::sample(&StandardNormal, &mut *rng))).collect();
            let f = frobenius(&b);
            for v in &mut b {
                *v /= f;
            }
            b
        })
        .collect()
}

/// The `k` nearest neighbours of every point, made symmetric.
fn symmetric_knn(points: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    let g = knn_graph(points, k + 1)?;
    let mut sets: Vec<std::collections::BTreeSet<usize>> = g.iter().map(|n| n.iter().copied().collect()).collect();
    for (i, n) in g.iter().enumerate() {
        for &j in n {
            sets[j].insert(i);
        }
    }
    Ok(sets.into_iter().map(|s| s.into_iter().collect()).collect())
}

/// Root-mean-square neighbour distance.
fn rest_length(mean: &[Vec3], neighbors: &[Vec<usize>]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            s += (mean[i] - mean[j]).norm_squared();
            n += 1;
        }
    }
    (s / n.max(1) as f64).sqrt()
}

fn max_norm(v: &[Vec3]) -> f64 {
    v.iter().map(|g| g.norm()).fold(0.0, f64::max)
}

/// Learns a model from a given initial cloud.
pub fn learn_from_init(init: Vec<Vec3>, targets: &[Target], config: &BasisConfig, seed: u64) -> Result<LearnedBasis> {
    config.validate().map_err(|(path, message)| Error::Config { path, message })?;
    let neighbors = symmetric_knn(&init, config.neighbors)?;
    let delta = rest_length(&init, &neighbors);
    let mut rng = seed::rng(seed::derive_seed(seed, 1));
    let model = BasisShapeModel {
        bases: initial_bases(init.len(), config.k, &mut rng),
        mean: init,
        basis_norm: 1.0,
        delta,
        neighbors,
        config: config.clone(),
    };
    let alphas = (0..targets.len()).map(|_| (0..config.k).map(|_| 1e-2 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>()).collect();
    optimize(model, alphas, targets)
}

struct Learner<'a> {
    targets: &'a [Target],
    w: Weights,
    m: usize,
    normal_k: usize,
}

impl Learner<'_> {
    fn frozen(&self, model: &BasisShapeModel, alphas: &[Vec<f64>]) -> Result<Vec<Frozen>> {
        let planes = self.w.normal > 0.0;
        self.targets
            .par_iter()
            .zip(alphas)
            .map(|(t, a)| Frozen::new(&model.shape(a), &t.camera, t, self.m, self.normal_k, planes))
            .collect()
    }

    /// Smooth objective with fixed correspondences, and optionally its
    /// gradients with respect to the mean and the bases.
    fn shape_objective(&self, model: &BasisShapeModel, alphas: &[Vec<f64>], frozen: &[Frozen], grad: bool) -> (f64, Vec<Vec3>, Vec<Vec<Vec3>>) {
        let per: Vec<(f64, Vec<Vec3>)> = self
            .targets
            .par_iter()
            .zip(alphas)
            .zip(frozen)
            .map(|((t, a), f)| {
                let e = data_eval(&model.shape(a), &t.camera, t, f, &self.w);
                let g = if grad { e.grad(&t.camera) } else { Vec::new() };
                (e.value, g)
            })
            .collect();
        let local = e_local(&model.mean, &model.bases, &model.neighbors, model.delta);
        let mut value = self.w.local * local.value;
        let bn2 = model.basis_norm.powi(2);
        value += self.w.regularizer * bn2 * alphas.iter().flatten().map(|a| a * a).sum::<f64>();
        if !grad {
            return (value + per.iter().map(|p| p.0).sum::<f64>(), Vec::new(), Vec::new());
        }
        let mut gm: Vec<Vec3> = local.grad_mean.iter().map(|g| g * self.w.local).collect();
        let mut gb: Vec<Vec<Vec3>> = local.grad_bases.iter().map(|b| b.iter().map(|g| g * self.w.local).collect()).collect();
        for ((v, g), a) in per.iter().zip(alphas) {
            value += v;
            for (x, gi) in gm.iter_mut().zip(g) {
                *x += gi;
            }
            for (k, ak) in a.iter().enumerate() {
                if *ak != 0.0 {
                    for (x, gi) in gb[k].iter_mut().zip(g) {
                        *x += gi * *ak;
                    }
                }
            }
        }
        (value, gm, gb)
    }

    /// One backtracking step on the mean and the bases.
    fn shape_step(&self, model: &mut BasisShapeModel, alphas: &mut [Vec<f64>], frozen: &[Frozen], eta: f64) {
        let (e0, gm, gb) = self.shape_objective(model, alphas, frozen, true);
        let gmax = max_norm(&gm);
        let mean_dir: Vec<Vec3> = if gmax > 0.0 { gm.iter().map(|g| -g / gmax).collect() } else { gm.clone() };
        let basis_dir: Vec<Vec<Vec3>> = gb
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let amax = alphas.iter().map(|a| a[k].abs()).fold(0.0, f64::max);
                let gk = max_norm(g);
                if amax > 0.0 && gk > 0.0 {
                    g.iter().map(|x| -x / (gk * amax)).collect()
                } else {
                    vec![Vec3::zeros(); g.len()]
                }
            })
            .collect();
        let mut s = eta;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = model.clone();
            for (x, d) in trial.mean.iter_mut().zip(&mean_dir) {
                *x += d * s;
            }
            for (b, d) in trial.bases.iter_mut().zip(&basis_dir) {
                for (x, dx) in b.iter_mut().zip(d) {
                    *x += dx * s;
                }
            }
            let (e1, _, _) = self.shape_objective(&trial, alphas, frozen, false);
            if e1 < e0 {
                *model = trial;
                renormalize(model, alphas);
                return;
            }
            s *= 0.5;
        }
    }

    fn alpha_objective(&self, model: &BasisShapeModel, t: &Target, f: &Frozen, a: &[f64], grad: bool) -> (f64, Vec<f64>) {
        let shape = model.shape(a);
        let e = data_eval(&shape, &t.camera, t, f, &self.w);
        let bn2 = model.basis_norm.powi(2);
        let value = e.value + self.w.regularizer * bn2 * a.iter().map(|x| x * x).sum::<f64>();
        if !grad {
            return (value, Vec::new());
        }
        let g = e.grad(&t.camera);
        let ga = model
            .bases
            .iter()
            .zip(a)
            .map(|(b, ak)| b.iter().zip(&g).map(|(v, gi)| v.dot(gi)).sum::<f64>() + 2.0 * self.w.regularizer * bn2 * ak)
            .collect();
        (value, ga)
    }

    fn alpha_steps(&self, model: &BasisShapeModel, t: &Target, f: &Frozen, a: &mut [f64], eta: f64, steps: usize) {
        for _ in 0..steps {
            if !alpha_step(a, eta, model, |x, g| self.alpha_objective(model, t, f, x, g)) {
                break;
            }
        }
    }
}

/// A backtracking step on `a` whose largest point displacement is at most
/// `eta`. Returns whether the objective decreased.
pub(crate) fn alpha_step(a: &mut [f64], eta: f64, model: &BasisShapeModel, objective: impl Fn(&[f64], bool) -> (f64, Vec<f64>)) -> bool {
    let (e0, g) = objective(a, true);
    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(gn > 0.0) {
        return false;
    }
    let d: Vec<f64> = g.iter().map(|x| -x / gn).collect();
    let disp = (0..model.points())
        .map(|i| model.bases.iter().zip(&d).map(|(b, dk)| b[i] * *dk).sum::<Vec3>().norm())
        .fold(0.0, f64::max);
    if !(disp > 0.0) {
        return false;
    }
    let mut s = eta / disp;
    for _ in 0..=MAX_HALVINGS {
        let trial: Vec<f64> = a.iter().zip(&d).map(|(x, dk)| x + dk * s).collect();
        if objective(&trial, false).0 < e0 {
            a.copy_from_slice(&trial);
            return true;
        }
        s *= 0.5;
    }
    false
}

/// Rescales every basis to `basis_norm`, compensating the coefficients so
/// no shape changes.
fn renormalize(model: &mut BasisShapeModel, alphas: &mut [Vec<f64>]) {
    for (k, b) in model.bases.iter_mut().enumerate() {
        let n = frobenius(b);
        if n > 0.0 {
            let f = model.basis_norm / n;
            for v in b.iter_mut() {
                *v *= f;
            }
            for a in alphas.iter_mut() {
                a[k] /= f;
            }
        }
    }
}

fn optimize(mut model: BasisShapeModel, mut alphas: Vec<Vec<f64>>, targets: &[Target]) -> Result<LearnedBasis> {
    let cfg = model.config.clone();
    let learner = Learner { targets, w: cfg.weights.clone(), m: cfg.m, normal_k: cfg.normal_k };
    let diam = bbox_diagonal(&model.mean);
    let first = total_energy(&model, &alphas, targets, &cfg.weights)?.energy;
    let initial = first.total;
    let mut log = vec![EnergyLog { iteration: 0, step: 0.0, energy: first }];
    let mut prev = initial;
    for t in 0..cfg.iters {
        let eta = cfg.eta0 * diam / (1.0 + t as f64 / cfg.tau);
        let frozen = learner.frozen(&model, &alphas)?;
        for _ in 0..cfg.inner_steps {
            learner.shape_step(&mut model, &mut alphas, &frozen, eta);
        }
        let frozen = learner.frozen(&model, &alphas)?;
        alphas
            .par_iter_mut()
            .zip(targets)
            .zip(&frozen)
            .for_each(|((a, tg), f)| learner.alpha_steps(&model, tg, f, a, eta, cfg.alpha_steps));
        let energy = total_energy(&model, &alphas, targets, &cfg.weights)?.energy;
        let e = energy.total;
        log::info!("basis iteration {}: energy {:.6e} (step {:.3e})", t + 1, e, eta);
        log.push(EnergyLog { iteration: t + 1, step: eta, energy });
        if e > 10.0 * initial {
            return Err(Error::StepTooLarge { energy: e, initial });
        }
        if (prev - e).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        prev = e;
    }
    Ok(LearnedBasis { model, alphas, log })
}
