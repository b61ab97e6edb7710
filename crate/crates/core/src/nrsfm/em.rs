//! EM for the probabilistic deformable keypoint model
//! `w_nk = c_n R_n (s̄_k + V_k z_n) + T_n + noise`, `z_n ~ N(0, I)`.
//!
//! A mirrored copy shares its original's coefficients, and its camera is the
//! original's camera mirrored, so each group of one or two instances carries a
//! single posterior and a single free camera.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;

use super::data::NrsfmData;
use super::init::initialize;
use super::model::{NrsfmConfig, NrsfmModel};
use crate::error::{Error, Result};
use crate::geometry::camera::{complete_rotation, OrthoCamera, Vec2, Vec3};
use crate::geometry::chamfer::ChamferField;
use crate::instance::Instance;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const REFINE_STEPS: usize = 10;

fn flip3() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0))
}

fn unmirror(p: &Vec2, width: usize) -> Vec2 {
    Vec2::new(width as f64 - 1.0 - p.x, p.y)
}

/// Gaussian posterior over one group's coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Posterior {
    /// `E[[1; z][1; z]^T]`.
    fn second_moment(&self) -> DMatrix<f64> {
        let m = self.mean.len();
        let mut out = DMatrix::zeros(m + 1, m + 1);
        out[(0, 0)] = 1.0;
        for i in 0..m {
            out[(0, i + 1)] = self.mean[i];
            out[(i + 1, 0)] = self.mean[i];
            for j in 0..m {
                out[(i + 1, j + 1)] = self.cov[(i, j)] + self.mean[i] * self.mean[j];
            }
        }
        out
    }

    fn augmented_mean(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.mean.len() + 1);
        v[0] = 1.0;
        v.rows_mut(1, self.mean.len()).copy_from(&self.mean);
        v
    }
}

/// Result of one EM cycle.
#[derive(Clone, Debug)]
pub struct EmStep {
    pub model: NrsfmModel,
    /// Log-likelihood of the visible keypoints under the input parameters.
    pub log_likelihood: f64,
    /// Keypoints with the hidden ones imputed from the input parameters.
    pub completed: Vec<Vec<Vec2>>,
    /// One posterior per instance, shared within a group.
    pub posteriors: Vec<Posterior>,
    /// Penalized objective after the E-step, then after the shape, camera and
    /// noise updates.
    pub objective: [f64; 4],
}

/// `H_k = [s̄_k | V_k]`, a 3 x (m+1) matrix per keypoint.
fn shape_blocks(model: &NrsfmModel) -> Vec<DMatrix<f64>> {
    let m = model.bases();
    (0..model.keypoints())
        .map(|k| {
            let mut h = DMatrix::zeros(3, m + 1);
            h.set_column(0, &model.mean_shape[k]);
            for j in 0..m {
                h.set_column(j + 1, &model.basis[j][k]);
            }
            h
        })
        .collect()
}

fn blocks_into_model(model: &mut NrsfmModel, h: &[DMatrix<f64>]) {
    for (k, hk) in h.iter().enumerate() {
        model.mean_shape[k] = hk.fixed_view::<3, 1>(0, 0).into_owned();
        for j in 0..model.basis.len() {
            model.basis[j][k] = hk.fixed_view::<3, 1>(0, j + 1).into_owned();
        }
    }
}

/// Posterior of the coefficients shared by `members`, from their visible
/// keypoints, and the marginal log-likelihood of those keypoints.
pub fn posterior(model: &NrsfmModel, data: &NrsfmData, members: &[usize]) -> Result<(Posterior, f64)> {
    let m = model.bases();
    let s2 = model.noise_variance;
    let mut ata = DMatrix::<f64>::zeros(m, m);
    let mut atb = DVector::<f64>::zeros(m);
    let mut bb = 0.0;
    let mut d = 0usize;
    for &n in members {
        let cam = &model.instances[n].camera;
        let (g, t) = (cam.linear(), cam.translation());
        for k in 0..model.keypoints() {
            if !data.visible[n][k] {
                continue;
            }
            d += 2;
            let b = data.points[n][k] - g * model.mean_shape[k] - t;
            bb += b.norm_squared();
            let a = DMatrix::from_fn(2, m, |r, j| (g * model.basis[j][k])[r]);
            ata += a.transpose() * &a;
            atb += a.transpose() * DVector::from_column_slice(b.as_slice());
        }
    }
    let who = || members.iter().map(|&n| data.ids[n].as_str()).collect::<Vec<_>>().join("+");
    let precision = DMatrix::identity(m, m) + &ata / s2;
    let chol = precision.cholesky().ok_or_else(|| Error::DegenerateBasis(format!("singular posterior for {}", who())))?;
    let cov = chol.inverse();
    let mean = &cov * &atb / s2;
    let logdet_p: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = (bb - atb.dot(&mean)) / s2;
    let ll = -0.5 * (d as f64 * (LN_2PI + s2.ln()) + logdet_p + quad);
    if !ll.is_finite() || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "log-likelihood".into(), detail: format!("instance {}", who()) });
    }
    Ok((Posterior { mean, cov }, ll))
}

/// Per-keypoint `E[y]` and `E[y y^T]` of the 3-D point `y = H_k [1; z]`.
fn point_moments(h: &[DMatrix<f64>], post: &Posterior) -> Vec<(Vec3, Matrix3<f64>)> {
    let mu = post.augmented_mean();
    let mm = post.second_moment();
    h.iter()
        .map(|hk| {
            let y = hk * &mu;
            let yy = hk * &mm * hk.transpose();
            (Vec3::new(y[0], y[1], y[2]), Matrix3::from_fn(|r, c| yy[(r, c)]))
        })
        .collect()
}

fn expected_sq(w: &Vec2, y: &Vec3, yy: &Matrix3<f64>, g: &Matrix2x3<f64>, t: &Vec2) -> f64 {
    let r = w - t;
    r.norm_squared() - 2.0 * r.dot(&(g * y)) + (g * yy * g.transpose()).trace()
}

/// One completed keypoint in the frame of its group's free camera,
/// `w ≈ c R[0..2] y + T`.
struct Obs<'a> {
    w: Vec2,
    y: Vec3,
    yy: Matrix3<f64>,
    field: &'a ChamferField,
    /// The mask penalty is read at the mirrored image point.
    flipped: bool,
}

impl Obs<'_> {
    fn image_point(&self, p: &Vec2) -> Vec2 {
        if self.flipped {
            unmirror(p, self.field.width())
        } else {
            *p
        }
    }

    fn penalty(&self, g: &Matrix2x3<f64>, t: &Vec2) -> f64 {
        let c = self.field.sample(&self.image_point(&(g * self.y + t)));
        if c > 0.0 {
            c * c
        } else {
            0.0
        }
    }

    /// Gradient of the penalty with respect to the predicted point.
    fn penalty_grad(&self, g: &Matrix2x3<f64>, t: &Vec2) -> Vec2 {
        let (c, mut grad) = self.field.sample_with_gradient(&self.image_point(&(g * self.y + t)));
        if c <= 0.0 {
            return Vec2::zeros();
        }
        if self.flipped {
            grad.x = -grad.x;
        }
        grad * (2.0 * c)
    }
}

struct Frame<'a> {
    data: &'a NrsfmData,
    completed: &'a [Vec<Vec2>],
    mu: f64,
}

impl<'a> Frame<'a> {
    fn observations(&self, members: &[usize], moments: &[(Vec3, Matrix3<f64>)]) -> Vec<Obs<'a>> {
        let f = flip3();
        let mut out = Vec::with_capacity(members.len() * moments.len());
        for (slot, &n) in members.iter().enumerate() {
            let field = &self.data.chamfer[n];
            for (k, (y, yy)) in moments.iter().enumerate() {
                let w = self.completed[n][k];
                out.push(if slot == 0 {
                    Obs { w, y: *y, yy: *yy, field, flipped: false }
                } else {
                    Obs { w: unmirror(&w, field.width()), y: f * y, yy: f * yy * f, field, flipped: true }
                });
            }
        }
        out
    }

    fn cost(&self, obs: &[Obs], cam: &OrthoCamera, s2: f64) -> f64 {
        let (g, t) = (cam.linear(), cam.translation());
        let sse: f64 = obs.iter().map(|o| expected_sq(&o.w, &o.y, &o.yy, &g, &t)).sum();
        let mut j = sse / (2.0 * s2);
        if self.mu > 0.0 {
            j += self.mu * obs.iter().map(|o| o.penalty(&g, &t)).sum::<f64>();
        }
        j
    }

    fn objective(&self, model: &NrsfmModel, posts: &[Posterior]) -> f64 {
        let h = shape_blocks(model);
        let s2 = model.noise_variance;
        let terms: Vec<f64> = self
            .data
            .groups
            .par_iter()
            .map(|members| {
                let moments = point_moments(&h, &posts[members[0]]);
                self.cost(&self.observations(members, &moments), &model.instances[members[0]].camera, s2)
            })
            .collect();
        let d = (2 * self.data.len() * self.data.keypoints()) as f64;
        terms.iter().sum::<f64>() + 0.5 * d * s2.ln()
    }
}

/// Mirrored members take the leader's camera, mirrored.
fn sync_cameras(model: &mut NrsfmModel, data: &NrsfmData) {
    for members in &data.groups {
        let lead = model.instances[members[0]].camera.clone();
        for &n in &members[1..] {
            model.instances[n].camera = lead.mirrored(data.chamfer[n].width());
        }
    }
}

/// Makes every group share its leader's camera and coefficients.
pub(crate) fn tie_groups(model: &mut NrsfmModel, data: &NrsfmData) {
    sync_cameras(model, data);
    for members in &data.groups {
        let z = model.instances[members[0]].z.clone();
        for &n in &members[1..] {
            model.instances[n].z = z.clone();
        }
    }
}

/// One EM cycle: posterior and imputation, then shape, cameras and noise.
pub fn em_step(model: &NrsfmModel, data: &NrsfmData, config: &NrsfmConfig) -> Result<EmStep> {
    let n = data.len();
    if model.instances.len() != n || model.keypoints() != data.keypoints() {
        return Err(Error::invalid("model and keypoint data disagree in size"));
    }
    let estep: Vec<(Posterior, f64)> = data.groups.par_iter().map(|g| posterior(model, data, g)).collect::<Result<_>>()?;
    let log_likelihood: f64 = estep.iter().map(|(_, l)| l).sum();
    let posts: Vec<Posterior> = data.group_of().iter().map(|&g| estep[g].0.clone()).collect();

    let completed: Vec<Vec<Vec2>> = (0..n)
        .map(|i| {
            let z: Vec<f64> = posts[i].mean.iter().copied().collect();
            let pred = model.instances[i].camera.project(&model.shape(&z));
            (0..data.keypoints()).map(|k| if data.visible[i][k] { data.points[i][k] } else { pred[k] }).collect()
        })
        .collect();
    let frame = Frame { data, completed: &completed, mu: config.mask_penalty };

    let mut next = model.clone();
    for (inst, p) in next.instances.iter_mut().zip(&posts) {
        inst.z = p.mean.iter().copied().collect();
    }
    let f0 = frame.objective(&next, &posts);

    // Shape block: exact minimizer of the expected squared error.
    let h_old = shape_blocks(&next);
    let h_new = solve_shape(&next, &completed, &posts)?;
    blocks_into_model(&mut next, &h_new);
    let mut f1 = frame.objective(&next, &posts);
    if frame.mu > 0.0 && f1 > f0 {
        let mut step = 0.5;
        let mut accepted = false;
        for _ in 0..30 {
            let mix: Vec<DMatrix<f64>> = h_old.iter().zip(&h_new).map(|(a, b)| a + (b - a) * step).collect();
            blocks_into_model(&mut next, &mix);
            f1 = frame.objective(&next, &posts);
            if f1 <= f0 {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            blocks_into_model(&mut next, &h_old);
            f1 = f0;
        }
    }

    // Camera block, one group at a time.
    let h = shape_blocks(&next);
    let s2 = next.noise_variance;
    let cams: Vec<OrthoCamera> = data
        .groups
        .par_iter()
        .map(|members| {
            let obs = frame.observations(members, &point_moments(&h, &posts[members[0]]));
            update_camera(&frame, &obs, &next.instances[members[0]].camera, s2)
        })
        .collect();
    for (members, cam) in data.groups.iter().zip(cams) {
        next.instances[members[0]].camera = cam;
    }
    sync_cameras(&mut next, data);
    let f2 = frame.objective(&next, &posts);

    // Noise block.
    let sse: f64 = (0..n)
        .map(|i| {
            let cam = &next.instances[i].camera;
            let (g, t) = (cam.linear(), cam.translation());
            completed[i].iter().zip(point_moments(&h, &posts[i])).map(|(w, (y, yy))| expected_sq(w, &y, &yy, &g, &t)).sum::<f64>()
        })
        .sum();
    let d = (2 * n * data.keypoints()) as f64;
    next.noise_variance = (sse / d).max(data.variance_floor);
    let f3 = frame.objective(&next, &posts);

    next.log_likelihood = log_likelihood;
    Ok(EmStep { model: next, log_likelihood, completed, posteriors: posts, objective: [f0, f1, f2, f3] })
}

/// Per keypoint: `sum_n (M_n ⊗ GᵀG) vec(H_k) = vec(sum_n Gᵀ r_nk μ̂_nᵀ)`.
fn solve_shape(model: &NrsfmModel, completed: &[Vec<Vec2>], posts: &[Posterior]) -> Result<Vec<DMatrix<f64>>> {
    let m1 = model.bases() + 1;
    let stats: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>, Vec2)> = model
        .instances
        .iter()
        .zip(posts)
        .map(|(inst, p)| {
            let g = inst.camera.linear();
            let gt = DMatrix::from_fn(3, 2, |r, c| g[(c, r)]);
            let gg = &gt * gt.transpose();
            (p.second_moment(), gg, gt, p.augmented_mean(), inst.camera.translation())
        })
        .collect();
    (0..model.keypoints())
        .into_par_iter()
        .map(|k| {
            let mut lhs = DMatrix::zeros(3 * m1, 3 * m1);
            let mut rhs = DMatrix::zeros(3, m1);
            for (n, (mm, gg, gt, mu, t)) in stats.iter().enumerate() {
                lhs += mm.kronecker(gg);
                let r = completed[n][k] - t;
                rhs += gt * DVector::from_column_slice(r.as_slice()) * mu.transpose();
            }
            let b = DVector::from_column_slice(rhs.as_slice());
            let x = lhs
                .clone()
                .cholesky()
                .map(|c| c.solve(&b))
                .or_else(|| lhs.lu().solve(&b))
                .ok_or_else(|| Error::DegenerateBasis(format!("shape equations for keypoint {k} are singular")))?;
            Ok(DMatrix::from_column_slice(3, m1, x.as_slice()))
        })
        .collect()
}

/// Unconstrained affine fit snapped to a scaled rotation, then exact scale
/// and translation for that rotation. The candidate replaces the current
/// camera only if it lowers the cost; with a mask penalty a few
/// preconditioned gradient steps follow.
fn update_camera(frame: &Frame, obs: &[Obs], cam: &OrthoCamera, s2: f64) -> OrthoCamera {
    let mut best = cam.clone();
    let mut best_cost = frame.cost(obs, cam, s2);
    if let Some(c) = affine_candidate(obs) {
        let cost = frame.cost(obs, &c, s2);
        if cost <= best_cost {
            best = c;
            best_cost = cost;
        }
    }
    if frame.mu > 0.0 {
        for _ in 0..REFINE_STEPS {
            let (g, t) = (best.linear(), best.translation());
            if obs.iter().all(|o| o.penalty(&g, &t) == 0.0) {
                break;
            }
            match refine_step(frame, obs, &best, best_cost, s2) {
                Some((c, cost)) => {
                    best = c;
                    best_cost = cost;
                }
                None => break,
            }
        }
    }
    best
}

fn affine_candidate(obs: &[Obs]) -> Option<OrthoCamera> {
    let mut s4 = Matrix4::<f64>::zeros();
    let mut b = nalgebra::Matrix2x4::<f64>::zeros();
    for o in obs {
        let ya = Vector4::new(o.y.x, o.y.y, o.y.z, 1.0);
        let mut e = ya * ya.transpose();
        e.fixed_view_mut::<3, 3>(0, 0).copy_from(&o.yy);
        s4 += e;
        b += o.w * ya.transpose();
    }
    let gt = b * s4.try_inverse()?;
    let g: Matrix2x3<f64> = gt.fixed_view::<2, 3>(0, 0).into_owned();
    let rotation = complete_rotation(&g);
    let rows: Matrix2x3<f64> = rotation.fixed_rows::<2>(0).into_owned();
    // Exact scale and translation for the snapped rotation.
    let k = obs.len() as f64;
    let mut ysum = Vec3::zeros();
    let mut wsum = Vec2::zeros();
    let mut quad = 0.0;
    let mut cross = 0.0;
    for o in obs {
        ysum += o.y;
        wsum += o.w;
        quad += (rows * o.yy * rows.transpose()).trace();
        cross += (rows * o.y).dot(&o.w);
    }
    let ry = rows * ysum;
    let a = Matrix3::new(k, 0.0, ry.x, 0.0, k, ry.y, ry.x, ry.y, quad);
    let sol = a.lu().solve(&Vector3::new(wsum.x, wsum.y, cross))?;
    let scale = sol[2];
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    OrthoCamera::new(scale, rotation, Vec2::new(sol[0], sol[1])).ok()
}

/// One preconditioned gradient step on `(T, c, ω)` with backtracking.
fn refine_step(frame: &Frame, obs: &[Obs], cam: &OrthoCamera, cost: f64, s2: f64) -> Option<(OrthoCamera, f64)> {
    let (g, t) = (cam.linear(), cam.translation());
    let rows = cam.rows();
    let mut dg = Matrix2x3::zeros();
    let mut dt = Vec2::zeros();
    let mut yy_sum = Matrix3::zeros();
    for o in obs {
        let r = o.w - t - g * o.y;
        dg += (g * o.yy - (o.w - t) * o.y.transpose()) / s2;
        dt -= r / s2;
        yy_sum += o.yy;
        let gp = o.penalty_grad(&g, &t) * frame.mu;
        dg += gp * o.y.transpose();
        dt += gp;
    }
    let dc = dg.component_mul(&rows).sum();
    let mut dw = Vec3::zeros();
    for i in 0..3 {
        let e = Vec3::ith(i, 1.0).cross_matrix();
        let dr = (cam.rotation() * e).fixed_rows::<2>(0).into_owned() * cam.scale();
        dw[i] = dg.component_mul(&dr).sum();
    }
    let kf = obs.len() as f64;
    let ht = kf / s2 + frame.mu;
    let hc = (rows * yy_sum * rows.transpose()).trace() / s2 + frame.mu;
    let hw = cam.scale().powi(2) * yy_sum.trace() / s2 + frame.mu;
    let mut step = 1.0;
    for _ in 0..30 {
        let scale = cam.scale() - step * dc / hc;
        if scale > 0.0 {
            let trial = cam.rotated_by(&(-dw * (step / hw))).with_translation(t - dt * (step / ht));
            if let Ok(trial) = trial.with_scale(scale) {
                let c = frame.cost(obs, &trial, s2);
                if c < cost {
                    return Some((trial, c));
                }
            }
        }
        step *= 0.5;
    }
    None
}

/// Initializes from a rigid factorization and iterates [`em_step`] until the
/// relative log-likelihood change drops below `config.tol`.
pub fn fit_nrsfm(instances: &[Instance], config: &NrsfmConfig, seed: u64) -> Result<NrsfmModel> {
    config.validate().map_err(|(path, message)| Error::Config { path, message })?;
    let (probe, _) = NrsfmData::from_instances(instances)?;
    let need = 2 * config.bases + 4;
    if probe.len() < need {
        return Err(Error::invalid(format!("{} usable instances, {} bases need at least {need}", probe.len(), config.bases)));
    }
    let augmented;
    let all = if config.mirror {
        augmented = super::data::mirror_augment(instances)?;
        &augmented[..]
    } else {
        instances
    };
    let (data, _) = NrsfmData::from_instances(all)?;
    let mut model = initialize(&data, config.bases, seed)?;
    let mut last = f64::NAN;
    for it in 0..config.max_iter {
        let step = em_step(&model, &data, config)?;
        model = step.model;
        model.iterations = it + 1;
        let ll = step.log_likelihood;
        if last.is_finite() && (ll - last).abs() <= config.tol * ll.abs().max(1.0) {
            break;
        }
        last = ll;
    }
    // Refresh coefficients and likelihood for the final parameters.
    let mut ll = 0.0;
    for members in &data.groups {
        let (p, l) = posterior(&model, &data, members)?;
        for &i in members {
            model.instances[i].z = p.mean.iter().copied().collect();
        }
        ll += l;
    }
    model.log_likelihood = ll;
    Ok(model)
}
