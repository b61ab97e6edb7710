//! Energies of a point cloud against a silhouette and 3D keypoints, and the
//! smoothness terms of the model.
//!
//! Image-space terms are in squared pixels, the others in squared world
//! units. Each data term is summed per point with every contribution capped.

use serde::{Deserialize, Serialize};

use super::model::BasisShapeModel;
use crate::error::{Error, Result};
use crate::geometry::camera::{OrthoCamera, Vec2, Vec3};
use crate::geometry::chamfer::ChamferField;
use crate::geometry::cloud::{estimate_normals, kdtree3};
use crate::geometry::knn::KdTree;
use crate::geometry::mask::SilhouetteMask;
use crate::instance::Instance;

/// Value and gradient with respect to each point.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

/// A silhouette prepared for the image-space energies.
#[derive(Clone, Debug)]
pub struct Silhouette {
    chamfer: ChamferField,
    boundary: Vec<Vec2>,
    tree: KdTree<2>,
    /// Cap on each point's contribution, in squared pixels.
    pub cap: f64,
}

impl Silhouette {
    /// The cap defaults to `(0.1 * image diagonal)^2`.
    pub fn new(mask: &SilhouetteMask) -> Self {
        Self::with_chamfer(mask, crate::geometry::chamfer_field(mask))
    }

    pub fn from_instance(inst: &Instance) -> Self {
        Self::with_chamfer(&inst.mask, inst.chamfer().clone())
    }

    fn with_chamfer(mask: &SilhouetteMask, chamfer: ChamferField) -> Self {
        let boundary = mask.boundary().to_vec();
        let tree = KdTree::new(boundary.iter().map(|p| [p.x, p.y]).collect());
        let diag = (mask.width() as f64).hypot(mask.height() as f64);
        Self { chamfer, boundary, tree, cap: (0.1 * diag).powi(2) }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.cap = cap;
        self
    }

    pub fn boundary(&self) -> &[Vec2] {
        &self.boundary
    }

    pub fn width(&self) -> usize {
        self.chamfer.width()
    }

    pub fn height(&self) -> usize {
        self.chamfer.height()
    }

    /// Whether `p` lies off the silhouette (positive chamfer value).
    pub fn outside(&self, p: &Vec2) -> bool {
        self.chamfer.sample(p) > 0.0
    }

    /// Index of and squared distance to the boundary pixel nearest to `p`.
    pub fn nearest_boundary(&self, p: &Vec2) -> Option<(usize, f64)> {
        self.tree.nearest_one(&[p.x, p.y]).map(|h| (h.index, h.dist2))
    }
}

/// For each target, the indices of its `m` nearest sources.
pub type Assignment = Vec<Vec<usize>>;

fn assign<const D: usize>(targets: &[[f64; D]], sources: Vec<[f64; D]>, m: usize) -> Result<Assignment> {
    if sources.len() < m {
        return Err(Error::InsufficientNeighbors { needed: m, available: sources.len() });
    }
    let tree = KdTree::new(sources);
    targets.iter().map(|t| Ok(tree.nearest(t, m)?.iter().map(|h| h.index).collect())).collect()
}

/// `c R[0..2]^T g`: an image-space gradient pulled back to the 3D point.
pub fn lift(cam: &OrthoCamera, g: &Vec2) -> Vec3 {
    cam.linear().transpose() * g
}

/// Per-point image-space gradients of [`e_sil_consistency`].
pub fn consistency_image(uv: &[Vec2], sil: &Silhouette) -> (f64, Vec<Vec2>) {
    let mut value = 0.0;
    let grad = uv
        .iter()
        .map(|p| {
            if !sil.outside(p) {
                return Vec2::zeros();
            }
            let Some((j, d2)) = sil.nearest_boundary(p) else {
                return Vec2::zeros();
            };
            if d2 >= sil.cap {
                value += sil.cap;
                return Vec2::zeros();
            }
            value += d2;
            (p - sil.boundary[j]) * 2.0
        })
        .collect();
    (value, grad)
}

/// Squared distance to the nearest boundary pixel, summed over the points
/// that project outside the silhouette.
pub fn e_sil_consistency(points: &[Vec3], cam: &OrthoCamera, sil: &Silhouette) -> Term {
    let (value, g) = consistency_image(&cam.project(points), sil);
    Term { value, grad: g.iter().map(|g| lift(cam, g)).collect() }
}

/// The `m` projected points nearest to each boundary pixel.
pub fn coverage_assignment(uv: &[Vec2], sil: &Silhouette, m: usize) -> Result<Assignment> {
    let targets: Vec<[f64; 2]> = sil.boundary.iter().map(|p| [p.x, p.y]).collect();
    assign(&targets, uv.iter().map(|p| [p.x, p.y]).collect(), m)
}

/// Coverage energy for a fixed assignment, with image-space gradients.
pub fn coverage_image(uv: &[Vec2], sil: &Silhouette, assignment: &Assignment) -> (f64, Vec<Vec2>) {
    let mut value = 0.0;
    let mut grad = vec![Vec2::zeros(); uv.len()];
    for (o, near) in sil.boundary.iter().zip(assignment) {
        let m = near.len() as f64;
        let d: f64 = near.iter().map(|&j| (uv[j] - o).norm_squared()).sum::<f64>() / m;
        if d >= sil.cap {
            value += sil.cap;
            continue;
        }
        value += d;
        for &j in near {
            grad[j] += (uv[j] - o) * (2.0 / m);
        }
    }
    (value, grad)
}

/// Mean squared distance from each boundary pixel to its `m` nearest
/// projected points, summed over the boundary.
pub fn e_sil_coverage(points: &[Vec3], cam: &OrthoCamera, sil: &Silhouette, m: usize) -> Result<Term> {
    let uv = cam.project(points);
    let a = coverage_assignment(&uv, sil, m)?;
    let (value, g) = coverage_image(&uv, sil, &a);
    Ok(Term { value, grad: g.iter().map(|g| lift(cam, g)).collect() })
}

pub fn keypoint_assignment(points: &[Vec3], keypoints: &[Vec3], m: usize) -> Result<Assignment> {
    let targets: Vec<[f64; 3]> = keypoints.iter().map(|p| [p.x, p.y, p.z]).collect();
    assign(&targets, points.iter().map(|p| [p.x, p.y, p.z]).collect(), m)
}

pub fn keypoint_with(points: &[Vec3], keypoints: &[Vec3], assignment: &Assignment, cap: f64) -> Term {
    let mut value = 0.0;
    let mut grad = vec![Vec3::zeros(); points.len()];
    for (k, near) in keypoints.iter().zip(assignment) {
        let m = near.len() as f64;
        let d: f64 = near.iter().map(|&j| (points[j] - k).norm_squared()).sum::<f64>() / m;
        if d >= cap {
            value += cap;
            continue;
        }
        value += d;
        for &j in near {
            grad[j] += (points[j] - k) * (2.0 / m);
        }
    }
    Term { value, grad }
}

/// Mean squared distance from each keypoint to its `m` nearest shape points.
pub fn e_keypoint(points: &[Vec3], keypoints: &[Vec3], m: usize, cap: f64) -> Result<Term> {
    let a = keypoint_assignment(points, keypoints, m)?;
    Ok(keypoint_with(points, keypoints, &a, cap))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    pub value: f64,
    pub grad_mean: Vec<Vec3>,
    pub grad_bases: Vec<Vec<Vec3>>,
}

/// `sum_i sum_{j in N(i)} (|S̄_i - S̄_j| - δ)^2 + sum_k |V_ki - V_kj|^2`
/// over ordered neighbour pairs.
pub fn e_local(mean: &[Vec3], bases: &[Vec<Vec3>], neighbors: &[Vec<usize>], delta: f64) -> LocalTerm {
    let mut value = 0.0;
    let mut grad_mean = vec![Vec3::zeros(); mean.len()];
    let mut grad_bases = vec![vec![Vec3::zeros(); mean.len()]; bases.len()];
    for (i, nbrs) in neighbors.iter().enumerate() {
        for &j in nbrs {
            let d = mean[i] - mean[j];
            let r = d.norm();
            value += (r - delta).powi(2);
            if r > 0.0 {
                let g = d * (2.0 * (r - delta) / r);
                grad_mean[i] += g;
                grad_mean[j] -= g;
            }
            for (b, gb) in bases.iter().zip(grad_bases.iter_mut()) {
                let e = b[i] - b[j];
                value += e.norm_squared();
                gb[i] += e * 2.0;
                gb[j] -= e * 2.0;
            }
        }
    }
    LocalTerm { value, grad_mean, grad_bases }
}

/// The `k - 1` nearest other points of every point.
pub fn knn_graph(points: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    let tree = kdtree3(points);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(tree.nearest(&[p.x, p.y, p.z], k)?.into_iter().map(|h| h.index).filter(|&j| j != i).take(k - 1).collect()))
        .collect()
}

/// `sum_i sum_{j in N(i)} (1 - |n_i . n_j|)` with normals fitted to the `k`
/// nearest points; pairs with an invalid normal are skipped.
pub fn e_normal(points: &[Vec3], k: usize) -> Result<f64> {
    Ok(normal_variation(&estimate_normals(points, k)?, &knn_graph(points, k)?))
}

/// `sum_i sum_{j in graph[i]} (1 - |n_i . n_j|)` over pairs with both normals.
pub fn normal_variation(normals: &[Option<Vec3>], graph: &[Vec<usize>]) -> f64 {
    let mut value = 0.0;
    for (i, nbrs) in graph.iter().enumerate() {
        let Some(ni) = normals[i] else { continue };
        for &j in nbrs {
            if let Some(nj) = normals[j] {
                value += 1.0 - ni.dot(&nj).abs();
            }
        }
    }
    value
}

/// A local plane through `point` with unit `normal`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

/// Plane fitted to each point's `k` nearest neighbours.
pub fn normal_planes(points: &[Vec3], k: usize) -> Result<Vec<Option<Plane>>> {
    let normals = estimate_normals(points, k)?;
    let tree = kdtree3(points);
    points
        .iter()
        .zip(normals)
        .map(|(p, n)| {
            let Some(normal) = n else { return Ok(None) };
            let hits = tree.nearest(&[p.x, p.y, p.z], k)?;
            let point = hits.iter().map(|h| points[h.index]).sum::<Vec3>() / hits.len() as f64;
            Ok(Some(Plane { point, normal }))
        })
        .collect()
}

/// Surrogate for the normal term: `sum_i ((x_i - c_i) . n_i)^2 / 2` against
/// fixed local planes. Its negative gradient pulls each point onto its plane.
pub fn plane_term(points: &[Vec3], planes: &[Option<Plane>]) -> Term {
    let mut value = 0.0;
    let grad = points
        .iter()
        .zip(planes)
        .map(|(x, pl)| match pl {
            Some(pl) => {
                let h = (x - pl.point).dot(&pl.normal);
                value += 0.5 * h * h;
                pl.normal * h
            }
            None => Vec3::zeros(),
        })
        .collect();
    Term { value, grad }
}

/// Term weights of the total energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub silhouette: f64,
    pub coverage: f64,
    pub keypoint: f64,
    pub local: f64,
    pub normal: f64,
    pub regularizer: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { silhouette: 1.0, coverage: 1.0, keypoint: 1.0, local: 0.5, normal: 0.1, regularizer: 0.01 }
    }
}

impl Weights {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let all = [
            ("silhouette", self.silhouette),
            ("coverage", self.coverage),
            ("keypoint", self.keypoint),
            ("local", self.local),
            ("normal", self.normal),
            ("regularizer", self.regularizer),
        ];
        for (name, w) in all {
            if !(w >= 0.0) || !w.is_finite() {
                return Err((name.to_string(), format!("must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values and the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub silhouette: f64,
    pub coverage: f64,
    pub keypoint: f64,
    pub local: f64,
    pub normal: f64,
    pub regularizer: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn weigh(&mut self, w: &Weights) {
        self.total = w.silhouette * self.silhouette
            + w.coverage * self.coverage
            + w.keypoint * self.keypoint
            + w.local * self.local
            + w.normal * self.normal
            + w.regularizer * self.regularizer;
    }

    fn add(&mut self, o: &EnergyBreakdown) {
        self.silhouette += o.silhouette;
        self.coverage += o.coverage;
        self.keypoint += o.keypoint;
        self.normal += o.normal;
    }

    /// Names the first non-finite term.
    pub fn check_finite(&self) -> Result<()> {
        let all = [
            ("silhouette", self.silhouette),
            ("coverage", self.coverage),
            ("keypoint", self.keypoint),
            ("local", self.local),
            ("normal", self.normal),
            ("regularizer", self.regularizer),
        ];
        match all.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite { what: "energy".into(), detail: format!("{name} term is {v}") }),
            None => Ok(()),
        }
    }
}

/// What one instance contributes to the energy.
#[derive(Clone, Debug)]
pub struct Target {
    pub silhouette: Silhouette,
    pub camera: OrthoCamera,
    /// 3D keypoints in the world frame of `camera`.
    pub keypoints: Option<Vec<Vec3>>,
}

impl Target {
    pub fn from_instance(inst: &Instance, keypoints: Option<Vec<Vec3>>) -> Self {
        Self { silhouette: Silhouette::from_instance(inst), camera: inst.camera.clone(), keypoints }
    }

    /// The image cap expressed in squared world units.
    pub fn keypoint_cap(&self) -> f64 {
        self.silhouette.cap / self.camera.scale().powi(2)
    }
}

/// Correspondences held fixed while a block is optimized.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub coverage: Assignment,
    pub keypoints: Option<Assignment>,
    pub planes: Vec<Option<Plane>>,
}

impl Frozen {
    pub fn new(shape: &[Vec3], camera: &OrthoCamera, target: &Target, m: usize, normal_k: usize, with_planes: bool) -> Result<Self> {
        let coverage = coverage_assignment(&camera.project(shape), &target.silhouette, m)?;
        let keypoints = match &target.keypoints {
            Some(k) => Some(keypoint_assignment(shape, k, m)?),
            None => None,
        };
        let planes = if with_planes { normal_planes(shape, normal_k)? } else { vec![None; shape.len()] };
        Ok(Self { coverage, keypoints, planes })
    }
}

/// Data terms of one shape under one camera with fixed correspondences:
/// unweighted values (the normal slot holds the plane surrogate), the
/// weighted gradient with respect to each projected point, and the weighted
/// gradient of the terms that do not depend on the camera.
pub struct DataEval {
    pub terms: EnergyBreakdown,
    pub value: f64,
    pub image_grad: Vec<Vec2>,
    pub shape_grad: Vec<Vec3>,
}

impl DataEval {
    /// Total gradient with respect to the 3D points.
    pub fn grad(&self, camera: &OrthoCamera) -> Vec<Vec3> {
        self.image_grad.iter().zip(&self.shape_grad).map(|(g, s)| lift(camera, g) + s).collect()
    }
}

pub fn data_eval(shape: &[Vec3], camera: &OrthoCamera, target: &Target, frozen: &Frozen, w: &Weights) -> DataEval {
    let uv = camera.project(shape);
    let mut terms = EnergyBreakdown::default();
    let mut image_grad = vec![Vec2::zeros(); shape.len()];
    let mut shape_grad = vec![Vec3::zeros(); shape.len()];
    if w.silhouette > 0.0 {
        let (v, g) = consistency_image(&uv, &target.silhouette);
        terms.silhouette = v;
        for (a, b) in image_grad.iter_mut().zip(g) {
            *a += b * w.silhouette;
        }
    }
    if w.coverage > 0.0 {
        let (v, g) = coverage_image(&uv, &target.silhouette, &frozen.coverage);
        terms.coverage = v;
        for (a, b) in image_grad.iter_mut().zip(g) {
            *a += b * w.coverage;
        }
    }
    if w.keypoint > 0.0 {
        if let (Some(k), Some(a)) = (&target.keypoints, &frozen.keypoints) {
            let t = keypoint_with(shape, k, a, target.keypoint_cap());
            terms.keypoint = t.value;
            for (s, g) in shape_grad.iter_mut().zip(t.grad) {
                *s += g * w.keypoint;
            }
        }
    }
    if w.normal > 0.0 {
        let t = plane_term(shape, &frozen.planes);
        terms.normal = t.value;
        for (s, g) in shape_grad.iter_mut().zip(t.grad) {
            *s += g * w.normal;
        }
    }
    let value = w.silhouette * terms.silhouette + w.coverage * terms.coverage + w.keypoint * terms.keypoint + w.normal * terms.normal;
    DataEval { terms, value, image_grad, shape_grad }
}

/// Exact per-instance term values with fresh correspondences.
pub fn instance_energy(shape: &[Vec3], camera: &OrthoCamera, target: &Target, m: usize, normal_k: usize, w: &Weights) -> Result<EnergyBreakdown> {
    let frozen = Frozen::new(shape, camera, target, m, normal_k, false)?;
    let mut terms = data_eval(shape, camera, target, &frozen, &Weights { normal: 0.0, ..w.clone() }).terms;
    terms.normal = if w.normal > 0.0 { e_normal(shape, normal_k)? } else { 0.0 };
    Ok(terms)
}

/// `E_tot` and its gradients.
#[derive(Clone, Debug)]
pub struct TotalEnergy {
    pub energy: EnergyBreakdown,
    pub grad_mean: Vec<Vec3>,
    pub grad_bases: Vec<Vec<Vec3>>,
    pub grad_alpha: Vec<Vec<f64>>,
}

/// Weighted total over the model and every instance. Values use fresh
/// correspondences and the exact normal term; the gradients are exact for
/// every other term, and the normal term contributes its plane surrogate.
pub fn total_energy(model: &BasisShapeModel, alphas: &[Vec<f64>], targets: &[Target], w: &Weights) -> Result<TotalEnergy> {
    use rayon::prelude::*;
    if alphas.len() != targets.len() || alphas.iter().any(|a| a.len() != model.bases.len()) {
        return Err(Error::invalid("coefficient vectors do not match the instances and bases"));
    }
    let (m, k) = (model.config.m, model.config.normal_k);
    let per: Vec<(EnergyBreakdown, Vec<Vec3>)> = targets
        .par_iter()
        .zip(alphas)
        .map(|(t, a)| {
            let shape = model.shape(a);
            let frozen = Frozen::new(&shape, &t.camera, t, m, k, w.normal > 0.0)?;
            let eval = data_eval(&shape, &t.camera, t, &frozen, w);
            let mut terms = eval.terms.clone();
            terms.normal = if w.normal > 0.0 { e_normal(&shape, k)? } else { 0.0 };
            Ok((terms, eval.grad(&t.camera)))
        })
        .collect::<Result<_>>()?;
    let local = e_local(&model.mean, &model.bases, &model.neighbors, model.delta);
    let bn2 = model.basis_norm.powi(2);
    let mut energy = EnergyBreakdown { local: local.value, ..Default::default() };
    let mut grad_mean: Vec<Vec3> = local.grad_mean.iter().map(|g| g * w.local).collect();
    let mut grad_bases: Vec<Vec<Vec3>> = local.grad_bases.iter().map(|b| b.iter().map(|g| g * w.local).collect()).collect();
    let mut grad_alpha = Vec::with_capacity(alphas.len());
    for ((terms, g), a) in per.iter().zip(alphas) {
        energy.add(terms);
        energy.regularizer += a.iter().map(|x| x * x).sum::<f64>() * bn2;
        for (gm, gi) in grad_mean.iter_mut().zip(g) {
            *gm += gi;
        }
        let mut ga = Vec::with_capacity(a.len());
        for (kk, ak) in a.iter().enumerate() {
            for (gb, gi) in grad_bases[kk].iter_mut().zip(g) {
                *gb += gi * *ak;
            }
            let dot: f64 = model.bases[kk].iter().zip(g).map(|(v, gi)| v.dot(gi)).sum();
            ga.push(dot + 2.0 * w.regularizer * bn2 * ak);
        }
        grad_alpha.push(ga);
    }
    energy.weigh(w);
    energy.check_finite()?;
    Ok(TotalEnergy { energy, grad_mean, grad_bases, grad_alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn disk_mask() -> SilhouetteMask {
        SilhouetteMask::from_fn(40, 40, |x, y| (x as f64 - 20.0).hypot(y as f64 - 20.0) <= 8.0).unwrap()
    }

    #[test]
    fn inside_points_cost_nothing() {
        let sil = Silhouette::new(&disk_mask());
        let cam = OrthoCamera::new(1.0, Matrix3::identity(), Vec2::new(20.0, 20.0)).unwrap();
        let pts = vec![Vec3::new(0.0, 0.0, 3.0), Vec3::new(2.0, -3.0, 0.0)];
        let t = e_sil_consistency(&pts, &cam, &sil);
        assert_eq!(t.value, 0.0);
        assert!(t.grad.iter().all(|g| *g == Vec3::zeros()));
    }

    #[test]
    fn outside_point_pays_squared_boundary_distance() {
        let mask = SilhouetteMask::from_fn(20, 20, |x, y| x <= 5 && y == 10).unwrap();
        let sil = Silhouette::new(&mask).with_cap(f64::INFINITY);
        let cam = OrthoCamera::new(1.0, Matrix3::identity(), Vec2::zeros()).unwrap();
        let t = e_sil_consistency(&[Vec3::new(9.0, 10.0, 0.0)], &cam, &sil);
        assert_eq!(t.value, 16.0);
    }

    #[test]
    fn coverage_single_pair() {
        let mask = SilhouetteMask::from_fn(10, 10, |x, y| x == 4 && y == 4).unwrap();
        let sil = Silhouette::new(&mask).with_cap(f64::INFINITY);
        let cam = OrthoCamera::new(1.0, Matrix3::identity(), Vec2::zeros()).unwrap();
        let t = e_sil_coverage(&[Vec3::new(4.0, 6.0, 0.0)], &cam, &sil, 1).unwrap();
        assert_eq!(t.value, 4.0);
        assert!(e_sil_coverage(&[Vec3::zeros()], &cam, &sil, 2).is_err());
    }

    #[test]
    fn keypoint_mean_of_squares() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 0.0, 7.0)];
        let t = e_keypoint(&pts, &[Vec3::zeros()], 2, f64::INFINITY).unwrap();
        assert_eq!(t.value, 5.0);
    }

    #[test]
    fn local_counts_ordered_pairs() {
        let mean = vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)];
        let t = e_local(&mean, &[], &[vec![1], vec![0]], 2.0);
        assert_eq!(t.value, 2.0);
        let at_rest = e_local(&mean, &[vec![Vec3::new(1.0, 1.0, 1.0); 2]], &[vec![1], vec![0]], 3.0);
        assert_eq!(at_rest.value, 0.0);
    }

    #[test]
    fn planar_cloud_has_no_normal_energy() {
        let pts: Vec<Vec3> = (0..50).map(|i| Vec3::new((i % 7) as f64 * 0.3, (i / 7) as f64 * 0.25 + 0.01 * (i % 3) as f64, 0.0)).collect();
        assert!(e_normal(&pts, 6).unwrap().abs() < 1e-12);
    }
}
