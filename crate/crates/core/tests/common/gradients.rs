//! Central finite-difference checks of the basis-model energies at random
//! configurations away from correspondence switches and caps.

use nalgebra::Matrix3;
use rand::RngExt;
use silcarve::basis::energy::{coverage_assignment, keypoint_assignment, Target};
use silcarve::basis::{e_keypoint, e_local, e_sil_consistency, e_sil_coverage, total_energy, BasisConfig, BasisShapeModel, Silhouette, Weights};
use silcarve::geometry::camera::{OrthoCamera, Vec2, Vec3};
use silcarve::geometry::mask::SilhouetteMask;
use silcarve::seed::{self, Rng};
use silcarve::synth::cameras::uniform_rotation;

/// Configurations per term.
pub const CONFIGS: usize = 100;

/// Step as a fraction of the configuration diameter.
pub const STEP: f64 = 1e-5;

fn ball(rng: &mut Rng, n: usize, r: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| loop {
            let p = Vec3::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
            if p.norm() <= 1.0 {
                return p * r;
            }
        })
        .collect()
}

fn diameter(points: &[Vec3]) -> f64 {
    silcarve::geometry::cloud::bbox_diagonal(points)
}

fn ellipse_mask(rng: &mut Rng, size: usize) -> SilhouetteMask {
    let c = size as f64 / 2.0;
    let (cx, cy) = (c + rng.random::<f64>() * 6.0 - 3.0, c + rng.random::<f64>() * 6.0 - 3.0);
    let (a, b) = (0.18 * size as f64 + rng.random::<f64>() * 0.15 * size as f64, 0.18 * size as f64 + rng.random::<f64>() * 0.15 * size as f64);
    let th = rng.random::<f64>() * std::f64::consts::PI;
    SilhouetteMask::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let (u, v) = (dx * th.cos() + dy * th.sin(), -dx * th.sin() + dy * th.cos());
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    })
    .unwrap()
}

fn camera(rng: &mut Rng, size: usize) -> OrthoCamera {
    let c = (size as f64 - 1.0) / 2.0;
    OrthoCamera::new(10.0 + 5.0 * rng.random::<f64>(), uniform_rotation(rng), Vec2::new(c, c)).unwrap()
}

/// Worst relative disagreement between analytic and numeric derivatives.
#[derive(Default)]
struct Worst(f64, usize);

impl Worst {
    fn push(&mut self, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs());
        if scale > 0.0 {
            self.0 = self.0.max((analytic - numeric).abs() / scale);
        }
        self.1 += 1;
    }
}

/// Checks `grad` against central differences of `value` along one random
/// direction and six random coordinates. `signature` must be unchanged at
/// every probe, else the configuration is rejected and `false` returned.
fn check_points<S: PartialEq>(
    x: &[Vec3],
    grad: &[Vec3],
    h: f64,
    rng: &mut Rng,
    value: impl Fn(&[Vec3]) -> f64,
    signature: impl Fn(&[Vec3]) -> S,
    worst: &mut Worst,
) -> bool {
    let base = signature(x);
    let mut probes: Vec<Vec<Vec3>> = Vec::new();
    let dir: Vec<Vec3> = (0..x.len()).map(|_| Vec3::from_fn(|_, _| rng.random::<f64>() - 0.5)).collect();
    let n = dir.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
    probes.push(dir.iter().map(|d| d / n).collect());
    for _ in 0..6 {
        let mut e = vec![Vec3::zeros(); x.len()];
        e[rng.random_range(0..x.len())][rng.random_range(0..3)] = 1.0;
        probes.push(e);
    }
    let mut pairs = Vec::new();
    for d in &probes {
        let plus: Vec<Vec3> = x.iter().zip(d).map(|(p, v)| p + v * h).collect();
        let minus: Vec<Vec3> = x.iter().zip(d).map(|(p, v)| p - v * h).collect();
        if signature(&plus) != base || signature(&minus) != base {
            return false;
        }
        let analytic: f64 = grad.iter().zip(d).map(|(g, v)| g.dot(v)).sum();
        pairs.push((analytic, (value(&plus) - value(&minus)) / (2.0 * h)));
    }
    for (a, f) in pairs {
        worst.push(a, f);
    }
    true
}

fn run(seed: u64, mut one: impl FnMut(&mut Rng, &mut Worst) -> bool) -> f64 {
    let mut rng = seed::rng(seed);
    let mut worst = Worst::default();
    let mut accepted = 0;
    let mut tries = 0;
    while accepted < CONFIGS {
        tries += 1;
        assert!(tries < 20 * CONFIGS, "too few smooth configurations");
        if one(&mut rng, &mut worst) {
            accepted += 1;
        }
    }
    worst.0
}

fn consistency_signature(points: &[Vec3], cam: &OrthoCamera, sil: &Silhouette) -> Vec<(bool, Option<usize>, bool)> {
    cam.project(points)
        .iter()
        .map(|p| {
            let out = sil.outside(p);
            let nb = sil.nearest_boundary(p);
            (out, nb.map(|n| n.0), out && nb.is_some_and(|n| n.1 >= sil.cap))
        })
        .collect()
}

fn coverage_signature(points: &[Vec3], cam: &OrthoCamera, sil: &Silhouette, m: usize) -> Vec<(Vec<usize>, bool)> {
    let uv = cam.project(points);
    let a = coverage_assignment(&uv, sil, m).unwrap();
    sil.boundary()
        .iter()
        .zip(a)
        .map(|(o, near)| {
            let d: f64 = near.iter().map(|&j| (uv[j] - o).norm_squared()).sum::<f64>() / m as f64;
            let mut s = near.clone();
            s.sort_unstable();
            (s, d >= sil.cap)
        })
        .collect()
}

fn keypoint_signature(points: &[Vec3], kps: &[Vec3], m: usize, cap: f64) -> Vec<(Vec<usize>, bool)> {
    let a = keypoint_assignment(points, kps, m).unwrap();
    kps.iter()
        .zip(a)
        .map(|(k, near)| {
            let d: f64 = near.iter().map(|&j| (points[j] - k).norm_squared()).sum::<f64>() / m as f64;
            let mut s = near.clone();
            s.sort_unstable();
            (s, d >= cap)
        })
        .collect()
}

/// Silhouette consistency term.
pub fn consistency(seed: u64) -> f64 {
    run(seed, |rng, worst| {
        let sil = Silhouette::new(&ellipse_mask(rng, 48));
        let cam = camera(rng, 48);
        let x = ball(rng, 60, 2.0);
        let h = STEP * diameter(&x);
        let t = e_sil_consistency(&x, &cam, &sil);
        check_points(&x, &t.grad, h, rng, |y| e_sil_consistency(y, &cam, &sil).value, |y| consistency_signature(y, &cam, &sil), worst)
    })
}

/// Silhouette coverage term, `m = 4`.
pub fn coverage(seed: u64) -> f64 {
    run(seed, |rng, worst| {
        let sil = Silhouette::new(&ellipse_mask(rng, 48));
        let cam = camera(rng, 48);
        let x = ball(rng, 60, 2.0);
        let h = STEP * diameter(&x);
        let t = e_sil_coverage(&x, &cam, &sil, 4).unwrap();
        check_points(&x, &t.grad, h, rng, |y| e_sil_coverage(y, &cam, &sil, 4).unwrap().value, |y| coverage_signature(y, &cam, &sil, 4), worst)
    })
}

/// Keypoint term, `m = 4`, with a cap that some keypoints exceed.
pub fn keypoint(seed: u64) -> f64 {
    run(seed, |rng, worst| {
        let x = ball(rng, 60, 1.0);
        let kps = ball(rng, 8, 1.5);
        let cap = 0.3;
        let h = STEP * diameter(&x);
        let t = e_keypoint(&x, &kps, 4, cap).unwrap();
        check_points(&x, &t.grad, h, rng, |y| e_keypoint(y, &kps, 4, cap).unwrap().value, |y| keypoint_signature(y, &kps, 4, cap), worst)
    })
}

fn neighbours(x: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    let g = silcarve::basis::energy::knn_graph(x, k + 1).unwrap();
    let mut s: Vec<std::collections::BTreeSet<usize>> = g.iter().map(|n| n.iter().copied().collect()).collect();
    for (i, n) in g.iter().enumerate() {
        for &j in n {
            s[j].insert(i);
        }
    }
    s.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Smoothness term, on the mean block and the basis block.
pub fn local(seed: u64) -> f64 {
    run(seed, |rng, worst| {
        let x = ball(rng, 40, 1.0);
        let nb = neighbours(&x, 6);
        let bases: Vec<Vec<Vec3>> = (0..2).map(|_| ball(rng, 40, 0.3)).collect();
        let delta = 0.1 + 0.3 * rng.random::<f64>();
        let h = STEP * diameter(&x);
        let t = e_local(&x, &bases, &nb, delta);
        let ok = check_points(&x, &t.grad_mean, h, rng, |y| e_local(y, &bases, &nb, delta).value, |_| (), worst);
        let b0 = bases[0].clone();
        let with = |b: &[Vec3]| vec![b.to_vec(), bases[1].clone()];
        ok && check_points(&b0, &t.grad_bases[0], h, rng, |b| e_local(&x, &with(b), &nb, delta).value, |_| (), worst)
    })
}

/// A small model over three silhouettes with 3D keypoints.
fn alpha_problem(rng: &mut Rng) -> (BasisShapeModel, Vec<Target>, Vec<Vec<f64>>) {
    let mean = ball(rng, 80, 1.0);
    let neighbors = neighbours(&mean, 6);
    let bases: Vec<Vec<Vec3>> = (0..2)
        .map(|_| {
            let a = Matrix3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let b: Vec<Vec3> = mean.iter().map(|x| a * x).collect();
            let n = silcarve::basis::frobenius(&b);
            b.iter().map(|v| v / n).collect()
        })
        .collect();
    let config = BasisConfig { k: 2, points: 80, m: 4, normal_k: 8, ..BasisConfig::default() };
    let model = BasisShapeModel { mean, bases, basis_norm: 1.0, delta: 0.2, neighbors, config };
    let targets = (0..3)
        .map(|_| Target { silhouette: Silhouette::new(&ellipse_mask(rng, 48)), camera: camera(rng, 48), keypoints: Some(ball(rng, 6, 1.2)) })
        .collect();
    let alphas = (0..3).map(|_| (0..2).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect()).collect();
    (model, targets, alphas)
}

/// Derivative of the total energy in every coefficient; the normal term is
/// switched off because it is not differentiated exactly.
pub fn alpha(seed: u64) -> f64 {
    let w = Weights { normal: 0.0, ..Weights::default() };
    run(seed, |rng, worst| {
        let (model, targets, alphas) = alpha_problem(rng);
        let h = STEP * diameter(&model.mean);
        let sig = |a: &[Vec<f64>]| -> Vec<_> {
            targets
                .iter()
                .zip(a)
                .map(|(t, ai)| {
                    let s = model.shape(ai);
                    let cap = t.keypoint_cap();
                    (
                        consistency_signature(&s, &t.camera, &t.silhouette),
                        coverage_signature(&s, &t.camera, &t.silhouette, 4),
                        keypoint_signature(&s, t.keypoints.as_ref().unwrap(), 4, cap),
                    )
                })
                .collect()
        };
        let base = sig(&alphas);
        let g = total_energy(&model, &alphas, &targets, &w).unwrap().grad_alpha;
        let mut pairs = Vec::new();
        for i in 0..alphas.len() {
            for k in 0..2 {
                let mut p = alphas.clone();
                let mut m = alphas.clone();
                p[i][k] += h;
                m[i][k] -= h;
                if sig(&p) != base || sig(&m) != base {
                    return false;
                }
                let ep = total_energy(&model, &p, &targets, &w).unwrap().energy.total;
                let em = total_energy(&model, &m, &targets, &w).unwrap().energy.total;
                pairs.push((g[i][k], (ep - em) / (2.0 * h)));
            }
        }
        for (a, f) in pairs {
            worst.push(a, f);
        }
        true
    })
}
