mod common;

use std::sync::OnceLock;

use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::RngExt;
use silcarve::basis::energy::{e_normal, Target};
use silcarve::basis::*;
use silcarve::eval::depth::point_silhouette;
use silcarve::eval::metrics::hausdorff_norm;
use silcarve::geometry::camera::{OrthoCamera, Vec2, Vec3};
use silcarve::geometry::mask::{occupancy_iou, SilhouetteMask};
use silcarve::geometry::volume::GridSpec;
use silcarve::instance::Instance;
use silcarve::synth::*;
use silcarve::Error;

use common::gradients;

const TOL: f64 = 1e-4;

fn frontal(scale: f64, t: Vec2) -> OrthoCamera {
    OrthoCamera::new(scale, Matrix3::identity(), t).unwrap()
}

#[test]
fn consistency_is_zero_inside_and_squared_distance_outside() {
    let mask = SilhouetteMask::from_fn(40, 40, |x, y| (x as f64 - 20.0).hypot(y as f64 - 20.0) <= 10.0).unwrap();
    let sil = Silhouette::new(&mask).with_cap(f64::INFINITY);
    let cam = frontal(1.0, Vec2::new(20.0, 20.0));
    let inside: Vec<Vec3> = (0..20).map(|i| Vec3::new((i % 5) as f64 - 2.0, (i / 5) as f64 - 2.0, i as f64)).collect();
    let t = e_sil_consistency(&inside, &cam, &sil);
    assert_eq!(t.value, 0.0);
    assert!(t.grad.iter().all(|g| *g == Vec3::zeros()));

    let bar = SilhouetteMask::from_fn(30, 30, |x, y| y == 15 && (5..=12).contains(&x)).unwrap();
    let sil = Silhouette::new(&bar).with_cap(f64::INFINITY);
    let t = e_sil_consistency(&[Vec3::new(19.0, 15.0, 2.0)], &frontal(1.0, Vec2::zeros()), &sil);
    assert_eq!(t.value, 49.0);
    assert_eq!(t.grad[0], Vec3::new(14.0, 0.0, 0.0));
}

#[test]
fn capped_points_contribute_the_cap_and_no_gradient() {
    let bar = SilhouetteMask::from_fn(30, 30, |x, y| y == 15 && x == 5).unwrap();
    let sil = Silhouette::new(&bar).with_cap(25.0);
    let t = e_sil_consistency(&[Vec3::new(25.0, 15.0, 0.0)], &frontal(1.0, Vec2::zeros()), &sil);
    assert_eq!(t.value, 25.0);
    assert_eq!(t.grad[0], Vec3::zeros());
}

#[test]
fn coverage_examples() {
    let mask = SilhouetteMask::from_fn(12, 12, |x, y| (3..=8).contains(&x) && (3..=8).contains(&y)).unwrap();
    let sil = Silhouette::new(&mask);
    let cam = frontal(1.0, Vec2::zeros());
    let exact: Vec<Vec3> = sil.boundary().iter().flat_map(|p| std::iter::repeat_n(Vec3::new(p.x, p.y, 0.5), 3)).collect();
    assert_eq!(e_sil_coverage(&exact, &cam, &sil, 3).unwrap().value, 0.0);

    let dot = SilhouetteMask::from_fn(10, 10, |x, y| x == 4 && y == 4).unwrap();
    let sil = Silhouette::new(&dot).with_cap(f64::INFINITY);
    assert_eq!(e_sil_coverage(&[Vec3::new(4.0, 2.0, 0.0)], &cam, &sil, 1).unwrap().value, 4.0);
    assert!(matches!(
        e_sil_coverage(&[Vec3::zeros(); 2], &cam, &sil, 3),
        Err(Error::InsufficientNeighbors { needed: 3, available: 2 })
    ));
}

#[test]
fn keypoint_examples() {
    let pts = vec![Vec3::new(0.0, 1.0, 0.0), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 9.0)];
    assert_eq!(e_keypoint(&pts, &[Vec3::zeros()], 2, f64::INFINITY).unwrap().value, 5.0);
    let k = [Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.0, 0.5)];
    let on: Vec<Vec3> = k.iter().flat_map(|p| [*p, *p, *p]).collect();
    assert_eq!(e_keypoint(&on, &k, 3, f64::INFINITY).unwrap().value, 0.0);
}

#[test]
fn local_examples() {
    let two = vec![Vec3::zeros(), Vec3::new(0.0, 3.0, 0.0)];
    let nb = vec![vec![1], vec![0]];
    assert_eq!(e_local(&two, &[], &nb, 2.0).value, 2.0);
    let chain: Vec<Vec3> = (0..5).map(|i| Vec3::new(0.7 * i as f64, 0.0, 0.0)).collect();
    let nb: Vec<Vec<usize>> = (0..5usize).map(|i| [i.wrapping_sub(1), i + 1].into_iter().filter(|&j| j < 5).collect()).collect();
    let flat = vec![vec![Vec3::new(0.2, -0.1, 0.4); 5]];
    let t = e_local(&chain, &flat, &nb, 0.7);
    assert!(t.value.abs() < 1e-24);
}

#[test]
fn normal_variation_counts_each_ordered_pair() {
    let n = vec![Some(Vec3::x()), Some(Vec3::y()), None];
    assert_eq!(normal_variation(&n, &[vec![1], vec![0]]), 2.0);
    assert_eq!(normal_variation(&n, &[vec![1, 2], vec![0, 2], vec![0, 1]]), 2.0);
    let flipped = vec![Some(Vec3::z()), Some(-Vec3::z())];
    assert_eq!(normal_variation(&flipped, &[vec![1], vec![0]]), 0.0);
}

fn noisy_plane(seed: u64, noise: f64) -> Vec<Vec3> {
    let mut rng = silcarve::seed::rng(seed);
    (0..225).map(|i| Vec3::new((i % 15) as f64 * 0.1, (i / 15) as f64 * 0.1, noise * (rng.random::<f64>() - 0.5))).collect()
}

#[test]
fn planar_cloud_has_zero_normal_energy() {
    assert!(e_normal(&noisy_plane(1, 0.0), 8).unwrap().abs() < 1e-12);
}

#[test]
fn plane_pull_lowers_normal_variation() {
    let mut x = noisy_plane(2, 0.04);
    let mut prev = e_normal(&x, 8).unwrap();
    for _ in 0..10 {
        let planes = normal_planes(&x, 8).unwrap();
        let t = plane_term(&x, &planes);
        for (p, g) in x.iter_mut().zip(&t.grad) {
            *p -= g * 0.5;
        }
        let e = e_normal(&x, 8).unwrap();
        assert!(e < prev, "{e} >= {prev}");
        prev = e;
    }
}

fn bar_problem() -> (BasisShapeModel, Vec<Target>) {
    let mask = SilhouetteMask::from_fn(12, 12, |x, y| y == 5 && (2..=8).contains(&x)).unwrap();
    let mean: Vec<Vec3> = (2..=8).map(|x| Vec3::new(x as f64, 5.0, 0.0)).collect();
    let neighbors: Vec<Vec<usize>> = (0..7usize).map(|i| [i.wrapping_sub(1), i + 1].into_iter().filter(|&j| j < 7).collect()).collect();
    let basis = vec![Vec3::new(1.0 / 7f64.sqrt(), 0.0, 0.0); 7];
    let config = BasisConfig { k: 1, points: 7, m: 1, neighbors: 2, normal_k: 3, ..BasisConfig::default() };
    let model = BasisShapeModel { mean, bases: vec![basis], basis_norm: 1.0, delta: 1.0, neighbors, config };
    let target = Target { silhouette: Silhouette::new(&mask), camera: frontal(1.0, Vec2::zeros()), keypoints: None };
    (model, vec![target])
}

#[test]
fn every_term_vanishes_at_the_zero_configuration() {
    let (model, targets) = bar_problem();
    let e = total_energy(&model, &[vec![0.0]], &targets, &Weights::default()).unwrap();
    assert_eq!(e.energy, EnergyBreakdown::default());
    assert!(e.grad_alpha[0].iter().all(|g| *g == 0.0));
}

#[test]
fn weights_scale_their_terms() {
    let (model, targets) = bar_problem();
    let a = [vec![5.0]];
    let one = total_energy(&model, &a, &targets, &Weights::default()).unwrap().energy;
    let two = total_energy(&model, &a, &targets, &Weights { silhouette: 2.0, ..Weights::default() }).unwrap().energy;
    assert!(one.silhouette > 0.0);
    assert!(((two.total - one.total) - one.silhouette).abs() <= 1e-12 * one.total);
    assert_eq!(one.regularizer, 25.0);
}

#[test]
fn consistency_gradient_matches_finite_differences() {
    let e = gradients::consistency(11);
    assert!(e < TOL, "max relative error {e:.3e}");
}

#[test]
fn coverage_gradient_matches_finite_differences() {
    let e = gradients::coverage(12);
    assert!(e < TOL, "max relative error {e:.3e}");
}

#[test]
fn keypoint_gradient_matches_finite_differences() {
    let e = gradients::keypoint(13);
    assert!(e < TOL, "max relative error {e:.3e}");
}

#[test]
fn local_gradient_matches_finite_differences() {
    let e = gradients::local(14);
    assert!(e < TOL, "max relative error {e:.3e}");
}

#[test]
fn coefficient_gradient_matches_finite_differences() {
    let e = gradients::alpha(15);
    assert!(e < TOL, "max relative error {e:.3e}");
}

fn random_scene(seed: u64) -> (Vec<Vec3>, Vec<Vec3>, OrthoCamera, Silhouette) {
    let mut rng = silcarve::seed::rng(seed);
    let pts: Vec<Vec3> = (0..80).map(|_| Vec3::from_fn(|_, _| 3.0 * rng.random::<f64>() - 1.5)).collect();
    let kps: Vec<Vec3> = (0..6).map(|_| Vec3::from_fn(|_, _| 2.0 * rng.random::<f64>() - 1.0)).collect();
    let cam = OrthoCamera::new(9.0, silcarve::synth::cameras::uniform_rotation(&mut rng), Vec2::new(24.0, 24.0)).unwrap();
    let mask = SilhouetteMask::from_fn(48, 48, |x, y| (x as f64 - 22.0).powi(2) / 144.0 + (y as f64 - 25.0).powi(2) / 64.0 <= 1.0).unwrap();
    (pts, kps, cam, Silhouette::new(&mask))
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn data_terms_ignore_point_order() {
    for seed in 0..10 {
        let (pts, kps, cam, sil) = random_scene(seed);
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.reverse();
        perm.rotate_left(seed as usize);
        let q: Vec<Vec3> = perm.iter().map(|&i| pts[i]).collect();
        assert!(rel_close(e_sil_consistency(&pts, &cam, &sil).value, e_sil_consistency(&q, &cam, &sil).value));
        assert!(rel_close(e_sil_coverage(&pts, &cam, &sil, 4).unwrap().value, e_sil_coverage(&q, &cam, &sil, 4).unwrap().value));
        assert!(rel_close(e_keypoint(&pts, &kps, 4, 1.0).unwrap().value, e_keypoint(&q, &kps, 4, 1.0).unwrap().value));
    }
}

#[test]
fn image_terms_are_rigidly_invariant() {
    for seed in 0..10 {
        let (pts, kps, cam, sil) = random_scene(seed);
        let r0 = silcarve::synth::cameras::uniform_rotation(&mut silcarve::seed::rng(100 + seed));
        let moved: Vec<Vec3> = pts.iter().map(|p| r0 * p).collect();
        let kmoved: Vec<Vec3> = kps.iter().map(|p| r0 * p).collect();
        let cam2 = cam.with_rotation(cam.rotation() * r0.transpose()).unwrap();
        assert!(rel_close(e_sil_consistency(&pts, &cam, &sil).value, e_sil_consistency(&moved, &cam2, &sil).value));
        assert!(rel_close(e_sil_coverage(&pts, &cam, &sil, 4).unwrap().value, e_sil_coverage(&moved, &cam2, &sil, 4).unwrap().value));
        assert!(rel_close(e_keypoint(&pts, &kps, 4, 1.0).unwrap().value, e_keypoint(&moved, &kmoved, 4, 1.0).unwrap().value));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn every_term_is_non_negative(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (pts, kps, cam, sil) = random_scene(seed);
        prop_assert!(e_sil_consistency(&pts, &cam, &sil).value >= 0.0);
        prop_assert!(e_sil_coverage(&pts, &cam, &sil, 4).unwrap().value >= 0.0);
        prop_assert!(e_keypoint(&pts, &kps, 4, 1.0).unwrap().value >= 0.0);
        prop_assert!(e_normal(&pts, 8).unwrap() >= 0.0);
        let (model, targets) = bar_problem();
        let e = total_energy(&model, &[vec![a + b]], &targets, &Weights::default()).unwrap().energy;
        for v in [e.silhouette, e.coverage, e.keypoint, e.local, e.normal, e.regularizer, e.total] {
            prop_assert!(v >= 0.0);
        }
    }
}

fn sphere_views(n: usize, seed: u64) -> Vec<Instance> {
    let mesh = make_shape(&Shape::Sphere { radius: 1.0 }, 4).unwrap();
    sample_cameras(n, &CameraLaw::Uniform, seed)
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let cam = c.with_scale(0.7 * 64.0).unwrap().with_translation(Vec2::new(63.5, 63.5));
            Instance::new(format!("{i}"), render_mask(&mesh, &cam, 128, 128).unwrap(), cam, None)
        })
        .collect()
}

#[test]
fn single_disk_gives_a_cylinder() {
    let mask = SilhouetteMask::from_fn(128, 128, |x, y| (x as f64 - 63.5).hypot(y as f64 - 63.5) <= 20.0).unwrap();
    let inst = Instance::new("c", mask, frontal(40.0, Vec2::new(63.5, 63.5)), None);
    let grid = GridSpec::centered_cube(2.0, 48).unwrap();
    let pts = soft_visual_hull_init(&[inst], &grid, 3000, 5).unwrap();
    assert_eq!(pts.len(), 3000);
    let worst = pts.iter().map(|p| (p.x.hypot(p.y) - 0.5).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.5 * grid.voxel_size, "{worst}");
}

/// Radius along `u` where the summed clamped cone distances of a unit
/// sphere's views cross zero.
fn analytic_soft_radius(u: &Vec3, cams: &[OrthoCamera], l: f64) -> f64 {
    let field = |r: f64| cams.iter().map(|c| ((c.rows() * (u * r)).norm() - 1.0).max(l)).sum::<f64>();
    let (mut lo, mut hi) = (0.5, 2.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if field(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn sphere_soft_hull_follows_the_analytic_field() {
    let views = sphere_views(24, 1);
    let grid = GridSpec::centered_cube(2.6, 64).unwrap();
    let pts = soft_visual_hull_init(&views, &grid, 2000, 9).unwrap();
    assert_eq!(pts.len(), 2000);
    let cams: Vec<OrthoCamera> = views.iter().map(|v| v.camera.clone()).collect();
    let l = -2.0 * grid.voxel_size;
    let worst = pts.iter().map(|p| (p.norm() - analytic_soft_radius(&p.normalize(), &cams, l)).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.5 * grid.voxel_size, "{} voxels", worst / grid.voxel_size);
}

#[test]
fn initial_grid_covers_every_silhouette() {
    let views = sphere_views(6, 3);
    let grid = grid_from_instances(&views, 32).unwrap();
    let c = grid.point(15.5, 15.5, 15.5);
    assert!(c.norm() < 0.05, "{c:?}");
    let side = grid.voxel_size * 32.0;
    assert!(side > 2.0 && side < 3.5, "{side}");
}

#[test]
fn mean_only_model_recovers_a_sphere() {
    let views = sphere_views(16, 4);
    let cfg = BasisConfig { k: 0, points: 800, iters: 30, grid_size: 40, ..BasisConfig::default() };
    let fit = learn_basis(&views, None, &cfg, 2).unwrap();
    let mesh = make_shape(&Shape::Sphere { radius: 1.0 }, 5).unwrap();
    let gt = mesh.sample_surface(10_000, &mut silcarve::seed::rng(0)).unwrap();
    let h = hausdorff_norm(&fit.model.mean, &gt, mesh.bbox_diagonal()).unwrap();
    assert!(h <= 0.15, "{h}");
    assert!(fit.log.len() >= 2);
}

fn ellipsoids(n: usize, seed: u64) -> Vec<GroundTruthInstance> {
    let family = FamilySpec { base: Shape::Sphere { radius: 1.0 }, directions: vec![[0.4, 0.0, 0.0], [0.0, 0.0, 0.4]], latent_range: [-1.0, 1.0] };
    make_dataset(&SceneSpec::new(family, n, seed)).unwrap()
}

fn small_config() -> BasisConfig {
    BasisConfig { points: 1500, iters: 30, grid_size: 40, ..BasisConfig::default() }
}

fn trained() -> &'static (LearnedBasis, Vec<GroundTruthInstance>) {
    static MODEL: OnceLock<(LearnedBasis, Vec<GroundTruthInstance>)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = ellipsoids(10, 21);
        let inst: Vec<Instance> = data.iter().map(|d| d.to_instance()).collect();
        (learn_basis(&inst, None, &small_config(), 3).unwrap(), data)
    })
}

#[test]
fn learned_model_explains_its_training_silhouettes() {
    let (fit, data) = trained();
    for (a, d) in fit.alphas.iter().zip(data) {
        let sil = point_silhouette(&fit.model.shape(a), &d.camera, 128, 128, None);
        let iou = occupancy_iou(&sil, d.mask.occupancy());
        assert!(iou >= 0.85, "{iou}");
    }
    for b in &fit.model.bases {
        assert!((frobenius(b) - 1.0).abs() < 1e-6);
    }
    for (i, n) in fit.model.neighbors.iter().enumerate() {
        assert!(n.iter().all(|&j| fit.model.neighbors[j].contains(&i)));
    }
}

#[test]
fn learning_is_bit_reproducible() {
    let data = ellipsoids(4, 5);
    let inst: Vec<Instance> = data.iter().map(|d| d.to_instance()).collect();
    let cfg = BasisConfig { points: 300, iters: 4, grid_size: 24, ..BasisConfig::default() };
    let a = learn_basis(&inst, None, &cfg, 8).unwrap();
    let b = learn_basis(&inst, None, &cfg, 8).unwrap();
    assert_eq!(serde_json::to_string(&a.model).unwrap(), serde_json::to_string(&b.model).unwrap());
    assert_eq!(a.alphas, b.alphas);
}

#[test]
fn model_json_round_trips() {
    let (fit, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    fit.model.write(&path).unwrap();
    assert_eq!(BasisShapeModel::read(&path).unwrap(), fit.model);
}

#[test]
fn learning_needs_two_instances_and_a_valid_config() {
    let data = ellipsoids(2, 5);
    let inst: Vec<Instance> = data.iter().map(|d| d.to_instance()).collect();
    assert!(matches!(learn_basis(&inst[..1], None, &small_config(), 0), Err(Error::InvalidInput(_))));
    let bad = BasisConfig { weights: Weights { coverage: -1.0, ..Weights::default() }, ..small_config() };
    match learn_basis(&inst, None, &bad, 0) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "weights.coverage"),
        other => panic!("{other:?}"),
    }
}

fn mean_alpha_norm(fit: &LearnedBasis) -> f64 {
    fit.alphas.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / fit.alphas.len() as f64
}

#[test]
fn silhouette_of_the_mean_fits_with_small_coefficients() {
    let (fit, data) = trained();
    let cam = data[0].camera.clone();
    let grid = grid_around(&fit.model.mean, 48, 1.3).unwrap();
    let mesh = mesh_points(&fit.model.mean, &grid, 8).unwrap();
    let mask = render_mask(&mesh, &cam, 128, 128).unwrap();
    let f = fit_instance(&mask, &cam, &fit.model, &FitConfig::default()).unwrap();
    let norm = f.alpha.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm <= 0.1 * mean_alpha_norm(fit), "{norm} vs {}", mean_alpha_norm(fit));
}

#[test]
fn overwhelming_regularizer_pins_the_mean() {
    let (fit, data) = trained();
    let mut model = fit.model.clone();
    model.config.weights.regularizer = 1e9;
    let d = &data[1];
    let f = fit_instance(&d.mask, &d.camera, &model, &FitConfig { optimize_rotation: false, optimize_scale: false, optimize_translation: false, ..FitConfig::default() }).unwrap();
    assert!(f.alpha.iter().all(|a| a.abs() < 1e-6), "{:?}", f.alpha);
    let dev = f.shape.iter().zip(&model.mean).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(dev < 1e-5);
}

#[test]
fn without_data_terms_the_coefficients_stay_zero() {
    let (fit, data) = trained();
    let mut model = fit.model.clone();
    model.config.weights = Weights { silhouette: 0.0, coverage: 0.0, keypoint: 0.0, normal: 0.0, ..Weights::default() };
    let d = &data[2];
    let f = fit_instance(&d.mask, &d.camera, &model, &FitConfig::default()).unwrap();
    assert!(f.alpha.iter().all(|a| *a == 0.0));
    assert_eq!(f.shape, model.mean);
}

#[test]
fn fitting_a_held_out_silhouette_beats_the_posed_mean() {
    let (fit, _) = trained();
    let held = ellipsoids(13, 21);
    for d in &held[10..] {
        let f = fit_instance(&d.mask, &d.camera, &fit.model, &FitConfig::default()).unwrap();
        let iou = occupancy_iou(&point_silhouette(&f.shape, &f.camera, 128, 128, None), d.mask.occupancy());
        let base = occupancy_iou(&point_silhouette(&fit.model.mean, &d.camera, 128, 128, None), d.mask.occupancy());
        assert!(iou >= 0.8 && iou >= base, "{iou} vs {base}");
        let e = &f.energy;
        assert_eq!(e.keypoint, 0.0);
        assert!(e.total.is_finite());
    }
}

#[test]
fn empty_silhouette_is_refused() {
    let (fit, _) = trained();
    let mask = SilhouetteMask::from_fn(16, 16, |_, _| false);
    if let Ok(mask) = mask {
        assert!(matches!(fit_instance(&mask, &OrthoCamera::identity(), &fit.model, &FitConfig::default()), Err(Error::EmptySilhouette)));
    }
}
