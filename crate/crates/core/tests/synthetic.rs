use proptest::prelude::*;
use silcarve::geometry::camera::Vec3;
use silcarve::geometry::cloud::bbox;
use silcarve::nrsfm::{fit_nrsfm, NrsfmConfig};
use silcarve::synth::*;

fn ellipsoids(n: usize, seed: u64) -> SceneSpec {
    let family = FamilySpec {
        base: Shape::Ellipsoid { a: 1.0, b: 0.7, c: 0.5 },
        directions: vec![[0.3, 0.0, 0.0], [0.0, 0.15, 0.2]],
        latent_range: [-1.0, 1.0],
    };
    SceneSpec::new(family, n, seed)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn sphere_silhouettes_have_disk_area_from_every_view() {
    let spec = SceneSpec::new(FamilySpec::fixed(Shape::Sphere { radius: 1.0 }), 6, 3);
    let spec = SceneSpec { tessellation: 5, ..spec };
    let s = spec.camera_scale();
    let disk = std::f64::consts::PI * s * s;
    for inst in make_dataset(&spec).unwrap() {
        assert!((inst.mask.area() as f64 - disk).abs() <= 0.02 * disk, "{}", inst.mask.area());
        assert_eq!(inst.depth.valid(), inst.mask.occupancy());
    }
}

#[test]
fn box_bounding_box_spans_the_full_sides() {
    let mesh = make_shape(&Shape::Box { a: 2.0, b: 1.0, c: 0.5 }, 3).unwrap();
    let (lo, hi) = bbox(&mesh.vertices);
    assert_eq!(lo, Vec3::new(-1.0, -0.5, -0.25));
    assert_eq!(hi, Vec3::new(1.0, 0.5, 0.25));
}

#[test]
fn datasets_do_not_depend_on_thread_count() {
    let spec = SceneSpec { keypoint_noise: 1.0, camera_noise_deg: 3.0, ..ellipsoids(8, 13) };
    let build = |threads| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| make_dataset(&spec).unwrap());
    for (a, b) in build(1).iter().zip(&build(3)) {
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.keypoints, b.keypoints);
        assert_eq!(a.camera, b.camera);
        assert_eq!(a.latents, b.latents);
    }
}

#[test]
fn hidden_keypoints_lie_behind_the_depth_buffer() {
    let mut hidden = 0;
    for inst in make_dataset(&ellipsoids(10, 4)).unwrap() {
        let tol = 0.01 * 2.0 * inst.shape.radius_bound();
        for ((x, p), &vis) in inst.keypoints_3d.iter().zip(&inst.keypoints.points).zip(&inst.keypoints.visible) {
            let zb = inst.depth.get(p.x.round() as usize, p.y.round() as usize);
            let z = inst.true_camera.depth(x);
            if vis {
                assert!(z <= zb + tol);
            } else {
                hidden += 1;
                assert!(z > zb + tol);
            }
        }
    }
    assert!(hidden > 0);
}

#[test]
fn uniform_view_directions_have_no_preferred_side() {
    let n = 5000;
    let mean = sample_cameras(n, &CameraLaw::Uniform, 17).iter().map(|c| c.view_direction()).sum::<Vec3>() / n as f64;
    assert!(mean.norm() < 0.05, "{mean}");
}

#[test]
fn biased_views_gather_near_the_reference_direction() {
    let cams = sample_cameras(3000, &CameraLaw::Biased { fraction: 0.9, spread_deg: 5.0 }, 23);
    let cos = 5f64.to_radians().cos() - 1e-12;
    let near = cams.iter().filter(|c| c.view_direction().dot(&Vec3::z()) >= cos).count();
    assert!(near as f64 >= 0.85 * cams.len() as f64, "{near}");
}

#[test]
fn keypoint_coefficients_track_the_shape_latent() {
    let family = FamilySpec {
        base: Shape::Ellipsoid { a: 1.0, b: 0.7, c: 0.5 },
        directions: vec![[0.35, -0.2, 0.0]],
        latent_range: [-1.0, 1.0],
    };
    let data = make_dataset(&SceneSpec::new(family, 40, 1)).unwrap();
    let instances: Vec<_> = data.iter().map(|d| d.to_instance()).collect();
    let model = fit_nrsfm(&instances, &NrsfmConfig { bases: 1, ..Default::default() }, 5).unwrap();
    let (alpha, t): (Vec<f64>, Vec<f64>) = data.iter().filter_map(|d| Some((model.instance(&format!("{:03}", d.id))?.z[0], d.latents[0]))).unzip();
    assert!(alpha.len() >= 35);
    let r = pearson(&alpha, &t);
    assert!(r.abs() >= 0.8, "r = {r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ellipsoid_surface_points_satisfy_the_implicit_equation(
        axes in prop::array::uniform3(0.2..3.0f64), d in prop::array::uniform3(-1.0..1.0f64),
    ) {
        prop_assume!(Vec3::from(d).norm() > 1e-3);
        let p = Shape::Ellipsoid { a: axes[0], b: axes[1], c: axes[2] }.surface_point(&Vec3::from(d));
        let f = (p.x / axes[0]).powi(2) + (p.y / axes[1]).powi(2) + (p.z / axes[2]).powi(2);
        prop_assert!((f - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn same_seed_same_scene(seed in 0u64..1000) {
        let spec = SceneSpec { image_size: 48, keypoint_noise: 0.5, ..ellipsoids(2, seed) };
        let (a, b) = (make_dataset(&spec).unwrap(), make_dataset(&spec).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.mask, &y.mask);
            prop_assert_eq!(&x.keypoints, &y.keypoints);
        }
    }
}
