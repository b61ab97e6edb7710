use rand::RngExt;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cameras::{sample_rotation, uniform_rotation, CameraLaw};
use super::shape::{make_shape, Shape};
use crate::error::{Error, Result};
use crate::eval::depth::{render_depth, DepthMap};
use crate::geometry::camera::{axis_angle, OrthoCamera, Vec2, Vec3};
use crate::geometry::mask::SilhouetteMask;
use crate::geometry::mesh::TriMesh;
use crate::instance::{Instance, Keypoint, KeypointSet};
use crate::seed::{derive_seed, rng};

/// A family of shapes: `base` with its size parameters shifted by
/// `sum_k t_k * directions[k]`, each latent `t_k` uniform in `latent_range`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub base: Shape,
    #[serde(default)]
    pub directions: Vec<[f64; 3]>,
    #[serde(default = "default_latent_range")]
    pub latent_range: [f64; 2],
}

fn default_latent_range() -> [f64; 2] {
    [-1.0, 1.0]
}

impl FamilySpec {
    pub fn fixed(base: Shape) -> Self {
        Self { base, directions: Vec::new(), latent_range: default_latent_range() }
    }

    pub fn latent_dim(&self) -> usize {
        self.directions.len()
    }

    pub fn instance(&self, latents: &[f64]) -> Shape {
        let mut axes = self.base.axes();
        for (t, d) in latents.iter().zip(&self.directions) {
            for i in 0..3 {
                axes[i] += t * d[i];
            }
        }
        self.base.with_axes(axes)
    }

    /// Radius bound over the whole latent box.
    fn radius_bound(&self) -> f64 {
        let reach = self.latent_range[0].abs().max(self.latent_range[1].abs());
        let mut axes = self.base.axes();
        for d in &self.directions {
            for i in 0..3 {
                axes[i] += reach * d[i].abs();
            }
        }
        self.base.with_axes(axes).radius_bound()
    }
}

/// A named keypoint placed where the ray along `direction` meets the surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePoint {
    pub name: String,
    pub direction: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub family: FamilySpec,
    pub instances: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub cameras: CameraLaw,
    #[serde(default = "default_tessellation")]
    pub tessellation: u32,
    /// Standard deviation of the pixel noise added to observed keypoints.
    #[serde(default)]
    pub keypoint_noise: f64,
    /// Rotation error, in degrees, applied to the observed cameras.
    #[serde(default)]
    pub camera_noise_deg: f64,
    /// Fraction of the image width spanned by the largest shape of the family.
    #[serde(default = "default_fill")]
    pub fill: f64,
    #[serde(default = "default_template")]
    pub keypoints: Vec<TemplatePoint>,
    #[serde(default = "default_pairs")]
    pub mirror_pairs: Vec<[String; 2]>,
    #[serde(default)]
    pub seed: u64,
}

fn default_image_size() -> usize {
    128
}

fn default_tessellation() -> u32 {
    3
}

fn default_fill() -> f64 {
    0.7
}

/// Twelve keypoints symmetric under `x -> -x`.
pub fn default_template() -> Vec<TemplatePoint> {
    let p = |name: &str, d: [f64; 3]| TemplatePoint { name: name.into(), direction: d };
    vec![
        p("front_top_l", [-0.6, 0.5, 0.6]),
        p("front_top_r", [0.6, 0.5, 0.6]),
        p("front_low_l", [-0.7, -0.5, 0.5]),
        p("front_low_r", [0.7, -0.5, 0.5]),
        p("back_top_l", [-0.8, 0.3, -0.5]),
        p("back_top_r", [0.8, 0.3, -0.5]),
        p("back_low_l", [-0.5, -0.6, -0.6]),
        p("back_low_r", [0.5, -0.6, -0.6]),
        p("crown", [0.0, 1.0, 0.2]),
        p("keel", [0.0, -1.0, 0.1]),
        p("nose", [0.0, 0.2, 1.0]),
        p("tail", [0.0, -0.3, -1.0]),
    ]
}

pub fn default_pairs() -> Vec<[String; 2]> {
    ["front_top", "front_low", "back_top", "back_low"].iter().map(|s| [format!("{s}_l"), format!("{s}_r")]).collect()
}

impl SceneSpec {
    pub fn new(family: FamilySpec, instances: usize, seed: u64) -> Self {
        Self {
            family,
            instances,
            image_size: default_image_size(),
            cameras: CameraLaw::Uniform,
            tessellation: default_tessellation(),
            keypoint_noise: 0.0,
            camera_noise_deg: 0.0,
            fill: default_fill(),
            keypoints: default_template(),
            mirror_pairs: default_pairs(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.family.base.validate()?;
        if self.image_size < 32 {
            return Err(Error::invalid(format!("image size must be at least 32, got {}", self.image_size)));
        }
        if self.instances == 0 {
            return Err(Error::invalid("scene needs at least one instance"));
        }
        if !(self.fill > 0.0 && self.fill <= 1.0) {
            return Err(Error::invalid(format!("fill must be in (0, 1], got {}", self.fill)));
        }
        if !(self.keypoint_noise >= 0.0) || !(self.camera_noise_deg >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if let CameraLaw::Biased { fraction, spread_deg } = self.cameras {
            if !(0.0..=1.0).contains(&fraction) || !(spread_deg >= 0.0) {
                return Err(Error::invalid("biased camera law needs fraction in [0, 1] and spread >= 0"));
            }
        }
        let [lo, hi] = self.family.latent_range;
        if !(lo <= hi) {
            return Err(Error::invalid("latent range must be ordered"));
        }
        for corner in 0..(1usize << self.family.latent_dim()) {
            let t: Vec<f64> = (0..self.family.latent_dim()).map(|k| if corner >> k & 1 == 1 { hi } else { lo }).collect();
            self.family.instance(&t).validate()?;
        }
        KeypointSet::new(&self.dummy_keypoints(), self.pairs())?;
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        self.mirror_pairs.iter().map(|[a, b]| (a.clone(), b.clone())).collect()
    }

    fn dummy_keypoints(&self) -> Vec<Keypoint> {
        self.keypoints.iter().map(|t| Keypoint { name: t.name.clone(), u: 0.0, v: 0.0, visible: true }).collect()
    }

    /// Camera scale so the largest family member spans `fill` of the image.
    pub fn camera_scale(&self) -> f64 {
        self.fill * self.image_size as f64 / (2.0 * self.family.radius_bound())
    }

    pub fn image_center(&self) -> Vec2 {
        let c = (self.image_size as f64 - 1.0) / 2.0;
        Vec2::new(c, c)
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruthInstance {
    pub id: usize,
    pub shape: Shape,
    pub latents: Vec<f64>,
    pub mesh: TriMesh,
    pub true_camera: OrthoCamera,
    /// The camera handed to downstream stages (the true one plus noise).
    pub camera: OrthoCamera,
    pub mask: SilhouetteMask,
    pub depth: DepthMap,
    /// Exact 3D keypoints in world coordinates.
    pub keypoints_3d: Vec<Vec3>,
    pub keypoints: KeypointSet,
}

impl GroundTruthInstance {
    pub fn to_instance(&self) -> Instance {
        Instance::new(format!("{:03}", self.id), self.mask.clone(), self.camera.clone(), Some(self.keypoints.clone()))
    }
}

/// Foreground where a pixel center is covered by a projected triangle.
pub fn render_mask(mesh: &TriMesh, cam: &OrthoCamera, width: usize, height: usize) -> Result<SilhouetteMask> {
    let depth = render_depth(mesh, cam, width, height)?;
    mask_from_depth(&depth)
}

fn mask_from_depth(depth: &DepthMap) -> Result<SilhouetteMask> {
    SilhouetteMask::new(depth.width, depth.height, depth.valid()).map_err(|e| match e {
        Error::EmptySilhouette => Error::invalid("mesh projects entirely outside the image"),
        other => other,
    })
}

/// Generates every instance of the scene. Instance `i` uses its own random
/// stream derived from `(spec.seed, i)`.
pub fn make_dataset(spec: &SceneSpec) -> Result<Vec<GroundTruthInstance>> {
    spec.validate()?;
    (0..spec.instances).into_par_iter().map(|i| make_instance(spec, i)).collect()
}

fn make_instance(spec: &SceneSpec, id: usize) -> Result<GroundTruthInstance> {
    let mut r = rng(derive_seed(spec.seed, id as u64));
    let [lo, hi] = spec.family.latent_range;
    let latents: Vec<f64> = (0..spec.family.latent_dim()).map(|_| lo + (hi - lo) * r.random::<f64>()).collect();
    let shape = spec.family.instance(&latents);
    let mesh = make_shape(&shape, spec.tessellation)?;
    let rotation = sample_rotation(&spec.cameras, &mut r);
    let true_camera = OrthoCamera::from_approximate(spec.camera_scale(), rotation, spec.image_center())?;
    let camera = if spec.camera_noise_deg > 0.0 {
        let axis = uniform_rotation(&mut r).column(0).into_owned();
        let noisy = true_camera.rotation() * axis_angle(&axis, spec.camera_noise_deg.to_radians());
        OrthoCamera::from_approximate(true_camera.scale(), noisy, true_camera.translation())?
    } else {
        true_camera.clone()
    };
    let (w, h) = (spec.image_size, spec.image_size);
    let depth = render_depth(&mesh, &true_camera, w, h)?;
    let mask = mask_from_depth(&depth)?;

    let keypoints_3d: Vec<Vec3> = spec
        .keypoints
        .iter()
        .map(|t| shape.surface_point(&Vec3::new(t.direction[0], t.direction[1], t.direction[2])))
        .collect();
    let tol = 0.01 * 2.0 * shape.radius_bound();
    let noise = Normal::new(0.0, spec.keypoint_noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let records: Vec<Keypoint> = spec
        .keypoints
        .iter()
        .zip(&keypoints_3d)
        .map(|(t, x)| {
            let p = true_camera.project_point(x);
            let visible = is_visible(&depth, &p, true_camera.depth(x), tol);
            let (nu, nv) = if spec.keypoint_noise > 0.0 { (noise.sample(&mut r), noise.sample(&mut r)) } else { (0.0, 0.0) };
            Keypoint { name: t.name.clone(), u: p.x + nu, v: p.y + nv, visible }
        })
        .collect();
    let keypoints = KeypointSet::new(&records, spec.pairs())?;
    Ok(GroundTruthInstance { id, shape, latents, mesh, true_camera, camera, mask, depth, keypoints_3d, keypoints })
}

/// Visible when in frame and not more than `tol` behind the z-buffer at the
/// nearest pixel.
pub fn is_visible(depth: &DepthMap, p: &Vec2, z: f64, tol: f64) -> bool {
    let (x, y) = (p.x.round(), p.y.round());
    if x < 0.0 || y < 0.0 || x >= depth.width as f64 || y >= depth.height as f64 {
        return false;
    }
    let zb = depth.get(x as usize, y as usize);
    !zb.is_finite() || z <= zb + tol
}
