use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::geometry::camera::{axis_angle, OrthoCamera, Vec3};
use crate::seed::{derive_seed, rng, Rng};

/// How camera rotations are drawn.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum CameraLaw {
    /// Uniform over SO(3).
    #[default]
    Uniform,
    /// With probability `fraction`, a view whose direction lies within
    /// `spread_deg` of the identity view; otherwise uniform.
    Biased { fraction: f64, spread_deg: f64 },
}

/// Uniform rotation from three uniform variates (Shoemake's quaternion method).
pub fn uniform_rotation(rng: &mut Rng) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin());
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

pub fn sample_rotation(law: &CameraLaw, rng: &mut Rng) -> Matrix3<f64> {
    match *law {
        CameraLaw::Uniform => uniform_rotation(rng),
        CameraLaw::Biased { fraction, spread_deg } => {
            if rng.random::<f64>() >= fraction {
                return uniform_rotation(rng);
            }
            let roll = rng.random::<f64>() * std::f64::consts::TAU;
            let tilt = spread_deg.to_radians() * rng.random::<f64>().sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let axis = Vec3::new(phi.cos(), phi.sin(), 0.0);
            axis_angle(&Vec3::z(), roll) * axis_angle(&axis, tilt)
        }
    }
}

/// `n` unit-scale, zero-translation cameras; camera `i` draws from its own
/// stream derived from `seed`.
pub fn sample_cameras(n: usize, law: &CameraLaw, seed: u64) -> Vec<OrthoCamera> {
    (0..n)
        .map(|i| {
            let r = sample_rotation(law, &mut rng(derive_seed(seed, i as u64)));
            OrthoCamera::from_approximate(1.0, r, Default::default()).expect("sampled rotation is orthonormal")
        })
        .collect()
}
