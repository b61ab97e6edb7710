//! Scaled-orthographic cameras.
//!
//! A camera maps a world point `x` to image coordinates
//! `scale * rotation[0..2] * x + translation`. Image coordinates are in
//! pixels with the center of pixel `(col, row)` at `(col, row)`. The third
//! rotation row is the viewing direction; camera-frame depth `rotation[2] . x`
//! grows away from the viewer.

use nalgebra::{Matrix2x3, Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance on `R R^T = I` accepted at construction.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct OrthoCamera {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vec2,
}

impl OrthoCamera {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vec2) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidCamera(format!("scale must be positive, got {scale}")));
        }
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite rotation or translation".into()));
        }
        let err = (rotation * rotation.transpose() - Matrix3::identity()).norm();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (|RR^T - I| = {err:.3e})"
            )));
        }
        Ok(Self { scale, rotation, translation })
    }

    /// Builds a camera from an arbitrary 3x3 matrix by snapping it to the
    /// nearest proper rotation first.
    pub fn from_approximate(scale: f64, rotation: Matrix3<f64>, translation: Vec2) -> Result<Self> {
        Self::new(scale, nearest_rotation(&rotation), translation)
    }

    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vec2::zeros() }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec2 {
        self.translation
    }

    /// The two projection rows of the rotation.
    pub fn rows(&self) -> Matrix2x3<f64> {
        self.rotation.fixed_rows::<2>(0).into_owned()
    }

    /// `scale * rows`, the linear part of the projection.
    pub fn linear(&self) -> Matrix2x3<f64> {
        self.rows() * self.scale
    }

    /// Unit viewing direction in world coordinates.
    pub fn view_direction(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn project_point(&self, x: &Vec3) -> Vec2 {
        self.linear() * x + self.translation
    }

    pub fn project(&self, points: &[Vec3]) -> Vec<Vec2> {
        let a = self.linear();
        points.iter().map(|x| a * x + self.translation).collect()
    }

    /// Camera-frame depth of a world point, in world units.
    pub fn depth(&self, x: &Vec3) -> f64 {
        self.rotation.row(2).transpose().dot(x)
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(scale, self.rotation, self.translation)
    }

    pub fn with_rotation(&self, rotation: Matrix3<f64>) -> Result<Self> {
        Self::new(self.scale, rotation, self.translation)
    }

    pub fn with_translation(&self, translation: Vec2) -> Self {
        Self { translation, ..self.clone() }
    }

    /// Applies `R <- R * exp([w]x)` (a tangent step expressed in the world frame)
    /// and re-orthonormalizes.
    pub fn rotated_by(&self, w: &Vec3) -> Self {
        let step = Rotation3::new(*w).into_inner();
        Self { rotation: nearest_rotation(&(self.rotation * step)), ..self.clone() }
    }

    /// Camera seeing the horizontally flipped image (`u' = width - 1 - u`) of the
    /// world mirrored through the plane `x = 0`.
    pub fn mirrored(&self, width: usize) -> Self {
        let flip = Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        let rotation = flip * self.rotation * flip;
        let translation = Vec2::new(width as f64 - 1.0 - self.translation.x, self.translation.y);
        Self { scale: self.scale, rotation, translation }
    }
}

/// Closest proper rotation to `m` in Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    u * fix * v_t
}

/// Closest matrix with orthonormal rows to a 2x3 matrix, completed to a proper
/// rotation with the cross product of the two rows.
pub fn complete_rotation(rows: &Matrix2x3<f64>) -> Matrix3<f64> {
    let svd = rows.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let stiefel: Matrix2x3<f64> = u * v_t;
    let r1 = stiefel.row(0).transpose();
    let r2 = stiefel.row(1).transpose();
    let r3 = r1.cross(&r2);
    Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()])
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let c = (m.trace() - 1.0) / 2.0;
    let s = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() / 2.0;
    s.atan2(c)
}

/// Rotation by `angle` radians about `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    scale: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 2],
}

impl Serialize for OrthoCamera {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        CameraJson {
            scale: self.scale,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrthoCamera {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = CameraJson::deserialize(d)?;
        let rotation = Matrix3::from_fn(|i, j| raw.rotation[i][j]);
        // Cameras written with 6-7 significant digits are still accepted.
        let err = (rotation * rotation.transpose() - Matrix3::identity()).norm();
        if err > 1e-4 {
            return Err(serde::de::Error::custom(format!(
                "rotation is not orthonormal (|RR^T - I| = {err:.3e})"
            )));
        }
        let rotation = if err > ORTHONORMAL_TOL { nearest_rotation(&rotation) } else { rotation };
        OrthoCamera::new(raw.scale, rotation, Vec2::new(raw.translation[0], raw.translation[1]))
            .map_err(serde::de::Error::custom)
    }
}
