//! Comparing reconstructions that are only defined up to a global gauge.

use nalgebra::{Matrix2x3, Matrix3};

use crate::error::{Error, Result};
use crate::geometry::camera::{rotation_angle_between, Vec3};

/// Closest orthogonal matrix (determinant of either sign).
fn polar(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    svd.u.expect("u") * svd.v_t.expect("v_t")
}

/// Per-instance rotation errors in degrees after the best global orthogonal
/// alignment of the projection rows. Each aligned estimate is completed to a
/// proper rotation by choosing the depth direction, which is the per-view
/// reflection an orthographic camera cannot observe.
pub fn rotation_errors_deg(est: &[Matrix3<f64>], truth: &[Matrix3<f64>]) -> Result<Vec<f64>> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::invalid("rotation lists must be non-empty and of equal length"));
    }
    let rows = |r: &Matrix3<f64>| -> Matrix2x3<f64> { r.fixed_rows::<2>(0).into_owned() };
    let mut acc = Matrix3::zeros();
    for (e, t) in est.iter().zip(truth) {
        acc += rows(e).transpose() * rows(t);
    }
    let q = polar(&acc);
    Ok(est
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            let p = rows(e) * q;
            let (r1, r2) = (p.row(0).transpose(), p.row(1).transpose());
            let aligned = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r1.cross(&r2).transpose()]);
            rotation_angle_between(&aligned, t).to_degrees()
        })
        .collect())
}

/// Root-mean-square distance after the best similarity (scale, orthogonal
/// map, translation) taking `est` onto `truth`.
pub fn procrustes_rmse(est: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::invalid("point lists must be non-empty and of equal length"));
    }
    let n = est.len() as f64;
    let ce = est.iter().sum::<Vec3>() / n;
    let ct = truth.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, t) in est.iter().zip(truth) {
        cov += (t - ct) * (e - ce).transpose();
        var_e += (e - ce).norm_squared();
    }
    let q = polar(&cov);
    let svd = cov.svd(false, false);
    let scale = if var_e > 0.0 { svd.singular_values.sum() / var_e } else { 0.0 };
    let sse: f64 = est.iter().zip(truth).map(|(e, t)| (ct + q * (e - ce) * scale - t).norm_squared()).sum();
    Ok((sse / n).sqrt())
}
