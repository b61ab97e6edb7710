//! Rigid factorization start for the EM iteration.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SymmetricEigen};
use rand_distr::{Distribution, Normal};

use super::data::NrsfmData;
use super::model::{NrsfmInstance, NrsfmModel};
use crate::error::{Error, Result};
use crate::geometry::camera::{complete_rotation, OrthoCamera, Vec2, Vec3};
use crate::seed::rng;

/// Ratio of the third to the first singular value below which the tracks
/// count as spanning fewer than three dimensions.
pub const RANK_TOL: f64 = 1e-6;

const FILL_ROUNDS: usize = 50;

/// Rank-3 affine factorization with an orthonormality upgrade. Missing
/// entries are filled by alternating a rank-3 fit with re-imputation.
pub fn initialize(data: &NrsfmData, bases: usize, seed: u64) -> Result<NrsfmModel> {
    let (n, k) = (data.len(), data.keypoints());
    let mut w = DMatrix::zeros(2 * n, k);
    for i in 0..n {
        let vis: Vec<Vec2> = data.points[i].iter().zip(&data.visible[i]).filter(|(_, &v)| v).map(|(p, _)| *p).collect();
        let mean = vis.iter().sum::<Vec2>() / vis.len() as f64;
        for j in 0..k {
            let p = if data.visible[i][j] { data.points[i][j] } else { mean };
            w[(2 * i, j)] = p.x;
            w[(2 * i + 1, j)] = p.y;
        }
    }
    let missing = data.visible.iter().flatten().any(|v| !v);
    let rounds = if missing { FILL_ROUNDS } else { 1 };
    let mut factors = None;
    for _ in 0..rounds {
        let (t, m, s, sv) = rank3(&w);
        if missing {
            let recon = &m * &s;
            for i in 0..n {
                for j in 0..k {
                    if !data.visible[i][j] {
                        w[(2 * i, j)] = recon[(2 * i, j)] + t[2 * i];
                        w[(2 * i + 1, j)] = recon[(2 * i + 1, j)] + t[2 * i + 1];
                    }
                }
            }
        }
        factors = Some((t, m, s, sv));
    }
    let (_, _, s0, sv) = factors.expect("at least one round");
    let degenerate = !(sv[2] > RANK_TOL * sv[0]);
    if degenerate {
        log::warn!("degenerate geometry: keypoint tracks span fewer than three dimensions");
    }
    let mut s = if missing { best_affine_shape(data, &s0, seed) } else { s0 };
    for mut row in s.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let (m, t) = affine_cameras(data, &s);

    let q = metric_upgrade(&m);
    let q_inv = q.try_inverse().ok_or_else(|| Error::DegenerateBasis("metric upgrade is singular".into()))?;
    let align = symmetry_frame(data, &m, &q);
    let shape = align * q_inv * &s;
    let mean_shape: Vec<Vec3> = (0..k).map(|j| Vec3::new(shape[(0, j)], shape[(1, j)], shape[(2, j)])).collect();

    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let rows = Matrix2x3::from_fn(|r, c| (0..3).map(|l| m[(2 * i + r, l)] * q[(l, c)]).sum::<f64>()) * align.transpose();
        let sv = rows.singular_values();
        let scale = 0.5 * (sv[0] + sv[1]);
        let rotation = complete_rotation(&rows);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let camera = OrthoCamera::new(scale, rotation, Vec2::new(t[2 * i], t[2 * i + 1]))?;
        instances.push(NrsfmInstance { id: data.ids[i].clone(), camera, z: vec![0.0; bases], mirrored: data.mirrored[i] });
    }

    let diameter = crate::geometry::cloud::bbox_diagonal(&mean_shape).max(f64::MIN_POSITIVE);
    let noise = Normal::new(0.0, 1e-3 * diameter).expect("finite sigma");
    let mut r = rng(seed);
    let basis: Vec<Vec<Vec3>> = (0..bases)
        .map(|_| (0..k).map(|_| Vec3::new(noise.sample(&mut r), noise.sample(&mut r), noise.sample(&mut r))).collect())
        .collect();

    let mut model = NrsfmModel {
        keypoint_names: data.names.clone(),
        mean_shape,
        basis,
        noise_variance: 1.0,
        instances,
        degenerate,
        log_likelihood: f64::NAN,
        iterations: 0,
    };
    super::em::tie_groups(&mut model, data);
    let mut sse = 0.0;
    for i in 0..n {
        let pred = model.predict(i);
        for j in 0..k {
            if data.visible[i][j] {
                sse += (pred[j] - data.points[i][j]).norm_squared();
            }
        }
    }
    model.noise_variance = (sse / (2 * data.visible_total()) as f64).max(data.variance_floor);
    Ok(model)
}

/// Rotation taking the plane of left/right symmetry to `x = 0`, estimated
/// from how each mirrored copy's upgraded camera relates to its original's.
/// Identity when nothing is paired.
fn symmetry_frame(data: &NrsfmData, m: &DMatrix<f64>, q: &Matrix3<f64>) -> Matrix3<f64> {
    let rows = |i: usize| Matrix2x3::from_fn(|r, c| (0..3).map(|l| m[(2 * i + r, l)] * q[(l, c)]).sum::<f64>());
    let flip = nalgebra::Matrix2::new(-1.0, 0.0, 0.0, 1.0);
    let mut lhs = Matrix3::zeros();
    let mut rhs = Matrix3::zeros();
    for g in data.groups.iter().filter(|g| g.len() == 2) {
        let (a, b) = (rows(g[0]), rows(g[1]));
        lhs += a.transpose() * a;
        rhs += a.transpose() * flip * b;
    }
    if lhs == Matrix3::zeros() {
        return Matrix3::identity();
    }
    let Some(p) = lhs.try_inverse().map(|inv| inv * rhs) else {
        return Matrix3::identity();
    };
    let eig = SymmetricEigen::new((p + p.transpose()) * 0.5);
    let normal = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
    let helper = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e2 = normal.cross(&helper).normalize();
    let e3 = normal.cross(&e2);
    Matrix3::from_rows(&[normal.transpose(), e2.transpose(), e3.transpose()])
}

const RESTARTS: usize = 8;
const LM_ITERS: usize = 200;

/// Per-instance affine cameras (stacked 2N x 3) and translations that best
/// explain the visible keypoints for a fixed 3 x K shape.
fn affine_cameras(data: &NrsfmData, s: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.len();
    let mut m = DMatrix::zeros(2 * n, 3);
    let mut t = DVector::zeros(2 * n);
    for i in 0..n {
        let x = affine_fit(data, i, s);
        for r in 0..2 {
            for c in 0..3 {
                m[(2 * i + r, c)] = x[(r, c)];
            }
            t[2 * i + r] = x[(r, 3)];
        }
    }
    (m, t)
}

fn affine_fit(data: &NrsfmData, i: usize, s: &DMatrix<f64>) -> nalgebra::Matrix2x4<f64> {
    let mut a = nalgebra::Matrix4::<f64>::zeros();
    let mut b = nalgebra::Matrix2x4::<f64>::zeros();
    for k in 0..data.keypoints() {
        if data.visible[i][k] {
            let y = nalgebra::Vector4::new(s[(0, k)], s[(1, k)], s[(2, k)], 1.0);
            a += y * y.transpose();
            b += data.points[i][k] * y.transpose();
        }
    }
    let ridge = 1e-12 * a.trace().max(f64::MIN_POSITIVE);
    a += nalgebra::Matrix4::identity() * ridge;
    b * a.try_inverse().unwrap_or_else(nalgebra::Matrix4::zeros)
}

fn affine_residuals(data: &NrsfmData, s: &DMatrix<f64>) -> DVector<f64> {
    let mut out = Vec::with_capacity(2 * data.visible_total());
    for i in 0..data.len() {
        let x = affine_fit(data, i, s);
        for k in 0..data.keypoints() {
            if data.visible[i][k] {
                let y = nalgebra::Vector4::new(s[(0, k)], s[(1, k)], s[(2, k)], 1.0);
                let r = x * y - data.points[i][k];
                out.extend([r.x, r.y]);
            }
        }
    }
    DVector::from_vec(out)
}

/// Levenberg-Marquardt on the shape alone, with the cameras eliminated in
/// closed form. Starts from the filled factorization and from random shapes;
/// the lowest residual wins.
fn best_affine_shape(data: &NrsfmData, start: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let spread = (start.norm_squared() / start.len() as f64).sqrt().max(1.0);
    let normal = Normal::new(0.0, spread).expect("finite sigma");
    let mut r = rng(crate::seed::derive_seed(seed, 0x1417));
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for restart in 0..=RESTARTS {
        let s0 = if restart == 0 { start.clone() } else { DMatrix::from_fn(3, start.ncols(), |_, _| normal.sample(&mut r)) };
        let (cost, s) = levenberg_marquardt(data, s0);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, s));
        }
    }
    best.expect("at least one start").1
}

fn levenberg_marquardt(data: &NrsfmData, mut s: DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let p = s.len();
    let mut res = affine_residuals(data, &s);
    let mut cost = res.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..LM_ITERS {
        let h = 1e-6 * (s.norm() / (p as f64).sqrt()).max(1e-6);
        let mut jac = DMatrix::zeros(res.len(), p);
        for j in 0..p {
            let mut sp = s.clone();
            sp[j] += h;
            let mut sm = s.clone();
            sm[j] -= h;
            jac.set_column(j, &((affine_residuals(data, &sp) - affine_residuals(data, &sm)) / (2.0 * h)));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            let top = jtj.diagonal().max().max(f64::MIN_POSITIVE);
            for d in 0..p {
                a[(d, d)] += lambda * (jtj[(d, d)] + 1e-9 * top);
            }
            if let Some(step) = a.lu().solve(&(-&jtr)) {
                let trial = &s + DMatrix::from_column_slice(3, s.ncols(), step.as_slice());
                let tr = affine_residuals(data, &trial);
                let tc = tr.norm_squared();
                if tc < cost {
                    let gain = (cost - tc) / cost.max(f64::MIN_POSITIVE);
                    s = trial;
                    res = tr;
                    cost = tc;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = gain > 1e-12;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (cost, s)
}

/// Row means, the rank-3 factors of the centered matrix and its singular values.
fn rank3(w: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let t = DVector::from_fn(w.nrows(), |r, _| w.row(r).mean());
    let mut centered = w.clone();
    for r in 0..w.nrows() {
        centered.row_mut(r).add_scalar_mut(-t[r]);
    }
    let svd = centered.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).chain(std::iter::repeat(0.0)).take(3).collect();
    let mut m = DMatrix::zeros(w.nrows(), 3);
    let mut s = DMatrix::zeros(3, w.ncols());
    for (c, &i) in order.iter().take(3).enumerate() {
        let root = svd.singular_values[i].sqrt();
        m.set_column(c, &(u.column(i) * root));
        s.set_row(c, &(vt.row(i) * root));
    }
    (t, m, s, sv)
}

fn sym_coeffs(a: &[f64; 3], b: &[f64; 3]) -> [f64; 6] {
    [
        a[0] * b[0],
        a[0] * b[1] + a[1] * b[0],
        a[0] * b[2] + a[2] * b[0],
        a[1] * b[1],
        a[1] * b[2] + a[2] * b[1],
        a[2] * b[2],
    ]
}

/// `Q` such that every row pair of `m Q` is orthogonal with equal norms, the
/// mean squared row norm fixed to one.
fn metric_upgrade(m: &DMatrix<f64>) -> Matrix3<f64> {
    let n = m.nrows() / 2;
    let row = |r: usize| [m[(r, 0)], m[(r, 1)], m[(r, 2)]];
    let mut a = DMatrix::zeros(2 * n, 6);
    let mut c = DVector::zeros(6);
    for i in 0..n {
        let (x, y) = (row(2 * i), row(2 * i + 1));
        let (xx, yy, xy) = (sym_coeffs(&x, &x), sym_coeffs(&y, &y), sym_coeffs(&x, &y));
        for j in 0..6 {
            a[(2 * i, j)] = xx[j] - yy[j];
            a[(2 * i + 1, j)] = xy[j];
            c[j] += xx[j] + yy[j];
        }
    }
    let mut kkt = DMatrix::zeros(7, 7);
    kkt.view_mut((0, 0), (6, 6)).copy_from(&(a.transpose() * &a * 2.0));
    for j in 0..6 {
        kkt[(j, 6)] = c[j];
        kkt[(6, j)] = c[j];
    }
    let mut rhs = DVector::zeros(7);
    rhs[6] = 2.0 * n as f64;
    let l = kkt.lu().solve(&rhs).map(|v| [v[0], v[1], v[2], v[3], v[4], v[5]]).unwrap_or([1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let big_l = Matrix3::new(l[0], l[1], l[2], l[1], l[3], l[4], l[2], l[4], l[5]);
    let eig = SymmetricEigen::new(big_l);
    let top = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let roots = eig.eigenvalues.map(|v| v.max(1e-6 * top).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&roots)
}
