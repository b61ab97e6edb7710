use nalgebra::{Matrix3, SymmetricEigen};

use super::camera::Vec3;
use super::knn::KdTree;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Unit normals, one per point, when known.
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, normals: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.points)
    }

    /// Largest distance between two points of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.points)
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().sum::<Vec3>() / points.len() as f64
}

pub fn bbox(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let (lo, hi) = bbox(points);
    (hi - lo).norm()
}

pub fn kdtree3(points: &[Vec3]) -> KdTree<3> {
    KdTree::new(points.iter().map(|p| [p.x, p.y, p.z]).collect())
}

/// Per-point normals from a plane fit to the `k` nearest neighbours (the
/// point itself included). `None` marks a neighbourhood whose covariance has
/// rank below two. Valid normals point away from the cloud centroid.
pub fn estimate_normals(points: &[Vec3], k: usize) -> Result<Vec<Option<Vec3>>> {
    if k < 3 {
        return Err(Error::invalid("normal estimation needs k >= 3"));
    }
    let tree = kdtree3(points);
    let center = centroid(points);
    points
        .iter()
        .map(|p| {
            let hits = tree.nearest(&[p.x, p.y, p.z], k)?;
            let nbrs: Vec<Vec3> = hits.iter().map(|h| points[h.index]).collect();
            Ok(plane_normal(&nbrs).map(|n| orient_outward(n, p, &center)))
        })
        .collect()
}

/// Normals for a cloud, filling in only when every neighbourhood is valid.
pub fn with_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let normals = estimate_normals(&cloud.points, k)?;
    let normals: Option<Vec<Vec3>> = normals.into_iter().collect();
    match normals {
        Some(n) => Ok(PointCloud { points: cloud.points.clone(), normals: Some(n) }),
        None => Err(Error::invalid("degenerate neighbourhood while estimating normals")),
    }
}

/// Unit normal of the least-squares plane through `pts`, or `None` if the
/// covariance has rank < 2.
pub fn plane_normal(pts: &[Vec3]) -> Option<Vec3> {
    let c = centroid(pts);
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[idx[2]];
    if !(largest > 0.0) || eig.eigenvalues[idx[1]] <= 1e-12 * largest {
        return None;
    }
    let n = eig.eigenvectors.column(idx[0]).into_owned();
    Some(n / n.norm())
}

fn orient_outward(n: Vec3, p: &Vec3, center: &Vec3) -> Vec3 {
    if n.dot(&(p - center)) < 0.0 {
        -n
    } else {
        n
    }
}
