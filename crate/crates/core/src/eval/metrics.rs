use rayon::prelude::*;

use super::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::camera::Vec3;
use crate::geometry::cloud::kdtree3;
use crate::geometry::mask::{occupancy_iou, SilhouetteMask};

/// Symmetric Hausdorff distance between two sample sets, divided by `gt_diag`.
pub fn hausdorff_norm(a: &[Vec3], b: &[Vec3], gt_diag: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("hausdorff distance of an empty point set"));
    }
    if !(gt_diag > 0.0) {
        return Err(Error::invalid(format!("bounding-box diagonal must be positive, got {gt_diag}")));
    }
    Ok(directed_sq(a, b).max(directed_sq(b, a)).sqrt() / gt_diag)
}

/// `max_a min_b |a - b|^2`.
fn directed_sq(from: &[Vec3], to: &[Vec3]) -> f64 {
    let tree = kdtree3(to);
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| tree.nearest_one(&[p.x, p.y, p.z]).map_or(f64::INFINITY, |n| n.dist2))
        .collect();
    d.into_iter().fold(0.0, f64::max)
}

/// Depth error after removing the best constant offset, averaged over pixels
/// valid in both maps and divided by `gamma`. Returns the error and the
/// offset (the lower median of the residuals).
pub fn zmae_with_offset(pred: &DepthMap, gt: &DepthMap, gamma: f64) -> Result<(f64, f64)> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::invalid("depth maps differ in size"));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("normalizer must be positive, got {gamma}")));
    }
    let mut r: Vec<f64> = pred
        .depth
        .iter()
        .zip(&gt.depth)
        .filter(|(p, g)| p.is_finite() && g.is_finite())
        .map(|(p, g)| p - g)
        .collect();
    if r.is_empty() {
        return Err(Error::invalid("no pixel is valid in both depth maps"));
    }
    let n = r.len();
    let mut sorted = r.clone();
    sorted.sort_by(f64::total_cmp);
    let beta = sorted[n.div_ceil(2) - 1];
    for v in &mut r {
        *v = (*v - beta).abs();
    }
    Ok((r.iter().sum::<f64>() / (n as f64 * gamma), beta))
}

pub fn zmae(pred: &DepthMap, gt: &DepthMap, gamma: f64) -> Result<f64> {
    zmae_with_offset(pred, gt, gamma).map(|(v, _)| v)
}

pub fn silhouette_iou(a: &SilhouetteMask, b: &SilhouetteMask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid("masks differ in size"));
    }
    Ok(occupancy_iou(a.occupancy(), b.occupancy()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f64]) -> DepthMap {
        DepthMap { width: v.len(), height: 1, depth: v.to_vec() }
    }

    #[test]
    fn hausdorff_examples() {
        let corners: Vec<Vec3> = (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, (i >> 2) as f64)).collect();
        assert_eq!(hausdorff_norm(&corners, &corners, 1.0).unwrap(), 0.0);
        let shifted: Vec<Vec3> = corners.iter().map(|p| p + Vec3::new(0.25, 0.0, 0.0)).collect();
        let d = hausdorff_norm(&corners, &shifted, 3f64.sqrt()).unwrap();
        assert!((d - 0.25 / 3f64.sqrt()).abs() < 1e-15);
        assert!(hausdorff_norm(&[], &corners, 1.0).is_err());
    }

    #[test]
    fn zmae_examples() {
        let gt = map(&[1.0, 2.0, 3.0, f64::INFINITY]);
        assert_eq!(zmae(&gt, &gt, 1.0).unwrap(), 0.0);
        assert_eq!(zmae(&gt.map(|d| d + 7.0), &gt, 1.0).unwrap(), 0.0);
        let pred = map(&[0.0, 2.0, 4.0, 5.0]);
        let (v, beta) = zmae_with_offset(&pred, &gt, 2.0).unwrap();
        assert_eq!(beta, 0.0);
        assert_eq!(v, 1.0 / 3.0);
        let none = map(&[f64::INFINITY; 4]);
        assert!(zmae(&none, &gt, 1.0).is_err());
    }

    #[test]
    fn lower_median_for_even_counts() {
        let (_, beta) = zmae_with_offset(&map(&[1.0, 2.0, 3.0, 4.0]), &map(&[0.0; 4]), 1.0).unwrap();
        assert_eq!(beta, 2.0);
    }

    #[test]
    fn iou_examples() {
        let a = SilhouetteMask::from_fn(4, 4, |x, _| x < 2).unwrap();
        let b = SilhouetteMask::from_fn(4, 4, |x, _| x >= 2).unwrap();
        let c = SilhouetteMask::from_fn(4, 4, |x, _| (1..3).contains(&x)).unwrap();
        assert_eq!(silhouette_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(silhouette_iou(&a, &b).unwrap(), 0.0);
        assert_eq!(silhouette_iou(&a, &c).unwrap(), 1.0 / 3.0);
    }
}
