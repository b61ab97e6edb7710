use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::camera::{OrthoCamera, Vec3};
use crate::seed::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub cost: f64,
    /// Cost after every assignment/update round.
    pub cost_history: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == k).collect()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (sums, counts)
}

fn total_cost(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| dist2(p, &centroids[a])).sum()
}

/// k-means in Euclidean space: k-means++ seeding from `seed`, Lloyd rounds,
/// then single-point (Hartigan) moves until no move lowers the cost. A
/// cluster left empty is re-seeded at the point farthest from its centroid.
pub fn cluster_instances(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cluster count must be in 1..={n}, got {k}")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("all vectors must have the same dimension"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "clustering input".into(), detail: "coefficient vector".into() });
    }

    let mut r = rng(seed);
    let mut centroids = vec![points[r.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let target = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &di) in d.iter().enumerate() {
                acc += di;
                if acc > target && di > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            centroids.len()
        };
        centroids.push(points[pick].clone());
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    for _ in 0..1000 {
        let (mut next, counts) = means(points, &assignments, k, dim);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &next[assignments[a]]).total_cmp(&dist2(&points[b], &next[assignments[b]])).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                next[c] = points[far].clone();
                assignments[far] = c;
            }
        }
        centroids = next;
        let reassigned: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = reassigned != assignments;
        assignments = reassigned;
        let (m, _) = means(points, &assignments, k, dim);
        let cost = total_cost(points, &assignments, &repair(m, &centroids, &assignments, k));
        history.push(cost);
        if !changed {
            break;
        }
    }

    let (mut centroids, mut counts) = means(points, &assignments, k, dim);
    loop {
        let mut moved = false;
        for i in 0..n {
            let a = assignments[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let loss = na / (na - 1.0) * dist2(&points[i], &centroids[a]);
            let mut best = (a, 0.0);
            for b in 0..k {
                if b == a {
                    continue;
                }
                let nb = counts[b] as f64;
                let gain = loss - nb / (nb + 1.0) * dist2(&points[i], &centroids[b]);
                if gain > 1e-12 * (1.0 + loss) && gain > best.1 {
                    best = (b, gain);
                }
            }
            if best.0 != a {
                assignments[i] = best.0;
                (centroids, counts) = means(points, &assignments, k, dim);
                moved = true;
            }
        }
        if !moved {
            break;
        }
        history.push(total_cost(points, &assignments, &centroids));
    }
    let cost = total_cost(points, &assignments, &centroids);
    Ok(Clustering { assignments, centroids, cost, cost_history: history })
}

fn repair(mut m: Vec<Vec<f64>>, fallback: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    for c in 0..k {
        if !assignments.contains(&c) {
            m[c] = fallback[c].clone();
        }
    }
    m
}

/// Viewpoint groups by greedy angular grouping: each camera joins the first
/// group whose founding view direction is strictly closer than the threshold,
/// otherwise founds a new group. Returns the group index per camera.
pub fn view_groups(cams: &[OrthoCamera], threshold_deg: f64) -> Vec<usize> {
    let limit = threshold_deg.to_radians();
    let mut founders: Vec<Vec3> = Vec::new();
    cams.iter()
        .map(|c| {
            let d = c.view_direction();
            let angle_ok = |f: &Vec3| d.dot(f).clamp(-1.0, 1.0).acos() < limit;
            match founders.iter().position(angle_ok) {
                Some(g) => g,
                None => {
                    founders.push(d);
                    founders.len() - 1
                }
            }
        })
        .collect()
}

/// Weight `1 / |group|` per camera, rescaled so the weights sum to the
/// number of cameras: `n / (groups * |group|)`.
pub fn view_weights(cams: &[OrthoCamera], threshold_deg: f64) -> Vec<f64> {
    let groups = view_groups(cams, threshold_deg);
    let g = groups.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; g];
    for &i in &groups {
        sizes[i] += 1;
    }
    let n = cams.len() as f64;
    groups.iter().map(|&i| n / (g as f64 * sizes[i] as f64)).collect()
}
