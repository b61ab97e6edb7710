//! Exact k-nearest-neighbour queries over small, static point sets.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// A neighbour hit: point index and squared distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    fn key(&self) -> (f64, usize) {
        (self.dist2, self.index)
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    // Heap order: farthest first, ties broken toward the larger index so the
    // smallest index survives.
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    }
}

const LEAF: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree. Queries are exact, sorted by distance, and break ties by
/// the lowest point index.
#[derive(Clone, Debug)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Self { points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; D] {
        &self.points[i]
    }

    pub fn points(&self) -> &[[f64; D]] {
        &self.points
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn nearest(&self, query: &[f64; D], k: usize) -> Result<Vec<Neighbor>> {
        if k > self.points.len() {
            return Err(Error::InsufficientNeighbors { needed: k, available: self.points.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        Ok(out)
    }

    pub fn nearest_one(&self, query: &[f64; D]) -> Option<Neighbor> {
        self.nearest(query, 1).ok().and_then(|v| v.into_iter().next())
    }

    fn search(&self, node: usize, q: &[f64; D], k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor { index: i, dist2: dist2(&self.points[i], q) };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty heap").dist2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

fn build<const D: usize>(pts: &[[f64; D]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for &i in slice.iter() {
        for a in 0..D {
            lo[a] = lo[a].min(pts[i][a]);
            hi[a] = hi[a].max(pts[i][a]);
        }
    }
    let axis = (0..D).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
    if hi[axis] - lo[axis] <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    slice.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
    let mid = slice.len() / 2;
    let value = pts[slice[mid - 1]][axis];
    nodes.push(Node::Leaf { start, end });
    let left = build(pts, order, start, start + mid, nodes);
    let right = build(pts, order, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Mean of the squared distances from `p` to its `k` nearest neighbours in the
/// indexed set.
pub fn delta_knn<const D: usize>(p: &[f64; D], set: &KdTree<D>, k: usize) -> Result<f64> {
    let hits = set.nearest(p, k)?;
    if k == 0 {
        return Ok(0.0);
    }
    Ok(hits.iter().map(|h| h.dist2).sum::<f64>() / k as f64)
}
