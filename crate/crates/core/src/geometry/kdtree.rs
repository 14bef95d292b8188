//! Balanced 3-d tree for exact k-nearest-neighbor queries.
//!
//! Neighbors are ordered by `(squared distance, index)`, so ties resolve to the
//! lower index and results coincide exactly with a sorted brute-force scan.
//! Squared distances are always summed as `dx² + dy² + dz²` in that order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq.total_cmp(&other.dist_sq).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub(crate) fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Caller-facing index of each stored point, permuted into tree order.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Tree over all `points`; neighbor indices refer to positions in `points`.
    pub fn new(points: &[Vec3]) -> Self {
        Self::with_indices(points, (0..points.len()).collect())
    }

    /// Tree over the subset `indices` of `points`.
    pub fn with_indices(points: &[Vec3], mut indices: Vec<usize>) -> Self {
        let mut nodes = Vec::new();
        if !indices.is_empty() {
            let n = indices.len();
            build(points, &mut indices, 0, n, &mut nodes);
        }
        let stored = indices.iter().map(|&i| points[i]).collect();
        Self { points: stored, order: indices, nodes }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The `k` nearest stored points to `query`, ascending, skipping `exclude`.
    pub fn knn(&self, query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        heap.into_sorted_vec()
    }

    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        self.knn(query, 1, None).into_iter().next()
    }

    fn search(
        &self,
        node: usize,
        query: &Vec3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let index = self.order[slot];
                    if Some(index) == exclude {
                        continue;
                    }
                    let cand = Neighbor { index, dist_sq: dist_sq(&self.points[slot], query) };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude, heap);
                // `<=` keeps equal-distance candidates reachable for index tie-breaks
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

fn build(points: &[Vec3], idx: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut idx[start..end];
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[slice[mid]][axis];
    // left holds coordinates <= value, right holds coordinates >= value
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, idx, start, start + mid, nodes);
    let right = build(points, idx, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}
