//! Farthest point sampling and exact k-nearest-neighbour search.
//!
//! Both use squared Euclidean distance with ties broken by the lower point
//! index, so results are fully determined by the input order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min seed selection starting from index 0.
pub fn farthest_point_sampling(points: &[Point3], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > points.len() {
        return Err(Error::Argument(format!("FPS needs 1 <= m <= N (m = {m}, N = {})", points.len())));
    }
    let mut seeds = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut chosen = vec![false; points.len()];
    let mut current = 0;
    for _ in 0..m {
        seeds.push(current);
        chosen[current] = true;
        let c = points[current];
        let mut best: Option<usize> = None;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !chosen[i] && best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => current = b,
            None => break,
        }
    }
    Ok(seeds)
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.total_cmp(&other.d).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded set of the `k` smallest candidates in `(distance, index)` order.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn worst(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.d)
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(top) = self.heap.peek() {
            if c < *top {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn into_sorted(self) -> Vec<usize> {
        self.heap.into_sorted_vec().into_iter().map(|c| c.idx).collect()
    }
}

const LEAF_SIZE: usize = 16;

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<KdNode>, right: Box<KdNode> },
}

/// Static kd-tree over a reference set; queries are exact under the
/// `(distance, index)` order.
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    root: KdNode,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = Self::build(points, &mut order, 0, points.len());
        Self { points, order, root }
    }

    fn build(points: &[Point3], order: &mut [usize], start: usize, end: usize) -> KdNode {
        if end - start <= LEAF_SIZE {
            return KdNode::Leaf { start, end };
        }
        let slice = &mut order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = points[slice[mid]][axis];
        KdNode::Split {
            axis,
            value,
            left: Box::new(Self::build(points, order, start, start + mid)),
            right: Box::new(Self::build(points, order, start + mid, end)),
        }
    }

    pub fn nearest(&self, q: &Point3, k: usize) -> Vec<usize> {
        let mut top = TopK::new(k);
        self.search(&self.root, q, &mut top);
        top.into_sorted()
    }

    fn search(&self, node: &KdNode, q: &Point3, top: &mut TopK) {
        match node {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    top.offer(Candidate { d: dist2(q, &self.points[i]), idx: i });
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                // Points equal to the split value may sit on either side.
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, top);
                if diff * diff <= top.worst() {
                    self.search(far, q, top);
                }
            }
        }
    }
}

fn knn_brute(query: &[Point3], reference: &[Point3], k: usize) -> Vec<Vec<usize>> {
    query
        .iter()
        .map(|q| {
            let mut top = TopK::new(k);
            for (i, r) in reference.iter().enumerate() {
                top.offer(Candidate { d: dist2(q, r), idx: i });
            }
            top.into_sorted()
        })
        .collect()
}

/// Work threshold (query x reference pairs) above which the kd-tree is used.
const BRUTE_FORCE_LIMIT: usize = 1 << 20;

/// `k` nearest reference indices for every query, ascending by distance then index.
pub fn knn(query: &[Point3], reference: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k > reference.len() {
        return Err(Error::Argument(format!("knn: k = {k} exceeds reference size {}", reference.len())));
    }
    if k == 0 {
        return Ok(vec![Vec::new(); query.len()]);
    }
    if query.len().saturating_mul(reference.len()) <= BRUTE_FORCE_LIMIT {
        Ok(knn_brute(query, reference, k))
    } else {
        Ok(knn_tree(query, reference, k))
    }
}

pub(crate) fn knn_tree(query: &[Point3], reference: &[Point3], k: usize) -> Vec<Vec<usize>> {
    let tree = KdTree::new(reference);
    query.iter().map(|q| tree.nearest(q, k)).collect()
}

/// kNN of a set against itself where each row starts with the query point.
pub fn knn_self(points: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    let mut rows = knn(points, points, k)?;
    for (i, row) in rows.iter_mut().enumerate() {
        put_first(row, i);
    }
    Ok(rows)
}

/// Move `idx` to the front of `row`, inserting it (and dropping the last entry) if absent.
pub(crate) fn put_first(row: &mut Vec<usize>, idx: usize) {
    if row.first() == Some(&idx) || row.is_empty() {
        return;
    }
    match row.iter().position(|&j| j == idx) {
        Some(p) => {
            row.remove(p);
        }
        None => {
            row.pop();
        }
    }
    row.insert(0, idx);
}
