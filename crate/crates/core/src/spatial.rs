//! Exact nearest-neighbor search over static 3D point sets.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree. Queries return the same squared distances as a linear
/// scan over the input (`(p - q).norm_squared()`), so results are exact.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = Self { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] == lo[axis] {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |a, b| {
            points[*a][axis].total_cmp(&points[*b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Index and squared distance of the nearest point. Ties resolve to the
    /// smallest index.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// Whether any point lies within `radius` (inclusive).
    pub fn any_within(&self, query: &Vector3<f64>, radius: f64) -> bool {
        if self.points.is_empty() {
            return false;
        }
        self.any_within_rec(0, query, radius * radius)
    }

    fn any_within_rec(&self, node: usize, q: &Vector3<f64>, r2: f64) -> bool {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                self.order[start..end].iter().any(|&i| (self.points[i] - q).norm_squared() <= r2)
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.any_within_rec(near, q, r2) || (diff * diff <= r2 && self.any_within_rec(far, q, r2))
            }
        }
    }

    /// All point indices within `radius` (inclusive), unordered.
    pub fn within(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_rec(0, query, radius * radius, &mut out);
        }
        out
    }

    fn within_rec(&self, node: usize, q: &Vector3<f64>, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().filter(|&&i| (self.points[i] - q).norm_squared() <= r2));
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.within_rec(far, q, r2, out);
                }
            }
        }
    }
}

/// Nearest-neighbor distance (not squared) from every query point into
/// `tree`, in query order.
pub fn nearest_distances(tree: &KdTree, queries: &[Vector3<f64>]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        queries.par_iter().map(|q| tree.nearest(q).map_or(f64::INFINITY, |(_, d)| d.sqrt())).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        queries.iter().map(|q| tree.nearest(q).map_or(f64::INFINITY, |(_, d)| d.sqrt())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 5, 9, 100, 1000] {
            let pts: Vec<_> = (0..n)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.1)))
                .collect();
            let tree = KdTree::new(&pts);
            for _ in 0..200 {
                let q = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5));
                let (i, d) = tree.nearest(&q).unwrap();
                let (bi, bd) = brute(&pts, &q);
                assert_eq!(d, bd);
                assert_eq!(i, bi);
                let r = 0.2;
                let mut got = tree.within(&q, r);
                got.sort();
                let want: Vec<_> = (0..n).filter(|&i| (pts[i] - q).norm_squared() <= r * r).collect();
                assert_eq!(got, want);
                assert_eq!(tree.any_within(&q, r), !want.is_empty());
            }
        }
    }

    #[test]
    fn duplicate_points() {
        let pts = vec![Vector3::new(1.0, 1.0, 1.0); 50];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Vector3::zeros()).unwrap(), (0, 3.0));
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Vector3::zeros()).is_none());
        assert!(!tree.any_within(&Vector3::zeros(), 1.0));
    }
}
