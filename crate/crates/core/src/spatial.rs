//! Static 3-D k-d tree with exact nearest-neighbour and radius queries.

use alloc::vec::Vec;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    index: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut tree = KdTree { points, index: (0..points.len()).collect(), nodes: Vec::new() };
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

    fn build(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.index[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.index[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].partial_cmp(&points[b][axis]).unwrap_or(core::cmp::Ordering::Equal)
        });
        let value = points[self.index[mid]][axis];
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[slot] = Node::Split { axis, value, left, right };
        slot
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.index[start..end] {
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

    /// Appends the indices of all points within `radius` of `q` to `out`.
    pub fn within_radius(&self, q: &Vector3<f64>, radius: f64, out: &mut Vec<usize>) {
        if self.nodes.is_empty() {
            return;
        }
        self.radius_rec(0, q, radius, radius * radius, out);
    }

    fn radius_rec(&self, node: usize, q: &Vector3<f64>, radius: f64, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.index[start..end] {
                    if (self.points[i] - q).norm_squared() <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff <= radius {
                    self.radius_rec(left, q, radius, r2, out);
                }
                if diff >= -radius {
                    self.radius_rec(right, q, radius, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = random_points(500, 1);
        let tree = KdTree::new(&pts);
        let queries = random_points(200, 2);
        for q in &queries {
            let (_, d) = tree.nearest(q).unwrap();
            let brute = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
            assert_eq!(d, brute);
        }
    }

    #[test]
    fn radius_matches_brute_force() {
        let pts = random_points(400, 3);
        let tree = KdTree::new(&pts);
        for q in random_points(50, 4).iter() {
            let mut got = Vec::new();
            tree.within_radius(q, 0.15, &mut got);
            got.sort_unstable();
            let want: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm() <= 0.15).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn empty_tree() {
        let pts: Vec<Vector3<f64>> = Vec::new();
        let tree = KdTree::new(&pts);
        assert!(tree.nearest(&Vector3::zeros()).is_none());
    }
}
