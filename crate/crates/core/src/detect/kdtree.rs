//! Exact k-nearest-neighbor search over 2-D points.
//!
//! Neighbors are ordered by squared Euclidean distance, then by insertion
//! index, so results are identical to a sorted brute-force scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.dist_sq.sqrt()
    }
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn dist_sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[[f64; 2]]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len(), 0);
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = depth % 2;
        let points = &self.points;
        let slice = &mut self.order[start..end];
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = points[slice[mid]][axis];
        // Placeholder; children are filled in once their ids are known.
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid, depth + 1);
        let right = self.build_node(start + mid, end, depth + 1);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `query`, nearest first, skipping the point
    /// at index `exclude` if given.
    pub fn nearest(&self, query: &[f64; 2], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn search(
        &self,
        node: usize,
        query: &[f64; 2],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist_sq: dist_sq(query, &self.points[i]),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap holds k entries") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                // Points equal to the split value can land on either side.
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude, heap);
                let plane = diff * diff;
                let must_visit = heap.len() < k
                    || plane <= heap.peek().expect("heap holds k entries").dist_sq;
                if must_visit {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(points: &[[f64; 2]], q: &[f64; 2], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| Neighbor {
                index: i,
                dist_sq: dist_sq(q, p),
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_on_random_and_gridded_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let n = rng.random_range(1..400);
            let points: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    if trial % 2 == 0 {
                        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]
                    } else {
                        // Many exact ties.
                        [rng.random_range(0..6) as f64, rng.random_range(0..6) as f64]
                    }
                })
                .collect();
            let tree = KdTree::build(&points);
            for _ in 0..30 {
                let q = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
                let k = rng.random_range(1..30);
                assert_eq!(tree.nearest(&q, k, None), brute(&points, &q, k, None));
                let ex = rng.random_range(0..n);
                assert_eq!(
                    tree.nearest(&points[ex], k, Some(ex)),
                    brute(&points, &points[ex], k, Some(ex))
                );
            }
        }
    }

    #[test]
    fn k_larger_than_set_returns_everything() {
        let points = [[0.0, 0.0], [1.0, 0.0]];
        let tree = KdTree::build(&points);
        assert_eq!(tree.nearest(&[0.0, 0.0], 5, None).len(), 2);
        assert_eq!(tree.nearest(&[0.0, 0.0], 5, Some(0)).len(), 1);
        assert!(KdTree::build(&[]).nearest(&[0.0, 0.0], 3, None).is_empty());
    }
}
