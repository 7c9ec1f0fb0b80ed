//! Exact 3-d tree used for core distances and nearest-foreign-neighbour
//! queries during MST construction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;
pub(crate) const NO_CHILD: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub start: usize,
    pub end: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub left: usize,
    pub right: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.left == NO_CHILD
    }

    /// Squared distance from `p` to this node's bounding box.
    pub fn min_dist2(&self, p: &[f64; 3]) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }
}

pub(crate) struct KdTree<'a> {
    pub points: &'a [[f64; 3]],
    /// Permutation of point indices; each node owns `order[start..end]`.
    pub order: Vec<usize>,
    pub nodes: Vec<Node>,
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then_with(|| self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            lo,
            hi,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            // All points coincide; splitting gains nothing.
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            points[i][axis]
                .total_cmp(&points[j][axis])
                .then_with(|| i.cmp(&j))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    /// Distance from `query` to its `k`-th nearest point, counting a point at
    /// zero distance (itself) as the first neighbour.
    pub fn kth_neighbor_distance(&self, query: &[f64; 3], k: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.points.len());
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if heap.len() == k && node.min_dist2(query) > heap.peek().map_or(f64::INFINITY, |h| h.0)
            {
                continue;
            }
            if node.is_leaf() {
                for &i in &self.order[node.start..node.end] {
                    let d2 = dist2(query, &self.points[i]);
                    if heap.len() < k {
                        heap.push(HeapItem(d2, i));
                    } else if d2 < heap.peek().map_or(f64::INFINITY, |h| h.0) {
                        heap.pop();
                        heap.push(HeapItem(d2, i));
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = self.nodes[l].min_dist2(query);
                let dr = self.nodes[r].min_dist2(query);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        heap.peek().map_or(0.0, |h| h.0.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn kth_neighbor_matches_sort() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                [
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ]
            })
            .collect();
        let tree = KdTree::build(&pts);
        for q in pts.iter().take(50) {
            let mut d: Vec<f64> = pts.iter().map(|p| dist2(p, q).sqrt()).collect();
            d.sort_by(f64::total_cmp);
            for k in [1, 2, 5, 17] {
                assert_eq!(tree.kth_neighbor_distance(q, k), d[k - 1]);
            }
        }
    }

    #[test]
    fn duplicate_points_do_not_recurse_forever() {
        let pts = vec![[1.0, 1.0, 1.0]; 100];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.kth_neighbor_distance(&pts[0], 50), 0.0);
    }
}
