//! HDBSCAN over 3-d points: core distances, mutual-reachability MST
//! (Borůvka on a k-d tree), single-linkage hierarchy, condensed tree and
//! Excess-of-Mass selection.

use rayon::prelude::*;

use super::kdtree::{dist2, KdTree, NO_CHILD};
use super::{Cluster, ClusterParams, ClusterSet};

/// Weighted MST edge `(a, b, mutual reachability distance)`.
pub type MstEdge = (usize, usize, f64);

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Distance of every point to its `min_samples`-th nearest neighbour (the
/// point itself counts as the first). `min_samples` is clamped to `n`.
pub fn core_distances(points: &[[f64; 3]], min_samples: usize) -> Vec<f64> {
    if points.is_empty() {
        return Vec::new();
    }
    let k = min_samples.clamp(1, points.len());
    let tree = KdTree::build(points);
    points
        .par_iter()
        .map(|p| tree.kth_neighbor_distance(p, k))
        .collect()
}

#[inline]
pub fn mutual_reachability(points: &[[f64; 3]], core: &[f64], a: usize, b: usize) -> f64 {
    dist2(&points[a], &points[b])
        .sqrt()
        .max(core[a])
        .max(core[b])
}

/// Minimum spanning tree of the complete mutual-reachability graph.
///
/// Borůvka rounds: every component picks its lightest outgoing edge, found with
/// a pruned k-d tree search (subtrees lying entirely inside the querying
/// component are skipped, and `max(core_p, min core in node, box distance)`
/// lower-bounds every edge into a node).
pub fn mutual_reachability_mst(points: &[[f64; 3]], core: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let tree = KdTree::build(points);
    let node_min_core = node_min_core(&tree, core);
    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n - 1);
    let mut comp = vec![0usize; n];
    let mut node_comp = vec![usize::MAX; tree.nodes.len()];
    const MIXED: usize = usize::MAX;

    while edges.len() < n - 1 {
        for (i, c) in comp.iter_mut().enumerate() {
            *c = uf.find(i);
        }
        // Children are always pushed after their parent, so a reverse sweep is
        // bottom-up.
        for id in (0..tree.nodes.len()).rev() {
            let node = &tree.nodes[id];
            node_comp[id] = if node.is_leaf() {
                let first = comp[tree.order[node.start]];
                if tree.order[node.start..node.end]
                    .iter()
                    .all(|&i| comp[i] == first)
                {
                    first
                } else {
                    MIXED
                }
            } else {
                let (l, r) = (node_comp[node.left], node_comp[node.right]);
                if l == r {
                    l
                } else {
                    MIXED
                }
            };
        }

        // best[c] = lightest edge leaving component rooted at c.
        let mut best: Vec<(f64, usize, usize)> = vec![(f64::INFINITY, usize::MAX, usize::MAX); n];
        let mut stack = Vec::with_capacity(64);
        for p in 0..n {
            let c = comp[p];
            let cp = core[p];
            if cp >= best[c].0 {
                continue;
            }
            let pp = &points[p];
            stack.clear();
            stack.push(0usize);
            while let Some(id) = stack.pop() {
                if node_comp[id] == c {
                    continue;
                }
                let node = &tree.nodes[id];
                let bound = best[c].0;
                let lb = cp.max(node_min_core[id]).max(node.min_dist2(pp).sqrt());
                if lb >= bound {
                    continue;
                }
                if node.is_leaf() {
                    for &q in &tree.order[node.start..node.end] {
                        if comp[q] == c {
                            continue;
                        }
                        let w = dist2(pp, &points[q]).sqrt().max(cp).max(core[q]);
                        let cand = (w, p.min(q), p.max(q));
                        if w < best[c].0
                            || (w == best[c].0 && (cand.1, cand.2) < (best[c].1, best[c].2))
                        {
                            best[c] = cand;
                        }
                    }
                } else {
                    let (l, r) = (node.left, node.right);
                    if tree.nodes[l].min_dist2(pp) <= tree.nodes[r].min_dist2(pp) {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
            }
        }

        let mut progressed = false;
        for c in 0..n {
            if comp[c] != c {
                continue;
            }
            let (w, a, b) = best[c];
            if a != usize::MAX && uf.union(a, b) {
                edges.push((a, b, w));
                progressed = true;
            }
        }
        assert!(progressed, "Borůvka round made no progress");
    }
    edges
}

fn node_min_core(tree: &KdTree<'_>, core: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; tree.nodes.len()];
    for id in (0..tree.nodes.len()).rev() {
        let node = &tree.nodes[id];
        out[id] = if node.left == NO_CHILD {
            tree.order[node.start..node.end]
                .iter()
                .map(|&i| core[i])
                .fold(f64::INFINITY, f64::min)
        } else {
            out[node.left].min(out[node.right])
        };
    }
    out
}

/// One merge of the single-linkage dendrogram. Node ids `< n` are points;
/// merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Single-linkage hierarchy from MST edges, merged in ascending weight order.
pub fn single_linkage(n: usize, mst: &[MstEdge]) -> Vec<Merge> {
    let mut sorted: Vec<MstEdge> = mst.to_vec();
    sorted.sort_by(|x, y| {
        x.2.total_cmp(&y.2)
            .then_with(|| x.0.cmp(&y.0))
            .then_with(|| x.1.cmp(&y.1))
    });
    let mut uf = UnionFind::new(n);
    // Dendrogram node currently representing each union-find root.
    let mut node_of = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (a, b, w) in sorted {
        let (ra, rb) = (uf.find(a), uf.find(b));
        let (na, nb) = (node_of[ra], node_of[rb]);
        let s = size[ra] + size[rb];
        uf.union(ra, rb);
        let r = uf.find(ra);
        node_of[r] = n + merges.len();
        size[r] = s;
        merges.push(Merge {
            left: na,
            right: nb,
            distance: w,
            size: s,
        });
    }
    merges
}

/// Entry of the condensed tree: `child` is either a point (`is_point`) or a
/// cluster id, leaving/splitting from `parent` at density `lambda = 1/d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEntry {
    pub parent: usize,
    pub child: usize,
    pub is_point: bool,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedTree {
    pub entries: Vec<CondensedEntry>,
    /// Birth lambda per cluster id; cluster 0 is the root.
    pub birth: Vec<f64>,
    /// Parent cluster per cluster id (`None` for the root).
    pub parent: Vec<Option<usize>>,
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

/// Condenses the dendrogram: a split only creates new clusters when both sides
/// hold at least `min_cluster_size` points; smaller sides fall out as points.
pub fn condense(n: usize, merges: &[Merge], min_cluster_size: usize) -> CondensedTree {
    let mut tree = CondensedTree {
        entries: Vec::new(),
        birth: vec![0.0],
        parent: vec![None],
    };
    if merges.is_empty() {
        if n == 1 {
            tree.entries.push(CondensedEntry {
                parent: 0,
                child: 0,
                is_point: true,
                lambda: f64::INFINITY,
                size: 1,
            });
        }
        return tree;
    }
    let node_size = |id: usize| if id < n { 1 } else { merges[id - n].size };
    let root = n + merges.len() - 1;
    // Stack of (dendrogram node, cluster it belongs to).
    let mut stack = vec![(root, 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        if node < n {
            // Unreachable for min_cluster_size >= 2; kept so the walk is total.
            tree.entries.push(CondensedEntry {
                parent: cluster,
                child: node,
                is_point: true,
                lambda: f64::INFINITY,
                size: 1,
            });
            continue;
        }
        let m = merges[node - n];
        let lambda = lambda_of(m.distance);
        let (ls, rs) = (node_size(m.left), node_size(m.right));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        match (big_l, big_r) {
            (true, true) => {
                for (child, size) in [(m.left, ls), (m.right, rs)] {
                    let id = tree.birth.len();
                    tree.birth.push(lambda);
                    tree.parent.push(Some(cluster));
                    tree.entries.push(CondensedEntry {
                        parent: cluster,
                        child: id,
                        is_point: false,
                        lambda,
                        size,
                    });
                    stack.push((child, id));
                }
            }
            _ => {
                for (child, big) in [(m.left, big_l), (m.right, big_r)] {
                    if big {
                        stack.push((child, cluster));
                    } else {
                        for p in leaves(n, merges, child) {
                            tree.entries.push(CondensedEntry {
                                parent: cluster,
                                child: p,
                                is_point: true,
                                lambda,
                                size: 1,
                            });
                        }
                    }
                }
            }
        }
    }
    tree
}

fn leaves(n: usize, merges: &[Merge], node: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let m = merges[x - n];
            stack.push(m.left);
            stack.push(m.right);
        }
    }
    out
}

fn stability_increment(lambda: f64, birth: f64, size: usize) -> f64 {
    if lambda == birth {
        0.0
    } else {
        (lambda - birth) * size as f64
    }
}

/// Per-cluster stability `Σ (λ_p − λ_birth)` over everything leaving it.
pub fn stabilities(tree: &CondensedTree) -> Vec<f64> {
    let mut s = vec![0.0; tree.birth.len()];
    for e in &tree.entries {
        s[e.parent] += stability_increment(e.lambda, tree.birth[e.parent], e.size);
    }
    s
}

/// Excess-of-Mass selection. The root is not a candidate, as in canonical
/// HDBSCAN, except when every point leaves it at one density level (e.g.
/// coincident points); then the whole input is one cluster.
pub fn select_eom(tree: &CondensedTree) -> Vec<bool> {
    let k = tree.birth.len();
    let own = stabilities(tree);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (c, p) in tree.parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(c);
        }
    }
    let mut subtree = own.clone();
    let mut selected = vec![false; k];
    // Children always carry larger ids than their parent.
    for c in (1..k).rev() {
        let child_sum: f64 = children[c].iter().map(|&ch| subtree[ch]).sum();
        if !children[c].is_empty() && child_sum > own[c] {
            subtree[c] = child_sum;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(d) = stack.pop() {
                selected[d] = false;
                stack.extend_from_slice(&children[d]);
            }
        }
    }
    if k > 0 && children[0].is_empty() {
        let mut lambdas = tree
            .entries
            .iter()
            .filter(|e| e.parent == 0)
            .map(|e| e.lambda);
        let first = lambdas.next();
        selected[0] = first.is_some_and(|l0| lambdas.all(|l| l == l0));
    }
    selected
}

/// Full HDBSCAN. Clusters are returned ordered by their smallest point index;
/// point indices are sorted ascending.
pub fn hdbscan_cluster(points: &[[f64; 3]], params: &ClusterParams) -> ClusterSet {
    let n = points.len();
    if n < params.min_cluster_size.max(2) {
        return ClusterSet {
            clusters: Vec::new(),
            noise_indices: (0..n).collect(),
        };
    }
    let core = core_distances(points, params.min_samples);
    let mst = mutual_reachability_mst(points, &core);
    let merges = single_linkage(n, &mst);
    let tree = condense(n, &merges, params.min_cluster_size);
    let selected = select_eom(&tree);
    let stability = stabilities(&tree);
    label(n, &tree, &selected, &stability, params.min_cluster_size)
}

fn label(
    n: usize,
    tree: &CondensedTree,
    selected: &[bool],
    stability: &[f64],
    min_cluster_size: usize,
) -> ClusterSet {
    // Threshold used when the root itself is the selected cluster: only points
    // persisting to the root's last event belong to it.
    let root_threshold = tree
        .entries
        .iter()
        .filter(|e| e.parent == 0)
        .map(|e| e.lambda)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.birth.len()];
    let mut noise = Vec::new();
    let mut assigned = vec![false; n];
    for e in tree.entries.iter().filter(|e| e.is_point) {
        assigned[e.child] = true;
        let mut c = Some(e.parent);
        let mut owner = None;
        while let Some(id) = c {
            if selected[id] {
                owner = Some(id);
                break;
            }
            c = tree.parent[id];
        }
        match owner {
            Some(0) if e.lambda < root_threshold => noise.push(e.child),
            Some(id) => members[id].push(e.child),
            None => noise.push(e.child),
        }
    }
    debug_assert!(assigned.iter().all(|&a| a));

    let mut clusters = Vec::new();
    for (id, mut pts) in members.into_iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        if pts.len() < min_cluster_size {
            noise.extend(pts);
            continue;
        }
        pts.sort_unstable();
        clusters.push(Cluster {
            point_indices: pts,
            stability: stability[id].max(0.0),
        });
    }
    clusters.sort_by_key(|c| c.point_indices[0]);
    noise.sort_unstable();
    ClusterSet {
        clusters,
        noise_indices: noise,
    }
}
