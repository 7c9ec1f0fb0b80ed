//! Density clustering of unmapped points and proposal sampling.

mod hdbscan;
mod kdtree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use hdbscan::{
    condense, core_distances, hdbscan_cluster, mutual_reachability, mutual_reachability_mst,
    select_eom, single_linkage, stabilities, CondensedEntry, CondensedTree, Merge, MstEdge,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub point_indices: Vec<usize>,
    /// Excess-of-Mass stability of the selected cluster.
    pub stability: f64,
}

/// Disjoint clusters plus the points assigned to none of them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub noise_indices: Vec<usize>,
}

impl ClusterSet {
    /// Per-point label, `None` for noise.
    pub fn labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (k, c) in self.clusters.iter().enumerate() {
            for &i in &c.point_indices {
                out[i] = Some(k);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    /// Proposal points sampled per cluster.
    pub m: usize,
    pub rng_seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 10,
            min_samples: 5,
            m: 4,
            rng_seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_cluster_size < 2 {
            return Err("clustering.min_cluster_size must be >= 2".into());
        }
        if self.min_samples < 1 {
            return Err("clustering.min_samples must be >= 1".into());
        }
        if self.m < 1 {
            return Err("clustering.m must be >= 1".into());
        }
        Ok(())
    }
}

/// Sampled prompt points, one list per cluster (same order as the clusters).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalSet {
    pub proposals: Vec<Vec<usize>>,
}

/// Uniformly samples `min(m, |cluster|)` distinct points from every cluster.
/// Deterministic for a fixed `params.rng_seed`.
pub fn sample_proposals(clusters: &ClusterSet, params: &ClusterParams) -> ProposalSet {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let proposals = clusters
        .clusters
        .iter()
        .map(|c| {
            let n = c.point_indices.len();
            if n <= params.m {
                return c.point_indices.clone();
            }
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, params.m)
                .into_iter()
                .map(|i| c.point_indices[i])
                .collect();
            picked.sort_unstable();
            picked
        })
        .collect();
    ProposalSet { proposals }
}
