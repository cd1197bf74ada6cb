use serde::{Deserialize, Serialize};

use super::candidates::candidate_pairs;
use super::stop::ContainmentCache;
use super::{MergeParams, PriorBox};
use crate::cluster_core::{cosine_sim, Cluster, ClusterFeature, ClusterId};
use crate::scene_io::FeatureMatrix;
use crate::union_find::UnionFind;

/// A candidate pair annotated with its feature similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub similarity: f64,
}

/// Merge decisions for one layer step, as cluster-index pairs of the source layer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeLogEntry {
    /// Pairs that passed every test, in rank order.
    pub accepted: Vec<(usize, usize)>,
    /// Pairs that ranked high enough but were vetoed by a prior box, in rank order.
    pub rejected: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct LayerOutcome {
    pub clusters: Vec<Cluster>,
    pub features: Vec<ClusterFeature>,
    pub log: MergeLogEntry,
}

/// Number of pairs kept out of `n` for a top fraction `k`.
pub(crate) fn kept_count(n: usize, k: f64) -> usize {
    // guard against 0.6 * 10 landing a hair above 6
    (((k * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Sorts by descending similarity (ties: ascending `(i, j)`) and keeps the first
/// `ceil(k_fraction * n)` pairs.
pub fn rank_filter(mut pairs: Vec<ScoredPair>, k_fraction: f64) -> Vec<ScoredPair> {
    pairs.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then((a.i, a.j).cmp(&(b.i, b.j))));
    let keep = kept_count(pairs.len(), k_fraction);
    pairs.truncate(keep);
    pairs
}

/// One clustering step from layer `t` to layer `t + 1`.
///
/// Candidate pairs are ranked by similarity, filtered by rank, checked against
/// the prior boxes, and the survivors are unioned transitively. Output clusters
/// are ordered by their smallest child index; untouched clusters carry forward
/// with a single child.
pub fn run_layer(
    layer: &[Cluster],
    features: &[ClusterFeature],
    positions: &[[f32; 3]],
    point_features: &FeatureMatrix,
    boxes: &[PriorBox],
    params: &MergeParams,
) -> LayerOutcome {
    assert_eq!(layer.len(), features.len(), "one feature per cluster");
    let next_layer = layer.first().map_or(1, |c| c.id.layer + 1);

    let scored: Vec<ScoredPair> = candidate_pairs(layer, positions, params.t)
        .into_iter()
        .filter_map(|c| {
            // zero-feature clusters have no similarity and never merge
            let similarity = cosine_sim(&features[c.i].vector, &features[c.j].vector).ok()?;
            Some(ScoredPair { i: c.i, j: c.j, distance: c.distance, similarity })
        })
        .collect();
    let ranked = rank_filter(scored, params.k_fraction);

    let mut cache = ContainmentCache::new(layer, boxes, positions);
    let mut log = MergeLogEntry::default();
    let mut uf = UnionFind::new(layer.len());
    for p in &ranked {
        if cache.rejects(p.i, p.j, params.inside_frac, params.outside_frac) {
            log.rejected.push((p.i, p.j));
        } else {
            log.accepted.push((p.i, p.j));
            uf.union(p.i, p.j);
        }
    }

    let mut clusters = Vec::new();
    let mut next_features = Vec::new();
    for (index, children) in uf.components().into_iter().enumerate() {
        let id = ClusterId { layer: next_layer, index };
        if let [only] = children[..] {
            clusters.push(Cluster { id, point_ids: layer[only].point_ids.clone(), children });
            next_features.push(features[only].clone());
        } else {
            let mut point_ids: Vec<_> = children.iter().flat_map(|&c| layer[c].point_ids.iter().copied()).collect();
            point_ids.sort_unstable();
            next_features.push(params.feature_of(point_features, &point_ids));
            clusters.push(Cluster { id, point_ids, children });
        }
    }
    LayerOutcome { clusters, features: next_features, log }
}
