//! The hierarchical clustering engine.
//!
//! Each layer merges clusters pairwise when
//!
//! * their closest points are within `t` metres,
//! * their feature similarity ranks within the top `k_fraction` of this
//!   layer's candidate pairs, and
//! * no objectness prior has one of them inside and the other outside.
//!
//! Accepted pairs are unioned transitively within the layer. Layers are added
//! until nothing merges or `max_layers` is reached. Clusters that stop merging
//! are objects; the clusters they were formed from are their parts.

mod candidates;
mod collect;
mod json;
mod layer;
mod stop;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::cluster_core::{Cluster, ClusterId};
pub use candidates::{candidate_pairs, candidate_pairs_with_stats, CandidatePair, CandidateStats};
pub use collect::{
    collect_objects, collect_parts, drop_largest_planar, formation_cluster, planarity, CollectedObjects,
    PLANARITY_THRESHOLD,
};
pub use json::{HierarchyDoc, HIERARCHY_SCHEMA, HIERARCHY_VERSION};
pub use layer::{rank_filter, run_layer, LayerOutcome, MergeLogEntry, ScoredPair};
pub use stop::{containment_fraction, stop_criteria, ContainmentCache};

use crate::cluster_core::{fuse_rows, mean_rows, ClusterFeature};
use crate::geometry::Aabb;
use crate::scene_io::{FeatureMatrix, SceneCloud};
use crate::PointId;

/// Axis-aligned objectness prior in world coordinates.
pub type PriorBox = Aabb;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("invalid merge parameters: {0}")]
    InvalidParams(String),
    #[error("clustering needs per-point semantic features")]
    MissingFeatures,
    #[error("layer 0 is not a partition: {0}")]
    InvalidLayer(String),
    #[error("invalid prior box {index}: min {min:?} exceeds max {max:?}")]
    InvalidPrior { index: usize, min: [f64; 3], max: [f64; 3] },
    #[error("malformed hierarchy document: {0}")]
    Malformed(String),
}

/// How cluster features are computed from member point features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Similarity-weighted fusion that suppresses outlier points.
    #[default]
    Weighted,
    /// Plain average, kept for ablation runs.
    Mean,
}

/// Which clusters are reported as objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectRule {
    /// Terminal clusters, taken at the layer where they last gained a sibling.
    #[default]
    Terminal,
    /// Experimental: every cluster at the layer it was formed, at any depth.
    AnyLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeParams {
    /// Fraction of each layer's candidate pairs, by similarity rank, that may merge.
    pub k_fraction: f64,
    /// Closest-point adjacency threshold in metres.
    pub t: f64,
    pub max_layers: usize,
    pub inside_frac: f64,
    pub outside_frac: f64,
    pub min_object_points: usize,
    #[serde(default)]
    pub fusion: FusionMode,
    #[serde(default)]
    pub object_rule: ObjectRule,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            k_fraction: 0.6,
            t: 0.05,
            max_layers: 10,
            inside_frac: 0.9,
            outside_frac: 0.1,
            min_object_points: 50,
            fusion: FusionMode::Weighted,
            object_rule: ObjectRule::Terminal,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<(), HierarchyError> {
        let bad = |m: &str| Err(HierarchyError::InvalidParams(m.into()));
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return bad("k_fraction must lie in (0, 1]");
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return bad("t must be a non-negative distance");
        }
        if self.max_layers == 0 {
            return bad("max_layers must be positive");
        }
        if !(self.inside_frac > 0.0 && self.inside_frac <= 1.0) {
            return bad("inside_frac must lie in (0, 1]");
        }
        if !(self.outside_frac >= 0.0 && self.outside_frac < 1.0) {
            return bad("outside_frac must lie in [0, 1)");
        }
        if !(self.outside_frac < self.inside_frac) {
            return bad("outside_frac must be below inside_frac");
        }
        if self.min_object_points == 0 {
            return bad("min_object_points must be positive");
        }
        Ok(())
    }

    pub(crate) fn feature_of(&self, features: &FeatureMatrix, ids: &[PointId]) -> ClusterFeature {
        match self.fusion {
            FusionMode::Weighted => fuse_rows(features, ids),
            FusionMode::Mean => mean_rows(features, ids),
        }
    }
}

/// All layers of one clustering run plus the per-layer merge decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub num_points: usize,
    pub layers: Vec<Vec<Cluster>>,
    /// `merge_log[t]` records the step from layer `t` to layer `t + 1`.
    pub merge_log: Vec<MergeLogEntry>,
}

impl Hierarchy {
    pub fn terminal(&self) -> &[Cluster] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn cluster(&self, id: ClusterId) -> &Cluster {
        &self.layers[id.layer][id.index]
    }
}

fn validate_boxes(boxes: &[PriorBox]) -> Result<(), HierarchyError> {
    for (index, b) in boxes.iter().enumerate() {
        if (0..3).any(|k| !(b.min[k] <= b.max[k])) {
            return Err(HierarchyError::InvalidPrior { index, min: b.min, max: b.max });
        }
    }
    Ok(())
}

/// Builds the layer-0 clusters from a super-point partition, checking that the
/// parts are non-empty, in range and pairwise disjoint.
pub fn initial_layer(parts: &[Vec<PointId>], num_points: usize) -> Result<Vec<Cluster>, HierarchyError> {
    let mut owner = vec![false; num_points];
    let mut layer = Vec::with_capacity(parts.len());
    for (index, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(HierarchyError::InvalidLayer(format!("super-point {index} is empty")));
        }
        let mut ids = part.clone();
        ids.sort_unstable();
        for &p in &ids {
            let slot = owner.get_mut(p as usize).ok_or_else(|| {
                HierarchyError::InvalidLayer(format!("point {p} out of range for {num_points} points"))
            })?;
            if *slot {
                return Err(HierarchyError::InvalidLayer(format!("point {p} appears twice")));
            }
            *slot = true;
        }
        layer.push(Cluster { id: ClusterId { layer: 0, index }, point_ids: ids, children: Vec::new() });
    }
    Ok(layer)
}

/// Runs layers until a fixpoint or `params.max_layers` merge steps.
pub fn run_hierarchy(
    layer0: &[Vec<PointId>],
    cloud: &SceneCloud,
    boxes: &[PriorBox],
    params: &MergeParams,
) -> Result<Hierarchy, HierarchyError> {
    params.validate()?;
    validate_boxes(boxes)?;
    let features = cloud.features.as_ref().ok_or(HierarchyError::MissingFeatures)?;
    let first = initial_layer(layer0, cloud.len())?;
    let mut current_features: Vec<ClusterFeature> =
        first.iter().map(|c| params.feature_of(features, &c.point_ids)).collect();
    let mut layers = vec![first];
    let mut merge_log = Vec::new();
    while merge_log.len() < params.max_layers {
        let current = layers.last().expect("at least one layer");
        let outcome = run_layer(current, &current_features, &cloud.positions, features, boxes, params);
        if outcome.log.accepted.is_empty() {
            break;
        }
        log::debug!(
            "layer {} -> {}: {} clusters -> {} ({} accepted, {} vetoed)",
            layers.len() - 1,
            layers.len(),
            current.len(),
            outcome.clusters.len(),
            outcome.log.accepted.len(),
            outcome.log.rejected.len()
        );
        current_features = outcome.features;
        layers.push(outcome.clusters);
        merge_log.push(outcome.log);
    }
    Ok(Hierarchy { num_points: cloud.len(), layers, merge_log })
}
