use serde::{Deserialize, Serialize};

use super::{initial_layer, Hierarchy, HierarchyError, MergeLogEntry, MergeParams};
use crate::cluster_core::{Cluster, ClusterId};
use crate::PointId;

pub const HIERARCHY_SCHEMA: &str = "p2o.hierarchy";
pub const HIERARCHY_VERSION: u32 = 1;

/// On-disk form of a [`Hierarchy`].
///
/// Only layer 0 stores point ids; every later layer lists, per cluster, the
/// indices of its children in the previous layer. `merge_log[t]` describes the
/// step from layer `t` to `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyDoc {
    pub schema: String,
    pub version: u32,
    pub num_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<MergeParams>,
    pub layer0: Vec<Vec<PointId>>,
    pub layers: Vec<Vec<Vec<usize>>>,
    pub merge_log: Vec<MergeLogEntry>,
}

impl HierarchyDoc {
    pub fn from_hierarchy(h: &Hierarchy, params: Option<MergeParams>) -> Self {
        HierarchyDoc {
            schema: HIERARCHY_SCHEMA.into(),
            version: HIERARCHY_VERSION,
            num_points: h.num_points,
            params,
            layer0: h.layers.first().map(|l| l.iter().map(|c| c.point_ids.clone()).collect()).unwrap_or_default(),
            layers: h.layers.iter().skip(1).map(|l| l.iter().map(|c| c.children.clone()).collect()).collect(),
            merge_log: h.merge_log.clone(),
        }
    }

    /// Rebuilds the hierarchy, checking that every layer's children partition
    /// the previous layer.
    pub fn to_hierarchy(&self) -> Result<Hierarchy, HierarchyError> {
        let bad = |m: String| HierarchyError::Malformed(m);
        if self.schema != HIERARCHY_SCHEMA {
            return Err(bad(format!("unexpected schema {:?}", self.schema)));
        }
        if self.version != HIERARCHY_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        if self.merge_log.len() != self.layers.len() {
            return Err(bad(format!(
                "{} merge log entries for {} merge steps",
                self.merge_log.len(),
                self.layers.len()
            )));
        }
        let first = initial_layer(&self.layer0, self.num_points).map_err(|e| bad(e.to_string()))?;
        let covered: usize = first.iter().map(Cluster::len).sum();
        if covered != self.num_points {
            return Err(bad(format!("layer 0 covers {covered} of {} points", self.num_points)));
        }
        let mut layers = vec![first];
        for (t, children_lists) in self.layers.iter().enumerate() {
            let prev = &layers[t];
            let mut seen = vec![false; prev.len()];
            let mut layer = Vec::with_capacity(children_lists.len());
            for (index, children) in children_lists.iter().enumerate() {
                if children.is_empty() {
                    return Err(bad(format!("layer {} cluster {index} has no children", t + 1)));
                }
                let mut point_ids = Vec::new();
                for &ch in children {
                    match seen.get_mut(ch) {
                        Some(s) if !*s => *s = true,
                        _ => return Err(bad(format!("layer {} child {ch} missing or reused", t + 1))),
                    }
                    point_ids.extend_from_slice(&prev[ch].point_ids);
                }
                point_ids.sort_unstable();
                layer.push(Cluster { id: ClusterId { layer: t + 1, index }, point_ids, children: children.clone() });
            }
            if seen.iter().any(|s| !s) {
                return Err(bad(format!("layer {} does not cover layer {t}", t + 1)));
            }
            layers.push(layer);
        }
        Ok(Hierarchy { num_points: self.num_points, layers, merge_log: self.merge_log.clone() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("hierarchy documents always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self, HierarchyError> {
        serde_json::from_str(text).map_err(|e| HierarchyError::Malformed(e.to_string()))
    }
}
