//! Unsupervised 3D instance segmentation by hierarchical part-to-object clustering.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`superpoint`] partitions the raw cloud into small, spatially coherent
//!    super-points (layer 0 of the hierarchy).
//! 2. [`objectness`] groups 2D masks across consecutive RGB-D frames into object
//!    tracks, projects every track onto the cloud and keeps its axis-aligned box
//!    as an objectness prior.
//! 3. [`hierarchy`] merges adjacent, similar clusters layer by layer. Merges
//!    that would join a cluster inside a prior box with one outside it are
//!    vetoed. Clusters that stop merging are collected as objects and their
//!    constituent clusters as object parts.
//! 4. [`eval`] scores class-agnostic instance masks with AP at IoU 0.25, 0.50
//!    and the mean over 0.50:0.95.
//!
//! [`synth`] generates deterministic scenes with ground truth for testing and
//! [`scene_io`] reads and writes every on-disk format.

pub mod cluster_core;
pub mod eval;
pub mod geometry;
pub mod hierarchy;
pub mod objectness;
pub mod scene_io;
pub mod spatial;
pub mod superpoint;
pub mod synth;
pub mod union_find;

pub use cluster_core::{closest_pair_distance, cosine_sim, fuse_feature, ClusterFeature};
pub use eval::{evaluate, mask_iou, ApReport};
pub use geometry::Aabb;
pub use hierarchy::{
    collect_objects, collect_parts, run_hierarchy, run_layer, Cluster, ClusterId, Hierarchy, MergeParams, PriorBox,
};
pub use objectness::{build_priors, MatchParams};
pub use scene_io::{FeatureMatrix, FrameObservation, Instance, InstanceKind, InstanceSet, MaskEntry, SceneCloud};
pub use superpoint::{build_superpoints, SuperpointParams};

/// Index of a point in a [`SceneCloud`].
pub type PointId = u32;
