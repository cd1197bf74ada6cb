//! Cluster and feature algebra: cosine similarity, similarity-weighted feature
//! fusion, and exact closest-point distance between clusters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_distance, to_f64, Aabb};
use crate::scene_io::FeatureMatrix;
use crate::spatial::UniformGrid;
use crate::PointId;

/// Weight sums at or below this fall back to the plain mean.
pub const WEIGHT_EPSILON: f64 = 1e-8;

/// Cluster pairs farther apart than this are reported as infinitely far.
pub const DEFAULT_MAX_PAIR_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("every member feature is the zero vector")]
    AllZeroFeatures,
}

/// Position of a cluster in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterId {
    pub layer: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: ClusterId,
    /// Sorted, unique, non-empty.
    pub point_ids: Vec<PointId>,
    /// Indices into the previous layer; empty at layer 0.
    pub children: Vec<usize>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn bbox(&self, positions: &[[f32; 3]]) -> Aabb {
        Aabb::from_points(self.point_ids.iter().map(|&i| to_f64(positions[i as usize])))
    }
}

/// Fused cluster feature. A zero vector marks a cluster without usable
/// point features; such clusters never merge by similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFeature {
    pub vector: Vec<f32>,
}

impl ClusterFeature {
    pub fn zeros(dim: usize) -> Self {
        ClusterFeature { vector: vec![0.0; dim] }
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&x| x == 0.0)
    }
}

pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(ClusterError::ZeroVector);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

fn cosine_f64(a: &[f32], b: &[f64], b_norm: f64) -> f64 {
    let (mut ab, mut aa) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let x = x as f64;
        ab += x * y;
        aa += x * x;
    }
    ab / (aa.sqrt() * b_norm)
}

/// Outcome of a fusion, exposing the normalised weights for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub feature: ClusterFeature,
    /// One weight per member in input order; zero-vector members get 0.
    pub weights: Vec<f64>,
    /// True when the similarity weights collapsed and the plain mean was used.
    pub degenerate: bool,
}

/// Similarity-weighted fusion over `count` members addressed through `row`.
///
/// Members are weighted by `max(cos(f_j, mean), 0)`, normalised to sum to 1.
/// Zero-vector members are skipped entirely.
pub fn fuse_with<'a, F>(count: usize, dim: usize, row: F) -> Result<Fusion, ClusterError>
where
    F: Fn(usize) -> &'a [f32],
{
    let is_zero = |v: &[f32]| v.iter().all(|&x| x == 0.0);
    let mut mean = vec![0.0f64; dim];
    let mut used = 0usize;
    for j in 0..count {
        let f = row(j);
        if f.len() != dim {
            return Err(ClusterError::DimensionMismatch(dim, f.len()));
        }
        if is_zero(f) {
            continue;
        }
        used += 1;
        for (m, &x) in mean.iter_mut().zip(f) {
            *m += x as f64;
        }
    }
    if used == 0 {
        return Err(ClusterError::AllZeroFeatures);
    }
    mean.iter_mut().for_each(|m| *m /= used as f64);
    let mean_norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut weights = vec![0.0f64; count];
    let mut total = 0.0;
    if mean_norm > 0.0 {
        for (j, w) in weights.iter_mut().enumerate() {
            let f = row(j);
            if !is_zero(f) {
                *w = cosine_f64(f, &mean, mean_norm).max(0.0);
                total += *w;
            }
        }
    }

    if total <= WEIGHT_EPSILON {
        log::debug!("fusion weights sum to {total:e}; using the plain mean of {used} members");
        for (j, w) in weights.iter_mut().enumerate() {
            *w = if is_zero(row(j)) { 0.0 } else { 1.0 / used as f64 };
        }
        let vector = mean.iter().map(|&x| x as f32).collect();
        return Ok(Fusion { feature: ClusterFeature { vector }, weights, degenerate: true });
    }

    let mut acc = vec![0.0f64; dim];
    for (j, w) in weights.iter_mut().enumerate() {
        *w /= total;
        if *w > 0.0 {
            for (a, &x) in acc.iter_mut().zip(row(j)) {
                *a += *w * x as f64;
            }
        }
    }
    let vector = acc.iter().map(|&x| x as f32).collect();
    Ok(Fusion { feature: ClusterFeature { vector }, weights, degenerate: false })
}

/// Noise-robust cluster feature from member point features.
pub fn fuse_feature(point_features: &[&[f32]]) -> Result<ClusterFeature, ClusterError> {
    let dim = point_features.first().map_or(0, |f| f.len());
    fuse_with(point_features.len(), dim, |j| point_features[j]).map(|f| f.feature)
}

/// Fuses the feature rows of `ids`. A cluster whose rows are all zero gets a
/// zero feature.
pub fn fuse_rows(features: &FeatureMatrix, ids: &[PointId]) -> ClusterFeature {
    match fuse_with(ids.len(), features.dim(), |j| features.row(ids[j] as usize)) {
        Ok(f) => f.feature,
        Err(_) => ClusterFeature::zeros(features.dim()),
    }
}

/// Plain mean of the non-zero rows (the ablation baseline without weighting).
pub fn mean_rows(features: &FeatureMatrix, ids: &[PointId]) -> ClusterFeature {
    let mut acc = vec![0.0f64; features.dim()];
    let mut used = 0usize;
    for &id in ids {
        let r = features.row(id as usize);
        if r.iter().all(|&x| x == 0.0) {
            continue;
        }
        used += 1;
        for (a, &x) in acc.iter_mut().zip(r) {
            *a += x as f64;
        }
    }
    if used == 0 {
        return ClusterFeature::zeros(features.dim());
    }
    ClusterFeature { vector: acc.iter().map(|&x| (x / used as f64) as f32).collect() }
}

/// Point grid for one layer: every point is tagged with the index of the
/// cluster that owns it, and each cluster keeps its bounding box.
#[derive(Debug, Clone)]
pub struct LayerIndex {
    pub grid: UniformGrid,
    pub labels: Vec<u32>,
    pub boxes: Vec<Aabb>,
}

impl LayerIndex {
    /// `cell` is normally the adjacency threshold T.
    pub fn new(positions: &[[f32; 3]], clusters: &[Cluster], cell: f64) -> Self {
        let mut labels = vec![u32::MAX; positions.len()];
        let mut boxes = Vec::with_capacity(clusters.len());
        for (c, cluster) in clusters.iter().enumerate() {
            for &p in &cluster.point_ids {
                labels[p as usize] = c as u32;
            }
            boxes.push(cluster.bbox(positions));
        }
        let ids = clusters.iter().flat_map(|c| c.point_ids.iter().copied());
        LayerIndex { grid: UniformGrid::new(positions, ids, cell), labels, boxes }
    }
}

/// Exact minimum distance between points of `a` and `b`, or `f64::INFINITY`
/// if it exceeds `max_distance`.
///
/// Scans grid rings around each point of the smaller cluster, stopping as soon
/// as the covered radius reaches the best distance so far.
pub fn closest_pair_distance(
    a: &Cluster,
    b: &Cluster,
    positions: &[[f32; 3]],
    index: &LayerIndex,
    max_distance: f64,
) -> f64 {
    let (small, other) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (si, oi) = (small.id.index, other.id.index);
    if small.is_empty() || other.is_empty() || index.boxes[si].gap(&index.boxes[oi]) > max_distance {
        return f64::INFINITY;
    }
    let target = oi as u32;
    let h = index.grid.cell_size();
    let other_box = index.boxes[oi];
    let mut best = f64::INFINITY;
    for &p in &small.point_ids {
        let q = positions[p as usize];
        let bound = best.min(max_distance);
        let lower = other_box.distance_to_point(to_f64(q));
        if lower > bound || (best.is_finite() && lower >= best) {
            continue;
        }
        let center = index.grid.key_of(q);
        let max_ring = index.grid.max_ring(center);
        // rings whose farthest corner is nearer than `lower` cannot hold `other`
        let first = ((lower / (h * 3f64.sqrt())).floor() as i64 - 1).max(0);
        let mut r = first;
        while r <= max_ring {
            index.grid.for_each_in_ring(center, r, |ids| {
                for &id in ids {
                    if index.labels[id as usize] == target {
                        let d = point_distance(q, positions[id as usize]);
                        if d < best {
                            best = d;
                        }
                    }
                }
            });
            if r as f64 * h >= best.min(max_distance) {
                break;
            }
            r += 1;
        }
    }
    if best <= max_distance {
        best
    } else {
        f64::INFINITY
    }
}
