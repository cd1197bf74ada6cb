//! Objectness priors from consecutive RGB-D frames.
//!
//! Each mask in frame `m` links to its most similar mask in frame `m + 1` when
//! that similarity exceeds `tau`. Linked masks are grouped into tracks, every
//! member mask is projected onto the cloud, and each sufficiently large track
//! contributes the axis-aligned box of its points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster_core::cosine_sim;
use crate::geometry::{to_f64, Aabb};
use crate::hierarchy::PriorBox;
use crate::scene_io::{FrameObservation, SceneCloud};
use crate::union_find::UnionFind;
use crate::PointId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectnessError {
    #[error("invalid match parameters: {0}")]
    InvalidParams(String),
    #[error("frames must be sorted by strictly increasing frame id ({0} follows {1})")]
    UnsortedFrames(u32, u32),
    #[error("malformed priors: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Minimum mask-feature similarity for a link between adjacent frames.
    pub tau: f64,
    /// Allowed gap in metres between a point's camera depth and the depth map.
    pub depth_tol: f64,
    pub min_track_frames: usize,
    pub min_track_points: usize,
    /// Require the link to be the best match in both directions.
    #[serde(default)]
    pub mutual: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams { tau: 0.3, depth_tol: 0.05, min_track_frames: 2, min_track_points: 30, mutual: false }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), ObjectnessError> {
        let bad = |m: &str| Err(ObjectnessError::InvalidParams(m.into()));
        if !(self.tau > -1.0 && self.tau < 1.0) {
            return bad("tau must lie in (-1, 1)");
        }
        if !(self.depth_tol > 0.0 && self.depth_tol.is_finite()) {
            return bad("depth_tol must be positive");
        }
        if self.min_track_frames == 0 || self.min_track_points == 0 {
            return bad("track thresholds must be positive");
        }
        Ok(())
    }
}

/// A mask identified by its frame id and its index within the frame.
pub type MaskRef = (u32, usize);

/// Masks grouped as one object across frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectTrack {
    /// Sorted by frame id, then mask index.
    pub members: Vec<MaskRef>,
    /// Sorted, deduplicated union of the members' projections.
    pub point_ids: Vec<PointId>,
}

impl ObjectTrack {
    pub fn frame_span(&self) -> [u32; 2] {
        [self.members[0].0, self.members[self.members.len() - 1].0]
    }
}

/// A prior box with the track statistics it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPrior {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Number of masks in the track.
    pub track_size: usize,
    /// First and last frame id of the track.
    pub frame_span: [u32; 2],
}

impl ObjectPrior {
    pub fn bbox(&self) -> PriorBox {
        Aabb::new(self.min, self.max)
    }
}

fn best_match(feature: &[f32], candidates: &[&[f32]]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in candidates.iter().enumerate() {
        let Ok(s) = cosine_sim(feature, c) else { continue };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best
}

/// Links each mask of `a` to its most similar mask of `b` (ties: lowest index)
/// when the similarity exceeds `tau`. Several masks of `a` may link to the same
/// mask of `b`.
pub fn match_adjacent(a: &FrameObservation, b: &FrameObservation, tau: f64) -> Vec<(usize, usize)> {
    let fb: Vec<&[f32]> = b.masks.iter().map(|m| m.feature.as_slice()).collect();
    a.masks
        .iter()
        .enumerate()
        .filter_map(|(i, m)| match best_match(&m.feature, &fb) {
            Some((j, s)) if s > tau => Some((i, j)),
            _ => None,
        })
        .collect()
}

/// As [`match_adjacent`], keeping only links that are also the best match
/// from `b` back to `a`.
pub fn match_adjacent_mutual(a: &FrameObservation, b: &FrameObservation, tau: f64) -> Vec<(usize, usize)> {
    let fa: Vec<&[f32]> = a.masks.iter().map(|m| m.feature.as_slice()).collect();
    match_adjacent(a, b, tau)
        .into_iter()
        .filter(|&(i, j)| best_match(&b.masks[j].feature, &fa).map(|(k, _)| k) == Some(i))
        .collect()
}

/// Connected components of the link graph over all masks.
///
/// `mask_counts` lists `(frame_id, number of masks)` for every frame. Tracks
/// are ordered by their smallest member and carry no points yet.
pub fn propagate_sameness(mask_counts: &[(u32, usize)], links: &[(MaskRef, MaskRef)]) -> Vec<ObjectTrack> {
    let mut order: Vec<(u32, usize)> = mask_counts.to_vec();
    order.sort_unstable();
    let mut nodes: Vec<MaskRef> = Vec::new();
    for &(f, n) in &order {
        nodes.extend((0..n).map(|m| (f, m)));
    }
    let index = |r: &MaskRef| nodes.binary_search(r).expect("link refers to a known mask");
    let mut uf = UnionFind::new(nodes.len());
    for (a, b) in links {
        uf.union(index(a), index(b));
    }
    uf.components()
        .into_iter()
        .map(|c| ObjectTrack { members: c.into_iter().map(|k| nodes[k]).collect(), point_ids: Vec::new() })
        .collect()
}

/// For every point, the linear pixel index it lands on in `frame` when it
/// passes the depth test, else `None`.
pub fn visible_pixels(cloud: &SceneCloud, frame: &FrameObservation, depth_tol: f64) -> Vec<Option<usize>> {
    cloud
        .positions
        .iter()
        .map(|&p| {
            let pc = frame.extrinsics.world_to_camera(to_f64(p));
            let (col, row) = frame.intrinsics.pixel(pc, frame.width, frame.height)?;
            let d = frame.depth_at(col, row) as f64;
            (d > 0.0 && (pc[2] - d).abs() <= depth_tol).then_some(row * frame.width + col)
        })
        .collect()
}

fn mask_points(pixels: &[Option<usize>], frame: &FrameObservation, mask_index: usize) -> Vec<PointId> {
    let bits = &frame.masks[mask_index].bitmap.bits;
    pixels.iter().enumerate().filter(|(_, px)| px.is_some_and(|k| bits[k])).map(|(p, _)| p as PointId).collect()
}

/// Points that project into the mask with positive depth, inside the image,
/// and within `depth_tol` of a valid depth reading.
pub fn project_mask_points(
    cloud: &SceneCloud,
    frame: &FrameObservation,
    mask_index: usize,
    depth_tol: f64,
) -> Vec<PointId> {
    mask_points(&visible_pixels(cloud, frame, depth_tol), frame, mask_index)
}

/// Groups masks across frames and fills each track's projected points.
/// Frames must be sorted by frame id.
pub fn build_tracks(
    cloud: &SceneCloud,
    frames: &[FrameObservation],
    params: &MatchParams,
) -> Result<Vec<ObjectTrack>, ObjectnessError> {
    params.validate()?;
    for w in frames.windows(2) {
        if w[1].frame_id <= w[0].frame_id {
            return Err(ObjectnessError::UnsortedFrames(w[1].frame_id, w[0].frame_id));
        }
    }
    let mut links = Vec::new();
    for w in frames.windows(2) {
        let pairs = if params.mutual {
            match_adjacent_mutual(&w[0], &w[1], params.tau)
        } else {
            match_adjacent(&w[0], &w[1], params.tau)
        };
        log::debug!("frames {} -> {}: {} links", w[0].frame_id, w[1].frame_id, pairs.len());
        links.extend(pairs.into_iter().map(|(i, j)| ((w[0].frame_id, i), (w[1].frame_id, j))));
    }
    let counts: Vec<(u32, usize)> = frames.iter().map(|f| (f.frame_id, f.masks.len())).collect();
    let mut tracks = propagate_sameness(&counts, &links);

    let mut owner = std::collections::HashMap::new();
    for (t, track) in tracks.iter().enumerate() {
        for &m in &track.members {
            owner.insert(m, t);
        }
    }
    for frame in frames.iter().filter(|f| !f.masks.is_empty()) {
        let pixels = visible_pixels(cloud, frame, params.depth_tol);
        for m in 0..frame.masks.len() {
            let t = owner[&(frame.frame_id, m)];
            tracks[t].point_ids.extend(mask_points(&pixels, frame, m));
        }
    }
    for track in &mut tracks {
        track.point_ids.sort_unstable();
        track.point_ids.dedup();
    }
    Ok(tracks)
}

/// Axis-aligned boxes of every track seen in at least `min_track_frames`
/// masks and covering at least `min_track_points` points.
pub fn build_priors(
    cloud: &SceneCloud,
    frames: &[FrameObservation],
    params: &MatchParams,
) -> Result<Vec<ObjectPrior>, ObjectnessError> {
    let tracks = build_tracks(cloud, frames, params)?;
    let total = tracks.len();
    let priors: Vec<ObjectPrior> = tracks
        .iter()
        .filter(|t| t.members.len() >= params.min_track_frames && t.point_ids.len() >= params.min_track_points)
        .map(|t| {
            let b = Aabb::from_points(t.point_ids.iter().map(|&p| to_f64(cloud.positions[p as usize])));
            ObjectPrior { min: b.min, max: b.max, track_size: t.members.len(), frame_span: t.frame_span() }
        })
        .collect();
    log::info!("{} tracks, {} kept as priors", total, priors.len());
    Ok(priors)
}

pub fn priors_to_json(priors: &[ObjectPrior]) -> String {
    serde_json::to_string_pretty(priors).expect("priors always serialise")
}

/// Parses a priors document, rejecting boxes with `min > max` or non-finite corners.
pub fn priors_from_json(text: &str) -> Result<Vec<ObjectPrior>, ObjectnessError> {
    let priors: Vec<ObjectPrior> = serde_json::from_str(text).map_err(|e| ObjectnessError::Malformed(e.to_string()))?;
    for (k, p) in priors.iter().enumerate() {
        let finite = p.min.iter().chain(&p.max).all(|v| v.is_finite());
        if !finite || (0..3).any(|a| p.min[a] > p.max[a]) {
            return Err(ObjectnessError::Malformed(format!("box {k} has min {:?} above max {:?}", p.min, p.max)));
        }
    }
    Ok(priors)
}
