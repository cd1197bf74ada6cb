//! Class-agnostic instance segmentation AP.
//!
//! Predictions are ranked by confidence (ties: more points first, then
//! manifest order) and matched greedily to the unmatched ground truth with the
//! highest IoU. AP is the area under the interpolated precision-recall curve.

use serde::{Deserialize, Serialize};

use crate::scene_io::{InstanceKind, InstanceSet};
use crate::PointId;

/// `0.25` followed by `0.50, 0.55, ..., 0.95`.
pub fn standard_thresholds() -> Vec<f64> {
    std::iter::once(0.25).chain((0..10).map(|i| (50 + 5 * i) as f64 / 100.0)).collect()
}

/// `|a ∩ b| / |a ∪ b|`, or 0 when both are empty. Duplicates are ignored.
pub fn mask_iou(a: &[PointId], b: &[PointId]) -> f64 {
    let sa = sorted_set(a);
    let sb = sorted_set(b);
    iou_sorted(&sa, &sb)
}

fn sorted_set(ids: &[PointId]) -> Vec<PointId> {
    let mut v = ids.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn iou_sorted(a: &[PointId], b: &[PointId]) -> f64 {
    let inter = intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn intersection_len(a: &[PointId], b: &[PointId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// One prediction's outcome at one threshold. Indices refer to positions in
/// the input manifests, before filtering to objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub scene: usize,
    pub pred: usize,
    pub gt: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub ap: f64,
    /// Precision and recall after each prediction in rank order.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// In rank order.
    pub matches: Vec<MatchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap25: f64,
    pub ap50: f64,
    /// Mean AP over IoU 0.50:0.95.
    pub map: f64,
    pub num_predictions: usize,
    pub num_ground_truth: usize,
    /// Set when there was no ground truth; every AP is then reported as 0.
    pub empty_ground_truth: bool,
    pub thresholds: Vec<ThresholdResult>,
}

impl ApReport {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().find(|t| (t.threshold - threshold).abs() < 1e-12).map(|t| t.ap)
    }
}

/// Area under the precision envelope over the recall steps.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut mpre: Vec<f64> = std::iter::once(0.0).chain(precision.iter().copied()).chain([0.0]).collect();
    let mrec: Vec<f64> = std::iter::once(0.0).chain(recall.iter().copied()).chain([1.0]).collect();
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len()).map(|i| (mrec[i] - mrec[i - 1]) * mpre[i]).sum()
}

struct Prepared {
    // (scene, manifest index, confidence, sorted points)
    preds: Vec<(usize, usize, f64, Vec<PointId>)>,
    // per scene: (manifest index, sorted points)
    gts: Vec<Vec<(usize, Vec<PointId>)>>,
    // per pooled prediction: IoU with every gt of its scene
    ious: Vec<Vec<f64>>,
}

fn prepare(scenes: &[(&InstanceSet, &InstanceSet)]) -> Prepared {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (s, (p, g)) in scenes.iter().enumerate() {
        for (k, inst) in p.instances.iter().enumerate() {
            if inst.kind == InstanceKind::Object {
                preds.push((s, k, inst.confidence, sorted_set(&inst.point_ids)));
            }
        }
        gts.push(
            g.instances
                .iter()
                .enumerate()
                .filter(|(_, i)| i.kind == InstanceKind::Object)
                .map(|(k, i)| (k, sorted_set(&i.point_ids)))
                .collect::<Vec<_>>(),
        );
    }
    preds.sort_by(|a, b| b.2.total_cmp(&a.2).then(b.3.len().cmp(&a.3.len())).then((a.0, a.1).cmp(&(b.0, b.1))));
    let ious = preds.iter().map(|(s, _, _, pts)| gts[*s].iter().map(|(_, g)| iou_sorted(pts, g)).collect()).collect();
    Prepared { preds, gts, ious }
}

fn at_threshold(prep: &Prepared, threshold: f64, n_gt: usize) -> ThresholdResult {
    let mut used: Vec<Vec<bool>> = prep.gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut matches = Vec::with_capacity(prep.preds.len());
    let (mut precision, mut recall) = (Vec::new(), Vec::new());
    let mut tp = 0usize;
    for (rank, ((scene, pred, _, _), ious)) in prep.preds.iter().zip(&prep.ious).enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, &iou) in ious.iter().enumerate() {
            if !used[*scene][g] && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let record = match best {
            Some((g, iou)) if iou >= threshold => {
                used[*scene][g] = true;
                tp += 1;
                MatchRecord { scene: *scene, pred: *pred, gt: Some(prep.gts[*scene][g].0), iou }
            }
            other => MatchRecord { scene: *scene, pred: *pred, gt: None, iou: other.map_or(0.0, |b| b.1) },
        };
        matches.push(record);
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
    }
    let ap = if n_gt == 0 { 0.0 } else { interpolated_ap(&precision, &recall) };
    ThresholdResult { threshold, ap, precision, recall, matches }
}

/// AP at each threshold, pooling all scenes into one ranking.
pub fn evaluate_at(scenes: &[(&InstanceSet, &InstanceSet)], thresholds: &[f64]) -> Vec<ThresholdResult> {
    let prep = prepare(scenes);
    let n_gt = prep.gts.iter().map(Vec::len).sum();
    thresholds.iter().map(|&t| at_threshold(&prep, t, n_gt)).collect()
}

/// Standard report over several scenes pooled into one curve per threshold.
pub fn evaluate_scenes(scenes: &[(&InstanceSet, &InstanceSet)]) -> ApReport {
    let prep = prepare(scenes);
    let n_gt: usize = prep.gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        log::warn!("no ground-truth objects; AP is undefined and reported as 0");
    }
    let thresholds: Vec<ThresholdResult> =
        standard_thresholds().into_iter().map(|t| at_threshold(&prep, t, n_gt)).collect();
    let strict = &thresholds[1..];
    ApReport {
        ap25: thresholds[0].ap,
        ap50: thresholds[1].ap,
        map: strict.iter().map(|t| t.ap).sum::<f64>() / strict.len() as f64,
        num_predictions: prep.preds.len(),
        num_ground_truth: n_gt,
        empty_ground_truth: n_gt == 0,
        thresholds,
    }
}

/// Standard report for one scene. Only instances of kind object are scored.
pub fn evaluate(preds: &InstanceSet, gt: &InstanceSet) -> ApReport {
    evaluate_scenes(&[(preds, gt)])
}
