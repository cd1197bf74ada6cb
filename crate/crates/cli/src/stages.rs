//! One function per pipeline stage, each tagging its errors with the stage name.

use std::path::Path;

use p2o_core::eval::{evaluate_scenes, ApReport};
use p2o_core::hierarchy::{
    collect_objects, collect_parts, drop_largest_planar, run_hierarchy, Hierarchy, HierarchyDoc, MergeParams, PriorBox,
};
use p2o_core::objectness::{build_priors, priors_from_json, priors_to_json, ObjectPrior};
use p2o_core::scene_io::{load_frames, load_instances, load_scene, write_predictions, InstanceSet, SceneCloud};
use p2o_core::{build_superpoints, MatchParams, PointId, SuperpointParams};

use crate::error::{bad_input, StageResult, Tag};

pub fn write_text(path: &Path, text: &str, stage: &'static str) -> StageResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{}: {e}", dir.display())).failure(stage)?;
    }
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display())).failure(stage)
}

fn read_text(path: &Path, stage: &'static str) -> StageResult<String> {
    std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display())).bad_input(stage)
}

pub fn load_cloud(scene: &Path, l2_normalize: bool) -> StageResult<SceneCloud> {
    let mut cloud = load_scene(scene).bad_input("scene")?;
    if l2_normalize {
        cloud.features = cloud.features.as_ref().map(|f| f.l2_normalized());
    }
    log::info!("{}: {} points", scene.display(), cloud.len());
    Ok(cloud)
}

pub fn superpoints(cloud: &SceneCloud, params: &SuperpointParams) -> StageResult<Vec<Vec<PointId>>> {
    let parts = build_superpoints(cloud, params).bad_input("superpoints")?;
    log::info!("{} super-points", parts.len());
    Ok(parts)
}

pub fn superpoints_json(parts: &[Vec<PointId>]) -> String {
    serde_json::to_string(parts).expect("super-points always serialise") + "\n"
}

pub fn read_superpoints(path: &Path) -> StageResult<Vec<Vec<PointId>>> {
    let text = read_text(path, "superpoints")?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display())).bad_input("superpoints")
}

pub fn priors(cloud: &SceneCloud, frames_dir: &Path, params: &MatchParams) -> StageResult<Vec<ObjectPrior>> {
    if !frames_dir.is_dir() {
        return Err(bad_input("priors", format!("frame directory {} does not exist", frames_dir.display())));
    }
    let frames = load_frames(frames_dir).bad_input("priors")?;
    log::info!("{} frames from {}", frames.len(), frames_dir.display());
    build_priors(cloud, &frames, params).bad_input("priors")
}

pub fn priors_text(priors: &[ObjectPrior]) -> String {
    priors_to_json(priors) + "\n"
}

pub fn read_priors(path: &Path) -> StageResult<Vec<ObjectPrior>> {
    priors_from_json(&read_text(path, "priors")?).bad_input("priors")
}

pub fn cluster(
    layer0: &[Vec<PointId>],
    cloud: &SceneCloud,
    boxes: &[PriorBox],
    params: &MergeParams,
) -> StageResult<Hierarchy> {
    let h = run_hierarchy(layer0, cloud, boxes, params).bad_input("cluster")?;
    log::info!("{} layers, {} terminal clusters", h.layers.len(), h.terminal().len());
    Ok(h)
}

pub fn hierarchy_text(h: &Hierarchy, params: &MergeParams) -> String {
    HierarchyDoc::from_hierarchy(h, Some(*params)).to_json() + "\n"
}

/// Reads a hierarchy along with the merge parameters stored in it, if any.
pub fn read_hierarchy(path: &Path) -> StageResult<(Hierarchy, Option<MergeParams>)> {
    let doc = HierarchyDoc::from_json(&read_text(path, "extract")?).bad_input("extract")?;
    let h = doc.to_hierarchy().bad_input("extract")?;
    Ok((h, doc.params))
}

/// Objects and their parts; `positions` is needed only when dropping planar objects.
pub fn extract(
    h: &Hierarchy,
    params: &MergeParams,
    positions: Option<&[[f32; 3]]>,
    drop_planar: usize,
) -> StageResult<(InstanceSet, InstanceSet)> {
    params.validate().bad_input("extract")?;
    let mut objects = collect_objects(h, params);
    if drop_planar > 0 {
        let positions = positions.ok_or_else(|| bad_input("extract", "dropping planar objects needs the scene"))?;
        if positions.len() != h.num_points {
            return Err(bad_input("extract", "scene and hierarchy disagree on the number of points"));
        }
        drop_largest_planar(&mut objects, positions, drop_planar);
    }
    let parts = collect_parts(h, &objects);
    log::info!("{} objects, {} parts", objects.instances.len(), parts.len());
    Ok((objects.instances, parts))
}

pub fn write_instances(path: &Path, set: &InstanceSet, stage: &'static str) -> StageResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{}: {e}", dir.display())).failure(stage)?;
    }
    write_predictions(path, set).failure(stage)
}

pub fn read_instances(path: &Path) -> StageResult<InstanceSet> {
    load_instances(path, None).bad_input("eval")
}

pub fn eval(scenes: &[(InstanceSet, InstanceSet)]) -> ApReport {
    let refs: Vec<(&InstanceSet, &InstanceSet)> = scenes.iter().map(|(p, g)| (p, g)).collect();
    let report = evaluate_scenes(&refs);
    log::info!("AP25 {:.4}  AP50 {:.4}  mAP {:.4}", report.ap25, report.ap50, report.map);
    report
}

pub fn report_text(report: &ApReport) -> String {
    serde_json::to_string_pretty(report).expect("reports always serialise") + "\n"
}
