//! The end-to-end `run` command.

use std::path::{Path, PathBuf};

use p2o_core::scene_io::InstanceSet;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{bad_input, StageResult, Tag};
use crate::stages;

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

struct ScenePlan {
    scene: PathBuf,
    frames: Option<PathBuf>,
    gt: Option<PathBuf>,
    out: PathBuf,
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

fn plan(cfg: &PipelineConfig, out: &Path) -> StageResult<Vec<ScenePlan>> {
    if cfg.scenes.is_empty() {
        return Err(bad_input("config", "no scene given"));
    }
    let single = cfg.scenes.len() == 1;
    if !single && (cfg.frames.is_some() || cfg.gt.is_some()) {
        return Err(bad_input("config", "explicit frames or gt paths need a single scene"));
    }
    let mut names = std::collections::BTreeSet::new();
    cfg.scenes
        .iter()
        .map(|scene| {
            let out = if single {
                out.to_path_buf()
            } else {
                let name = scene.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                if name.is_empty() || !names.insert(name.clone()) {
                    return Err(bad_input("config", format!("scene {} has no unique directory name", scene.display())));
                }
                out.join(name)
            };
            Ok(ScenePlan {
                scene: scene.clone(),
                frames: cfg.frames.clone().or_else(|| existing(scene.join("frames"))),
                gt: cfg.gt.clone().or_else(|| existing(scene.join("gt.txt"))),
                out,
            })
        })
        .collect()
}

/// Runs every stage for one scene and writes its artifacts. Returns the
/// predictions paired with ground truth when the scene has any.
fn run_scene(cfg: &PipelineConfig, p: &ScenePlan) -> StageResult<Option<(InstanceSet, InstanceSet)>> {
    let cloud = stages::load_cloud(&p.scene, cfg.l2_normalize_features)?;
    if cloud.features.is_none() {
        return Err(bad_input("cluster", format!("{} has no features.f32", p.scene.display())));
    }
    let out = &p.out;
    let parts = stages::superpoints(&cloud, &cfg.superpoint)?;
    stages::write_text(&out.join("superpoints.json"), &stages::superpoints_json(&parts), "superpoints")?;

    let priors = match (&p.frames, cfg.use_priors) {
        (_, false) => Vec::new(),
        (Some(dir), true) => stages::priors(&cloud, dir, &cfg.matching)?,
        (None, true) if cfg.require_priors => {
            return Err(bad_input("priors", format!("no frames found for {}", p.scene.display())));
        }
        (None, true) => {
            log::warn!("{}: no frames, clustering without priors", p.scene.display());
            Vec::new()
        }
    };
    stages::write_text(&out.join("priors.json"), &stages::priors_text(&priors), "priors")?;

    let boxes: Vec<_> = priors.iter().map(|b| b.bbox()).collect();
    let h = stages::cluster(&parts, &cloud, &boxes, &cfg.merge)?;
    stages::write_text(&out.join("hierarchy.json"), &stages::hierarchy_text(&h, &cfg.merge), "cluster")?;

    let (objects, object_parts) = stages::extract(&h, &cfg.merge, Some(&cloud.positions), cfg.drop_largest_planar)?;
    stages::write_instances(&out.join("objects.txt"), &objects, "extract")?;
    stages::write_instances(&out.join("parts.txt"), &object_parts, "extract")?;

    let Some(gt_path) = &p.gt else { return Ok(None) };
    let gt = p2o_core::scene_io::load_ground_truth(gt_path, Some(cloud.len())).bad_input("eval")?;
    let scored = vec![(objects, gt)];
    let report = stages::eval(&scored);
    stages::write_text(&out.join("report.json"), &stages::report_text(&report), "eval")?;
    Ok(scored.into_iter().next())
}

pub fn run(cfg: &PipelineConfig) -> StageResult<()> {
    cfg.validate()?;
    let out = cfg.out.clone().ok_or_else(|| bad_input("config", "no output directory given"))?;
    let plans = plan(cfg, &out)?;
    stages::write_text(&out.join(EFFECTIVE_CONFIG), &cfg.to_json(), "config")?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().failure("run")?;
    let results: Vec<StageResult<Option<(InstanceSet, InstanceSet)>>> =
        pool.install(|| plans.par_iter().map(|p| run_scene(cfg, p)).collect());
    let mut scored = Vec::new();
    for r in results {
        if let Some(pair) = r? {
            scored.push(pair);
        }
    }
    if plans.len() > 1 && !scored.is_empty() {
        let report = stages::eval(&scored);
        stages::write_text(&out.join("report.json"), &stages::report_text(&report), "eval")?;
    }
    Ok(())
}
