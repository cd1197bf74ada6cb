use std::path::{Path, PathBuf};

use p2o_core::{MatchParams, MergeParams, SuperpointParams};
use serde::{Deserialize, Serialize};

use crate::error::{StageResult, Tag};

/// Everything `p2o run` needs. Every field is optional in the JSON file;
/// command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scene directories, each holding `points.p2o` and `features.f32`.
    pub scenes: Vec<PathBuf>,
    /// Frame directory for single-scene runs; otherwise `<scene>/frames` is used when present.
    pub frames: Option<PathBuf>,
    /// Ground-truth manifest for single-scene runs; otherwise `<scene>/gt.txt` is used when present.
    pub gt: Option<PathBuf>,
    /// Output directory. Not echoed into the effective config, so that runs
    /// into different directories produce identical artifacts.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub superpoint: SuperpointParams,
    pub merge: MergeParams,
    pub matching: MatchParams,
    pub use_priors: bool,
    pub require_priors: bool,
    pub l2_normalize_features: bool,
    pub drop_largest_planar: usize,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenes: Vec::new(),
            frames: None,
            gt: None,
            out: None,
            superpoint: SuperpointParams::default(),
            merge: MergeParams::default(),
            matching: MatchParams::default(),
            use_priors: true,
            require_priors: false,
            l2_normalize_features: false,
            drop_largest_planar: 0,
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> StageResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))
            .bad_input("config")?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display())).bad_input("config")
    }

    pub fn validate(&self) -> StageResult<()> {
        self.superpoint.validate().bad_input("config")?;
        self.merge.validate().bad_input("config")?;
        self.matching.validate().bad_input("config")?;
        if self.jobs == 0 {
            return Err(crate::error::bad_input("config", "jobs must be positive"));
        }
        if self.require_priors && !self.use_priors {
            return Err(crate::error::bad_input("config", "require_priors conflicts with disabled priors"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serialises") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_materialises_defaults() {
        let c: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        let echoed: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(echoed["merge"]["t"], 0.05);
        assert_eq!(echoed["merge"]["k_fraction"], 0.6);
        assert_eq!(echoed["matching"]["tau"], 0.3);
        assert_eq!(echoed["superpoint"]["voxel_size"], 0.02);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"merge": {"k_fraction": 0.8}}"#).unwrap();
        assert_eq!(c.merge.k_fraction, 0.8);
        assert_eq!(c.merge.t, 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"merge": {"K": 0.8}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sceen": []}"#).is_err());
    }
}
