use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{io_err, write_bytes, Result, SceneIoError};
use crate::PointId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Object,
    Part,
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstanceKind::Object => "object",
            InstanceKind::Part => "part",
        })
    }
}

impl FromStr for InstanceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "object" => Ok(InstanceKind::Object),
            "part" => Ok(InstanceKind::Part),
            other => Err(format!("unknown instance kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Sorted, strictly ascending.
    pub point_ids: Vec<PointId>,
    pub confidence: f64,
    pub kind: InstanceKind,
}

impl Instance {
    pub fn new(point_ids: Vec<PointId>, confidence: f64, kind: InstanceKind) -> Self {
        Instance { point_ids, confidence, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceSet {
    pub instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn new(instances: Vec<Instance>) -> Self {
        InstanceSet { instances }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn of_kind(&self, kind: InstanceKind) -> InstanceSet {
        InstanceSet { instances: self.instances.iter().filter(|i| i.kind == kind).cloned().collect() }
    }

    pub fn extend(&mut self, other: InstanceSet) {
        self.instances.extend(other.instances);
    }

    /// Checks sortedness, confidence range and, when `n_points` is given, index bounds.
    pub fn validate(&self, n_points: Option<usize>, path: &Path) -> Result<()> {
        for (k, inst) in self.instances.iter().enumerate() {
            if !(0.0..=1.0).contains(&inst.confidence) {
                return Err(SceneIoError::InvalidValue {
                    what: format!("confidence of instance {k}"),
                    reason: format!("{} is outside [0, 1]", inst.confidence),
                });
            }
            if inst.point_ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SceneIoError::InvalidValue {
                    what: format!("point ids of instance {k}"),
                    reason: "not strictly ascending".into(),
                });
            }
            if let (Some(n), Some(&last)) = (n_points, inst.point_ids.last()) {
                if last as usize >= n {
                    return Err(SceneIoError::IndexOutOfRange {
                        path: path.to_path_buf(),
                        index: last as u64,
                        n_points: n,
                    });
                }
            }
        }
        Ok(())
    }
}

fn mask_dir_name(manifest: &Path) -> String {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("instances");
    format!("{stem}_masks")
}

/// Writes a manifest plus one point-index file per instance in `<stem>_masks/`.
pub fn write_predictions(path: &Path, preds: &InstanceSet) -> Result<()> {
    preds.validate(None, path)?;
    let parent = path.parent().unwrap_or(Path::new("."));
    let dir_name = mask_dir_name(path);
    let mask_dir = parent.join(&dir_name);
    std::fs::create_dir_all(&mask_dir).map_err(io_err(&mask_dir))?;

    let mut manifest = String::new();
    for (k, inst) in preds.instances.iter().enumerate() {
        let file = format!("{k:05}.txt");
        let mut body = String::with_capacity(inst.point_ids.len() * 7);
        for id in &inst.point_ids {
            body.push_str(&id.to_string());
            body.push('\n');
        }
        write_bytes(&mask_dir.join(&file), body.as_bytes())?;
        manifest.push_str(&format!("{dir_name}/{file} {} {}\n", inst.kind, inst.confidence));
    }
    remove_stale_masks(&mask_dir, preds.len())?;
    write_bytes(path, manifest.as_bytes())
}

// Drops numbered mask files left behind by an earlier, larger write.
fn remove_stale_masks(mask_dir: &Path, keep: usize) -> Result<()> {
    let entries = std::fs::read_dir(mask_dir).map_err(io_err(mask_dir))?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let index = name.strip_suffix(".txt").filter(|s| s.len() == 5).and_then(|s| s.parse::<usize>().ok());
        if matches!(index, Some(i) if i >= keep) {
            let p = entry.path();
            std::fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

fn bad_line(path: &Path, line: usize, reason: impl Into<String>) -> SceneIoError {
    SceneIoError::CorruptHeader { path: path.to_path_buf(), reason: format!("line {}: {}", line + 1, reason.into()) }
}

/// Reads a manifest written by [`write_predictions`] (or hand-written in the
/// same layout). Mask paths are resolved relative to the manifest.
pub fn load_instances(path: &Path, n_points: Option<usize>) -> Result<InstanceSet> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let parent = path.parent().unwrap_or(Path::new("."));
    let mut instances = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [file, kind, conf] = fields[..] else {
            return Err(bad_line(path, ln, "expected `<mask file> <kind> <confidence>`"));
        };
        let kind: InstanceKind = kind.parse().map_err(|e: String| bad_line(path, ln, e))?;
        let confidence: f64 = conf.parse().map_err(|_| bad_line(path, ln, format!("bad confidence {conf:?}")))?;
        let mask_path: PathBuf = parent.join(file);
        let body = std::fs::read_to_string(&mask_path).map_err(io_err(&mask_path))?;
        let mut point_ids = Vec::new();
        for (k, tok) in body.split_whitespace().enumerate() {
            let v: u64 = tok.parse().map_err(|_| SceneIoError::CorruptHeader {
                path: mask_path.clone(),
                reason: format!("entry {k} is not a point index: {tok:?}"),
            })?;
            let limit = n_points.map_or(u32::MAX as u64, |n| n as u64);
            if v >= limit {
                return Err(SceneIoError::IndexOutOfRange {
                    path: mask_path.clone(),
                    index: v,
                    n_points: n_points.unwrap_or(u32::MAX as usize),
                });
            }
            point_ids.push(v as PointId);
        }
        instances.push(Instance { point_ids, confidence, kind });
    }
    let set = InstanceSet { instances };
    set.validate(n_points, path)?;
    Ok(set)
}

/// Ground truth uses the prediction manifest layout.
pub fn load_ground_truth(path: &Path, n_points: Option<usize>) -> Result<InstanceSet> {
    load_instances(path, n_points)
}
