use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rle::{rle_decode, rle_encode};
use super::{io_err, put_f32s, put_u32, write_bytes, Reader, Result, SceneIoError};
use crate::geometry::{Intrinsics, Pose};

pub const MASKS_MAGIC: &[u8; 4] = b"P2OM";

const POSE_TOLERANCE: f64 = 1e-4;

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Self {
        Bitmap { width, height, bits: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// A 2D object mask with its pooled image feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub bitmap: Bitmap,
    pub feature: Vec<f32>,
}

/// JSON layout of `frame_<id>.cam`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world, row-major.
    pub extrinsics: [f64; 16],
}

/// One RGB-D frame with its 2D masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_id: u32,
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub extrinsics: Pose,
    /// Row-major metres; 0 marks an invalid pixel.
    pub depth: Vec<f32>,
    pub masks: Vec<MaskEntry>,
}

impl FrameObservation {
    #[inline]
    pub fn depth_at(&self, col: usize, row: usize) -> f32 {
        self.depth[row * self.width + col]
    }

    pub fn camera_file(&self) -> CameraFile {
        CameraFile {
            fx: self.intrinsics.fx,
            fy: self.intrinsics.fy,
            cx: self.intrinsics.cx,
            cy: self.intrinsics.cy,
            width: self.width,
            height: self.height,
            extrinsics: self.extrinsics.to_row_major(),
        }
    }

    /// Checks the frame invariants; `path` only labels errors.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let k = &self.intrinsics;
        if [k.fx, k.fy, k.cx, k.cy].iter().any(|x| !x.is_finite()) || k.fx <= 0.0 || k.fy <= 0.0 {
            return Err(SceneIoError::InvalidValue {
                what: format!("intrinsics of frame {}", self.frame_id),
                reason: "focal lengths must be positive and finite".into(),
            });
        }
        let m = &self.extrinsics.matrix;
        if m.iter().flatten().any(|x| !x.is_finite()) {
            return Err(SceneIoError::NonFinite(format!("extrinsics of frame {}", self.frame_id)));
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(SceneIoError::NonOrthonormalPose {
                path: path.to_path_buf(),
                reason: format!("bottom row is {:?}", m[3]),
            });
        }
        let err = self.extrinsics.orthonormality_error();
        if err > POSE_TOLERANCE {
            return Err(SceneIoError::NonOrthonormalPose {
                path: path.to_path_buf(),
                reason: format!("rotation deviates from orthonormal by {err:.3e}"),
            });
        }
        let pixels = self.width * self.height;
        if self.depth.len() != pixels {
            return Err(SceneIoError::DimensionMismatch {
                what: format!("depth map of frame {}", self.frame_id),
                expected: pixels,
                found: self.depth.len(),
            });
        }
        if self.depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(SceneIoError::InvalidValue {
                what: format!("depth map of frame {}", self.frame_id),
                reason: "depth must be finite and non-negative".into(),
            });
        }
        let dim = self.masks.first().map(|m| m.feature.len());
        for (i, mask) in self.masks.iter().enumerate() {
            let b = &mask.bitmap;
            if b.width != self.width || b.height != self.height || b.bits.len() != pixels {
                return Err(SceneIoError::DimensionMismatch {
                    what: format!("mask {i} of frame {}", self.frame_id),
                    expected: pixels,
                    found: b.bits.len(),
                });
            }
            if b.count() == 0 {
                return Err(SceneIoError::InvalidValue {
                    what: format!("mask {i} of frame {}", self.frame_id),
                    reason: "mask has no set pixels".into(),
                });
            }
            if Some(mask.feature.len()) != dim {
                return Err(SceneIoError::InconsistentMaskFeatureDim {
                    path: path.to_path_buf(),
                    expected: dim.unwrap_or(0),
                    found: mask.feature.len(),
                });
            }
            if mask.feature.iter().any(|x| !x.is_finite()) {
                return Err(SceneIoError::NonFinite(format!("feature of mask {i}")));
            }
            if mask.feature.iter().all(|&x| x == 0.0) {
                return Err(SceneIoError::InvalidValue {
                    what: format!("feature of mask {i} in frame {}", self.frame_id),
                    reason: "feature is the zero vector".into(),
                });
            }
        }
        Ok(())
    }
}

fn frame_paths(dir: &Path, id: u32) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(format!("frame_{id}.cam")), dir.join(format!("frame_{id}.depth")), dir.join(format!("frame_{id}.masks")))
}

/// Parses a mask container for a `width x height` image. Returns the masks and
/// the declared feature dimension.
pub fn read_masks(path: &Path, width: usize, height: usize) -> Result<(Vec<MaskEntry>, usize)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(MASKS_MAGIC)?;
    let count = r.u32("mask count")? as usize;
    let dim = r.u32("mask feature dimension")? as usize;
    let mut masks = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let rle_len = r.u32("rle length")? as usize;
        let runs = r.u32s(rle_len, "rle runs")?;
        let bits = rle_decode(&runs, width * height).map_err(|e| match e {
            SceneIoError::CorruptRle(msg) => SceneIoError::CorruptRle(format!("{} mask {i}: {msg}", path.display())),
            other => other,
        })?;
        let feature = r.f32s(dim, "mask feature")?;
        masks.push(MaskEntry { bitmap: Bitmap { width, height, bits }, feature });
    }
    r.finish()?;
    Ok((masks, dim))
}

fn write_masks(path: &Path, masks: &[MaskEntry], dim: usize) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MASKS_MAGIC);
    put_u32(&mut out, masks.len() as u32);
    put_u32(&mut out, dim as u32);
    for m in masks {
        let runs = rle_encode(&m.bitmap.bits);
        put_u32(&mut out, runs.len() as u32);
        for r in runs {
            put_u32(&mut out, r);
        }
        put_f32s(&mut out, &m.feature);
    }
    write_bytes(path, &out)
}

fn load_frame(dir: &Path, id: u32) -> Result<(FrameObservation, usize)> {
    let (cam_path, depth_path, masks_path) = frame_paths(dir, id);
    let text = std::fs::read_to_string(&cam_path).map_err(io_err(&cam_path))?;
    let cam: CameraFile =
        serde_json::from_str(&text).map_err(|source| SceneIoError::Json { path: cam_path.clone(), source })?;
    let depth_bytes = std::fs::read(&depth_path).map_err(io_err(&depth_path))?;
    let pixels = cam.width * cam.height;
    if depth_bytes.len() != pixels * 4 {
        return Err(SceneIoError::DimensionMismatch {
            what: depth_path.display().to_string(),
            expected: pixels * 4,
            found: depth_bytes.len(),
        });
    }
    let depth = Reader::new(&depth_bytes, &depth_path).f32s(pixels, "depth")?;
    let (masks, dim) = read_masks(&masks_path, cam.width, cam.height)?;
    let frame = FrameObservation {
        frame_id: id,
        intrinsics: Intrinsics { fx: cam.fx, fy: cam.fy, cx: cam.cx, cy: cam.cy },
        width: cam.width,
        height: cam.height,
        extrinsics: Pose::from_row_major(&cam.extrinsics),
        depth,
        masks,
    };
    frame.validate(&cam_path)?;
    Ok((frame, dim))
}

/// Loads every `frame_<id>.{cam,depth,masks}` triple in `dir`, sorted by id.
pub fn load_frames(dir: &Path) -> Result<Vec<FrameObservation>> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) =
            name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".cam")).and_then(|s| s.parse::<u32>().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    ids.dedup();

    let mut frames = Vec::with_capacity(ids.len());
    let mut scene_dim: Option<usize> = None;
    for id in ids {
        let (frame, dim) = load_frame(dir, id)?;
        if !frame.masks.is_empty() {
            match scene_dim {
                None => scene_dim = Some(dim),
                Some(expected) if expected != dim => {
                    return Err(SceneIoError::InconsistentMaskFeatureDim {
                        path: frame_paths(dir, id).2,
                        expected,
                        found: dim,
                    })
                }
                _ => {}
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_frame(dir: &Path, frame: &FrameObservation) -> Result<()> {
    let (cam_path, depth_path, masks_path) = frame_paths(dir, frame.frame_id);
    let json = serde_json::to_string_pretty(&frame.camera_file()).expect("camera serialization cannot fail");
    write_bytes(&cam_path, json.as_bytes())?;
    let mut depth = Vec::with_capacity(frame.depth.len() * 4);
    put_f32s(&mut depth, &frame.depth);
    write_bytes(&depth_path, &depth)?;
    let dim = frame.masks.first().map_or(0, |m| m.feature.len());
    write_masks(&masks_path, &frame.masks, dim)
}

pub fn write_frames(dir: &Path, frames: &[FrameObservation]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    frames.iter().try_for_each(|f| write_frame(dir, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: u32, masks: Vec<MaskEntry>) -> FrameObservation {
        FrameObservation {
            frame_id: id,
            intrinsics: Intrinsics { fx: 10.0, fy: 10.0, cx: 2.0, cy: 1.5 },
            width: 4,
            height: 3,
            extrinsics: Pose::identity(),
            depth: vec![1.0; 12],
            masks,
        }
    }

    fn mask(bits: &[u8], feature: Vec<f32>) -> MaskEntry {
        MaskEntry { bitmap: Bitmap { width: 4, height: 3, bits: bits.iter().map(|&b| b == 1).collect() }, feature }
    }

    #[test]
    fn frames_without_masks() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[frame(3, vec![]), frame(1, vec![])]).unwrap();
        let frames = load_frames(dir.path()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].frame_id, 1);
        assert_eq!(frames[1].frame_id, 3);
        assert!(frames.iter().all(|f| f.masks.is_empty()));
    }

    #[test]
    fn round_trip_with_masks() {
        let dir = tempfile::tempdir().unwrap();
        let m = mask(&[0, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1], vec![0.5, -1.0]);
        let f = frame(0, vec![m]);
        write_frames(dir.path(), std::slice::from_ref(&f)).unwrap();
        assert_eq!(load_frames(dir.path()).unwrap(), vec![f]);
    }

    #[test]
    fn wrong_rle_length_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[frame(0, vec![])]).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MASKS_MAGIC);
        put_u32(&mut bytes, 1);
        put_u32(&mut bytes, 1);
        put_u32(&mut bytes, 2);
        put_u32(&mut bytes, 5);
        put_u32(&mut bytes, 5);
        put_f32s(&mut bytes, &[1.0]);
        std::fs::write(dir.path().join("frame_0.masks"), bytes).unwrap();
        assert!(matches!(load_frames(dir.path()), Err(SceneIoError::CorruptRle(_))));
    }

    #[test]
    fn skewed_pose_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = frame(0, vec![]);
        f.extrinsics.matrix[0][0] = 1.1;
        write_frames(dir.path(), &[f]).unwrap();
        assert!(matches!(load_frames(dir.path()), Err(SceneIoError::NonOrthonormalPose { .. })));

        let mut f = frame(0, vec![]);
        f.extrinsics.matrix[3][0] = 0.5;
        write_frames(dir.path(), &[f]).unwrap();
        assert!(matches!(load_frames(dir.path()), Err(SceneIoError::NonOrthonormalPose { .. })));
    }

    #[test]
    fn mask_feature_dims_must_agree_across_frames() {
        let dir = tempfile::tempdir().unwrap();
        let a = frame(0, vec![mask(&[1; 12], vec![1.0, 0.0])]);
        let b = frame(1, vec![mask(&[1; 12], vec![1.0, 0.0, 0.0])]);
        write_frames(dir.path(), &[a, b]).unwrap();
        assert!(matches!(
            load_frames(dir.path()),
            Err(SceneIoError::InconsistentMaskFeatureDim { expected: 2, found: 3, .. })
        ));
    }

    #[test]
    fn empty_or_zero_feature_masks_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[frame(0, vec![mask(&[0; 12], vec![1.0])])]).unwrap();
        assert!(load_frames(dir.path()).is_err());
        write_frames(dir.path(), &[frame(0, vec![mask(&[1; 12], vec![0.0])])]).unwrap();
        assert!(load_frames(dir.path()).is_err());
    }

    #[test]
    fn missing_depth_file() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[frame(0, vec![])]).unwrap();
        std::fs::remove_file(dir.path().join("frame_0.depth")).unwrap();
        assert!(matches!(load_frames(dir.path()), Err(SceneIoError::MissingFile(_))));
    }
}
