//! Readers and writers for every on-disk format used by the pipeline.
//!
//! | file                | layout (little-endian)                                               |
//! |---------------------|----------------------------------------------------------------------|
//! | `points.p2o`        | `"P2O1"` u32 N, u8 flags (bit0 colors, bit1 normals), N×3 f32 positions, optional N×3 f32 colors, optional N×3 f32 normals |
//! | `features.f32`      | `"P2OF"` u32 N, u32 C, N×C f32 row-major                              |
//! | `frame_<id>.cam`    | JSON `{fx, fy, cx, cy, width, height, extrinsics: [16 floats]}`       |
//! | `frame_<id>.depth`  | raw H×W f32 metres, 0 = invalid                                       |
//! | `frame_<id>.masks`  | `"P2OM"` u32 count, u32 C2, per mask: u32 rle_len, rle u32s, C2 f32   |
//! | instance manifest   | text, one `<mask file> <kind> <confidence>` line per instance         |
//!
//! PLY vertex files can be imported with [`import_ply`] and written out as `points.p2o`.

mod cloud;
mod frames;
mod instances;
mod normals;
mod ply;
mod rle;

use std::path::PathBuf;

use thiserror::Error;

pub use cloud::{
    load_scene, read_features, read_points, write_features, write_points, write_scene, FeatureMatrix, SceneCloud,
    FEATURES_FILE, FEATURES_MAGIC, POINTS_FILE, POINTS_MAGIC,
};
pub use frames::{
    load_frames, read_masks, write_frame, write_frames, Bitmap, CameraFile, FrameObservation, MaskEntry, MASKS_MAGIC,
};
pub use instances::{load_ground_truth, load_instances, write_predictions, Instance, InstanceKind, InstanceSet};
pub use normals::{estimate_normals, DEFAULT_NORMAL_NEIGHBORS};
pub use ply::import_ply;
pub use rle::{rle_decode, rle_encode};

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: String, expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid value in {what}: {reason}")]
    InvalidValue { what: String, reason: String },
    #[error("corrupt run-length mask: {0}")]
    CorruptRle(String),
    #[error("camera pose is not rigid in {path}: {reason}")]
    NonOrthonormalPose { path: PathBuf, reason: String },
    #[error("mask feature dimension {found} in {path} differs from {expected} used elsewhere")]
    InconsistentMaskFeatureDim { path: PathBuf, expected: usize, found: usize },
    #[error("point index {index} out of range for {n_points} points in {path}")]
    IndexOutOfRange { path: PathBuf, index: u64, n_points: usize },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = SceneIoError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> SceneIoError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            SceneIoError::MissingFile(path.to_path_buf())
        } else {
            SceneIoError::Io { path: path.to_path_buf(), source }
        }
    }
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a std::path::Path,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &'a std::path::Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(SceneIoError::CorruptHeader {
                path: self.path.to_path_buf(),
                reason: format!("truncated while reading {what}"),
            }),
        }
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(SceneIoError::CorruptHeader {
                path: self.path.to_path_buf(),
                reason: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes.chunks_exact(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(SceneIoError::CorruptHeader {
                path: self.path.to_path_buf(),
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    out.reserve(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub(crate) fn write_bytes(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| SceneIoError::Io { path: path.to_path_buf(), source })
}
