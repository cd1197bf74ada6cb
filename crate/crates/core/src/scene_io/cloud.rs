use std::path::Path;

use super::{io_err, put_f32s, put_u32, write_bytes, Reader, Result, SceneIoError};
use crate::scene_io::normals::{estimate_normals, DEFAULT_NORMAL_NEIGHBORS};

pub const POINTS_FILE: &str = "points.p2o";
pub const FEATURES_FILE: &str = "features.f32";
pub const POINTS_MAGIC: &[u8; 4] = b"P2O1";
pub const FEATURES_MAGIC: &[u8; 4] = b"P2OF";

const FLAG_COLORS: u8 = 1;
const FLAG_NORMALS: u8 = 2;
const NORMAL_TOLERANCE: f64 = 1e-4;

/// Dense row-major `rows x dim` matrix of per-point features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(SceneIoError::DimensionMismatch {
                what: "feature matrix payload".into(),
                expected: rows * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(SceneIoError::NonFinite("feature matrix".into()));
        }
        Ok(FeatureMatrix { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(SceneIoError::DimensionMismatch {
                    what: "feature row".into(),
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copy with every non-zero row scaled to unit length.
    pub fn l2_normalized(&self) -> FeatureMatrix {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.dim.max(1)) {
            let n = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
            }
        }
        FeatureMatrix { rows: self.rows, dim: self.dim, data }
    }
}

/// Surface points of one scene with optional per-point attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Option<Vec<[f32; 3]>>,
    pub normals: Option<Vec<[f32; 3]>>,
    pub features: Option<FeatureMatrix>,
}

impl SceneCloud {
    /// Validates every field against the cloud invariants.
    pub fn new(
        positions: Vec<[f32; 3]>,
        colors: Option<Vec<[f32; 3]>>,
        normals: Option<Vec<[f32; 3]>>,
        features: Option<FeatureMatrix>,
    ) -> Result<Self> {
        let cloud = SceneCloud { positions, colors, normals, features };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(SceneIoError::InvalidValue { what: "positions".into(), reason: "cloud has no points".into() });
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(SceneIoError::NonFinite("positions".into()));
        }
        if let Some(colors) = &self.colors {
            check_rows("colors", n, colors.len())?;
            if colors.iter().flatten().any(|x| !x.is_finite()) {
                return Err(SceneIoError::NonFinite("colors".into()));
            }
            if colors.iter().flatten().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(SceneIoError::InvalidValue {
                    what: "colors".into(),
                    reason: "channel outside [0, 1]".into(),
                });
            }
        }
        if let Some(normals) = &self.normals {
            check_rows("normals", n, normals.len())?;
            for (i, nrm) in normals.iter().enumerate() {
                if nrm.iter().any(|x| !x.is_finite()) {
                    return Err(SceneIoError::NonFinite(format!("normal {i}")));
                }
                let len = nrm.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
                if (len - 1.0).abs() > NORMAL_TOLERANCE {
                    return Err(SceneIoError::InvalidValue {
                        what: format!("normal {i}"),
                        reason: format!("length {len} is not unit"),
                    });
                }
            }
        }
        if let Some(f) = &self.features {
            check_rows("feature rows", n, f.rows())?;
        }
        Ok(())
    }

    /// Colour of point `i`, black when the cloud carries no colours.
    #[inline]
    pub fn color(&self, i: usize) -> [f32; 3] {
        self.colors.as_ref().map_or([0.0; 3], |c| c[i])
    }

    /// Fills in normals from the point neighbourhoods if they are missing.
    pub fn ensure_normals(&mut self) {
        if self.normals.is_none() {
            let k = DEFAULT_NORMAL_NEIGHBORS.min(self.len());
            self.normals = Some(estimate_normals(&self.positions, k));
        }
    }
}

fn check_rows(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(SceneIoError::DimensionMismatch { what: what.into(), expected, found });
    }
    Ok(())
}

fn flatten3(v: &[[f32; 3]]) -> Vec<f32> {
    v.iter().flatten().copied().collect()
}

fn unflatten3(v: Vec<f32>) -> Vec<[f32; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn write_points(path: &Path, cloud: &SceneCloud) -> Result<()> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(9 + n * 36);
    out.extend_from_slice(POINTS_MAGIC);
    put_u32(&mut out, n as u32);
    let flags =
        if cloud.colors.is_some() { FLAG_COLORS } else { 0 } | if cloud.normals.is_some() { FLAG_NORMALS } else { 0 };
    out.push(flags);
    put_f32s(&mut out, &flatten3(&cloud.positions));
    if let Some(c) = &cloud.colors {
        put_f32s(&mut out, &flatten3(c));
    }
    if let Some(nrm) = &cloud.normals {
        put_f32s(&mut out, &flatten3(nrm));
    }
    write_bytes(path, &out)
}

/// Reads `points.p2o` without touching features or estimating normals.
pub fn read_points(path: &Path) -> Result<SceneCloud> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(POINTS_MAGIC)?;
    let n = r.u32("point count")? as usize;
    let flags = r.u8("flags")?;
    if flags & !(FLAG_COLORS | FLAG_NORMALS) != 0 {
        return Err(SceneIoError::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("unknown flag bits {flags:#04x}"),
        });
    }
    let positions = unflatten3(r.f32s(n * 3, "positions")?);
    let colors = if flags & FLAG_COLORS != 0 { Some(unflatten3(r.f32s(n * 3, "colors")?)) } else { None };
    let normals = if flags & FLAG_NORMALS != 0 { Some(unflatten3(r.f32s(n * 3, "normals")?)) } else { None };
    r.finish()?;
    SceneCloud::new(positions, colors, normals, None)
}

pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(12 + features.as_slice().len() * 4);
    out.extend_from_slice(FEATURES_MAGIC);
    put_u32(&mut out, features.rows() as u32);
    put_u32(&mut out, features.dim() as u32);
    put_f32s(&mut out, features.as_slice());
    write_bytes(path, &out)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(FEATURES_MAGIC)?;
    let rows = r.u32("row count")? as usize;
    let dim = r.u32("feature dimension")? as usize;
    let data = r.f32s(rows * dim, "feature payload")?;
    r.finish()?;
    FeatureMatrix::new(rows, dim, data)
}

/// Writes `points.p2o` and, when present, `features.f32` into `dir`.
pub fn write_scene(dir: &Path, cloud: &SceneCloud) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_points(&dir.join(POINTS_FILE), cloud)?;
    if let Some(f) = &cloud.features {
        write_features(&dir.join(FEATURES_FILE), f)?;
    }
    Ok(())
}

/// Loads and validates a scene directory. Normals are estimated when the
/// point file does not carry them.
pub fn load_scene(dir: &Path) -> Result<SceneCloud> {
    let points = dir.join(POINTS_FILE);
    if !points.is_file() {
        return Err(SceneIoError::MissingFile(points));
    }
    let mut cloud = read_points(&points)?;
    let feat_path = dir.join(FEATURES_FILE);
    if feat_path.is_file() {
        let f = read_features(&feat_path)?;
        check_rows("feature rows", cloud.len(), f.rows())?;
        cloud.features = Some(f);
    }
    cloud.ensure_normals();
    cloud.validate()?;
    Ok(cloud)
}
