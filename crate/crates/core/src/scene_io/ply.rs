//! PLY vertex import, for bringing existing scans into the native format.

use std::path::Path;

use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};

use super::{io_err, Result, SceneCloud, SceneIoError};

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

/// Reads three named properties of a vertex; `None` when any is absent.
fn triple(v: &DefaultElement, names: [&str; 3], path: &Path) -> Result<Option<[f64; 3]>> {
    let mut out = [0.0; 3];
    for (slot, name) in out.iter_mut().zip(names) {
        let Some(p) = v.get(name) else { return Ok(None) };
        *slot = scalar(p).ok_or_else(|| SceneIoError::InvalidValue {
            what: format!("vertex property {name} in {}", path.display()),
            reason: "list properties are not coordinates".into(),
        })?;
    }
    Ok(Some(out))
}

/// Loads `x y z`, optional `red green blue` (8-bit values are scaled to
/// `[0, 1]`) and optional `nx ny nz` from the `vertex` element of an ASCII or
/// binary PLY file. Faces and other elements are ignored.
pub fn import_ply(path: &Path) -> Result<SceneCloud> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = std::io::BufReader::new(file);
    let ply = Parser::<DefaultElement>::new().read_ply(&mut reader).map_err(io_err(path))?;
    let vertices = ply
        .payload
        .get("vertex")
        .ok_or_else(|| SceneIoError::CorruptHeader { path: path.to_path_buf(), reason: "no vertex element".into() })?;
    let byte_colors = vertices.first().and_then(|v| v.get("red")).is_some_and(|p| matches!(p, Property::UChar(_)));

    let mut positions = Vec::with_capacity(vertices.len());
    let mut colors = Vec::with_capacity(vertices.len());
    let mut normals = Vec::with_capacity(vertices.len());
    for v in vertices {
        let p = triple(v, ["x", "y", "z"], path)?.ok_or_else(|| SceneIoError::CorruptHeader {
            path: path.to_path_buf(),
            reason: "vertex lacks x, y or z".into(),
        })?;
        positions.push(p.map(|x| x as f32));
        if let Some(c) = triple(v, ["red", "green", "blue"], path)? {
            let scale = if byte_colors { 255.0 } else { 1.0 };
            colors.push(c.map(|x| (x / scale) as f32));
        }
        if let Some(n) = triple(v, ["nx", "ny", "nz"], path)? {
            normals.push(n.map(|x| x as f32));
        }
    }
    let n = positions.len();
    let colors = (colors.len() == n && n > 0).then_some(colors);
    let normals = (normals.len() == n && n > 0).then_some(normals);
    SceneCloud::new(positions, colors, normals, None)
}
