//! Small geometric primitives shared across stages.

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 0.0 && n.is_finite()).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

#[inline]
pub fn to_f64(p: [f32; 3]) -> Vec3 {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

/// Euclidean distance between two stored points, evaluated in f64.
#[inline]
pub fn point_distance(a: [f32; 3], b: [f32; 3]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    /// An inverted box that any `extend` call will overwrite.
    pub fn empty() -> Self {
        Aabb { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| self.min[k] > self.max[k])
    }

    pub fn extend(&mut self, p: Vec3) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn from_points<I: IntoIterator<Item = Vec3>>(points: I) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.extend(p);
        }
        b
    }

    #[inline]
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] && other.max[k] <= self.max[k])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|k| other.min[k] <= self.max[k] && other.max[k] >= self.min[k])
    }

    /// Smallest Euclidean distance between the two boxes (0 when they touch).
    pub fn gap(&self, other: &Aabb) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = (other.min[k] - self.max[k]).max(self.min[k] - other.max[k]).max(0.0);
            s += d * d;
        }
        s.sqrt()
    }

    pub fn distance_to_point(&self, p: Vec3) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            s += d * d;
        }
        s.sqrt()
    }
}

/// Pinhole intrinsics in pixels. Pixel `(col, row)` covers `[col, col+1) x [row, row+1)`
/// in image coordinates, so its centre sits at `(col + 0.5, row + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Rigid camera-to-world transform, stored as a row-major 4x4 matrix.
/// Camera axes follow the usual vision convention: +x right, +y down, +z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub matrix: [[f64; 4]; 4],
}

impl Pose {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (k, row) in m.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        Pose { matrix: m }
    }

    pub fn from_row_major(v: &[f64; 16]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] = v[r * 4 + c];
            }
        }
        Pose { matrix: m }
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut v = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                v[r * 4 + c] = self.matrix[r][c];
            }
        }
        v
    }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image-up.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Option<Self> {
        let forward = normalize(sub(target, eye))?;
        let right = normalize(cross(forward, up))?;
        let down = cross(forward, right);
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            m[r][0] = right[r];
            m[r][1] = down[r];
            m[r][2] = forward[r];
            m[r][3] = eye[r];
        }
        m[3][3] = 1.0;
        Some(Pose { matrix: m })
    }

    pub fn translation(&self) -> Vec3 {
        [self.matrix[0][3], self.matrix[1][3], self.matrix[2][3]]
    }

    /// Maps a world point into the camera frame.
    #[inline]
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let m = &self.matrix;
        let d = sub(p, self.translation());
        // R^T * d
        [
            m[0][0] * d[0] + m[1][0] * d[1] + m[2][0] * d[2],
            m[0][1] * d[0] + m[1][1] * d[1] + m[2][1] * d[2],
            m[0][2] * d[0] + m[1][2] * d[1] + m[2][2] * d[2],
        ]
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// Largest absolute deviation of `R^T R` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let s: f64 = (0..3).map(|r| m[r][a] * m[r][b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

impl Intrinsics {
    /// Projects a camera-frame point to continuous image coordinates.
    /// Returns `None` for points at or behind the image plane.
    #[inline]
    pub fn project(&self, pc: Vec3) -> Option<(f64, f64)> {
        if !(pc[2] > 1e-9) {
            return None;
        }
        Some((self.fx * pc[0] / pc[2] + self.cx, self.fy * pc[1] / pc[2] + self.cy))
    }

    /// Pixel containing the projection, if it lies inside a `width x height` image.
    #[inline]
    pub fn pixel(&self, pc: Vec3, width: usize, height: usize) -> Option<(usize, usize)> {
        let (u, v) = self.project(pc)?;
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (col, row) = (u.floor(), v.floor());
        if col < width as f64 && row < height as f64 {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }

    /// Camera-frame ray direction (z = 1) through the centre of a pixel.
    pub fn ray_through_pixel_centre(&self, col: usize, row: usize) -> Vec3 {
        [(col as f64 + 0.5 - self.cx) / self.fx, (row as f64 + 0.5 - self.cy) / self.fy, 1.0]
    }
}
