//! Uniform hash grid over a subset of cloud points.
//!
//! Cells are cubes of side `cell`; a point `p` lives in cell `floor(p / cell)`.
//! After scanning every cell within Chebyshev ring `r` of a query's cell, all
//! points within Euclidean distance `r * cell` of the query have been seen.

use std::collections::HashMap;

use crate::geometry::{point_distance, Aabb};
use crate::PointId;

pub type CellKey = [i64; 3];

#[derive(Debug, Clone)]
pub struct UniformGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<PointId>>,
    lo: CellKey,
    hi: CellKey,
    len: usize,
}

impl UniformGrid {
    /// Builds a grid over `ids`, which index into `positions`.
    pub fn new<I>(positions: &[[f32; 3]], ids: I, cell: f64) -> Self
    where
        I: IntoIterator<Item = PointId>,
    {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        let mut cells: HashMap<CellKey, Vec<PointId>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut len = 0;
        for id in ids {
            let key = cell_key(positions[id as usize], cell);
            for k in 0..3 {
                lo[k] = lo[k].min(key[k]);
                hi[k] = hi[k].max(key[k]);
            }
            cells.entry(key).or_default().push(id);
            len += 1;
        }
        UniformGrid { cell, cells, lo, hi, len }
    }

    pub fn over_all(positions: &[[f32; 3]], cell: f64) -> Self {
        Self::new(positions, 0..positions.len() as PointId, cell)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn key_of(&self, p: [f32; 3]) -> CellKey {
        cell_key(p, self.cell)
    }

    pub fn cell(&self, key: &CellKey) -> &[PointId] {
        self.cells.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = (&CellKey, &Vec<PointId>)> {
        self.cells.iter()
    }

    /// Largest ring index that can still hold points for a query in `center`.
    pub fn max_ring(&self, center: CellKey) -> i64 {
        if self.len == 0 {
            return 0;
        }
        (0..3).map(|k| (center[k] - self.lo[k]).abs().max((self.hi[k] - center[k]).abs())).max().unwrap_or(0)
    }

    /// Calls `f` with the points of every occupied cell on Chebyshev ring `r`.
    pub fn for_each_in_ring<F: FnMut(&[PointId])>(&self, center: CellKey, r: i64, mut f: F) {
        if r == 0 {
            if let Some(v) = self.cells.get(&center) {
                f(v);
            }
            return;
        }
        for dx in -r..=r {
            for dy in -r..=r {
                let on_face = dx.abs() == r || dy.abs() == r;
                if on_face {
                    for dz in -r..=r {
                        let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                        if let Some(v) = self.cells.get(&key) {
                            f(v);
                        }
                    }
                } else {
                    for dz in [-r, r] {
                        let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                        if let Some(v) = self.cells.get(&key) {
                            f(v);
                        }
                    }
                }
            }
        }
    }

    /// Calls `f` with the points of the 27 cells around `center` (inclusive).
    pub fn for_each_in_block<F: FnMut(&[PointId])>(&self, center: CellKey, mut f: F) {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(v) = self.cells.get(&key) {
                        f(v);
                    }
                }
            }
        }
    }

    /// The `k` grid points nearest to `query`, ordered by (distance, id).
    pub fn knn(&self, positions: &[[f32; 3]], query: [f32; 3], k: usize) -> Vec<PointId> {
        let k = k.min(self.len);
        if k == 0 {
            return Vec::new();
        }
        let center = self.key_of(query);
        let max_ring = self.max_ring(center);
        let mut found: Vec<(f64, PointId)> = Vec::new();
        let mut seen = 0;
        let mut r = 0;
        loop {
            self.for_each_in_ring(center, r, |ids| {
                seen += ids.len();
                found.extend(ids.iter().map(|&id| (point_distance(query, positions[id as usize]), id)));
            });
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                // anything past the k-th can never re-enter the result
                found.truncate(k);
                if found[k - 1].0 <= r as f64 * self.cell || seen == self.len {
                    break;
                }
            }
            if r >= max_ring {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                break;
            }
            r += 1;
        }
        found.truncate(k);
        found.into_iter().map(|(_, id)| id).collect()
    }
}

#[inline]
pub fn cell_key(p: [f32; 3], cell: f64) -> CellKey {
    [(p[0] as f64 / cell).floor() as i64, (p[1] as f64 / cell).floor() as i64, (p[2] as f64 / cell).floor() as i64]
}

/// Picks a grid cell so that occupied cells hold roughly `target` points.
/// Assumes points lie on surfaces, where occupancy scales with cell area.
pub fn cell_size_for_occupancy(positions: &[[f32; 3]], target: usize) -> f64 {
    let n = positions.len().max(1);
    let bbox = Aabb::from_points(positions.iter().map(|&p| crate::geometry::to_f64(p)));
    let ext = (0..3).map(|k| bbox.max[k] - bbox.min[k]).fold(0.0_f64, f64::max);
    if !(ext > 0.0) {
        return 1.0;
    }
    let h0 = ext / (n as f64).cbrt();
    let occupied = UniformGrid::over_all(positions, h0).cells.len().max(1);
    let mean = n as f64 / occupied as f64;
    let h = h0 * (target.max(1) as f64 / mean).sqrt();
    h.clamp(ext * 1e-6, ext)
}
