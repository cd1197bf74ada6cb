//! Layer-0 clusters: voxel-cloud connectivity segmentation in a single,
//! deterministic growth pass.
//!
//! The cloud is voxelised, one seed voxel is picked per cell of a coarser seed
//! grid, and all seeds then grow together over the 26-connected voxel graph.
//! Growth is best-first: the frontier voxel with the smallest distance
//!
//! ```text
//! D = w_spatial * d_xyz / (3 * seed_resolution) + w_color * d_rgb + w_normal * (1 - |n . n_seed|)
//! ```
//!
//! to the seed offering it is claimed next (ties: lowest seed, then lowest
//! voxel). Before growing, each seed moves to the voxel of lowest local colour
//! and normal gradient among itself and its neighbours. Voxels in components
//! that hold no seed start new seeds, so every super-point stays connected in
//! the voxel graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dot, norm, normalize, sub, Vec3};
use crate::scene_io::{estimate_normals, SceneCloud, DEFAULT_NORMAL_NEIGHBORS};
use crate::spatial::{cell_key, CellKey};
use crate::PointId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SuperpointError {
    #[error("cloud has no points")]
    EmptyCloud,
    #[error("invalid super-point parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperpointParams {
    pub voxel_size: f64,
    pub seed_resolution: f64,
    pub w_spatial: f64,
    pub w_color: f64,
    pub w_normal: f64,
}

impl Default for SuperpointParams {
    fn default() -> Self {
        SuperpointParams { voxel_size: 0.02, seed_resolution: 0.25, w_spatial: 0.4, w_color: 0.2, w_normal: 1.0 }
    }
}

impl SuperpointParams {
    pub fn validate(&self) -> Result<(), SuperpointError> {
        let bad = |m: &str| Err(SuperpointError::InvalidParams(m.into()));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("voxel_size must be positive");
        }
        if !(self.seed_resolution >= self.voxel_size && self.seed_resolution.is_finite()) {
            return bad("seed_resolution must be at least voxel_size");
        }
        let w = [self.w_spatial, self.w_color, self.w_normal];
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return bad("weights must be non-negative");
        }
        if w.iter().all(|&x| x == 0.0) {
            return bad("at least one weight must be positive");
        }
        Ok(())
    }
}

struct Voxel {
    key: CellKey,
    points: Vec<PointId>,
    centroid: Vec3,
    color: Vec3,
    normal: Vec3,
}

struct Seed {
    centroid: Vec3,
    color: Vec3,
    normal: Vec3,
}

#[derive(PartialEq)]
struct Claim {
    cost: f64,
    seed: usize,
    voxel: usize,
}

impl Eq for Claim {}

impl Ord for Claim {
    // BinaryHeap is a max-heap; invert so the cheapest claim pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then(other.seed.cmp(&self.seed)).then(other.voxel.cmp(&self.voxel))
    }
}

impl PartialOrd for Claim {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn voxelize(cloud: &SceneCloud, normals: &[[f32; 3]], voxel_size: f64) -> Vec<Voxel> {
    let mut buckets: BTreeMap<CellKey, Vec<PointId>> = BTreeMap::new();
    for (i, &p) in cloud.positions.iter().enumerate() {
        buckets.entry(cell_key(p, voxel_size)).or_default().push(i as PointId);
    }
    buckets
        .into_iter()
        .map(|(key, points)| {
            let n = points.len() as f64;
            let mut centroid = [0.0; 3];
            let mut color = [0.0; 3];
            let mut normal = [0.0; 3];
            for &p in &points {
                let (pos, col, nrm) = (cloud.positions[p as usize], cloud.color(p as usize), normals[p as usize]);
                for k in 0..3 {
                    centroid[k] += pos[k] as f64 / n;
                    color[k] += col[k] as f64 / n;
                    normal[k] += nrm[k] as f64;
                }
            }
            let normal = normalize(normal).unwrap_or([0.0, 0.0, 1.0]);
            Voxel { key, points, centroid, color, normal }
        })
        .collect()
}

fn neighbors(key: CellKey) -> impl Iterator<Item = CellKey> {
    (-1..=1).flat_map(move |dx| {
        (-1..=1).flat_map(move |dy| {
            (-1..=1)
                .filter_map(move |dz| (dx != 0 || dy != 0 || dz != 0).then(|| [key[0] + dx, key[1] + dy, key[2] + dz]))
        })
    })
}

/// Partitions the cloud into super-points, returned as sorted point-id lists.
pub fn build_superpoints(cloud: &SceneCloud, params: &SuperpointParams) -> Result<Vec<Vec<PointId>>, SuperpointError> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(SuperpointError::EmptyCloud);
    }
    let estimated;
    let normals: &[[f32; 3]] = match &cloud.normals {
        Some(n) => n,
        None => {
            estimated = estimate_normals(&cloud.positions, DEFAULT_NORMAL_NEIGHBORS);
            &estimated
        }
    };
    let voxels = voxelize(cloud, normals, params.voxel_size);
    let lookup: HashMap<CellKey, usize> = voxels.iter().enumerate().map(|(i, v)| (v.key, i)).collect();
    let adjacency: Vec<Vec<usize>> =
        voxels.iter().map(|v| neighbors(v.key).filter_map(|k| lookup.get(&k).copied()).collect()).collect();

    // one seed per occupied seed cell: the voxel nearest the cell centre
    let r = params.seed_resolution;
    let mut seed_cells: BTreeMap<CellKey, (f64, usize)> = BTreeMap::new();
    for (i, v) in voxels.iter().enumerate() {
        let c = v.centroid;
        let key = [(c[0] / r).floor() as i64, (c[1] / r).floor() as i64, (c[2] / r).floor() as i64];
        let centre = [(key[0] as f64 + 0.5) * r, (key[1] as f64 + 0.5) * r, (key[2] as f64 + 0.5) * r];
        let d = norm(sub(c, centre));
        seed_cells
            .entry(key)
            .and_modify(|best| {
                if d < best.0 {
                    *best = (d, i);
                }
            })
            .or_insert((d, i));
    }

    let mut labels = vec![usize::MAX; voxels.len()];
    let mut seeds: Vec<Seed> = Vec::new();
    let mut heap = BinaryHeap::new();
    let cost = |seed: &Seed, v: &Voxel| {
        params.w_spatial * norm(sub(v.centroid, seed.centroid)) / (3.0 * r)
            + params.w_color * norm(sub(v.color, seed.color))
            + params.w_normal * (1.0 - dot(v.normal, seed.normal).abs())
    };
    let plant = |voxel: usize, labels: &mut Vec<usize>, seeds: &mut Vec<Seed>, heap: &mut BinaryHeap<Claim>| {
        let v = &voxels[voxel];
        let s = seeds.len();
        seeds.push(Seed { centroid: v.centroid, color: v.color, normal: v.normal });
        labels[voxel] = s;
        for &nb in &adjacency[voxel] {
            if labels[nb] == usize::MAX {
                heap.push(Claim { cost: cost(&seeds[s], &voxels[nb]), seed: s, voxel: nb });
            }
        }
    };
    // move each seed to the flattest voxel around it, off edges and contact lines
    let gradient: Vec<f64> = voxels
        .iter()
        .zip(&adjacency)
        .map(|(v, adj)| {
            let sum: f64 = adj
                .iter()
                .map(|&nb| {
                    let u = &voxels[nb];
                    params.w_color * norm(sub(v.color, u.color))
                        + params.w_normal * (1.0 - dot(v.normal, u.normal).abs())
                })
                .sum();
            sum / adj.len().max(1) as f64
        })
        .collect();
    let mut planted = vec![false; voxels.len()];
    for &(_, voxel) in seed_cells.values() {
        let best = std::iter::once(voxel)
            .chain(adjacency[voxel].iter().copied())
            .min_by(|&a, &b| gradient[a].total_cmp(&gradient[b]).then(a.cmp(&b)))
            .expect("non-empty");
        if !planted[best] && labels[best] == usize::MAX {
            planted[best] = true;
            plant(best, &mut labels, &mut seeds, &mut heap);
        }
    }
    let mut next_unclaimed = 0;
    loop {
        while let Some(Claim { seed, voxel, .. }) = heap.pop() {
            if labels[voxel] != usize::MAX {
                continue;
            }
            labels[voxel] = seed;
            for &nb in &adjacency[voxel] {
                if labels[nb] == usize::MAX {
                    heap.push(Claim { cost: cost(&seeds[seed], &voxels[nb]), seed, voxel: nb });
                }
            }
        }
        while next_unclaimed < voxels.len() && labels[next_unclaimed] != usize::MAX {
            next_unclaimed += 1;
        }
        if next_unclaimed == voxels.len() {
            break;
        }
        plant(next_unclaimed, &mut labels, &mut seeds, &mut heap);
    }

    let mut parts: Vec<Vec<PointId>> = vec![Vec::new(); seeds.len()];
    for (v, &s) in voxels.iter().zip(&labels) {
        parts[s].extend_from_slice(&v.points);
    }
    parts.retain(|p| !p.is_empty());
    parts.iter_mut().for_each(|p| p.sort_unstable());
    log::debug!("{} points -> {} voxels -> {} super-points", cloud.len(), voxels.len(), parts.len());
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn cube_points(origin: [f32; 3], side: f32, step: f32) -> Vec<[f32; 3]> {
        let n = (side / step).round() as i32;
        let mut pts = Vec::new();
        for a in 0..=n {
            for b in 0..=n {
                let (u, v) = (a as f32 * step, b as f32 * step);
                for p in [[u, v, 0.0], [u, v, side], [u, 0.0, v], [u, side, v], [0.0, u, v], [side, u, v]] {
                    pts.push([origin[0] + p[0], origin[1] + p[1], origin[2] + p[2]]);
                }
            }
        }
        pts
    }

    fn cloud_of(positions: Vec<[f32; 3]>) -> SceneCloud {
        let n = positions.len();
        SceneCloud::new(positions, Some(vec![[0.5; 3]; n]), None, None).unwrap()
    }

    fn assert_partition(parts: &[Vec<PointId>], n: usize) {
        let mut seen = vec![false; n];
        for p in parts {
            assert!(!p.is_empty());
            for &i in p {
                assert!(!seen[i as usize], "point {i} in two super-points");
                seen[i as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "some point unassigned");
    }

    #[test]
    fn single_point() {
        let parts = build_superpoints(&cloud_of(vec![[1.0, 2.0, 3.0]]), &SuperpointParams::default()).unwrap();
        assert_eq!(parts, vec![vec![0]]);
    }

    #[test]
    fn separated_cubes_never_share_a_superpoint() {
        let mut pts = cube_points([0.0; 3], 0.5, 0.02);
        let first = pts.len();
        pts.extend(cube_points([3.0, 0.0, 0.0], 0.5, 0.02));
        let parts = build_superpoints(&cloud_of(pts.clone()), &SuperpointParams::default()).unwrap();
        assert_partition(&parts, pts.len());
        for p in &parts {
            let in_first = p.iter().filter(|&&i| (i as usize) < first).count();
            assert!(in_first == 0 || in_first == p.len());
        }
    }

    #[test]
    fn superpoints_are_voxel_connected_and_deterministic() {
        let mut pts = cube_points([0.0; 3], 0.6, 0.02);
        pts.extend(cube_points([0.61, 0.1, 0.0], 0.3, 0.02));
        let cloud = cloud_of(pts);
        let params = SuperpointParams { seed_resolution: 0.15, ..Default::default() };
        let parts = build_superpoints(&cloud, &params).unwrap();
        assert_eq!(parts, build_superpoints(&cloud, &params).unwrap());
        assert_partition(&parts, cloud.len());
        assert!(parts.len() > 4);
        for p in &parts {
            let keys: HashSet<CellKey> = p.iter().map(|&i| cell_key(cloud.positions[i as usize], 0.02)).collect();
            let start = *keys.iter().next().unwrap();
            let mut stack = vec![start];
            let mut reached = HashSet::from([start]);
            while let Some(k) = stack.pop() {
                for nb in neighbors(k) {
                    if keys.contains(&nb) && reached.insert(nb) {
                        stack.push(nb);
                    }
                }
            }
            assert_eq!(reached.len(), keys.len(), "super-point not voxel-connected");
        }
    }

    #[test]
    fn rejects_bad_params_and_empty_clouds() {
        let bad = SuperpointParams { seed_resolution: 0.01, ..Default::default() };
        assert!(matches!(bad.validate(), Err(SuperpointError::InvalidParams(_))));
        let zero = SuperpointParams { w_spatial: 0.0, w_color: 0.0, w_normal: 0.0, ..Default::default() };
        assert!(zero.validate().is_err());
        let empty = SceneCloud { positions: vec![], colors: None, normals: None, features: None };
        assert_eq!(build_superpoints(&empty, &SuperpointParams::default()), Err(SuperpointError::EmptyCloud));
    }
}
