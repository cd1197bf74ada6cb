use std::collections::HashMap;

use crate::cluster_core::Cluster;
use crate::geometry::point_distance;
use crate::spatial::{CellKey, UniformGrid};
use crate::PointId;

/// Two clusters of one layer whose closest points lie within the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

/// Work counters for one candidate sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CandidateStats {
    pub point_distance_evaluations: u64,
    pub cells_scanned: u64,
    pub cells_skipped: u64,
}

const MIXED: u32 = u32::MAX;

/// Every pair `i < j` whose closest-point distance is at most `t`, sorted by
/// `(i, j)`, with that exact distance.
pub fn candidate_pairs(layer: &[Cluster], positions: &[[f32; 3]], t: f64) -> Vec<CandidatePair> {
    candidate_pairs_with_stats(layer, positions, t).0
}

/// As [`candidate_pairs`], also reporting how much work the sweep did.
///
/// Points are hashed into cells of side `t`, so any point pair within `t` lies
/// in the same or adjacent cells. Each unordered pair of neighbouring cells is
/// visited once, and cell pairs holding a single cluster between them are
/// skipped without computing distances.
pub fn candidate_pairs_with_stats(
    layer: &[Cluster],
    positions: &[[f32; 3]],
    t: f64,
) -> (Vec<CandidatePair>, CandidateStats) {
    let mut stats = CandidateStats::default();
    if layer.len() < 2 {
        return (Vec::new(), stats);
    }
    let mut labels = vec![u32::MAX; positions.len()];
    for (c, cluster) in layer.iter().enumerate() {
        for &p in &cluster.point_ids {
            labels[p as usize] = c as u32;
        }
    }
    // t = 0 still needs a usable grid; coincident points share a cell anyway.
    let cell = if t > 0.0 { t } else { 1e-6 };
    let grid = UniformGrid::new(positions, layer.iter().flat_map(|c| c.point_ids.iter().copied()), cell);

    let purity: HashMap<CellKey, u32> = grid
        .occupied_cells()
        .map(|(key, ids)| {
            let first = labels[ids[0] as usize];
            let pure = ids.iter().all(|&p| labels[p as usize] == first);
            (*key, if pure { first } else { MIXED })
        })
        .collect();

    let mut best: HashMap<(u32, u32), f64> = HashMap::new();
    let mut record = |a: PointId, b: PointId, stats: &mut CandidateStats| {
        let (la, lb) = (labels[a as usize], labels[b as usize]);
        if la == lb {
            return;
        }
        stats.point_distance_evaluations += 1;
        let d = point_distance(positions[a as usize], positions[b as usize]);
        if d <= t {
            let key = if la < lb { (la, lb) } else { (lb, la) };
            best.entry(key).and_modify(|v| *v = v.min(d)).or_insert(d);
        }
    };

    for (key, ids) in grid.occupied_cells() {
        let own = purity[key];
        if own == MIXED {
            stats.cells_scanned += 1;
            for (x, &a) in ids.iter().enumerate() {
                for &b in &ids[x + 1..] {
                    record(a, b, &mut stats);
                }
            }
        }
        for nb in forward_neighbors(*key) {
            let Some(&other) = purity.get(&nb) else { continue };
            if own != MIXED && other == own {
                stats.cells_skipped += 1;
                continue;
            }
            stats.cells_scanned += 1;
            let nb_ids = grid.cell(&nb);
            for &a in ids {
                for &b in nb_ids {
                    record(a, b, &mut stats);
                }
            }
        }
    }

    let mut pairs: Vec<CandidatePair> =
        best.into_iter().map(|((i, j), distance)| CandidatePair { i: i as usize, j: j as usize, distance }).collect();
    pairs.sort_by_key(|p| (p.i, p.j));
    (pairs, stats)
}

/// The 13 neighbours lexicographically after `key`, so each adjacent cell pair is seen once.
fn forward_neighbors(key: CellKey) -> impl Iterator<Item = CellKey> {
    (-1i64..=1).flat_map(move |dx| {
        (-1i64..=1).flat_map(move |dy| {
            (-1i64..=1)
                .filter_map(move |dz| ((dx, dy, dz) > (0, 0, 0)).then(|| [key[0] + dx, key[1] + dy, key[2] + dz]))
        })
    })
}
