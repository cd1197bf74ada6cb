use nalgebra::{Matrix3, SymmetricEigen};

use super::{Hierarchy, MergeParams, ObjectRule};
use crate::cluster_core::{Cluster, ClusterId};
use crate::scene_io::{Instance, InstanceKind, InstanceSet};
use crate::PointId;

/// Clusters scoring at least this on [`planarity`] count as planar background.
pub const PLANARITY_THRESHOLD: f64 = 0.8;

/// Objects collected from a hierarchy, with the cluster each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectedObjects {
    pub clusters: Vec<ClusterId>,
    pub instances: InstanceSet,
}

impl CollectedObjects {
    fn retain(&mut self, keep: &[bool]) {
        let mut k = keep.iter();
        self.clusters.retain(|_| *k.next().expect("mask length"));
        let mut k = keep.iter();
        self.instances.instances.retain(|_| *k.next().expect("mask length"));
    }
}

/// Follows single-child carry-forwards back to the layer where `id` last gained
/// a sibling (or layer 0).
pub fn formation_cluster(h: &Hierarchy, mut id: ClusterId) -> ClusterId {
    while id.layer > 0 {
        let c = h.cluster(id);
        match c.children[..] {
            [only] => id = ClusterId { layer: id.layer - 1, index: only },
            _ => break,
        }
    }
    id
}

fn is_formation(c: &Cluster) -> bool {
    c.id.layer == 0 || c.children.len() > 1
}

fn object(c: &Cluster) -> Instance {
    Instance::new(c.point_ids.clone(), 1.0, InstanceKind::Object)
}

/// Clusters that stop merging, each taken at the layer it was formed and kept
/// when it has at least `min_object_points` points. Confidence is uniformly 1.
pub fn collect_objects(h: &Hierarchy, params: &MergeParams) -> CollectedObjects {
    let ids: Vec<ClusterId> = match params.object_rule {
        ObjectRule::Terminal => h.terminal().iter().map(|c| formation_cluster(h, c.id)).collect(),
        ObjectRule::AnyLayer => {
            h.layers.iter().flat_map(|layer| layer.iter().filter(|c| is_formation(c)).map(|c| c.id)).collect()
        }
    };
    let clusters: Vec<ClusterId> =
        ids.into_iter().filter(|&id| h.cluster(id).len() >= params.min_object_points).collect();
    let instances = InstanceSet::new(clusters.iter().map(|&id| object(h.cluster(id))).collect());
    CollectedObjects { clusters, instances }
}

/// The immediate children of every object, or the object itself when it was
/// formed at layer 0.
pub fn collect_parts(h: &Hierarchy, objects: &CollectedObjects) -> InstanceSet {
    let mut parts = Vec::new();
    for &id in &objects.clusters {
        let c = h.cluster(id);
        if id.layer == 0 || c.children.len() < 2 {
            parts.push(Instance::new(c.point_ids.clone(), 1.0, InstanceKind::Part));
            continue;
        }
        for &child in &c.children {
            let p = h.cluster(ClusterId { layer: id.layer - 1, index: child });
            parts.push(Instance::new(p.point_ids.clone(), 1.0, InstanceKind::Part));
        }
    }
    InstanceSet::new(parts)
}

/// `1 - λ3 / λ2` of the point covariance (eigenvalues descending): near 1 for
/// flat sheets, near 0 for blobs and lines.
pub fn planarity(positions: &[[f32; 3]], ids: &[PointId]) -> f64 {
    if ids.len() < 3 {
        return 0.0;
    }
    let n = ids.len() as f64;
    let mut mean = [0.0f64; 3];
    for &p in ids {
        for k in 0..3 {
            mean[k] += positions[p as usize][k] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix3::<f64>::zeros();
    for &p in ids {
        let d: [f64; 3] = std::array::from_fn(|k| positions[p as usize][k] as f64 - mean[k]);
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov / n).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-12 * ev[0].max(1e-300) {
        return 0.0;
    }
    1.0 - ev[2] / ev[1]
}

/// Removes up to `n` planar objects, largest first (ties: earlier object).
/// Returns how many were removed.
pub fn drop_largest_planar(objects: &mut CollectedObjects, positions: &[[f32; 3]], n: usize) -> usize {
    let mut planar: Vec<usize> = (0..objects.instances.len())
        .filter(|&k| planarity(positions, &objects.instances.instances[k].point_ids) >= PLANARITY_THRESHOLD)
        .collect();
    planar.sort_by_key(|&k| (std::cmp::Reverse(objects.instances.instances[k].point_ids.len()), k));
    planar.truncate(n);
    let mut keep = vec![true; objects.instances.len()];
    for &k in &planar {
        log::info!("dropping planar object with {} points", objects.instances.instances[k].point_ids.len());
        keep[k] = false;
    }
    objects.retain(&keep);
    planar.len()
}
