use std::collections::HashMap;

use super::PriorBox;
use crate::cluster_core::Cluster;
use crate::geometry::to_f64;

/// Fraction of the cluster's points inside the closed box.
pub fn containment_fraction(cluster: &Cluster, b: &PriorBox, positions: &[[f32; 3]]) -> f64 {
    if cluster.is_empty() {
        return 0.0;
    }
    let inside = cluster.point_ids.iter().filter(|&&p| b.contains(to_f64(positions[p as usize]))).count();
    inside as f64 / cluster.len() as f64
}

fn vetoes(phi_a: f64, phi_b: f64, inside_frac: f64, outside_frac: f64) -> bool {
    (phi_a >= inside_frac && phi_b <= outside_frac) || (phi_b >= inside_frac && phi_a <= outside_frac)
}

/// True when some box holds one cluster (at least `inside_frac` of its points)
/// while the other lies outside it (at most `outside_frac` inside).
pub fn stop_criteria(
    a: &Cluster,
    b: &Cluster,
    boxes: &[PriorBox],
    positions: &[[f32; 3]],
    inside_frac: f64,
    outside_frac: f64,
) -> bool {
    boxes.iter().any(|bx| {
        vetoes(
            containment_fraction(a, bx, positions),
            containment_fraction(b, bx, positions),
            inside_frac,
            outside_frac,
        )
    })
}

/// Memoised containment fractions for the clusters of one layer.
pub struct ContainmentCache<'a> {
    layer: &'a [Cluster],
    boxes: &'a [PriorBox],
    positions: &'a [[f32; 3]],
    cluster_boxes: Vec<Option<PriorBox>>,
    memo: HashMap<(usize, usize), f64>,
}

impl<'a> ContainmentCache<'a> {
    pub fn new(layer: &'a [Cluster], boxes: &'a [PriorBox], positions: &'a [[f32; 3]]) -> Self {
        ContainmentCache { layer, boxes, positions, cluster_boxes: vec![None; layer.len()], memo: HashMap::new() }
    }

    fn phi(&mut self, cluster: usize, bx: usize) -> f64 {
        if let Some(&v) = self.memo.get(&(cluster, bx)) {
            return v;
        }
        let c = &self.layer[cluster];
        let extent = *self.cluster_boxes[cluster].get_or_insert_with(|| c.bbox(self.positions));
        let prior = &self.boxes[bx];
        let v = if prior.contains_box(&extent) {
            1.0
        } else if !prior.intersects(&extent) {
            0.0
        } else {
            containment_fraction(c, prior, self.positions)
        };
        self.memo.insert((cluster, bx), v);
        v
    }

    /// Same decision as [`stop_criteria`] for clusters `i` and `j` of the layer.
    pub fn rejects(&mut self, i: usize, j: usize, inside_frac: f64, outside_frac: f64) -> bool {
        (0..self.boxes.len()).any(|k| {
            let (pa, pb) = (self.phi(i, k), self.phi(j, k));
            vetoes(pa, pb, inside_frac, outside_frac)
        })
    }
}
