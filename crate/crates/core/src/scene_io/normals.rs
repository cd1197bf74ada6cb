use nalgebra::{Matrix3, SymmetricEigen};

use crate::spatial::{cell_size_for_occupancy, UniformGrid};

pub const DEFAULT_NORMAL_NEIGHBORS: usize = 16;

const HEMISPHERE_EPS: f64 = 1e-9;

/// PCA normals from the `k` nearest neighbours of every point (the point itself included).
///
/// Each normal is the eigenvector of the smallest covariance eigenvalue, oriented
/// into the `+z` hemisphere. Normals lying in the `z = 0` plane are oriented to
/// `+y`, then `+x`, so that coplanar vertical surfaces get one consistent sign.
/// Coincident neighbourhoods, and clouds too small for `k >= 3`, yield `(0, 0, 1)`.
pub fn estimate_normals(positions: &[[f32; 3]], k: usize) -> Vec<[f32; 3]> {
    let k = k.min(positions.len());
    if k < 3 {
        return vec![[0.0, 0.0, 1.0]; positions.len()];
    }
    let cell = cell_size_for_occupancy(positions, k);
    let grid = UniformGrid::over_all(positions, cell);
    positions
        .iter()
        .map(|&p| {
            let nbrs = grid.knn(positions, p, k);
            normal_from_neighbors(positions, &nbrs)
        })
        .collect()
}

fn normal_from_neighbors(positions: &[[f32; 3]], nbrs: &[u32]) -> [f32; 3] {
    let n = nbrs.len() as f64;
    let mut mean = [0.0f64; 3];
    for &i in nbrs {
        let p = positions[i as usize];
        for k in 0..3 {
            mean[k] += p[k] as f64 / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for &i in nbrs {
        let p = positions[i as usize];
        let d = [p[0] as f64 - mean[0], p[1] as f64 - mean[1], p[2] as f64 - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c] / n;
            }
        }
    }
    if cov.trace() <= 1e-24 {
        return [0.0, 0.0, 1.0];
    }
    let eig = SymmetricEigen::new(cov);
    let mut best = 0;
    for j in 1..3 {
        if eig.eigenvalues[j] < eig.eigenvalues[best] {
            best = j;
        }
    }
    let v = eig.eigenvectors.column(best);
    let mut nrm = [v[0], v[1], v[2]];
    let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]).sqrt();
    if !(len > 0.0) {
        return [0.0, 0.0, 1.0];
    }
    nrm.iter_mut().for_each(|x| *x /= len);
    let flip = if nrm[2].abs() > HEMISPHERE_EPS {
        nrm[2] < 0.0
    } else if nrm[1].abs() > HEMISPHERE_EPS {
        nrm[1] < 0.0
    } else {
        nrm[0] < 0.0
    };
    if flip {
        nrm.iter_mut().for_each(|x| *x = -*x);
    }
    [nrm[0] as f32, nrm[1] as f32, nrm[2] as f32]
}
