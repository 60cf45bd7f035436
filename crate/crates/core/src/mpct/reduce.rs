use nalgebra::{DMatrix, DVector};

use super::CondensedQp;

/// Relative tolerance for treating two normalized rows as parallel.
const PARALLEL_TOL: f64 = 1e-12;

/// Drops rows that cannot change the feasible set: all-zero rows with a
/// nonnegative bound and the looser of any pair of positively parallel rows.
///
/// The feasible set is unchanged. An all-zero row with a negative bound is
/// kept so infeasibility still surfaces in the solver.
pub fn reduce_constraints(qp: &CondensedQp) -> CondensedQp {
    let p = qp.rows();
    let d = qp.dim();
    let mut normals: Vec<Option<DVector<f64>>> = Vec::with_capacity(p);
    let mut bounds = Vec::with_capacity(p);
    for r in 0..p {
        let row = qp.g_mat.row(r).transpose();
        let norm = row.norm();
        let scale = 1.0 + row.amax();
        if norm <= 1e-14 * scale {
            normals.push(None);
            bounds.push(qp.g[r]);
        } else {
            normals.push(Some(row / norm));
            bounds.push(qp.g[r] / norm);
        }
    }

    // keep[r] = representative index whose (normalized) bound is tightest.
    let mut kept: Vec<usize> = Vec::new();
    for r in 0..p {
        match &normals[r] {
            None => {
                if bounds[r] < 0.0 {
                    kept.push(r);
                }
            }
            Some(n) => {
                let twin = kept.iter().position(|&s| {
                    normals[s].as_ref().is_some_and(|m| (m - n).amax() <= PARALLEL_TOL)
                });
                match twin {
                    Some(pos) if bounds[r] < bounds[kept[pos]] => kept[pos] = r,
                    Some(_) => {}
                    None => kept.push(r),
                }
            }
        }
    }
    kept.sort_unstable();

    let mut g_mat = DMatrix::zeros(kept.len(), d);
    let mut g = DVector::zeros(kept.len());
    for (i, &r) in kept.iter().enumerate() {
        g_mat.row_mut(i).copy_from(&qp.g_mat.row(r));
        g[i] = qp.g[r];
    }
    CondensedQp {
        g_mat,
        g,
        tags: kept.iter().map(|&r| qp.tags[r]).collect(),
        ..qp.clone()
    }
}
