use nalgebra::DMatrix;

use super::srrqr::{strong_rrqr, Stop};
use crate::Result;

/// Row interpolative decomposition `A ≈ U A[J, :]`.
#[derive(Debug, Clone)]
pub struct IdResult {
    /// Skeleton row indices `J`, in pivot order.
    pub skeleton: Vec<usize>,
    /// n×k interpolation matrix; `U[J[a], :] = e_a`.
    pub u: DMatrix<f64>,
    /// Threshold used (absolute). For fixed-rank runs, the largest row residual reached.
    pub epsilon: f64,
    pub entry_bound: f64,
    /// `‖A[i,:] − U[i,:] A[J,:]‖₂` for each row, as reported by the factorization.
    pub row_residuals: Vec<f64>,
}

impl IdResult {
    pub fn rank(&self) -> usize {
        self.skeleton.len()
    }
}

/// Interpolative decomposition of the rows of `a`.
pub fn id_rows(a: &DMatrix<f64>, c: f64, stop: Stop) -> Result<IdResult> {
    id_rows_from_transpose(a.transpose(), c, stop)
}

/// Row ID of `A` given `A^T` (consumed as workspace). Kernel blocks are
/// usually assembled directly in this layout.
pub fn id_columns(at: DMatrix<f64>, c: f64, stop: Stop) -> Result<IdResult> {
    id_rows_from_transpose(at, c, stop)
}

/// Column skeleton of `a` without forming the interpolation matrix. Returns
/// the selected column indices and the residual norms of the other columns.
pub fn select_columns(a: DMatrix<f64>, c: f64, stop: Stop) -> Result<(Vec<usize>, Vec<f64>)> {
    let f = strong_rrqr(a, c, stop)?;
    Ok((f.perm[..f.rank].to_vec(), f.gamma))
}

fn id_rows_from_transpose(at: DMatrix<f64>, c: f64, stop: Stop) -> Result<IdResult> {
    let n = at.ncols();
    let f = strong_rrqr(at, c, stop)?;
    let k = f.rank;
    let mut u = DMatrix::zeros(n, k);
    let mut row_residuals = vec![0.0; n];
    for a in 0..k {
        u[(f.perm[a], a)] = 1.0;
    }
    for j in 0..n - k {
        let row = f.perm[k + j];
        for a in 0..k {
            u[(row, a)] = f.t[(a, j)];
        }
        row_residuals[row] = f.gamma[j];
    }
    let epsilon = match stop {
        Stop::Threshold(eps) => eps,
        Stop::FixedRank(_) => f.gamma.iter().fold(0.0, |a: f64, &g| a.max(g)),
    };
    Ok(IdResult { skeleton: f.perm[..k].to_vec(), u, epsilon, entry_bound: c, row_residuals })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual_rows(a: &DMatrix<f64>, id: &IdResult) -> Vec<f64> {
        let aj = a.select_rows(id.skeleton.iter());
        let e = a - &id.u * aj;
        (0..a.nrows()).map(|i| e.row(i).norm()).collect()
    }

    #[test]
    fn rank_one_outer_product() {
        let a = DMatrix::from_fn(5, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let id = id_rows(&a, 2.0, Stop::Threshold(1e-12)).unwrap();
        assert_eq!(id.rank(), 1);
        assert!(residual_rows(&a, &id).iter().all(|&r| r <= 1e-12));
    }

    #[test]
    fn identity_is_full_rank() {
        let a = DMatrix::identity(4, 4);
        let id = id_rows(&a, 2.0, Stop::Threshold(0.5)).unwrap();
        assert_eq!(id.rank(), 4);
    }

    #[test]
    fn skeleton_rows_of_u_are_identity() {
        let a = DMatrix::from_fn(30, 20, |i, j| 1.0 / (3.0 + i as f64 + 0.7 * j as f64));
        let id = id_rows(&a, 2.0, Stop::Threshold(1e-9)).unwrap();
        for (a_idx, &row) in id.skeleton.iter().enumerate() {
            for b in 0..id.rank() {
                assert_eq!(id.u[(row, b)], if a_idx == b { 1.0 } else { 0.0 });
            }
        }
        let direct = residual_rows(&a, &id);
        for (r, rep) in direct.iter().zip(&id.row_residuals) {
            assert!(*r <= 1e-9 * (1.0 + 1e-6));
            assert!((r - rep).abs() <= 1e-13);
        }
    }
}
