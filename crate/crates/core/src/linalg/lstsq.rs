use nalgebra::DMatrix;

use super::householder_qr;
use super::qr::{pivoted_qr, PivotedQr, QrStop};
use crate::{Error, Result};

/// Default relative rank tolerance for least-squares solves.
pub const DEFAULT_RCOND: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: DMatrix<f64>,
    pub rank: usize,
    /// Set when the system matrix was rank deficient and the minimum-norm
    /// solution was returned.
    pub rank_deficient: bool,
}

/// Reusable factorization of a least-squares system matrix `M` (p×q):
/// column-pivoted QR truncated at `rcond · |R[0,0]|`, plus a complete
/// orthogonal decomposition when `M` is rank deficient.
#[derive(Debug, Clone)]
pub struct LsFactor {
    qr: PivotedQr,
    q: usize,
    /// `[R11 R12]^T = Z S` for the rank-deficient case.
    cod: Option<(DMatrix<f64>, DMatrix<f64>)>,
    r11: DMatrix<f64>,
}

impl LsFactor {
    pub fn new(m: &DMatrix<f64>, rcond: f64) -> Result<Self> {
        let q = m.ncols();
        let f = pivoted_qr(m.clone(), QrStop::Relative(rcond))?;
        let r = f.rank;
        let r11 = DMatrix::from_fn(r, r, |i, j| if i <= j { f.qr[(i, j)] } else { 0.0 });
        let cod = if r < q && r > 0 {
            let st = DMatrix::from_fn(q, r, |i, j| if j <= i { f.qr[(j, i)] } else { 0.0 });
            let zs = householder_qr(&st);
            Some((zs.q, zs.r.transpose()))
        } else {
            None
        };
        Ok(Self { qr: f, q, cod, r11 })
    }

    pub fn rank(&self) -> usize {
        self.qr.rank
    }

    pub fn rank_deficient(&self) -> bool {
        self.qr.rank < self.q
    }

    /// Minimum-norm `X` (q×s) for `min ‖M X − B‖_F`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.qr.qr.nrows();
        if b.nrows() != p {
            return Err(Error::DimensionMismatch { expected: p, got: b.nrows() });
        }
        let r = self.qr.rank;
        let mut x = DMatrix::zeros(self.q, b.ncols());
        if r == 0 {
            return Ok(x);
        }
        let mut c = b.clone();
        self.qr.apply_qt(&mut c);
        let c = c.rows(0, r).into_owned();
        let y = match &self.cod {
            None => self.r11.solve_upper_triangular(&c).ok_or(Error::NonFinite)?,
            Some((z, sl)) => z * sl.solve_lower_triangular(&c).ok_or(Error::NonFinite)?,
        };
        for (i, &pi) in self.qr.perm.iter().enumerate() {
            x.row_mut(pi).copy_from(&y.row(i));
        }
        Ok(x)
    }
}

/// Minimum-norm solution of `min ‖M X − B‖_F`; see [`LsFactor`].
pub fn least_squares(m: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<LeastSquares> {
    if b.nrows() != m.nrows() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: b.nrows() });
    }
    let f = LsFactor::new(m, rcond)?;
    Ok(LeastSquares { x: f.solve(b)?, rank: f.rank(), rank_deficient: f.rank_deficient() })
}

/// `argmin_U ‖A − U · basis‖_F` for a k×m `basis` and n×m `A`; returns `U` (n×k)
/// in the `x` field.
pub fn ls_project(basis: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<LeastSquares> {
    if basis.ncols() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: basis.ncols(), got: a.ncols() });
    }
    let sol = least_squares(&basis.transpose(), &a.transpose(), DEFAULT_RCOND)?;
    Ok(LeastSquares { x: sol.x.transpose(), ..sol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn own_rows_give_identity() {
        let a = DMatrix::from_fn(4, 7, |i, j| 1.0 / (1.0 + i as f64 + 2.3 * j as f64));
        let sol = ls_project(&a, &a).unwrap();
        let u = sol.x;
        assert!((u - DMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn first_row_of_identity() {
        let a = DMatrix::identity(2, 2);
        let basis = a.rows(0, 1).into_owned();
        let sol = ls_project(&basis, &a).unwrap();
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-15 && sol.x[(1, 0)].abs() < 1e-15);
        let res = &a - &sol.x * &basis;
        assert!((res.row(1).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn optimal_against_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(30, 50, |_, _| rng.gen_range(-1.0..1.0));
        let rows: Vec<usize> = (0..10).map(|i| 3 * i).collect();
        let basis = a.select_rows(rows.iter());
        let u = ls_project(&basis, &a).unwrap().x;
        let best = (&a - &u * &basis).norm();
        for _ in 0..1000 {
            let du = DMatrix::from_fn(30, 10, |_, _| rng.gen_range(-1e-3..1e-3));
            assert!(best <= (&a - (&u + du) * &basis).norm());
        }
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // Duplicate column: the minimum-norm solution splits weight equally.
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.0]);
        let sol = least_squares(&m, &b, 1e-12).unwrap();
        assert!(sol.rank_deficient);
        assert!((sol.x[(0, 0)] - 0.5).abs() < 1e-14 && (sol.x[(1, 0)] - 0.5).abs() < 1e-14);
    }
}
