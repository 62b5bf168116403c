use nalgebra::DMatrix;

use super::blas::{axpy_neg, norm2};
use super::qr::{householder_qr, reflect_column, GreedyState};
use crate::{Error, Result};

/// Stopping rule for the greedy phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    /// Smallest rank such that every column of `R22` has 2-norm `<= eps`.
    Threshold(f64),
    /// Exactly this rank, capped at `min(n, m)` and at the exact rank.
    FixedRank(usize),
}

/// Strong rank-revealing QR of `A`: `A P = Q [R11 R12; 0 R22]`.
#[derive(Debug, Clone)]
pub struct SrrqrResult {
    pub perm: Vec<usize>,
    pub rank: usize,
    /// n×k, orthonormal columns.
    pub q: DMatrix<f64>,
    pub r11: DMatrix<f64>,
    pub r12: DMatrix<f64>,
    /// `R11^{-1} R12`.
    pub t: DMatrix<f64>,
    /// 2-norms of the columns of `R22`, in permuted order.
    pub residual_col_norms: Vec<f64>,
    /// Number of Gu–Eisenstat swaps performed.
    pub swaps: usize,
}

/// Factors produced by [`strong_rrqr`] without the explicit `Q`.
pub(crate) struct Factors {
    pub perm: Vec<usize>,
    pub rank: usize,
    /// Working matrix; `R11` and `R12` occupy the first `rank` rows.
    pub w: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub swaps: usize,
}

pub fn srrqr(a: &DMatrix<f64>, c: f64, stop: Stop) -> Result<SrrqrResult> {
    let f = strong_rrqr(a.clone(), c, stop)?;
    let (n, m) = a.shape();
    let k = f.rank;
    let r11 = DMatrix::from_fn(k, k, |i, j| if i <= j { f.w[(i, j)] } else { 0.0 });
    let r12 = DMatrix::from_fn(k, m - k, |i, j| f.w[(i, k + j)]);
    let a1 = DMatrix::from_fn(n, k, |i, j| a[(i, f.perm[j])]);
    let mut q = householder_qr(&a1).q;
    let fresh = householder_qr(&a1).r;
    for j in 0..k {
        if (fresh[(j, j)] < 0.0) != (r11[(j, j)] < 0.0) {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(SrrqrResult {
        perm: f.perm,
        rank: k,
        q,
        r11,
        r12,
        t: f.t,
        residual_col_norms: f.gamma,
        swaps: f.swaps,
    })
}

/// Same as [`srrqr`] but consumes `A` and skips forming `Q`.
pub fn srrqr_in_place(a: DMatrix<f64>, c: f64, stop: Stop) -> Result<SrrqrResult> {
    let (_, m) = a.shape();
    let f = strong_rrqr(a, c, stop)?;
    let k = f.rank;
    Ok(SrrqrResult {
        r11: DMatrix::from_fn(k, k, |i, j| if i <= j { f.w[(i, j)] } else { 0.0 }),
        r12: DMatrix::from_fn(k, m - k, |i, j| f.w[(i, k + j)]),
        q: DMatrix::zeros(0, k),
        perm: f.perm,
        rank: k,
        t: f.t,
        residual_col_norms: f.gamma,
        swaps: f.swaps,
    })
}

pub(crate) fn strong_rrqr(a: DMatrix<f64>, c: f64, stop: Stop) -> Result<Factors> {
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("srrqr: empty matrix".into()));
    }
    if !(c >= 1.0) {
        return Err(Error::InvalidArgument(format!("srrqr: entry bound C = {c} < 1")));
    }
    match stop {
        Stop::Threshold(eps) if !(eps >= 0.0) => {
            return Err(Error::InvalidArgument(format!("srrqr: threshold {eps} < 0")))
        }
        Stop::FixedRank(0) => return Err(Error::InvalidArgument("srrqr: rank 0".into())),
        _ => {}
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let p = n.min(m);
    let target = match stop {
        Stop::FixedRank(k) => k.min(p),
        Stop::Threshold(_) => p,
    };
    let max_swaps = 100 + 4 * m;
    let mut st = GreedyState::new(a);
    let mut swaps = 0;
    loop {
        while st.rank < target {
            let (j, nj) = st.argmax_norm();
            let done = match stop {
                Stop::Threshold(eps) => nj <= eps,
                Stop::FixedRank(_) => nj == 0.0,
            };
            if done {
                break;
            }
            st.step(j);
        }
        clear_reflectors(&mut st.w, st.rank);
        let (t, gamma, s) = swap_phase(&mut st, c, max_swaps - swaps.min(max_swaps));
        swaps += s;
        st.refresh_norms();
        let extend = match stop {
            Stop::Threshold(eps) => st.rank < p && gamma.iter().any(|&g| g > eps),
            Stop::FixedRank(_) => false,
        };
        if !extend {
            return Ok(Factors { perm: st.perm, rank: st.rank, w: st.w, t, gamma, swaps });
        }
    }
}

fn clear_reflectors(w: &mut DMatrix<f64>, k: usize) {
    let n = w.nrows();
    let data = w.as_mut_slice();
    for j in 0..k {
        data[j * n + j + 1..(j + 1) * n].fill(0.0);
    }
}

/// Solves `R11 x = b` in place, `R11` being the leading k×k block of `w`.
fn back_substitute(w: &[f64], n: usize, k: usize, b: &mut [f64]) {
    for i in (0..k).rev() {
        let bi = b[i] / w[i * n + i];
        b[i] = bi;
        if bi != 0.0 {
            axpy_neg(bi, &w[i * n..i * n + i], &mut b[..i]);
        }
    }
}

fn compute_t(w: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, m) = w.shape();
    let mut t = DMatrix::zeros(k, m - k);
    if k == 0 {
        return t;
    }
    let ws = w.as_slice();
    for (j, col) in t.as_mut_slice().chunks_exact_mut(k).enumerate() {
        col.copy_from_slice(&ws[(k + j) * n..(k + j) * n + k]);
        back_substitute(ws, n, k, col);
    }
    t
}

/// Row norms of `R11^{-1}`.
fn inverse_row_norms(w: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let n = w.nrows();
    let ws = w.as_slice();
    let mut acc = vec![0.0; k];
    let mut e = vec![0.0; k];
    for c in 0..k {
        e[..=c].fill(0.0);
        e[c] = 1.0;
        back_substitute(ws, n, c + 1, &mut e[..=c]);
        for i in 0..=c {
            acc[i] += e[i] * e[i];
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

/// Gu–Eisenstat swap phase with gain factor `c`. Returns the final `T`,
/// `R22` column norms and the number of swaps.
fn swap_phase(st: &mut GreedyState, c: f64, budget: usize) -> (DMatrix<f64>, Vec<f64>, usize) {
    let k = st.rank;
    let (n, m) = st.w.shape();
    let mut swaps = 0;
    loop {
        let ws = st.w.as_slice();
        let gamma: Vec<f64> =
            (k..m).map(|j| if k < n { norm2(&ws[j * n + k..(j + 1) * n]) } else { 0.0 }).collect();
        let t = compute_t(&st.w, k);
        if k == 0 || k == m || swaps >= budget {
            return (t, gamma, swaps);
        }
        let omega = inverse_row_norms(&st.w, k);
        let mut best = (0, 0, c * c);
        for j in 0..m - k {
            let col = &t.as_slice()[j * k..(j + 1) * k];
            let g = gamma[j];
            for i in 0..k {
                let rho = col[i] * col[i] + (g * omega[i]) * (g * omega[i]);
                if rho > best.2 {
                    best = (i, j, rho);
                }
            }
        }
        if best.2 <= c * c {
            return (t, gamma, swaps);
        }
        exchange(st, best.0, k + best.1);
        swaps += 1;
    }
}

/// Exchanges column `i < k` of the leading block with trailing column `jj >= k`
/// and restores the triangular structure.
fn exchange(st: &mut GreedyState, i: usize, jj: usize) {
    let k = st.rank;
    let (n, m) = st.w.shape();
    for c in i..k - 1 {
        st.swap_cols(c, c + 1);
    }
    for c in i..k - 1 {
        let a = st.w[(c, c)];
        let b = st.w[(c + 1, c)];
        if b == 0.0 {
            continue;
        }
        let r = a.hypot(b);
        let (cs, sn) = (a / r, b / r);
        let data = st.w.as_mut_slice();
        for j in c..m {
            let x = data[j * n + c];
            let y = data[j * n + c + 1];
            data[j * n + c] = cs * x + sn * y;
            data[j * n + c + 1] = cs * y - sn * x;
        }
        data[c * n + c + 1] = 0.0;
    }
    st.swap_cols(k - 1, jj);
    reflect_column(&mut st.w, k - 1, k..m);
    let data = st.w.as_mut_slice();
    data[(k - 1) * n + k..k * n].fill(0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    pub(crate) fn kahan(n: usize, cth: f64) -> DMatrix<f64> {
        let s = (1.0 - cth * cth).sqrt();
        DMatrix::from_fn(n, n, |i, j| {
            let scale = s.powi(i as i32);
            if i == j {
                scale
            } else if j > i {
                -cth * scale
            } else {
                0.0
            }
        })
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn diagonal_fixed_rank() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let f = srrqr(&a, 2.0, Stop::FixedRank(2)).unwrap();
        assert_eq!(&f.perm[..2], &[0, 1]);
        assert_eq!(max_abs(&f.t), 0.0);
        assert!((f.residual_col_norms[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ones_threshold_rank_one() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let f = srrqr(&a, 2.0, Stop::Threshold(1e-10)).unwrap();
        assert_eq!(f.rank, 1);
        assert!(f.residual_col_norms.iter().all(|&g| g <= 1e-10));
    }

    #[test]
    fn kahan_needs_swaps() {
        let a = kahan(96, 0.285);
        // T computed directly from the plain pivoted factors, independent of the swap code.
        let k = 95;
        let plain = super::super::qr::pivoted_qr(a.clone(), super::super::qr::QrStop::Rank(k)).unwrap();
        let r11 = DMatrix::from_fn(k, k, |i, j| if i <= j { plain.qr[(i, j)] } else { 0.0 });
        let r12 = DMatrix::from_fn(k, 1, |i, _| plain.qr[(i, k)]);
        let t_plain = r11.solve_upper_triangular(&r12).unwrap();
        assert!(max_abs(&t_plain) > 10.0, "plain pivoting max|T| = {}", max_abs(&t_plain));

        let f = srrqr(&a, 2.0, Stop::FixedRank(k)).unwrap();
        let t_direct = f.r11.solve_upper_triangular(&f.r12).unwrap();
        assert!(max_abs(&t_direct) <= 2.0 * (1.0 + 1e-8));
        assert!(f.swaps > 0);
    }

    #[test]
    fn factors_reconstruct_leading_columns() {
        let a = DMatrix::from_fn(40, 30, |i, j| 1.0 / (1.0 + (i as f64 - 0.5 * j as f64).abs()));
        let f = srrqr(&a, 1.5, Stop::FixedRank(12)).unwrap();
        let a1 = DMatrix::from_fn(40, 12, |i, j| a[(i, f.perm[j])]);
        let a2 = DMatrix::from_fn(40, 18, |i, j| a[(i, f.perm[12 + j])]);
        assert!((&f.q * &f.r11 - &a1).norm() <= 1e-12 * a1.norm());
        assert!((&f.q * &f.r12 - f.q.clone() * f.q.transpose() * &a2).norm() <= 1e-12 * a2.norm());
        let r22 = &a2 - &f.q * f.q.transpose() * &a2;
        for (j, g) in f.residual_col_norms.iter().enumerate() {
            assert!((r22.column(j).norm() - g).abs() <= 1e-12 * a.norm());
        }
        assert!((0..12).all(|i| f.r11[(i, i)] != 0.0));
    }

    #[test]
    fn rank_deficient_fixed_rank_stops_at_exact_rank() {
        let u = DMatrix::from_fn(6, 2, |i, j| (i + 2 * j) as f64 + 1.0);
        let v = DMatrix::from_fn(2, 5, |i, j| ((i + 1) * (j + 3)) as f64);
        let mut a = &u * &v;
        // Make it exactly rank 2 in floating point: zero a column and duplicate one.
        a.column_mut(4).fill(0.0);
        let f = srrqr(&a, 2.0, Stop::FixedRank(5)).unwrap();
        assert!(f.rank <= 4);
    }

    #[test]
    fn bad_arguments() {
        let a = DMatrix::from_element(2, 2, 1.0);
        assert!(srrqr(&a, 0.5, Stop::FixedRank(1)).is_err());
        assert!(srrqr(&a, 2.0, Stop::FixedRank(0)).is_err());
        assert!(srrqr(&a, 2.0, Stop::Threshold(-1.0)).is_err());
        assert!(srrqr(&DMatrix::zeros(0, 2), 2.0, Stop::FixedRank(1)).is_err());
    }
}
