use nalgebra::DMatrix;

use super::blas::dot;
use super::{householder_qr, pivoted_qr, QrStop};
use crate::{Error, Result};

/// Thin SVD `A = U diag(s) Vt`, singular values non-increasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

impl Svd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt
    }
}

const MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD preconditioned by column-pivoted QR: with
/// `A P = Q R`, Jacobi runs on `R^T`, which converges in few sweeps.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    let (n, m) = a.shape();
    if n < m {
        let t = svd(&a.transpose());
        return Svd { u: t.vt.transpose(), s: t.s, vt: t.u.transpose() };
    }
    let Ok(f) = pivoted_qr(a.clone(), QrStop::Rank(m)) else {
        // Non-finite input: plain QR, the result carries the NaNs.
        let qr = householder_qr(a);
        let (ur, s, v) = jacobi(qr.r);
        return Svd { u: qr.q * ur, s, vt: v.transpose() };
    };
    // QR steps past the numerical rank keep shrinking rounding noise toward
    // subnormals, where Jacobi crawls; flush it.
    let big = (0..m).map(|i| f.qr[(i, i)].abs()).fold(0.0, f64::max);
    let tiny = f64::EPSILON * f64::EPSILON * big;
    let w = DMatrix::from_fn(m, m, |i, j| {
        let x = if i >= j { f.qr[(j, i)] } else { 0.0 };
        if x.abs() < tiny { 0.0 } else { x }
    });
    // R^T = Uw S Vw^T, so A = (Q Vw) S (P Uw)^T.
    let (uw, s, vw) = jacobi(w);
    let mut u = DMatrix::zeros(n, m);
    u.rows_mut(0, m).copy_from(&vw);
    f.apply_q(&mut u);
    let mut vt = DMatrix::zeros(m, m);
    for (j, &pj) in f.perm.iter().enumerate() {
        for k in 0..m {
            vt[(k, pj)] = uw[(j, k)];
        }
    }
    Svd { u, s, vt }
}

/// Jacobi on the columns of square `w`: returns `(U, s, V)` with `w = U diag(s) V^T`,
/// sorted by non-increasing `s`.
fn jacobi(mut w: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let m = w.ncols();
    let mut v = DMatrix::<f64>::identity(m, m);
    let tol = (m as f64).sqrt() * f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                if rotate(&mut w, &mut v, p, q, tol) {
                    rotated = true;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<(f64, usize)> = (0..m).map(|j| (w.column(j).norm(), j)).collect();
    s.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut u = DMatrix::zeros(w.nrows(), m);
    let mut vs = DMatrix::zeros(m, m);
    for (k, &(sk, j)) in s.iter().enumerate() {
        if sk > 0.0 {
            u.column_mut(k).copy_from(&(w.column(j) / sk));
        }
        vs.column_mut(k).copy_from(&v.column(j));
    }
    (u, s.into_iter().map(|x| x.0).collect(), vs)
}

fn rotate(w: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, tol: f64) -> bool {
    let n = w.nrows();
    let ws = w.as_mut_slice();
    let (lo, hi) = ws.split_at_mut(q * n);
    let wp = &mut lo[p * n..(p + 1) * n];
    let wq = &mut hi[..n];
    let alpha = dot(wp, wp);
    let beta = dot(wq, wq);
    let gamma = dot(wp, wq);
    if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
        return false;
    }
    let zeta = (beta - alpha) / (2.0 * gamma);
    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = c * t;
    plane(wp, wq, c, s);
    let m = v.nrows();
    let vs = v.as_mut_slice();
    let (lo, hi) = vs.split_at_mut(q * m);
    plane(&mut lo[p * m..(p + 1) * m], &mut hi[..m], c, s);
    true
}

#[inline]
fn plane(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    svd(a).s
}

/// Best rank-`r` approximation in the Frobenius norm.
pub fn truncated_svd(a: &DMatrix<f64>, r: usize) -> Result<Svd> {
    let p = a.nrows().min(a.ncols());
    if r == 0 || r > p {
        return Err(Error::InvalidArgument(format!("truncated_svd: rank {r} outside 1..={p}")));
    }
    let f = svd(a);
    Ok(Svd {
        u: f.u.columns(0, r).into_owned(),
        s: f.s[..r].to_vec(),
        vt: f.vt.rows(0, r).into_owned(),
    })
}
