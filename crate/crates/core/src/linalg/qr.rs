use nalgebra::DMatrix;

use super::blas::{apply_householder, make_householder, norm2};
use crate::{Error, Result};

/// Thin QR factorization `A = Q R` with `Q` n×p orthonormal and `R` p×m upper
/// triangular, `p = min(n, m)`.
#[derive(Debug, Clone)]
pub struct Qr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Unpivoted Householder QR.
pub fn householder_qr(a: &DMatrix<f64>) -> Qr {
    let (n, m) = a.shape();
    let p = n.min(m);
    let mut w = a.clone();
    let mut tau = vec![0.0; p];
    for s in 0..p {
        tau[s] = reflect_column(&mut w, s, s + 1..m);
    }
    let mut r = DMatrix::zeros(p, m);
    for j in 0..m {
        for i in 0..p.min(j + 1) {
            r[(i, j)] = w[(i, j)];
        }
    }
    let q = form_q(&w, &tau, p);
    Qr { q, r }
}

/// Reflects column `s` of `w` (rows `s..`) onto the axis and applies the
/// reflector to the columns in `cols`. Reflector tail is left below the diagonal.
pub(crate) fn reflect_column(w: &mut DMatrix<f64>, s: usize, cols: std::ops::Range<usize>) -> f64 {
    let n = w.nrows();
    if s >= n {
        return 0.0;
    }
    let data = w.as_mut_slice();
    let (head, tail) = data.split_at_mut(cols.start.max(s + 1) * n);
    let x = &mut head[s * n + s..s * n + n];
    let tau = make_householder(x);
    if tau != 0.0 {
        let v = &x[1..];
        let first = cols.start.max(s + 1);
        for j in first..cols.end {
            let off = (j - first) * n;
            apply_householder(v, tau, &mut tail[off + s..off + n]);
        }
    }
    tau
}

/// Accumulates the first `p` columns of `Q` from reflectors stored below the
/// diagonal of `w`.
pub(crate) fn form_q(w: &DMatrix<f64>, tau: &[f64], p: usize) -> DMatrix<f64> {
    let n = w.nrows();
    let mut q = DMatrix::zeros(n, p);
    for j in 0..p {
        q[(j, j)] = 1.0;
    }
    let qs = q.as_mut_slice();
    for s in (0..tau.len()).rev() {
        if tau[s] == 0.0 {
            continue;
        }
        let v = &w.as_slice()[s * n + s + 1..s * n + n];
        for j in s..p {
            apply_householder(v, tau[s], &mut qs[j * n + s..j * n + n]);
        }
    }
    q
}

/// When greedy column pivoting stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QrStop {
    /// Exactly this many steps (capped at `min(n, m)`).
    Rank(usize),
    /// Stop once every remaining column norm is `<= eps`.
    Absolute(f64),
    /// Stop once every remaining column norm is `<= rtol * |R[0,0]|`.
    Relative(f64),
}

/// Column-pivoted Householder QR in LAPACK layout: `R` in the upper triangle,
/// reflector tails below it.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    pub qr: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl PivotedQr {
    /// Overwrites `b` (n×q) with `Q^T b`.
    pub fn apply_qt(&self, b: &mut DMatrix<f64>) {
        let n = self.qr.nrows();
        assert_eq!(b.nrows(), n);
        let q = b.ncols();
        let bs = b.as_mut_slice();
        for s in 0..self.rank {
            let v = &self.qr.as_slice()[s * n + s + 1..s * n + n];
            for j in 0..q {
                apply_householder(v, self.tau[s], &mut bs[j * n + s..j * n + n]);
            }
        }
    }

    /// Overwrites `b` (n×q) with `Q b`.
    pub fn apply_q(&self, b: &mut DMatrix<f64>) {
        let n = self.qr.nrows();
        assert_eq!(b.nrows(), n);
        let q = b.ncols();
        let bs = b.as_mut_slice();
        for s in (0..self.rank).rev() {
            let v = &self.qr.as_slice()[s * n + s + 1..s * n + n];
            for j in 0..q {
                apply_householder(v, self.tau[s], &mut bs[j * n + s..j * n + n]);
            }
        }
    }

    /// `R` entry accessor.
    #[inline]
    pub fn r(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j);
        self.qr[(i, j)]
    }
}

/// Greedy column-pivoted QR. Pivot ties go to the lowest index. Trailing norms
/// are downdated and recomputed when cancellation makes the downdate unreliable.
pub fn pivoted_qr(a: DMatrix<f64>, stop: QrStop) -> Result<PivotedQr> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut st = GreedyState::new(a);
    let p = st.w.nrows().min(st.w.ncols());
    let cap = match stop {
        QrStop::Rank(k) => k.min(p),
        _ => p,
    };
    let mut first = 0.0;
    while st.rank < cap {
        let (jmax, nmax) = st.argmax_norm();
        let limit = match stop {
            QrStop::Rank(_) => 0.0,
            QrStop::Absolute(eps) => eps,
            QrStop::Relative(rtol) => rtol * first,
        };
        if nmax <= limit || (nmax == 0.0) {
            break;
        }
        st.step(jmax);
        if st.rank == 1 {
            first = st.w[(0, 0)].abs();
        }
    }
    Ok(PivotedQr { rank: st.rank, qr: st.w, tau: st.tau, perm: st.perm })
}

/// Working state shared by [`pivoted_qr`] and the strong RRQR driver.
pub(crate) struct GreedyState {
    pub w: DMatrix<f64>,
    pub perm: Vec<usize>,
    pub tau: Vec<f64>,
    pub rank: usize,
    norms: Vec<f64>,
    refs: Vec<f64>,
}

const DOWNDATE_TOL: f64 = 1.4901161193847656e-8; // sqrt(f64::EPSILON)

impl GreedyState {
    pub fn new(w: DMatrix<f64>) -> Self {
        let (n, m) = w.shape();
        let norms: Vec<f64> = (0..m).map(|j| norm2(&w.as_slice()[j * n..(j + 1) * n])).collect();
        GreedyState { refs: norms.clone(), norms, perm: (0..m).collect(), tau: Vec::new(), rank: 0, w }
    }

    /// Recomputes trailing norms exactly from rows `rank..`.
    pub fn refresh_norms(&mut self) {
        let n = self.w.nrows();
        let s = self.rank;
        for j in s..self.w.ncols() {
            let nj = norm2(&self.w.as_slice()[j * n + s..(j + 1) * n]);
            self.norms[j] = nj;
            self.refs[j] = nj;
        }
    }

    pub fn argmax_norm(&self) -> (usize, f64) {
        let mut best = (self.rank, -1.0);
        for j in self.rank..self.w.ncols() {
            if self.norms[j] > best.1 {
                best = (j, self.norms[j]);
            }
        }
        best
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        self.w.swap_columns(a, b);
        self.perm.swap(a, b);
        self.norms.swap(a, b);
        self.refs.swap(a, b);
    }

    /// One greedy step with pivot column `jmax`.
    pub fn step(&mut self, jmax: usize) {
        let s = self.rank;
        let (n, m) = self.w.shape();
        self.swap_cols(s, jmax);
        let tau = reflect_column(&mut self.w, s, s + 1..m);
        self.tau.truncate(s);
        self.tau.push(tau);
        self.rank += 1;
        let data = self.w.as_mut_slice();
        for j in s + 1..m {
            let nj = self.norms[j];
            if nj == 0.0 {
                continue;
            }
            let col = &data[j * n..(j + 1) * n];
            let r = col[s].abs() / nj;
            let temp = (1.0 - r * r).max(0.0);
            let ratio = nj / self.refs[j];
            if temp * ratio * ratio <= DOWNDATE_TOL {
                let fresh = if s + 1 < n { norm2(&col[s + 1..]) } else { 0.0 };
                self.norms[j] = fresh;
                self.refs[j] = fresh;
            } else {
                self.norms[j] = nj * temp.sqrt();
            }
        }
    }
}
