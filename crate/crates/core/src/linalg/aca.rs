use nalgebra::DMatrix;

use super::blas::{axpy_neg, dot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcaStop {
    FixedRank(usize),
    /// Stop when `‖u_k‖ ‖v_k‖ <= tol · ‖S_k‖_F` (running estimate).
    Tolerance(f64),
}

/// Cross approximation `A ≈ U V` (n×r times r×m).
#[derive(Debug, Clone)]
pub struct AcaResult {
    pub rank: usize,
    pub row_pivots: Vec<usize>,
    pub col_pivots: Vec<usize>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// A zero pivot ended the iteration before the stop condition was met.
    pub early_termination: bool,
}

/// Partially pivoted adaptive cross approximation. `row(i, buf)` fills row `i`
/// (length `m`), `col(j, buf)` fills column `j` (length `n`). The first row
/// examined is row 0.
pub fn aca<R, C>(n: usize, m: usize, mut row: R, mut col: C, stop: AcaStop) -> Result<AcaResult>
where
    R: FnMut(usize, &mut [f64]),
    C: FnMut(usize, &mut [f64]),
{
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("aca: empty matrix".into()));
    }
    let max_rank = match stop {
        AcaStop::FixedRank(r) => r.min(n).min(m),
        AcaStop::Tolerance(_) => n.min(m),
    };
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    let (mut rp, mut cp) = (Vec::new(), Vec::new());
    let mut frob2 = 0.0;
    let mut next_row = Some(0);
    let mut early = false;
    let mut rbuf = vec![0.0; m];
    let mut cbuf = vec![0.0; n];
    while us.len() < max_rank {
        let Some(i) = next_row else {
            early = true;
            break;
        };
        row(i, &mut rbuf);
        for (u, v) in us.iter().zip(&vs) {
            axpy_neg(u[i], v, &mut rbuf);
        }
        row_used[i] = true;
        let j = argmax_unused(&rbuf, &col_used);
        let pivot = j.map(|j| rbuf[j]).unwrap_or(0.0);
        if pivot == 0.0 || !pivot.is_finite() {
            // Zero residual row: try the next unused row.
            next_row = row_used.iter().position(|u| !u);
            continue;
        }
        let j = j.unwrap();
        let v: Vec<f64> = rbuf.iter().map(|x| x / pivot).collect();
        col(j, &mut cbuf);
        for (u, vv) in us.iter().zip(&vs) {
            axpy_neg(vv[j], u, &mut cbuf);
        }
        let u = cbuf.clone();
        col_used[j] = true;
        rp.push(i);
        cp.push(j);
        let (nu2, nv2) = (dot(&u, &u), dot(&v, &v));
        let mut cross = 0.0;
        for (uo, vo) in us.iter().zip(&vs) {
            cross += dot(uo, &u) * dot(vo, &v);
        }
        frob2 += 2.0 * cross + nu2 * nv2;
        next_row = argmax_unused(&u, &row_used).or_else(|| row_used.iter().position(|u| !u));
        us.push(u);
        vs.push(v);
        if let AcaStop::Tolerance(tol) = stop {
            if (nu2 * nv2).sqrt() <= tol * frob2.max(0.0).sqrt() {
                break;
            }
        }
    }
    let r = us.len();
    if let AcaStop::FixedRank(k) = stop {
        if r < k.min(n).min(m) {
            early = true;
        }
    }
    let u = DMatrix::from_fn(n, r, |i, k| us[k][i]);
    let v = DMatrix::from_fn(r, m, |k, j| vs[k][j]);
    Ok(AcaResult { rank: r, row_pivots: rp, col_pivots: cp, u, v, early_termination: early })
}

fn argmax_unused(x: &[f64], used: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&xi, &ui)) in x.iter().zip(used).enumerate() {
        if !ui && best.map_or(true, |(_, b)| xi.abs() > b) {
            best = Some((i, xi.abs()));
        }
    }
    best.map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(a: &DMatrix<f64>, stop: AcaStop) -> AcaResult {
        let (n, m) = a.shape();
        aca(
            n,
            m,
            |i, buf| buf.iter_mut().enumerate().for_each(|(j, b)| *b = a[(i, j)]),
            |j, buf| buf.copy_from_slice(a.column(j).as_slice()),
            stop,
        )
        .unwrap()
    }

    #[test]
    fn rank_one_terminates() {
        let a = DMatrix::from_fn(5, 7, |i, j| (i as f64 + 1.0) * (2.0 - j as f64));
        let r = run(&a, AcaStop::Tolerance(1e-12));
        assert_eq!(r.rank, 1);
        assert!((&a - &r.u * &r.v).norm() <= 1e-14 * a.norm());
        let f = run(&a, AcaStop::FixedRank(3));
        assert_eq!(f.rank, 1);
        assert!(f.early_termination);
    }

    #[test]
    fn identity_pivots() {
        let a = DMatrix::<f64>::identity(2, 2);
        let r = run(&a, AcaStop::FixedRank(2));
        assert_eq!(r.row_pivots, vec![0, 1]);
        assert_eq!(r.col_pivots, vec![0, 1]);
        assert!((&a - &r.u * &r.v).norm() == 0.0);
        assert!(!r.early_termination);
    }

    #[test]
    fn interpolates_pivot_crosses() {
        let a = DMatrix::from_fn(40, 60, |i, j| 1.0 / (5.0 + i as f64 * 0.1 + j as f64 * 0.07));
        let r = run(&a, AcaStop::FixedRank(6));
        let e = &a - &r.u * &r.v;
        for &i in &r.row_pivots {
            assert!(e.row(i).amax() <= 1e-12 * a.amax());
        }
        for &j in &r.col_pivots {
            assert!(e.column(j).amax() <= 1e-12 * a.amax());
        }
    }
}
