//! Proxy-point compression of a kernel block `K(X0, Y0)` with `X0 ⊂ X`,
//! `Y0 ⊂ Y`: an interpolative decomposition of `K(X0, Y_p)` gives skeleton
//! rows `X_rep` and weights `W`, and `W K(X_rep, Y0)` approximates the block
//! for any `Y0` in the far field.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::geometry::{generate_points, DomainPair, GenMode, PointSet, Region, ShellRegion};
use crate::kernels::{assemble, assemble_transposed, Kernel};
use crate::linalg::{id_columns, ls_project, IdResult, LsFactor, Stop, DEFAULT_RCOND};
use crate::proxy::ProxySet;
use crate::{Error, Result};

/// Default relative tolerance; the absolute threshold is `tol · √|Y_p|`.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default entry bound for the interpolation matrices.
pub const DEFAULT_C: f64 = 2.0;

/// `tol · √n`: per-row threshold giving an average entrywise error of `tol`
/// over `n` columns.
pub fn threshold_for(tol: f64, n: usize) -> f64 {
    tol * (n as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct CompressionResult {
    /// Indices into `X0` of the skeleton rows, in pivot order.
    pub x_rep: Vec<usize>,
    /// `|X0| × |X_rep|`; row `x_rep[a]` is `e_a`.
    pub w: DMatrix<f64>,
    pub epsilon: f64,
    pub entry_bound: f64,
    pub proxy: Arc<ProxySet>,
    /// `‖e_i(Y_p)‖₂` reported by the factorization.
    pub row_residuals: Vec<f64>,
    /// Set by [`refine_weights`] when `K(X_rep, Y0)` was rank deficient.
    pub rank_deficient: bool,
}

impl CompressionResult {
    pub fn rank(&self) -> usize {
        self.x_rep.len()
    }

    fn from_id(id: IdResult, proxy: Arc<ProxySet>) -> Self {
        Self {
            x_rep: id.skeleton,
            w: id.u,
            epsilon: id.epsilon,
            entry_bound: id.entry_bound,
            proxy,
            row_residuals: id.row_residuals,
            rank_deficient: false,
        }
    }
}

fn check_source(x0: &PointSet, pair: &DomainPair) -> Result<()> {
    if x0.is_empty() {
        return Err(Error::InvalidArgument("X0 is empty".into()));
    }
    if x0.dim() != pair.dim() {
        return Err(Error::DimensionMismatch { expected: pair.dim(), got: x0.dim() });
    }
    if let Some(index) = x0.iter().position(|p| !pair.source.contains(p)) {
        return Err(Error::OutsideSource { index });
    }
    Ok(())
}

/// ID of `K(X0, Y_p)`. Never looks at any `Y0`.
pub fn compress_proxy(k: &Kernel, x0: &PointSet, proxy: &ProxySet, stop: Stop, c: f64) -> Result<CompressionResult> {
    check_source(x0, &proxy.pair)?;
    if proxy.is_empty() {
        return Err(Error::InvalidArgument("proxy set is empty".into()));
    }
    let at = assemble_transposed(k, x0, &proxy.points)?;
    let id = id_columns(at, c, stop)?;
    Ok(CompressionResult::from_id(id, Arc::new(proxy.clone())))
}

/// `W K(X_rep, Y0)` together with the number of `Y0` points outside the far
/// field (for which the error bound does not apply).
#[derive(Debug, Clone)]
pub struct Approximation {
    pub matrix: DMatrix<f64>,
    pub outside_target: usize,
}

pub fn skeleton_block(res: &CompressionResult, k: &Kernel, x0: &PointSet, y0: &PointSet) -> Result<DMatrix<f64>> {
    assemble(k, &x0.select(&res.x_rep), y0)
}

pub fn evaluate_approx(res: &CompressionResult, k: &Kernel, x0: &PointSet, y0: &PointSet) -> Result<Approximation> {
    let outside_target = y0.iter().filter(|p| !res.proxy.pair.target.contains(p)).count();
    let kr = skeleton_block(res, k, x0, y0)?;
    Ok(Approximation { matrix: &res.w * kr, outside_target })
}

/// Replaces `W` by the Frobenius-optimal weights for `K(X0, Y0)` on the same
/// skeleton.
pub fn refine_weights(res: &CompressionResult, k: &Kernel, x0: &PointSet, y0: &PointSet) -> Result<CompressionResult> {
    if y0.len() < res.rank() {
        return Err(Error::InvalidArgument(format!("refinement needs |Y0| >= rank = {}", res.rank())));
    }
    let full = assemble(k, x0, y0)?;
    let basis = full.select_rows(res.x_rep.iter());
    let sol = ls_project(&basis, &full)?;
    let resid = &full - &sol.x * &basis;
    Ok(CompressionResult {
        w: sol.x,
        row_residuals: (0..x0.len()).map(|i| resid.row(i).norm()).collect(),
        rank_deficient: sol.rank_deficient,
        ..res.clone()
    })
}

/// Indices of `Y0` inside the near region and the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridSplit {
    pub near: Vec<usize>,
    pub far: Vec<usize>,
}

/// ID of `K(X0, Y0_near ∪ Y_p,far)`: the near part of `Y0` is kept literally,
/// the far part is represented by the far-field proxies.
pub fn compress_hybrid(
    k: &Kernel,
    x0: &PointSet,
    y0: &PointSet,
    near_region: &ShellRegion,
    proxy_far: &ProxySet,
    stop: Stop,
    c: f64,
) -> Result<(CompressionResult, HybridSplit)> {
    if x0.is_empty() {
        return Err(Error::InvalidArgument("X0 is empty".into()));
    }
    let (near, far): (Vec<usize>, Vec<usize>) = (0..y0.len()).partition(|&j| near_region.contains(y0.point(j)));
    let cols = y0.select(&near).concat(&proxy_far.points)?;
    let at = assemble_transposed(k, x0, &cols)?;
    let id = id_columns(at, c, stop)?;
    Ok((CompressionResult::from_id(id, Arc::new(proxy_far.clone())), HybridSplit { near, far }))
}

/// Error quantities of a compression evaluated on a probe set.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// `‖e_i(Y_p)‖₂`.
    pub err_yp: Vec<f64>,
    /// `‖e_i(Y0)‖₂` over the probe set.
    pub err_y0: Vec<f64>,
    /// `max_y |e_i(y)|` over the probe set.
    pub max_pointwise: Vec<f64>,
    /// `max_y |e_i(y)| / (‖e_i(Y_p)‖/√|Y_p|)`; `None` for skeleton rows.
    pub ratio_max: Vec<Option<f64>>,
    /// `(‖e_i(Y0)‖/√|Y0|) / (‖e_i(Y_p)‖/√|Y_p|)`; `None` for skeleton rows.
    pub ratio_avg: Vec<Option<f64>>,
    /// `max_{i,y} |e_i(y) − e_i(Y_p) S(y)|`.
    pub representation_deviation: f64,
    /// Largest `‖S(y)‖₂` over the probe set.
    pub s_column_max: f64,
}

impl ErrorReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratio_max.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }

    pub fn mean_ratio_avg(&self) -> f64 {
        let v: Vec<f64> = self.ratio_avg.iter().flatten().copied().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn max_ratio_avg(&self) -> f64 {
        self.ratio_avg.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }
}

/// Points used to estimate `S(y)`: a grid in `X` with `4|Y_p|` points.
pub fn default_xp(pair: &DomainPair, n_proxy: usize) -> Result<PointSet> {
    generate_points(&Region::Box(pair.source), &GenMode::GridApprox { n: 4 * n_proxy.max(1) })
}

/// `S(Y) = K(Xp, Y_p)^† K(Xp, Y)`, the coefficients expressing `K(·, y)` on
/// `X` through the proxy columns.
pub struct TransferOperator<'a> {
    k: &'a Kernel,
    xp: &'a PointSet,
    factor: LsFactor,
}

impl<'a> TransferOperator<'a> {
    pub fn new(k: &'a Kernel, proxy: &PointSet, xp: &'a PointSet) -> Result<Self> {
        if xp.len() < proxy.len() {
            return Err(Error::InvalidArgument(format!(
                "|Xp| = {} must be at least |Y_p| = {}",
                xp.len(),
                proxy.len()
            )));
        }
        let factor = LsFactor::new(&assemble(k, xp, proxy)?, DEFAULT_RCOND)?;
        Ok(Self { k, xp, factor })
    }

    pub fn apply(&self, ys: &PointSet) -> Result<DMatrix<f64>> {
        self.factor.solve(&assemble(self.k, self.xp, ys)?)
    }
}

const PROBE_CHUNK: usize = 2048;

/// Evaluates `e_i(y)` on `probe` directly and compares it with the
/// representation `e_i(Y_p) S(y)`.
pub fn diagnostics(k: &Kernel, x0: &PointSet, res: &CompressionResult, probe: &PointSet, xp: &PointSet) -> Result<ErrorReport> {
    let yp = &res.proxy.points;
    let n = x0.len();
    let xr = x0.select(&res.x_rep);
    let e_p = assemble(k, x0, yp)? - &res.w * assemble(k, &xr, yp)?;
    let err_yp: Vec<f64> = (0..n).map(|i| e_p.row(i).norm()).collect();
    let s_op = TransferOperator::new(k, yp, xp)?;

    let mut sq = vec![0.0; n];
    let mut max_pointwise = vec![0.0f64; n];
    let mut deviation = 0.0f64;
    let mut s_column_max = 0.0f64;
    for start in (0..probe.len()).step_by(PROBE_CHUNK) {
        let idx: Vec<usize> = (start..(start + PROBE_CHUNK).min(probe.len())).collect();
        let chunk = probe.select(&idx);
        let kx = assemble(k, x0, &chunk)?;
        let kr = kx.select_rows(res.x_rep.iter());
        let e = kx - &res.w * kr;
        let s = s_op.apply(&chunk)?;
        for j in 0..s.ncols() {
            s_column_max = s_column_max.max(s.column(j).norm());
        }
        let dev = &e - &e_p * s;
        deviation = deviation.max(dev.amax());
        for j in 0..e.ncols() {
            for i in 0..n {
                let v = e[(i, j)];
                sq[i] += v * v;
                max_pointwise[i] = max_pointwise[i].max(v.abs());
            }
        }
    }
    let err_y0: Vec<f64> = sq.into_iter().map(f64::sqrt).collect();
    let mut is_skel = vec![false; n];
    for &i in &res.x_rep {
        is_skel[i] = true;
    }
    let sqrt_p = (yp.len() as f64).sqrt();
    let sqrt_0 = (probe.len() as f64).sqrt();
    let ratio = |num: f64, i: usize| -> Option<f64> {
        let den = err_yp[i] / sqrt_p;
        (!is_skel[i] && den > 0.0).then(|| num / den)
    };
    let ratio_max = (0..n).map(|i| ratio(max_pointwise[i], i)).collect();
    let ratio_avg = (0..n).map(|i| ratio(err_y0[i] / sqrt_0, i)).collect();
    Ok(ErrorReport {
        err_yp,
        err_y0,
        max_pointwise,
        ratio_max,
        ratio_avg,
        representation_deviation: deviation,
        s_column_max,
    })
}

/// Root-mean-square entrywise error `‖A − B‖_F / √(nm)`.
pub fn average_entry_error(exact: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    (exact - approx).norm() / ((exact.len().max(1)) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainPair, GenMode};
    use crate::kernels::make_degenerate;
    use crate::proxy::{select_proxy, ProxyScheme};

    fn random_in(region: &Region, n: usize, seed: u64) -> PointSet {
        generate_points(region, &GenMode::RandomUniform { n, seed }).unwrap()
    }

    #[test]
    fn rank_one_kernel_is_exact() {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = make_degenerate(&pair, 1, 5).unwrap();
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 30, seed: 2 }).unwrap();
        let x0 = random_in(&Region::Box(pair.source), 40, 8);
        let res = compress_proxy(&k, &x0, &proxy, Stop::Threshold(1e-10), 2.0).unwrap();
        assert_eq!(res.rank(), 1);
        assert!(res.row_residuals.iter().all(|&r| r <= 1e-13));
    }

    #[test]
    fn fixed_rank_is_exact_count() {
        let pair = DomainPair::far_apart(2).unwrap();
        let proxy = select_proxy(&Kernel::Multiquadric, &pair, ProxyScheme::Random { n: 60, seed: 2 }).unwrap();
        let x0 = random_in(&Region::Box(pair.source), 30, 8);
        for r in [1, 5, 12, 30, 45] {
            let res = compress_proxy(&Kernel::Multiquadric, &x0, &proxy, Stop::FixedRank(r), 2.0).unwrap();
            assert_eq!(res.rank(), r.min(30));
        }
    }

    #[test]
    fn source_outside_box_rejected() {
        let pair = DomainPair::far_apart(2).unwrap();
        let proxy = select_proxy(&Kernel::Multiquadric, &pair, ProxyScheme::Random { n: 10, seed: 2 }).unwrap();
        let x0 = PointSet::from_flat(2, vec![0.0, 0.0, 1.5, 0.0], crate::geometry::Provenance::Explicit).unwrap();
        assert!(matches!(
            compress_proxy(&Kernel::Multiquadric, &x0, &proxy, Stop::FixedRank(1), 2.0),
            Err(Error::OutsideSource { index: 1 })
        ));
        let empty = PointSet::empty(2).unwrap();
        assert!(compress_proxy(&Kernel::Multiquadric, &empty, &proxy, Stop::FixedRank(1), 2.0).is_err());
    }

    #[test]
    fn evaluation_at_proxy_point_matches_proxy_residual() {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = Kernel::InverseDistance;
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 80, seed: 3 }).unwrap();
        let x0 = random_in(&Region::Box(pair.source), 50, 4);
        let res = compress_proxy(&k, &x0, &proxy, Stop::Threshold(1e-6), 2.0).unwrap();
        let y = proxy.points.select(&[7]);
        let approx = evaluate_approx(&res, &k, &x0, &y).unwrap();
        assert_eq!(approx.outside_target, 0);
        let exact = assemble(&k, &x0, &y).unwrap();
        let e_col = exact - approx.matrix;
        let full_e = assemble(&k, &x0, &proxy.points).unwrap()
            - &res.w * assemble(&k, &x0.select(&res.x_rep), &proxy.points).unwrap();
        for i in 0..50 {
            assert!((e_col[(i, 0)] - full_e[(i, 7)]).abs() <= 1e-15);
        }
    }

    #[test]
    fn refinement_on_proxies_does_not_increase_error() {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = Kernel::Multiquadric;
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 100, seed: 3 }).unwrap();
        let x0 = random_in(&Region::Box(pair.source), 60, 4);
        let res = compress_proxy(&k, &x0, &proxy, Stop::Threshold(1e-5), 2.0).unwrap();
        let refined = refine_weights(&res, &k, &x0, &proxy.points).unwrap();
        for (a, b) in refined.row_residuals.iter().zip(&res.row_residuals) {
            assert!(*a <= b * (1.0 + 1e-10) + 1e-12, "{a} {b}");
        }
        let repeated = PointSet::from_flat(2, [5.0, 5.0].repeat(res.rank().max(2)), crate::geometry::Provenance::Explicit)
            .unwrap();
        if res.rank() > 1 {
            assert!(refine_weights(&res, &k, &x0, &repeated).unwrap().rank_deficient);
        }
    }

    #[test]
    fn hybrid_with_far_only_targets_matches_proxy_compression() {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = Kernel::InverseDistance;
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 70, seed: 1 }).unwrap();
        let x0 = random_in(&Region::Box(pair.source), 40, 2);
        let y0 = random_in(&Region::Shell(pair.target), 100, 3);
        let near = ShellRegion::new(
            crate::geometry::AxisBox::cube(2, 2.0).unwrap(),
            crate::geometry::AxisBox::cube(2, 1.0).unwrap(),
        )
        .unwrap();
        let (h, split) = compress_hybrid(&k, &x0, &y0, &near, &proxy, Stop::Threshold(1e-7), 2.0).unwrap();
        assert!(split.near.is_empty());
        let p = compress_proxy(&k, &x0, &proxy, Stop::Threshold(1e-7), 2.0).unwrap();
        assert_eq!(h.x_rep, p.x_rep);
        assert_eq!(h.w, p.w);
    }

    #[test]
    fn degenerate_representation_is_exact() {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = make_degenerate(&pair, 8, 1).unwrap();
        let proxy = select_proxy(&k, &pair, ProxyScheme::Random { n: 40, seed: 1 }).unwrap();
        let x0 = random_in(&Region::Box(pair.source), 60, 2);
        let res = compress_proxy(&k, &x0, &proxy, Stop::FixedRank(5), 2.0).unwrap();
        let probe = random_in(&Region::Shell(pair.target), 500, 3);
        let xp = default_xp(&pair, proxy.len()).unwrap();
        let rep = diagnostics(&k, &x0, &res, &probe, &xp).unwrap();
        assert!(rep.representation_deviation <= 1e-10, "{}", rep.representation_deviation);
        for &i in &res.x_rep {
            assert_eq!(rep.err_y0[i], 0.0);
            assert!(rep.ratio_max[i].is_none());
        }
    }
}
