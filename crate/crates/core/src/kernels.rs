//! Kernel functions and dense block assembly.
//!
//! `InverseDistance` and `Multiquadric` are translation invariant,
//! `K(x, y) = k(x - y)`. `Degenerate` is a finite separable sum
//! `Σ σ_i ψ_i(x) φ_i(y)` with a known rank; it is tied to one domain pair and
//! serves as an exact oracle for rank-dependent code paths.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{AxisBox, DomainPair, PointSet, MAX_DIM};
use crate::{Error, Result};

/// Distances below this are treated as coincident for singular kernels.
pub const COINCIDENCE_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    /// `1 / |x - y|`
    InverseDistance,
    /// `sqrt(1 + |x - y|^2)`
    Multiquadric,
    Degenerate(DegenerateKernel),
}

impl Kernel {
    pub fn singular_on_diagonal(&self) -> bool {
        matches!(self, Kernel::InverseDistance)
    }

    pub fn is_symmetric(&self) -> bool {
        !matches!(self, Kernel::Degenerate(_))
    }

    pub fn is_translation_invariant(&self) -> bool {
        !matches!(self, Kernel::Degenerate(_))
    }

    /// CLI name; see [`Kernel::parse`].
    pub fn name(&self) -> String {
        match self {
            Kernel::InverseDistance => "inv-dist".into(),
            Kernel::Multiquadric => "multiquadric".into(),
            Kernel::Degenerate(d) => format!("degenerate:r={}:seed={}", d.rank(), d.seed),
        }
    }

    /// Parses `inv-dist`, `multiquadric` or `degenerate:r=<r>:seed=<s>`. The
    /// degenerate kernel needs the domain pair its basis is scaled to.
    pub fn parse(name: &str, pair: Option<&DomainPair>) -> Result<Self> {
        match name {
            "inv-dist" => Ok(Kernel::InverseDistance),
            "multiquadric" => Ok(Kernel::Multiquadric),
            _ => {
                let rest = name
                    .strip_prefix("degenerate")
                    .ok_or_else(|| Error::Parse(format!("unknown kernel '{name}'")))?;
                let mut r = None;
                let mut seed = 0u64;
                for part in rest.split(':').filter(|s| !s.is_empty()) {
                    if let Some(v) = part.strip_prefix("r=") {
                        r = Some(v.parse().map_err(|_| Error::Parse(format!("bad rank in '{name}'")))?);
                    } else if let Some(v) = part.strip_prefix("seed=") {
                        seed = v.parse().map_err(|_| Error::Parse(format!("bad seed in '{name}'")))?;
                    } else {
                        return Err(Error::Parse(format!("unknown kernel option '{part}'")));
                    }
                }
                let r = r.ok_or_else(|| Error::Parse(format!("'{name}' needs r=<rank>")))?;
                let pair = pair.ok_or_else(|| Error::InvalidArgument("degenerate kernel needs a domain pair".into()))?;
                make_degenerate(pair, r, seed)
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::InverseDistance => 1.0 / dist2(x, y).sqrt(),
            Kernel::Multiquadric => (1.0 + dist2(x, y)).sqrt(),
            Kernel::Degenerate(d) => d.eval(x, y),
        }
    }
}

#[inline]
fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `K(x, y) = Σ_i σ_i ψ_i(x) φ_i(y)` with tensor Chebyshev factors.
///
/// `ψ_i` is the i-th tensor Chebyshev polynomial (graded by total degree)
/// on the source box, `φ = Q T` where `T` holds the same polynomials on the
/// target's outer box and `Q` is a seeded random orthogonal matrix.
/// `σ_i = 2^-i` for `r <= 20`; larger ranks use `σ_i = 2^(-20 i / r)` so the
/// smallest weight stays near `1e-6` and the rank is numerically visible.
#[derive(Clone, Debug, PartialEq)]
pub struct DegenerateKernel {
    x_box: AxisBox,
    y_box: AxisBox,
    terms: Vec<[usize; MAX_DIM]>,
    sigma: Vec<f64>,
    mixing: DMatrix<f64>,
    seed: u64,
}

impl DegenerateKernel {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    fn max_degree(&self) -> usize {
        self.terms.iter().flat_map(|t| t.iter().copied()).max().unwrap_or(0)
    }

    /// Chebyshev tensor features of `p` scaled to `bx`.
    fn cheb(&self, bx: &AxisBox, p: &[f64], out: &mut [f64]) {
        let deg = self.max_degree();
        let d = bx.dim();
        let mut table = [[0.0; 64]; MAX_DIM];
        for k in 0..d {
            let t = 2.0 * (p[k] - bx.lo().coords()[k]) / bx.width(k) - 1.0;
            table[k][0] = 1.0;
            if deg >= 1 {
                table[k][1] = t;
            }
            for n in 2..=deg {
                table[k][n] = 2.0 * t * table[k][n - 1] - table[k][n - 2];
            }
        }
        for (o, term) in out.iter_mut().zip(&self.terms) {
            *o = (0..d).map(|k| table[k][term[k]]).product();
        }
    }

    /// `σ_i ψ_i(x)` for each point, as an `r x n` matrix.
    pub fn source_features(&self, xs: &PointSet) -> DMatrix<f64> {
        let r = self.rank();
        let mut out = DMatrix::zeros(r, xs.len());
        for (j, p) in xs.iter().enumerate() {
            let mut col = out.column_mut(j);
            self.cheb(&self.x_box, p, col.as_mut_slice());
            for i in 0..r {
                col[i] *= self.sigma[i];
            }
        }
        out
    }

    /// `φ(y)` for each point, as an `r x m` matrix.
    pub fn target_features(&self, ys: &PointSet) -> DMatrix<f64> {
        let r = self.rank();
        let mut raw = DMatrix::zeros(r, ys.len());
        for (j, p) in ys.iter().enumerate() {
            self.cheb(&self.y_box, p, raw.column_mut(j).as_mut_slice());
        }
        &self.mixing * raw
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = self.rank();
        let mut px = vec![0.0; r];
        let mut ty = vec![0.0; r];
        self.cheb(&self.x_box, x, &mut px);
        self.cheb(&self.y_box, y, &mut ty);
        let phi = &self.mixing * DMatrix::from_column_slice(r, 1, &ty);
        (0..r).map(|i| self.sigma[i] * px[i] * phi[i]).sum()
    }
}

/// Graded multi-indices: total degree first, then lexicographic.
fn graded_terms(dim: usize, count: usize) -> Vec<[usize; MAX_DIM]> {
    let mut out = Vec::with_capacity(count);
    let mut total = 0;
    while out.len() < count {
        let mut level = Vec::new();
        let mut idx = [0usize; MAX_DIM];
        collect_terms(dim, 0, total, &mut idx, &mut level);
        level.sort();
        level.reverse();
        out.extend(level.into_iter().take(count - out.len()));
        total += 1;
    }
    out
}

fn collect_terms(dim: usize, axis: usize, remaining: usize, idx: &mut [usize; MAX_DIM], out: &mut Vec<[usize; MAX_DIM]>) {
    if axis + 1 == dim {
        idx[axis] = remaining;
        out.push(*idx);
        return;
    }
    for v in 0..=remaining {
        idx[axis] = v;
        collect_terms(dim, axis + 1, remaining - v, idx, out);
    }
    idx[axis] = 0;
}

/// Degenerate test kernel of exact rank `r` over `pair`.
pub fn make_degenerate(pair: &DomainPair, r: usize, seed: u64) -> Result<Kernel> {
    if r == 0 {
        return Err(Error::InvalidArgument("degenerate kernel rank must be at least 1".into()));
    }
    let dim = pair.dim();
    let terms = graded_terms(dim, r);
    if terms.iter().flat_map(|t| t.iter()).any(|&deg| deg >= 64) {
        return Err(Error::InvalidArgument(format!("rank {r} needs polynomial degree above 63")));
    }
    let rate = (20.0 / r as f64).min(1.0);
    let sigma = (1..=r).map(|i| 0.5f64.powf(rate * i as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::from_fn(r, r, |_, _| StandardNormal.sample(&mut rng));
    let mixing = crate::linalg::householder_qr(&gauss).q;
    Ok(Kernel::Degenerate(DegenerateKernel {
        x_box: pair.source,
        y_box: *pair.target.outer(),
        terms,
        sigma,
        mixing,
        seed,
    }))
}

fn check_dims(k: &Kernel, xs: &PointSet, ys: &PointSet) -> Result<()> {
    if xs.dim() != ys.dim() {
        return Err(Error::DimensionMismatch { expected: xs.dim(), got: ys.dim() });
    }
    if let Kernel::Degenerate(d) = k {
        if d.x_box.dim() != xs.dim() {
            return Err(Error::DimensionMismatch { expected: d.x_box.dim(), got: xs.dim() });
        }
    }
    Ok(())
}

/// `K(X, Y)`: entry `(i, j) = K(x_i, y_j)`.
pub fn assemble(k: &Kernel, xs: &PointSet, ys: &PointSet) -> Result<DMatrix<f64>> {
    check_dims(k, xs, ys)?;
    if let Kernel::Degenerate(d) = k {
        return Ok(d.source_features(xs).transpose() * d.target_features(ys));
    }
    let mut out = DMatrix::zeros(xs.len(), ys.len());
    fill_block(k, xs, ys, false, false, out.as_mut_slice())?;
    Ok(out)
}

/// `K(X, Y)^T`: an `|Y| x |X|` matrix whose column `i` is the row `K(x_i, Y)`.
/// This is the layout the column-pivoted factorizations consume.
pub fn assemble_transposed(k: &Kernel, xs: &PointSet, ys: &PointSet) -> Result<DMatrix<f64>> {
    check_dims(k, xs, ys)?;
    if let Kernel::Degenerate(d) = k {
        return Ok(d.target_features(ys).transpose() * d.source_features(xs));
    }
    let mut out = DMatrix::zeros(ys.len(), xs.len());
    fill_block(k, ys, xs, true, false, out.as_mut_slice())?;
    Ok(out)
}

/// Dense `K(X, X)` block for the near field of a symmetric kernel matrix.
/// Coincident pairs of a singular kernel (the diagonal) are set to zero.
pub fn assemble_self_block(k: &Kernel, xs: &PointSet, ys: &PointSet) -> Result<DMatrix<f64>> {
    if !k.singular_on_diagonal() {
        return assemble(k, xs, ys);
    }
    check_dims(k, xs, ys)?;
    let mut out = DMatrix::zeros(xs.len(), ys.len());
    fill_block(k, xs, ys, false, true, out.as_mut_slice())?;
    Ok(out)
}

/// Fills a column-major `|rows| x |cols|` buffer. With `swapped == false`
/// entry `(i, j) = K(rows_i, cols_j)`, otherwise `K(cols_j, rows_i)`.
/// With `zero_coincident` a singular kernel gives 0 on coincident pairs
/// instead of an error.
fn fill_block(
    k: &Kernel,
    rows: &PointSet,
    cols: &PointSet,
    swapped: bool,
    zero_coincident: bool,
    out: &mut [f64],
) -> Result<()> {
    match rows.dim() {
        1 => fill_dim::<1>(k, rows, cols, swapped, zero_coincident, out),
        2 => fill_dim::<2>(k, rows, cols, swapped, zero_coincident, out),
        _ => fill_dim::<3>(k, rows, cols, swapped, zero_coincident, out),
    }
}

fn fill_dim<const D: usize>(
    k: &Kernel,
    rows: &PointSet,
    cols: &PointSet,
    swapped: bool,
    zero_coincident: bool,
    out: &mut [f64],
) -> Result<()> {
    let n = rows.len();
    let rp = rows.flat();
    let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
    for (j, c) in cols.iter().enumerate() {
        let mut cj = [0.0; D];
        cj.copy_from_slice(c);
        let col = &mut out[j * n..(j + 1) * n];
        match k {
            Kernel::InverseDistance => {
                for (i, o) in col.iter_mut().enumerate() {
                    let mut r2 = 0.0;
                    for a in 0..D {
                        let t = rp[i * D + a] - cj[a];
                        r2 += t * t;
                    }
                    if r2 < tol2 {
                        if zero_coincident {
                            *o = 0.0;
                            continue;
                        }
                        let (row, col) = if swapped { (j, i) } else { (i, j) };
                        return Err(Error::CoincidentPoints { row, col });
                    }
                    *o = 1.0 / r2.sqrt();
                }
            }
            Kernel::Multiquadric => {
                for (i, o) in col.iter_mut().enumerate() {
                    let mut r2 = 0.0;
                    for a in 0..D {
                        let t = rp[i * D + a] - cj[a];
                        r2 += t * t;
                    }
                    *o = (1.0 + r2).sqrt();
                }
            }
            Kernel::Degenerate(_) => {
                for (i, o) in col.iter_mut().enumerate() {
                    let r = rows.point(i);
                    *o = if swapped { k.eval(c, r) } else { k.eval(r, c) };
                }
            }
        }
    }
    Ok(())
}
