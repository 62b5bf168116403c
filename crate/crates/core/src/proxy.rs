//! Proxy-point selection.
//!
//! A proxy set `Y_p ⊂ Y` stands in for the whole far field when compressing
//! `K(X0, ·)` restricted to `Y`. Three schemes are provided: uniform random
//! points in `Y`, a uniform grid on the inner boundary of `Y`, and column
//! skeletonization of `K(X_d, Y_d)` for candidate grids `X_d ⊂ X`, `Y_d ⊂ Y`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::geometry::{generate_points, Admissibility, DomainPair, GenMode, Point, PointSet, Region, ShellRegion};
use crate::kernels::{assemble, Kernel};
use crate::linalg::{select_columns, Stop};
use crate::{Error, Result};

/// Extra candidates near `X` for ID selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveCandidates {
    /// Fraction of `Y_d` placed in the near band.
    pub near_fraction: f64,
    /// Width of the near band around `X`, in units of `X`'s largest edge.
    pub band_width: f64,
}

impl Default for AdaptiveCandidates {
    fn default() -> Self {
        Self { near_fraction: 0.5, band_width: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdSelectParams {
    pub xd_count: usize,
    pub yd_count: usize,
    /// Relative floor on the truncation threshold (times `max|K(X_d, Y_d)|`).
    pub threshold_floor: f64,
    /// Per-axis density multiplier applied when the selection saturates.
    pub refine_factor: f64,
    /// Total number of selection attempts, including the first.
    pub max_rounds: usize,
    pub entry_bound: f64,
    pub adaptive: Option<AdaptiveCandidates>,
    /// Gap kept between `Y_d` and `X` when the kernel is singular and the pair
    /// touches, as a fraction of `X`'s largest edge.
    pub gap_fraction: f64,
}

impl Default for IdSelectParams {
    fn default() -> Self {
        Self {
            xd_count: 1500,
            yd_count: 15000,
            threshold_floor: 1e-13,
            refine_factor: 2.0,
            max_rounds: 3,
            entry_bound: 2.0,
            adaptive: None,
            gap_fraction: 0.05,
        }
    }
}

impl IdSelectParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("id selection: {m}")));
        if self.xd_count == 0 {
            return bad("xd_count must be positive");
        }
        if self.yd_count < self.xd_count {
            return bad("yd_count must be at least xd_count");
        }
        if !(self.refine_factor > 1.0) {
            return bad("refine_factor must exceed 1");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be positive");
        }
        if !(self.threshold_floor >= 0.0) || !(self.gap_fraction >= 0.0) {
            return bad("threshold_floor and gap_fraction must be non-negative");
        }
        if !(self.entry_bound >= 1.0) {
            return bad("entry bound must be at least 1");
        }
        if let Some(a) = self.adaptive {
            if !(0.0..=1.0).contains(&a.near_fraction) || !(a.band_width > 0.0) {
                return bad("adaptive candidates need near_fraction in [0,1] and a positive band");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProxyScheme {
    Random { n: usize, seed: u64 },
    Surface { n: usize },
    Id(IdSelectParams),
}

impl ProxyScheme {
    /// Stable text form, used in cache keys and CSV tags.
    pub fn tag(&self) -> String {
        match self {
            ProxyScheme::Random { n, seed } => format!("random:{n}:{seed}"),
            ProxyScheme::Surface { n } => format!("surface:{n}"),
            ProxyScheme::Id(p) => {
                let mut s = format!(
                    "id:{}:{}:{:e}:{}:{}:{}:{}",
                    p.xd_count, p.yd_count, p.threshold_floor, p.refine_factor, p.max_rounds, p.entry_bound, p.gap_fraction
                );
                if let Some(a) = p.adaptive {
                    s.push_str(&format!(":adaptive:{}:{}", a.near_fraction, a.band_width));
                }
                s
            }
        }
    }
}

/// Record of an ID selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDiagnostics {
    /// `(|X_d|, |Y_d|)` per round.
    pub candidate_sizes: Vec<(usize, usize)>,
    pub rounds: usize,
    /// Absolute truncation threshold of the last round.
    pub threshold: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ProxySet {
    pub points: PointSet,
    pub scheme: ProxyScheme,
    pub pair: DomainPair,
    pub selection_rank: usize,
    pub diagnostics: Option<SelectionDiagnostics>,
}

impl ProxySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The same set moved by `shift`, with its pair moved along.
    pub fn translated(&self, shift: &Point) -> Result<Self> {
        Ok(Self { points: self.points.translate(shift)?, pair: self.pair.translated(shift)?, ..self.clone() })
    }

    /// Wraps an externally supplied point set (e.g. read from a file).
    pub fn from_points(points: PointSet, pair: DomainPair) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("proxy set is empty".into()));
        }
        if points.dim() != pair.dim() {
            return Err(Error::DimensionMismatch { expected: pair.dim(), got: points.dim() });
        }
        let n = points.len();
        Ok(Self { points, scheme: ProxyScheme::Surface { n }, pair, selection_rank: n, diagnostics: None })
    }
}

/// Random or Surface selection. ID selection goes through [`select_proxy_id`].
pub fn select_proxy(_k: &Kernel, pair: &DomainPair, scheme: ProxyScheme) -> Result<ProxySet> {
    let region = Region::Shell(pair.target);
    let points = match scheme {
        ProxyScheme::Random { n, seed } => generate_points(&region, &GenMode::RandomUniform { n, seed })?,
        ProxyScheme::Surface { n } => generate_points(&region, &GenMode::SurfaceGrid { n })?,
        ProxyScheme::Id(_) => {
            return Err(Error::InvalidArgument("use select_proxy_id for ID selection".into()));
        }
    };
    Ok(ProxySet { selection_rank: points.len(), points, scheme, pair: *pair, diagnostics: None })
}

/// Candidate region for `Y_d`: the pair's far field, pulled away from `X`
/// when a singular kernel would otherwise be evaluated at touching points.
fn candidate_shell(k: &Kernel, pair: &DomainPair, params: &IdSelectParams) -> Result<ShellRegion> {
    let target = pair.target;
    // How far the inner box extends past the source on its tightest side.
    let clearance = (0..pair.dim())
        .map(|a| {
            let (il, ih) = (target.inner().lo().coords()[a], target.inner().hi().coords()[a]);
            let (sl, sh) = (pair.source.lo().coords()[a], pair.source.hi().coords()[a]);
            (sl - il).min(ih - sh)
        })
        .fold(f64::INFINITY, f64::min);
    if k.singular_on_diagonal() && clearance <= 1e-12 * pair.source.max_width() {
        if params.gap_fraction <= 0.0 {
            return Err(Error::SingularWeakPair);
        }
        let inner = target.inner().expanded(params.gap_fraction * pair.source.max_width())?;
        return ShellRegion::new(*target.outer(), inner);
    }
    Ok(target)
}

/// ID Selection: skeleton columns of `K(X_d, Y_d)` on uniform candidate grids,
/// refining the grids while the selection saturates.
pub fn select_proxy_id(k: &Kernel, pair: &DomainPair, params: IdSelectParams) -> Result<ProxySet> {
    params.validate()?;
    let start = Instant::now();
    let shell = candidate_shell(k, pair, &params)?;
    let d = pair.dim();
    let density = params.refine_factor.powi(d as i32);
    let mut sizes = Vec::new();
    let mut last_rank = 0;
    for round in 0..params.max_rounds {
        let scale = density.powi(round as i32);
        let nx = (params.xd_count as f64 * scale).round() as usize;
        let ny = (params.yd_count as f64 * scale).round() as usize;
        let xd = generate_points(&Region::Box(pair.source), &GenMode::GridApprox { n: nx })?;
        let yd = match params.adaptive {
            None => generate_points(&Region::Shell(shell), &GenMode::GridApprox { n: ny })?,
            Some(a) => {
                let edge = pair.source.max_width();
                let mut band = pair.source.expanded(a.band_width * edge)?;
                if shell.inner().contains_box(&band) {
                    band = shell.inner().expanded(a.band_width * edge)?;
                }
                let band = band.intersection(shell.outer())?;
                generate_points(
                    &Region::Shell(shell),
                    &GenMode::AdaptiveGrid { n: ny, near_fraction: a.near_fraction, near_band: band },
                )?
            }
        };
        sizes.push((xd.len(), yd.len()));
        let kd = assemble(k, &xd, &yd)?;
        let kmax = kd.amax();
        let rel = ((xd.len() as f64).sqrt() * f64::EPSILON).max(params.threshold_floor);
        let threshold = kmax * rel;
        let (cols, _) = select_columns(kd, params.entry_bound, Stop::Threshold(threshold))?;
        last_rank = cols.len();
        if cols.len() < xd.len().min(yd.len()) {
            let mut cols = cols;
            cols.sort_unstable();
            let points = yd.select(&cols);
            return Ok(ProxySet {
                selection_rank: points.len(),
                points,
                scheme: ProxyScheme::Id(params),
                pair: *pair,
                diagnostics: Some(SelectionDiagnostics {
                    candidate_sizes: sizes,
                    rounds: round + 1,
                    threshold,
                    seconds: start.elapsed().as_secs_f64(),
                }),
            });
        }
    }
    Err(Error::Saturated { rounds: params.max_rounds, rank: last_rank })
}

/// Any scheme, dispatched.
pub fn select(k: &Kernel, pair: &DomainPair, scheme: ProxyScheme) -> Result<ProxySet> {
    match scheme {
        ProxyScheme::Id(p) => select_proxy_id(k, pair, p),
        other => select_proxy(k, pair, other),
    }
}

/// Proxy sets keyed by kernel, pair geometry up to translation and scheme.
#[derive(Default)]
pub struct ProxyCache {
    map: Mutex<HashMap<String, ProxySet>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ProxyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("proxy cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the proxy set for `pair`, computing it in the canonical frame
    /// on a miss.
    pub fn get(&self, k: &Kernel, pair: &DomainPair, scheme: ProxyScheme) -> Result<ProxySet> {
        let (canon, shift) = pair.canonical()?;
        let invariant = k.is_translation_invariant();
        let key = cache_key(k, &canon, if invariant { None } else { Some(&shift) }, &scheme);
        if let Some(hit) = self.map.lock().expect("proxy cache poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return hit.translated(&shift);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let canonical_set = if invariant {
            select(k, &canon, scheme)?
        } else {
            select(k, pair, scheme)?.translated(&shift.scaled(-1.0))?
        };
        let out = canonical_set.translated(&shift)?;
        self.map.lock().expect("proxy cache poisoned").insert(key, canonical_set);
        Ok(out)
    }
}

fn cache_key(k: &Kernel, canon: &DomainPair, shift: Option<&Point>, scheme: &ProxyScheme) -> String {
    let adm = match canon.admissibility {
        Admissibility::Strong => "strong",
        Admissibility::Weak => "weak",
    };
    let boxes = [canon.source, *canon.target.outer(), *canon.target.inner()];
    let mut key = format!("{}|{adm}|{}", k.name(), scheme.tag());
    for b in boxes {
        key.push_str(&format!("|{:?}:{:?}", b.lo().coords(), b.hi().coords()));
    }
    if let Some(s) = shift {
        key.push_str(&format!("|at:{:?}", s.coords()));
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::make_degenerate;

    #[test]
    fn random_is_deterministic_and_in_shell() {
        let pair = DomainPair::far_apart(3).unwrap();
        let a = select_proxy(&Kernel::InverseDistance, &pair, ProxyScheme::Random { n: 2000, seed: 4 }).unwrap();
        let b = select_proxy(&Kernel::InverseDistance, &pair, ProxyScheme::Random { n: 2000, seed: 4 }).unwrap();
        assert_eq!(a.len(), 2000);
        assert_eq!(a.points, b.points);
        assert!(a.points.iter().all(|p| pair.target.contains(p)));
    }

    #[test]
    fn surface_four_points_one_per_face() {
        let target = ShellRegion::new(
            crate::geometry::AxisBox::cube(2, 9.0).unwrap(),
            crate::geometry::AxisBox::cube(2, 3.0).unwrap(),
        )
        .unwrap();
        let pair = DomainPair::new(crate::geometry::AxisBox::cube(2, 1.0).unwrap(), target, Admissibility::Strong, 1.0)
            .unwrap();
        let s = select_proxy(&Kernel::Multiquadric, &pair, ProxyScheme::Surface { n: 4 }).unwrap();
        assert_eq!(s.len(), 4);
        for p in s.points.iter() {
            assert!(p.iter().filter(|c| (c.abs() - 3.0).abs() < 1e-15).count() >= 1);
            assert!(pair.target.on_inner_boundary(p));
        }
    }

    #[test]
    fn zero_count_is_an_error() {
        let pair = DomainPair::far_apart(2).unwrap();
        assert!(select_proxy(&Kernel::Multiquadric, &pair, ProxyScheme::Random { n: 0, seed: 1 }).is_err());
        assert!(select_proxy(&Kernel::Multiquadric, &pair, ProxyScheme::Surface { n: 0 }).is_err());
    }

    #[test]
    fn constant_kernel_selects_one_point() {
        let pair = DomainPair::far_apart(2).unwrap();
        let k = make_degenerate(&pair, 1, 3).unwrap();
        let params = IdSelectParams { xd_count: 50, yd_count: 400, ..Default::default() };
        let s = select_proxy_id(&k, &pair, params).unwrap();
        assert_eq!(s.selection_rank, 1);
        assert_eq!(s.diagnostics.unwrap().rounds, 1);
    }

    #[test]
    fn saturation_refines_then_errors() {
        let pair = DomainPair::far_apart(2).unwrap();
        let params = IdSelectParams { xd_count: 4, yd_count: 16, max_rounds: 2, ..Default::default() };
        match select_proxy_id(&Kernel::InverseDistance, &pair, params) {
            Err(Error::Saturated { rounds: 2, .. }) => {}
            other => panic!("expected saturation, got {other:?}"),
        }
        let params = IdSelectParams { xd_count: 4, yd_count: 16, max_rounds: 3, ..Default::default() };
        let s = select_proxy_id(&Kernel::InverseDistance, &pair, params);
        if let Ok(s) = s {
            let sizes = s.diagnostics.unwrap().candidate_sizes;
            assert!(sizes.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1));
        }
    }

    #[test]
    fn singular_touching_pair_needs_gap() {
        let source = crate::geometry::AxisBox::cube(2, 1.0).unwrap();
        let target = ShellRegion::new(crate::geometry::AxisBox::cube(2, 7.0).unwrap(), source).unwrap();
        let pair = DomainPair::new(source, target, Admissibility::Weak, 1.0).unwrap();
        let params = IdSelectParams { xd_count: 20, yd_count: 200, gap_fraction: 0.0, ..Default::default() };
        assert!(matches!(select_proxy_id(&Kernel::InverseDistance, &pair, params), Err(Error::SingularWeakPair)));
        let params = IdSelectParams { xd_count: 20, yd_count: 200, ..Default::default() };
        let s = select_proxy_id(&Kernel::InverseDistance, &pair, params).unwrap();
        assert!(s.points.iter().all(|p| pair.target.contains(p)));
    }

    #[test]
    fn cache_shares_translated_pairs() {
        let cache = ProxyCache::new();
        let pair = DomainPair::far_apart(2).unwrap();
        let moved = pair.translated(&Point::new(&[4.0, -2.0]).unwrap()).unwrap();
        let scheme = ProxyScheme::Random { n: 300, seed: 9 };
        let a = cache.get(&Kernel::Multiquadric, &pair, scheme).unwrap();
        let b = cache.get(&Kernel::Multiquadric, &moved, scheme).unwrap();
        assert_eq!((cache.hits(), cache.misses(), cache.len()), (1, 1, 1));
        assert!(b.points.iter().all(|p| moved.target.contains(p)));
        for (p, q) in a.points.iter().zip(b.points.iter()) {
            assert!((q[0] - p[0] - 4.0).abs() < 1e-12 && (q[1] - p[1] + 2.0).abs() < 1e-12);
        }
        let smaller = DomainPair::new(
            crate::geometry::AxisBox::cube(2, 0.5).unwrap(),
            ShellRegion::new(
                crate::geometry::AxisBox::cube(2, 4.5).unwrap(),
                crate::geometry::AxisBox::cube(2, 1.5).unwrap(),
            )
            .unwrap(),
            Admissibility::Strong,
            1.0,
        )
        .unwrap();
        cache.get(&Kernel::Multiquadric, &smaller, scheme).unwrap();
        assert_eq!(cache.len(), 2);
    }
}
