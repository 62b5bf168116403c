//! Points, axis-aligned boxes, shell regions and the domain pairs they form.
//!
//! All values here are immutable once built. Point generation is deterministic:
//! random sampling uses ChaCha8 seeded through `seed_from_u64`, so a given
//! `(n, seed)` produces the same coordinates on every platform.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Relative tolerance used by membership tests.
const MEMBERSHIP_TOL: f64 = 1e-12;

fn check_dim(d: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(d))
    }
}

fn expect_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        check_dim(coords.len())?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { coords: c, dim: coords.len() })
    }

    pub fn splat(dim: usize, value: f64) -> Result<Self> {
        Self::new(&vec![value; dim])
    }

    pub fn origin(dim: usize) -> Result<Self> {
        Self::splat(dim, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        for c in &mut out.coords[..self.dim] {
            *c *= s;
        }
        out
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

/// Closed axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisBox {
    lo: Point,
    hi: Point,
}

impl AxisBox {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        expect_dim(lo.dim(), hi.dim())?;
        if lo.coords().iter().zip(hi.coords()).any(|(a, b)| a >= b) {
            return Err(Error::InvalidArgument(format!(
                "box requires lo < hi on every axis, got {lo:?} and {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Cube of half-width `half` centred at `center`.
    pub fn centered(center: Point, half: f64) -> Result<Self> {
        if !(half > 0.0) {
            return Err(Error::InvalidArgument(format!("half-width must be positive, got {half}")));
        }
        let lo: Vec<f64> = center.coords().iter().map(|c| c - half).collect();
        let hi: Vec<f64> = center.coords().iter().map(|c| c + half).collect();
        Self::new(Point::new(&lo)?, Point::new(&hi)?)
    }

    /// `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Result<Self> {
        Self::centered(Point::origin(dim)?, half)
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi.coords[axis] - self.lo.coords[axis]
    }

    pub fn min_width(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).fold(0.0, f64::max)
    }

    pub fn center(&self) -> Point {
        let mut c = self.lo;
        for k in 0..self.dim() {
            c.coords[k] = 0.5 * (self.lo.coords[k] + self.hi.coords[k]);
        }
        c
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    fn tol(&self, axis: usize) -> f64 {
        MEMBERSHIP_TOL * self.width(axis).max(self.lo.coords[axis].abs()).max(self.hi.coords[axis].abs())
    }

    /// Closed membership, tolerant to rounding at the faces.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && (0..self.dim()).all(|k| {
                let t = self.tol(k);
                p[k] >= self.lo.coords[k] - t && p[k] <= self.hi.coords[k] + t
            })
    }

    /// Strict interior membership; points within rounding distance of a face
    /// are treated as on the boundary.
    pub fn contains_interior(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && (0..self.dim()).all(|k| {
                let t = self.tol(k);
                p[k] > self.lo.coords[k] + t && p[k] < self.hi.coords[k] - t
            })
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        self.contains(other.lo.coords()) && self.contains(other.hi.coords())
    }

    /// Largest per-axis separation between the two boxes. Positive when the
    /// boxes are apart, zero when they touch, negative when they overlap.
    pub fn max_norm_gap(&self, other: &AxisBox) -> Result<f64> {
        expect_dim(self.dim(), other.dim())?;
        Ok((0..self.dim())
            .map(|k| {
                self.lo.coords[k].max(other.lo.coords[k]) - self.hi.coords[k].min(other.hi.coords[k])
            })
            .fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn translated(&self, shift: &Point) -> Result<Self> {
        expect_dim(self.dim(), shift.dim())?;
        let mut out = *self;
        for k in 0..self.dim() {
            out.lo.coords[k] += shift.coords[k];
            out.hi.coords[k] += shift.coords[k];
        }
        Ok(out)
    }

    /// Grows every face outward by `margin` (shrinks for negative margins).
    pub fn expanded(&self, margin: f64) -> Result<Self> {
        let mut out = *self;
        for k in 0..self.dim() {
            out.lo.coords[k] -= margin;
            out.hi.coords[k] += margin;
        }
        if (0..self.dim()).any(|k| out.lo.coords[k] > out.hi.coords[k]) {
            return Err(Error::InvalidArgument(format!("margin {margin} collapses the box")));
        }
        Ok(out)
    }

    /// Overlap of two boxes; errors when they are disjoint.
    pub fn intersection(&self, other: &AxisBox) -> Result<Self> {
        expect_dim(self.dim(), other.dim())?;
        let mut out = *self;
        for k in 0..self.dim() {
            out.lo.coords[k] = self.lo.coords[k].max(other.lo.coords[k]);
            out.hi.coords[k] = self.hi.coords[k].min(other.hi.coords[k]);
            if out.lo.coords[k] > out.hi.coords[k] {
                return Err(Error::EmptyRegion("boxes do not overlap".into()));
            }
        }
        Ok(out)
    }

    /// Subdivides into `2^d` equal children; child `c` takes the upper half
    /// along axis `k` when bit `k` of `c` is set.
    pub fn child(&self, c: usize) -> Self {
        let mid = self.center();
        let mut out = *self;
        for k in 0..self.dim() {
            if c >> k & 1 == 1 {
                out.lo.coords[k] = mid.coords[k];
            } else {
                out.hi.coords[k] = mid.coords[k];
            }
        }
        out
    }
}

/// `outer` minus the open interior of `inner`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellRegion {
    outer: AxisBox,
    inner: AxisBox,
}

impl ShellRegion {
    pub fn new(outer: AxisBox, inner: AxisBox) -> Result<Self> {
        expect_dim(outer.dim(), inner.dim())?;
        if !outer.contains_box(&inner) {
            return Err(Error::InvalidArgument("shell inner box must lie inside the outer box".into()));
        }
        Ok(Self { outer, inner })
    }

    pub fn outer(&self) -> &AxisBox {
        &self.outer
    }

    pub fn inner(&self) -> &AxisBox {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.outer.dim()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.outer.contains(p) && !self.inner.contains_interior(p)
    }

    /// True when the inner box fills the outer box.
    pub fn is_empty(&self) -> bool {
        self.inner.contains_box(&self.outer)
    }

    pub fn volume(&self) -> f64 {
        (self.outer.volume() - self.inner.volume()).max(0.0)
    }

    /// True when `p` lies on the boundary of the inner box (the surface Γ).
    pub fn on_inner_boundary(&self, p: &[f64]) -> bool {
        self.inner.contains(p) && !self.inner.contains_interior(p)
    }

    pub fn translated(&self, shift: &Point) -> Result<Self> {
        Ok(Self { outer: self.outer.translated(shift)?, inner: self.inner.translated(shift)? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Box(AxisBox),
    Shell(ShellRegion),
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box(b) => b.dim(),
            Region::Shell(s) => s.dim(),
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Region::Box(b) => b.contains(p),
            Region::Shell(s) => s.contains(p),
        }
    }

    pub fn bounding_box(&self) -> &AxisBox {
        match self {
            Region::Box(b) => b,
            Region::Shell(s) => s.outer(),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Region::Box(b) => b.volume(),
            Region::Shell(s) => s.volume(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Admissibility {
    Strong,
    Weak,
}

impl std::str::FromStr for Admissibility {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(Self::Strong),
            "weak" => Ok(Self::Weak),
            _ => Err(Error::Parse(format!("unknown admissibility '{s}' (strong|weak)"))),
        }
    }
}

/// Default strong-admissibility constant for standalone pair validation.
pub const DEFAULT_ETA: f64 = 1.0;

/// Source box `X` and far-field shell `Y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainPair {
    pub source: AxisBox,
    pub target: ShellRegion,
    pub admissibility: Admissibility,
    pub eta: f64,
}

impl DomainPair {
    pub fn new(source: AxisBox, target: ShellRegion, admissibility: Admissibility, eta: f64) -> Result<Self> {
        expect_dim(source.dim(), target.dim())?;
        if !target.inner().contains_box(&source) {
            return Err(Error::InvalidArgument("source box must lie inside the shell's inner box".into()));
        }
        if admissibility == Admissibility::Strong {
            let diam = source.max_width().min(target.outer().max_width());
            if diam > eta * separation(&source, target.inner()) * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "pair violates strong admissibility with eta = {eta}"
                )));
            }
        }
        Ok(Self { source, target, admissibility, eta })
    }

    /// `X = [-1,1]^d`, `Y = [-9,9]^d \ [-3,3]^d`.
    pub fn far_apart(dim: usize) -> Result<Self> {
        let target = ShellRegion::new(AxisBox::cube(dim, 9.0)?, AxisBox::cube(dim, 3.0)?)?;
        Self::new(AxisBox::cube(dim, 1.0)?, target, Admissibility::Strong, DEFAULT_ETA)
    }

    /// `X = [-1,1]^d`, `Y = [-9,9]^d \ [-1.1,1.1]^d`.
    pub fn nearby(dim: usize) -> Result<Self> {
        let target = ShellRegion::new(AxisBox::cube(dim, 9.0)?, AxisBox::cube(dim, 1.1)?)?;
        Self::new(AxisBox::cube(dim, 1.0)?, target, Admissibility::Weak, DEFAULT_ETA)
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn translated(&self, shift: &Point) -> Result<Self> {
        Ok(Self {
            source: self.source.translated(shift)?,
            target: self.target.translated(shift)?,
            admissibility: self.admissibility,
            eta: self.eta,
        })
    }

    /// The same pair moved so that the source box is centred at the origin,
    /// together with the shift that undoes the move.
    pub fn canonical(&self) -> Result<(Self, Point)> {
        let c = self.source.center();
        Ok((self.translated(&c.scaled(-1.0))?, c))
    }
}

/// Max-norm distance from a box to the complement of a containing box.
fn separation(source: &AxisBox, inner: &AxisBox) -> f64 {
    (0..source.dim())
        .map(|k| {
            (inner.hi().coords()[k] - source.hi().coords()[k]).min(source.lo().coords()[k] - inner.lo().coords()[k])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Tree admissibility between two boxes of equal size. Strong means the boxes
/// are separated by at least one box width along some axis (non-adjacent);
/// weak means their interiors are disjoint.
pub fn admissible(a: &AxisBox, b: &AxisBox, kind: Admissibility) -> Result<bool> {
    let gap = a.max_norm_gap(b)?;
    let w = a.min_width().min(b.min_width());
    Ok(match kind {
        Admissibility::Strong => gap >= w * (1.0 - 1e-9),
        Admissibility::Weak => gap >= -1e-12 * w,
    })
}

/// Generic strong admissibility `min(diam) <= eta * dist` with max-norm
/// diameters and distance.
pub fn admissible_eta(a: &AxisBox, b: &AxisBox, eta: f64) -> Result<bool> {
    let dist = a.max_norm_gap(b)?;
    if dist <= 0.0 {
        return Ok(false);
    }
    Ok(a.max_width().min(b.max_width()) <= eta * dist)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    RandomUniform(u64),
    Grid,
    SurfaceGrid,
    File,
    /// Built programmatically from explicit coordinates.
    Explicit,
}

/// Ordered point cloud; indices are stable and are what skeletons refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    provenance: Provenance,
}

impl PointSet {
    pub fn from_flat(dim: usize, coords: Vec<f64>, provenance: Provenance) -> Result<Self> {
        check_dim(dim)?;
        if coords.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { dim, coords, provenance })
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        let dim = points.first().map(Point::dim).ok_or_else(|| Error::InvalidArgument("no points".into()))?;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            expect_dim(dim, p.dim())?;
            coords.extend_from_slice(p.coords());
        }
        Self::from_flat(dim, coords, Provenance::Explicit)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::from_flat(dim, Vec::new(), Provenance::Explicit)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self { dim: self.dim, coords, provenance: self.provenance }
    }

    pub fn concat(&self, other: &PointSet) -> Result<Self> {
        expect_dim(self.dim, other.dim)?;
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let provenance = if self.provenance == other.provenance { self.provenance } else { Provenance::Explicit };
        Ok(Self { dim: self.dim, coords, provenance })
    }

    /// Pointwise `p + shift`, order preserved.
    pub fn translate(&self, shift: &Point) -> Result<Self> {
        expect_dim(self.dim, shift.dim())?;
        let s = shift.coords();
        let coords = self.coords.chunks_exact(self.dim).flat_map(|p| p.iter().zip(s).map(|(a, b)| a + b)).collect();
        Ok(Self { dim: self.dim, coords, provenance: self.provenance })
    }

    pub fn all_in(&self, region: &Region) -> bool {
        self.iter().all(|p| region.contains(p))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# dim={} count={}", self.dim, self.len())?;
        for p in self.iter() {
            let line: Vec<String> = p.iter().map(|c| format!("{c}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty point-set file".into()))??;
        let (dim, count) = parse_header(&header)?;
        let mut coords = Vec::with_capacity(dim * count);
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != dim {
                return Err(Error::Parse(format!("expected {dim} fields, got '{line}'")));
            }
            for f in fields {
                coords.push(f.parse::<f64>().map_err(|e| Error::Parse(format!("bad coordinate '{f}': {e}")))?);
            }
        }
        if coords.len() != dim * count {
            return Err(Error::Parse(format!("header declares {count} points, found {}", coords.len() / dim)));
        }
        Self::from_flat(dim, coords, Provenance::File)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let body = line.strip_prefix('#').ok_or_else(|| Error::Parse(format!("missing header, got '{line}'")))?;
    let mut dim = None;
    let mut count = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("dim=") {
            dim = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("count=") {
            count = v.parse().ok();
        }
    }
    match (dim, count) {
        (Some(d), Some(c)) => Ok((d, c)),
        _ => Err(Error::Parse(format!("malformed header '{line}'"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GenMode {
    RandomUniform { n: usize, seed: u64 },
    /// Cell-centred product grid on the bounding box, filtered to the region;
    /// returns the first achievable count `>= n`.
    GridApprox { n: usize },
    /// Uniform grid on the faces of a shell's inner box.
    SurfaceGrid { n: usize },
    /// `near_fraction` of the points on a grid in `near_band \ inner`, the rest
    /// on a grid in `outer \ near_band`.
    AdaptiveGrid { n: usize, near_fraction: f64, near_band: AxisBox },
}

impl GenMode {
    fn count(&self) -> usize {
        match *self {
            GenMode::RandomUniform { n, .. }
            | GenMode::GridApprox { n }
            | GenMode::SurfaceGrid { n }
            | GenMode::AdaptiveGrid { n, .. } => n,
        }
    }
}

pub fn generate_points(region: &Region, mode: &GenMode) -> Result<PointSet> {
    if mode.count() == 0 {
        return Err(Error::InvalidArgument("point count must be at least 1".into()));
    }
    if let Region::Shell(s) = region {
        if s.is_empty() {
            return Err(Error::EmptyRegion("shell inner box fills the outer box".into()));
        }
    }
    match *mode {
        GenMode::RandomUniform { n, seed } => random_uniform(region, n, seed),
        GenMode::GridApprox { n } => grid_approx(region, n),
        GenMode::SurfaceGrid { n } => match region {
            Region::Shell(s) => surface_grid(s.inner(), n),
            Region::Box(_) => Err(Error::InvalidArgument("surface grids need a shell region".into())),
        },
        GenMode::AdaptiveGrid { n, near_fraction, near_band } => {
            let Region::Shell(s) = region else {
                return Err(Error::InvalidArgument("adaptive grids need a shell region".into()));
            };
            adaptive_grid(s, n, near_fraction, &near_band)
        }
    }
}

fn random_uniform(region: &Region, n: usize, seed: u64) -> Result<PointSet> {
    let bbox = region.bounding_box();
    let d = bbox.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * d);
    let mut p = [0.0; MAX_DIM];
    let mut count = 0;
    while count < n {
        for k in 0..d {
            p[k] = bbox.lo().coords()[k] + bbox.width(k) * rng.gen::<f64>();
        }
        if region.contains(&p[..d]) {
            coords.extend_from_slice(&p[..d]);
            count += 1;
        }
    }
    PointSet::from_flat(d, coords, Provenance::RandomUniform(seed))
}

/// Cell-centred grid of `counts[k]` cells per axis over `bbox`, keeping points
/// accepted by `keep`. Axis 0 varies fastest.
fn product_grid(bbox: &AxisBox, counts: &[usize], keep: impl Fn(&[f64]) -> bool) -> Vec<f64> {
    let d = bbox.dim();
    let total: usize = counts.iter().product();
    let mut out = Vec::new();
    let mut p = [0.0; MAX_DIM];
    for flat in 0..total {
        let mut rem = flat;
        for k in 0..d {
            let i = rem % counts[k];
            rem /= counts[k];
            p[k] = bbox.lo().coords()[k] + (i as f64 + 0.5) * bbox.width(k) / counts[k] as f64;
        }
        if keep(&p[..d]) {
            out.extend_from_slice(&p[..d]);
        }
    }
    out
}

fn grid_approx(region: &Region, n: usize) -> Result<PointSet> {
    grid_filtered(region, n, |_| true)
}

fn grid_filtered(region: &Region, n: usize, extra: impl Fn(&[f64]) -> bool) -> Result<PointSet> {
    let bbox = region.bounding_box();
    let d = bbox.dim();
    let vol = region.volume();
    if !(vol > 0.0) {
        return Err(Error::EmptyRegion("region has zero volume".into()));
    }
    let mut spacing = (vol / n as f64).powf(1.0 / d as f64);
    for _ in 0..200 {
        let counts: Vec<usize> = (0..d).map(|k| ((bbox.width(k) / spacing).ceil() as usize).max(1)).collect();
        let coords = product_grid(bbox, &counts, |p| region.contains(p) && extra(p));
        if coords.len() / d >= n {
            return PointSet::from_flat(d, coords, Provenance::Grid);
        }
        spacing *= 0.97;
    }
    Err(Error::EmptyRegion(format!("could not place {n} grid points in the region")))
}

fn surface_grid(inner: &AxisBox, n: usize) -> Result<PointSet> {
    let d = inner.dim();
    if d == 1 && n > 2 {
        return Err(Error::InvalidArgument("a 1D surface has only two points".into()));
    }
    let faces = 2 * d;
    let mut coords = Vec::with_capacity(n * d);
    for f in 0..faces {
        let q = n / faces + usize::from(f < n % faces);
        if q == 0 {
            continue;
        }
        let axis = f / 2;
        let fixed = if f % 2 == 0 { inner.lo().coords()[axis] } else { inner.hi().coords()[axis] };
        let free: Vec<usize> = (0..d).filter(|&k| k != axis).collect();
        // Near-uniform grid on the face, then an evenly spaced subset of q.
        let counts: Vec<usize> = match free.len() {
            0 => vec![],
            1 => vec![q],
            _ => {
                let ratio = inner.width(free[0]) / inner.width(free[1]);
                let a = ((q as f64 * ratio).sqrt().ceil() as usize).clamp(1, q);
                vec![a, q.div_ceil(a)]
            }
        };
        let total: usize = counts.iter().product::<usize>().max(1);
        let mut p = [0.0; MAX_DIM];
        p[axis] = fixed;
        for s in 0..q {
            let flat = s * total / q;
            let mut rem = flat;
            for (j, &k) in free.iter().enumerate() {
                let i = rem % counts[j];
                rem /= counts[j];
                p[k] = inner.lo().coords()[k] + (i as f64 + 0.5) * inner.width(k) / counts[j] as f64;
            }
            coords.extend_from_slice(&p[..d]);
        }
    }
    PointSet::from_flat(d, coords, Provenance::SurfaceGrid)
}

fn adaptive_grid(shell: &ShellRegion, n: usize, near_fraction: f64, band: &AxisBox) -> Result<PointSet> {
    if !(0.0..=1.0).contains(&near_fraction) {
        return Err(Error::InvalidArgument(format!("near fraction {near_fraction} outside [0, 1]")));
    }
    if !band.contains_box(shell.inner()) || !shell.outer().contains_box(band) {
        return Err(Error::InvalidArgument("near band must sit between the inner and outer boxes".into()));
    }
    let n_near = ((n as f64) * near_fraction).round() as usize;
    let n_far = n - n_near;
    let d = shell.dim();
    let mut coords = Vec::new();
    if n_near > 0 {
        let near = Region::Shell(ShellRegion::new(*band, *shell.inner())?);
        coords.extend_from_slice(grid_approx(&near, n_near)?.flat());
    }
    if n_far > 0 {
        let far = Region::Shell(ShellRegion::new(*shell.outer(), *band)?);
        coords.extend_from_slice(grid_filtered(&far, n_far, |p| !band.contains(p))?.flat());
    }
    PointSet::from_flat(d, coords, Provenance::Grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    fn unit_box(origin: &[f64]) -> AxisBox {
        let hi: Vec<f64> = origin.iter().map(|c| c + 1.0).collect();
        AxisBox::new(pt(origin), pt(&hi)).unwrap()
    }

    fn shell(outer: f64, inner: f64) -> ShellRegion {
        ShellRegion::new(AxisBox::cube(2, outer).unwrap(), AxisBox::cube(2, inner).unwrap()).unwrap()
    }

    #[test]
    fn random_uniform_is_reproducible() {
        let region = Region::Box(unit_box(&[0.0, 0.0]));
        let mode = GenMode::RandomUniform { n: 4, seed: 7 };
        let a = generate_points(&region, &mode).unwrap();
        let b = generate_points(&region, &mode).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert!(a.all_in(&region));
    }

    #[test]
    fn grid_approx_in_shell() {
        let region = Region::Shell(shell(9.0, 3.0));
        let ps = generate_points(&region, &GenMode::GridApprox { n: 100 }).unwrap();
        assert!(ps.len() >= 100);
        for p in ps.iter() {
            let m = p.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            assert!((3.0..=9.0).contains(&m), "{p:?}");
        }
    }

    #[test]
    fn adaptive_grid_splits_near_and_far() {
        let region = Region::Shell(shell(9.0, 1.1));
        let band = AxisBox::cube(2, 2.0).unwrap();
        let ps = generate_points(&region, &GenMode::AdaptiveGrid { n: 15000, near_fraction: 0.5, near_band: band })
            .unwrap();
        let near = ps.iter().filter(|p| band.contains(p)).count();
        let far = ps.len() - near;
        assert!((7000..=8200).contains(&near), "near = {near}");
        assert!((7000..=8200).contains(&far), "far = {far}");
        assert!(ps.all_in(&region));
    }

    #[test]
    fn surface_grid_one_point_per_face() {
        let region = Region::Shell(shell(9.0, 3.0));
        let ps = generate_points(&region, &GenMode::SurfaceGrid { n: 4 }).unwrap();
        assert_eq!(ps.len(), 4);
        for p in ps.iter() {
            assert!(p.iter().any(|c| (c.abs() - 3.0).abs() < 1e-15), "{p:?}");
        }
    }

    #[test]
    fn surface_grid_exact_count_3d() {
        let s = ShellRegion::new(AxisBox::cube(3, 9.0).unwrap(), AxisBox::cube(3, 3.0).unwrap()).unwrap();
        let ps = generate_points(&Region::Shell(s), &GenMode::SurfaceGrid { n: 101 }).unwrap();
        assert_eq!(ps.len(), 101);
        assert!(ps.iter().all(|p| s.on_inner_boundary(p)));
    }

    #[test]
    fn generation_errors() {
        let empty = Region::Shell(shell(3.0, 3.0));
        assert!(matches!(
            generate_points(&empty, &GenMode::GridApprox { n: 10 }),
            Err(Error::EmptyRegion(_))
        ));
        let b = Region::Box(unit_box(&[0.0, 0.0]));
        assert!(generate_points(&b, &GenMode::RandomUniform { n: 0, seed: 1 }).is_err());
        assert!(generate_points(&b, &GenMode::SurfaceGrid { n: 4 }).is_err());
    }

    #[test]
    fn admissibility_examples() {
        let a = unit_box(&[0.0, 0.0]);
        let far = unit_box(&[2.0, 0.0]);
        let adj = unit_box(&[1.0, 0.0]);
        assert!(admissible(&a, &far, Admissibility::Strong).unwrap());
        assert!(!admissible(&a, &adj, Admissibility::Strong).unwrap());
        assert!(admissible(&a, &adj, Admissibility::Weak).unwrap());
        for kind in [Admissibility::Strong, Admissibility::Weak] {
            assert!(!admissible(&a, &a, kind).unwrap());
            assert_eq!(admissible(&a, &far, kind).unwrap(), admissible(&far, &a, kind).unwrap());
        }
        let c = AxisBox::new(pt(&[0.0, 0.0, 0.0]), pt(&[1.0, 1.0, 1.0])).unwrap();
        assert!(matches!(admissible(&a, &c, Admissibility::Weak), Err(Error::DimensionMismatch { .. })));
        assert!(admissible_eta(&a, &far, 1.0).unwrap());
        assert!(!admissible_eta(&a, &adj, 1.0).unwrap());
    }

    #[test]
    fn translate_examples() {
        let ps = PointSet::from_points(&[pt(&[1.0, 1.0])]).unwrap();
        let moved = ps.translate(&pt(&[-1.0, -1.0])).unwrap();
        assert_eq!(moved.point(0), &[0.0, 0.0]);
        assert_eq!(ps.translate(&Point::origin(2).unwrap()).unwrap(), ps);
        assert!(ps.translate(&Point::origin(3).unwrap()).is_err());
    }

    #[test]
    fn standard_pairs() {
        let far = DomainPair::far_apart(2).unwrap();
        assert_eq!(far.admissibility, Admissibility::Strong);
        let near = DomainPair::nearby(3).unwrap();
        assert!(near.target.contains(&[1.1, 0.0, 0.0]));
        assert!(!near.target.contains(&[1.0, 0.0, 0.0]));
        // A nearby pair is too close for strong admissibility at eta = 1.
        assert!(DomainPair::new(near.source, near.target, Admissibility::Strong, 1.0).is_err());
    }

    #[test]
    fn canonical_moves_source_center_to_origin() {
        let pair = DomainPair::far_apart(2).unwrap().translated(&pt(&[5.0, -2.0])).unwrap();
        let (canon, shift) = pair.canonical().unwrap();
        assert_eq!(canon, DomainPair::far_apart(2).unwrap());
        assert_eq!(shift.coords(), &[5.0, -2.0]);
    }

    #[test]
    fn point_file_roundtrip() {
        let ps = generate_points(
            &Region::Box(AxisBox::cube(3, 1.0).unwrap()),
            &GenMode::RandomUniform { n: 25, seed: 3 },
        )
        .unwrap();
        let mut buf = Vec::new();
        ps.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# dim=3 count=25\n"));
        let back = PointSet::read_from(&buf[..]).unwrap();
        assert_eq!(back.flat(), ps.flat());
        assert!(PointSet::read_from("# dim=2 count=2\n1 2\n".as_bytes()).is_err());
    }

    #[test]
    fn box_children_tile_parent() {
        let b = AxisBox::cube(2, 1.0).unwrap();
        let vol: f64 = (0..4).map(|c| b.child(c).volume()).sum();
        assert!((vol - b.volume()).abs() < 1e-15);
        assert_eq!(b.child(3).lo().coords(), &[0.0, 0.0]);
    }
}
