//! H² matrices for `K(X, X)` built with proxy-point interpolative decompositions.
//!
//! The point cloud is split by a uniform 2^d-tree. Every cluster at level `k`
//! sees the same far field up to translation, so one proxy set per level is
//! selected in a canonical frame and moved to each cluster. Clusters are
//! compressed bottom-up: a leaf compresses its own points, a parent compresses
//! the union of its children's skeletons, which makes the bases nested.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::geometry::{Admissibility, AxisBox, DomainPair, GenMode, Point, PointSet, Region, ShellRegion, DEFAULT_ETA};
use crate::kernels::{assemble, assemble_self_block, assemble_transposed, Kernel};
use crate::linalg::{id_columns, Stop};
use crate::proxy::{ProxyCache, ProxyScheme};
use crate::{Error, Result};

/// Subdivision threshold used in the experiments.
pub const DEFAULT_LEAF_CAP: usize = 300;
/// Depth at which subdivision gives up (coincident points).
pub const MAX_DEPTH: usize = 30;
/// Default number of sampled entries for [`audit`].
pub const DEFAULT_AUDIT_BUDGET: usize = 50_000_000;

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub bbox: AxisBox,
    pub level: usize,
    /// Range of owned points in the tree's permuted order.
    pub start: usize,
    pub end: usize,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
}

impl TreeNode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct PartitionTree {
    pub nodes: Vec<TreeNode>,
    /// Points in tree order; node `i` owns `points[start..end]`.
    pub points: PointSet,
    /// `perm[t]` is the original index of the point at tree position `t`.
    pub perm: Vec<usize>,
    pub root_edge: f64,
    pub leaf_cap: usize,
}

impl PartitionTree {
    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of levels (root is level 0).
    pub fn levels(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0) + 1
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    /// Maps a vector from original point order to tree order.
    pub fn to_tree_order(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(v.nrows(), v.ncols(), |t, j| v[(self.perm[t], j)])
    }

    pub fn from_tree_order(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (t, &orig) in self.perm.iter().enumerate() {
            out.row_mut(orig).copy_from(&v.row(t));
        }
        out
    }
}

/// Tree over the bounding cube of `points`.
pub fn build_tree(points: &PointSet, leaf_cap: usize) -> Result<PartitionTree> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot build a tree over no points".into()));
    }
    let d = points.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points.iter() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let edge = (0..d).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let hi: Vec<f64> = lo.iter().map(|l| l + edge).collect();
    let root = AxisBox::new(Point::new(&lo)?, Point::new(&hi)?)?;
    build_tree_in_box(points, root, leaf_cap)
}

/// Tree over a given root cube, which must contain every point.
pub fn build_tree_in_box(points: &PointSet, root: AxisBox, leaf_cap: usize) -> Result<PartitionTree> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot build a tree over no points".into()));
    }
    if leaf_cap == 0 {
        return Err(Error::InvalidArgument("leaf capacity must be at least 1".into()));
    }
    if let Some(i) = points.iter().position(|p| !root.contains(p)) {
        return Err(Error::OutsideSource { index: i });
    }
    let d = points.dim();
    let mut perm: Vec<usize> = (0..points.len()).collect();
    let mut nodes = vec![TreeNode { bbox: root, level: 0, start: 0, end: points.len(), children: vec![], parent: None }];
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        let node = nodes[i].clone();
        if node.len() <= leaf_cap {
            continue;
        }
        if node.level >= MAX_DEPTH {
            return Err(Error::DepthExceeded(MAX_DEPTH));
        }
        let mid = node.bbox.center();
        let child_of = |p: &[f64]| -> usize { (0..d).map(|k| usize::from(p[k] >= mid.coords()[k]) << k).sum() };
        // Stable counting sort of the node's range by child index.
        let slice = &mut perm[node.start..node.end];
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); 1 << d];
        for &p in slice.iter() {
            buckets[child_of(points.point(p))].push(p);
        }
        let mut offset = node.start;
        let mut kids = Vec::new();
        for (c, b) in buckets.iter().enumerate() {
            if b.is_empty() {
                continue;
            }
            perm[offset..offset + b.len()].copy_from_slice(b);
            let id = nodes.len();
            nodes.push(TreeNode {
                bbox: node.bbox.child(c),
                level: node.level + 1,
                start: offset,
                end: offset + b.len(),
                children: vec![],
                parent: Some(i),
            });
            kids.push(id);
            offset += b.len();
        }
        nodes[i].children = kids.clone();
        stack.extend(kids.into_iter().rev());
    }
    let points = points.select(&perm);
    Ok(PartitionTree { nodes, points, perm, root_edge: root.max_width(), leaf_cap })
}

/// `N` uniform random points in `[0, L]^d`, `L = N^{1/d}`, with that cube.
pub fn generate_cloud(n: usize, dim: usize, seed: u64) -> Result<(PointSet, AxisBox)> {
    let l = (n as f64).powf(1.0 / dim as f64);
    let root = AxisBox::new(Point::splat(dim, 0.0)?, Point::splat(dim, l)?)?;
    let pts = crate::geometry::generate_points(&Region::Box(root), &GenMode::RandomUniform { n, seed })?;
    Ok((pts, root))
}

/// Canonical domain pair for clusters at level `k` of a tree with root edge
/// `L`: `X = [-h, h]^d` with `h = L / 2^{k+1}`, outer box `[-(L-h), L-h]^d`,
/// inner box `[-3h, 3h]^d` (strong) or `X` itself (weak). Returns `None` when
/// the strong far field is empty (`k = 1`).
pub fn level_domain_pair(k: usize, l: f64, d: usize, kind: Admissibility) -> Result<Option<DomainPair>> {
    if k == 0 {
        return Err(Error::InvalidArgument("the root level has no admissible far field".into()));
    }
    let h = l / f64::from(2u32).powi(k as i32 + 1);
    let source = AxisBox::cube(d, h)?;
    let outer = AxisBox::cube(d, l - h)?;
    let inner = match kind {
        Admissibility::Strong => {
            if 3.0 * h >= l - h {
                return Ok(None);
            }
            AxisBox::cube(d, 3.0 * h)?
        }
        Admissibility::Weak => source,
    };
    Ok(Some(DomainPair::new(source, ShellRegion::new(outer, inner)?, kind, DEFAULT_ETA)?))
}

/// Mixed-size admissibility: each box lies outside the other's near collar
/// (strong) or the boxes do not overlap (weak).
fn boxes_admissible(a: &AxisBox, b: &AxisBox, kind: Admissibility) -> bool {
    let d = a.dim();
    let (ca, cb) = (a.center(), b.center());
    let (ha, hb) = (a.max_width() / 2.0, b.max_width() / 2.0);
    let gap = |h_other: f64| -> f64 {
        (0..d).map(|k| (cb.coords()[k] - ca.coords()[k]).abs() - h_other).fold(f64::NEG_INFINITY, f64::max)
    };
    let tol = 1e-9 * ha.min(hb);
    match kind {
        Admissibility::Strong => gap(hb) >= 3.0 * ha - tol && gap(ha) >= 3.0 * hb - tol,
        Admissibility::Weak => gap(hb) >= ha - tol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildMode {
    /// Compress against the level's proxy set.
    Proxy,
    /// Literal points in the adjacent collar plus far-field proxies (weak only;
    /// strong builds behave as `Proxy`).
    Hybrid,
    /// Compress against every actual far-field point (quadratic baseline).
    DirectSrrqr,
}

impl std::str::FromStr for BuildMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proxy" => Ok(BuildMode::Proxy),
            "hybrid" => Ok(BuildMode::Hybrid),
            "srrqr" | "direct" => Ok(BuildMode::DirectSrrqr),
            _ => Err(Error::Parse(format!("unknown build mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct H2Options {
    pub admissibility: Admissibility,
    pub mode: BuildMode,
    pub scheme: ProxyScheme,
    pub tau: f64,
    pub entry_bound: f64,
}

/// Cluster basis. `u = None` means the identity (no compression).
#[derive(Debug, Clone)]
pub struct NodeBasis {
    /// Skeleton points as tree-order indices.
    pub skeleton: Vec<usize>,
    /// `|X_i| × |skeleton|`: interpolation over own points for leaves,
    /// transfer matrix over the children's skeletons otherwise.
    pub u: Option<DMatrix<f64>>,
    pub input_len: usize,
}

impl NodeBasis {
    pub fn rank(&self) -> usize {
        self.skeleton.len()
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub data: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct H2Matrix {
    pub tree: PartitionTree,
    pub kernel: Kernel,
    pub admissibility: Admissibility,
    pub bases: Vec<Option<NodeBasis>>,
    /// `K(skel_row, skel_col)` for admissible pairs, `row <= col` in node order.
    pub coupling: Vec<Block>,
    /// `K(X_row, X_col)` for inadmissible leaf pairs, `row <= col`.
    pub dense: Vec<Block>,
}

/// Storage in MB (2^20 bytes) at 8 bytes per stored real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Storage {
    pub dense_mb: f64,
    pub basis_mb: f64,
    pub coupling_mb: f64,
    /// Uncompressed `8 N^2` bytes.
    pub full_mb: f64,
}

impl Storage {
    pub fn total_mb(&self) -> f64 {
        self.dense_mb + self.basis_mb + self.coupling_mb
    }

    pub fn compressed_mb(&self) -> f64 {
        self.basis_mb + self.coupling_mb
    }
}

const MB: f64 = 1048576.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditResult {
    pub relative_error: f64,
    /// Rows were subsampled because the exact audit exceeded the budget.
    pub sampled: bool,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    pub nodes: usize,
    pub min_rank: usize,
    pub max_rank: usize,
    pub mean_rank: f64,
    pub proxy_size: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BuildStats {
    pub n: usize,
    pub levels: usize,
    pub storage: Storage,
    pub per_level: Vec<LevelStats>,
    pub tree_seconds: f64,
    pub proxy_seconds: f64,
    pub compress_seconds: f64,
    pub blocks_seconds: f64,
    pub proxy_selections: usize,
    pub audit: Option<AuditResult>,
}

impl BuildStats {
    /// Construction time without proxy selection (which is reusable across
    /// builds on the same level geometry).
    pub fn build_seconds(&self) -> f64 {
        self.tree_seconds + self.compress_seconds + self.blocks_seconds
    }
}

fn check_options(k: &Kernel, opts: &H2Options) -> Result<()> {
    if matches!(k, Kernel::Degenerate(_)) {
        return Err(Error::InvalidArgument("H2 construction needs a translation-invariant symmetric kernel".into()));
    }
    if opts.admissibility == Admissibility::Weak && k.singular_on_diagonal() && opts.mode == BuildMode::Proxy {
        return Err(Error::Refused(
            "weak admissibility with a singular kernel has no finite-rank far field for proxies; use --mode hybrid"
                .into(),
        ));
    }
    if !(opts.tau > 0.0 && opts.tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau = {} must lie in (0, 1)", opts.tau)));
    }
    Ok(())
}

/// Builds the H² representation of `K(X, X)` for the tree's points.
pub fn build_h2(k: &Kernel, tree: PartitionTree, opts: &H2Options) -> Result<(H2Matrix, BuildStats)> {
    build_h2_with_cache(k, tree, opts, &ProxyCache::new())
}

pub fn build_h2_with_cache(
    k: &Kernel,
    tree: PartitionTree,
    opts: &H2Options,
    cache: &ProxyCache,
) -> Result<(H2Matrix, BuildStats)> {
    check_options(k, opts)?;
    let d = tree.dim();
    let levels = tree.levels();
    let l = tree.root_edge;

    // Per-level proxy sets in the canonical frame.
    let t_proxy = Instant::now();
    let misses_before = cache.misses();
    let mut level_pairs: Vec<Option<DomainPair>> = vec![None; levels];
    let mut level_far: Vec<Option<DomainPair>> = vec![None; levels];
    let mut level_proxy = vec![None; levels];
    for lev in 1..levels {
        level_pairs[lev] = level_domain_pair(lev, l, d, opts.admissibility)?;
        level_far[lev] = level_domain_pair(lev, l, d, Admissibility::Strong)?;
        let proxy_pair = match (opts.mode, opts.admissibility) {
            (BuildMode::DirectSrrqr, _) => None,
            (BuildMode::Hybrid, Admissibility::Weak) => level_far[lev],
            _ => level_pairs[lev],
        };
        if let Some(p) = proxy_pair {
            level_proxy[lev] = Some(cache.get(k, &p, opts.scheme)?);
        }
    }
    let proxy_seconds = t_proxy.elapsed().as_secs_f64();
    let proxy_selections = cache.misses() - misses_before;

    // Bottom-up compression.
    let t_comp = Instant::now();
    let mut order: Vec<usize> = (1..tree.nodes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(tree.nodes[i].level));
    let mut bases: Vec<Option<NodeBasis>> = vec![None; tree.nodes.len()];
    let hybrid = opts.mode == BuildMode::Hybrid && opts.admissibility == Admissibility::Weak;
    for &i in &order {
        let node = &tree.nodes[i];
        let xs: Vec<usize> = if node.is_leaf() {
            (node.start..node.end).collect()
        } else {
            node.children.iter().flat_map(|&c| bases[c].as_ref().expect("child basis").skeleton.clone()).collect()
        };
        let center = node.bbox.center();
        let lev = node.level;
        let cols: Option<PointSet> = match opts.mode {
            BuildMode::DirectSrrqr => level_pairs[lev]
                .map(|_| far_points(&tree, i, opts.admissibility))
                .filter(|idx| !idx.is_empty())
                .map(|idx| tree.points.select(&idx)),
            BuildMode::Hybrid if opts.admissibility == Admissibility::Weak => {
                let near = collar_points(&tree, i)?;
                let mut set = tree.points.select(&near);
                if let Some(p) = &level_proxy[lev] {
                    set = set.concat(&p.points.translate(&center)?)?;
                }
                (!set.is_empty()).then_some(set)
            }
            _ => level_proxy[lev].as_ref().map(|p| p.points.translate(&center)).transpose()?,
        };
        let basis = match cols {
            None => NodeBasis { skeleton: xs.clone(), u: None, input_len: xs.len() },
            Some(cols) => {
                let xpts = tree.points.select(&xs);
                let at = assemble_transposed(k, &xpts, &cols)?;
                let eps = if hybrid {
                    // Near-collar entries dominate the max; scale by the RMS row norm instead.
                    opts.tau * at.norm() / (xs.len() as f64).sqrt()
                } else {
                    opts.tau * (cols.len() as f64).sqrt() * at.amax()
                };
                let id = id_columns(at, opts.entry_bound, Stop::Threshold(eps))?;
                if id.rank() == xs.len() {
                    NodeBasis { skeleton: xs.clone(), u: None, input_len: xs.len() }
                } else {
                    let skeleton = id.skeleton.iter().map(|&a| xs[a]).collect();
                    NodeBasis { skeleton, u: Some(id.u), input_len: xs.len() }
                }
            }
        };
        bases[i] = Some(basis);
    }
    let compress_seconds = t_comp.elapsed().as_secs_f64();

    // Interaction lists and block assembly.
    let t_blocks = Instant::now();
    let skel_pts: Vec<Option<PointSet>> =
        bases.iter().map(|b| b.as_ref().map(|b| tree.points.select(&b.skeleton))).collect();
    let leaf_pts: Vec<Option<PointSet>> = tree
        .nodes
        .iter()
        .map(|n| n.is_leaf().then(|| tree.points.select(&(n.start..n.end).collect::<Vec<_>>())))
        .collect();
    let mut coupling = Vec::new();
    let mut dense = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    while let Some((a, b)) = stack.pop() {
        let (na, nb) = (&tree.nodes[a], &tree.nodes[b]);
        if a != b && boxes_admissible(&na.bbox, &nb.bbox, opts.admissibility) {
            let (Some(sa), Some(sb)) = (&skel_pts[a], &skel_pts[b]) else {
                return Err(Error::InvalidArgument("admissible pair without cluster bases".into()));
            };
            let data = assemble(k, sa, sb)?;
            coupling.push(Block { row: a, col: b, data });
        } else if na.is_leaf() && nb.is_leaf() {
            let (Some(pa), Some(pb)) = (&leaf_pts[a], &leaf_pts[b]) else {
                unreachable!("leaf nodes carry point sets");
            };
            let data = assemble_self_block(k, pa, pb)?;
            dense.push(Block { row: a, col: b, data });
        } else {
            let split_a = !na.is_leaf() && (nb.is_leaf() || na.level <= nb.level);
            let split_b = !nb.is_leaf() && (na.is_leaf() || nb.level <= na.level);
            let ca: Vec<usize> = if split_a { na.children.clone() } else { vec![a] };
            let cb: Vec<usize> = if split_b { nb.children.clone() } else { vec![b] };
            let mut pairs = Vec::new();
            for &x in &ca {
                for &y in &cb {
                    if x <= y {
                        pairs.push((x, y));
                    } else if a != b {
                        // Off-diagonal pairs keep their orientation; symmetric
                        // storage only visits row <= col.
                        pairs.push((y, x));
                    }
                }
            }
            // Depth-first in a fixed order for reproducible block lists.
            stack.extend(pairs.into_iter().rev());
        }
    }
    let blocks_seconds = t_blocks.elapsed().as_secs_f64();

    let h2 = H2Matrix { tree, kernel: k.clone(), admissibility: opts.admissibility, bases, coupling, dense };
    let mut per_level = Vec::new();
    for lev in 1..levels {
        let ranks: Vec<usize> = h2
            .tree
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.level == lev)
            .filter_map(|(i, _)| h2.bases[i].as_ref().map(|b| b.rank()))
            .collect();
        if ranks.is_empty() {
            continue;
        }
        per_level.push(LevelStats {
            level: lev,
            nodes: ranks.len(),
            min_rank: *ranks.iter().min().unwrap(),
            max_rank: *ranks.iter().max().unwrap(),
            mean_rank: ranks.iter().sum::<usize>() as f64 / ranks.len() as f64,
            proxy_size: level_proxy[lev].as_ref().map(|p| p.len()),
        });
    }
    let stats = BuildStats {
        n: h2.tree.len(),
        levels,
        storage: storage(&h2),
        per_level,
        tree_seconds: 0.0,
        proxy_seconds,
        compress_seconds,
        blocks_seconds,
        proxy_selections,
        audit: None,
    };
    Ok((h2, stats))
}

/// Builds the tree over `root` and the H² matrix, timing the tree phase too.
pub fn build_h2_from_points(
    k: &Kernel,
    points: &PointSet,
    root: AxisBox,
    leaf_cap: usize,
    opts: &H2Options,
    cache: &ProxyCache,
) -> Result<(H2Matrix, BuildStats)> {
    let t = Instant::now();
    let tree = build_tree_in_box(points, root, leaf_cap)?;
    let tree_seconds = t.elapsed().as_secs_f64();
    let (h2, mut stats) = build_h2_with_cache(k, tree, opts, cache)?;
    stats.tree_seconds = tree_seconds;
    Ok((h2, stats))
}

/// Tree-order indices of points in node `i`'s collar `[c-3h, c+3h]^d` that
/// the node does not own.
fn collar_points(tree: &PartitionTree, i: usize) -> Result<Vec<usize>> {
    let node = &tree.nodes[i];
    let collar = node.bbox.expanded(node.bbox.max_width())?;
    let own = node.start..node.end;
    let mut out = Vec::new();
    let mut stack = vec![0usize];
    while let Some(j) = stack.pop() {
        let nj = &tree.nodes[j];
        if nj.start >= own.start && nj.end <= own.end {
            continue;
        }
        if collar.max_norm_gap(&nj.bbox)? > 0.0 {
            continue;
        }
        if nj.is_leaf() {
            out.extend((nj.start..nj.end).filter(|t| !own.contains(t) && collar.contains(tree.points.point(*t))));
        } else {
            stack.extend(nj.children.iter().rev());
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Tree-order indices of every point in node `i`'s far field: outside the
/// open collar (strong) or not owned by the node (weak).
fn far_points(tree: &PartitionTree, i: usize, kind: Admissibility) -> Vec<usize> {
    let node = &tree.nodes[i];
    let own = node.start..node.end;
    match kind {
        Admissibility::Weak => (0..tree.len()).filter(|t| !own.contains(t)).collect(),
        Admissibility::Strong => {
            let collar = node.bbox.expanded(node.bbox.max_width()).expect("positive margin");
            (0..tree.len()).filter(|&t| !collar.contains_interior(tree.points.point(t))).collect()
        }
    }
}

pub fn storage(h2: &H2Matrix) -> Storage {
    let n = h2.tree.len() as f64;
    let dense: usize = h2.dense.iter().map(|b| b.data.len()).sum();
    let coupling: usize = h2.coupling.iter().map(|b| b.data.len()).sum();
    let basis: usize = h2
        .bases
        .iter()
        .flatten()
        .filter(|b| b.u.is_some())
        .map(|b| (b.input_len - b.rank()) * b.rank())
        .sum();
    Storage {
        dense_mb: 8.0 * dense as f64 / MB,
        basis_mb: 8.0 * basis as f64 / MB,
        coupling_mb: 8.0 * coupling as f64 / MB,
        full_mb: 8.0 * n * n / MB,
    }
}

impl H2Matrix {
    pub fn n(&self) -> usize {
        self.tree.len()
    }

    /// `K v` for `v` in original point order (one vector per column).
    pub fn matmat(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: v.nrows() });
        }
        let vt = self.tree.to_tree_order(v);
        Ok(self.tree.from_tree_order(&self.matmat_tree_order(&vt)))
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_column_slice(v.len(), 1, v);
        Ok(self.matmat(&m)?.as_slice().to_vec())
    }

    /// Nodes ordered parents-before-children.
    fn top_down(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.tree.nodes.len()).collect();
        order.sort_by_key(|&i| self.tree.nodes[i].level);
        order
    }

    fn basis_input(&self, i: usize, v: &DMatrix<f64>, vhat: &[Option<DMatrix<f64>>]) -> DMatrix<f64> {
        let node = &self.tree.nodes[i];
        if node.is_leaf() {
            v.rows(node.start, node.len()).into_owned()
        } else {
            let parts: Vec<&DMatrix<f64>> =
                node.children.iter().map(|&c| vhat[c].as_ref().expect("child coefficients")).collect();
            let rows: usize = parts.iter().map(|p| p.nrows()).sum();
            let mut out = DMatrix::zeros(rows, v.ncols());
            let mut off = 0;
            for p in parts {
                out.rows_mut(off, p.nrows()).copy_from(p);
                off += p.nrows();
            }
            out
        }
    }

    pub fn matmat_tree_order(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let q = v.ncols();
        let nn = self.tree.nodes.len();
        let order = self.top_down();
        let mut y = DMatrix::zeros(self.n(), q);

        // Upward pass.
        let mut vhat: Vec<Option<DMatrix<f64>>> = vec![None; nn];
        for &i in order.iter().rev() {
            let Some(b) = &self.bases[i] else { continue };
            let input = self.basis_input(i, v, &vhat);
            vhat[i] = Some(match &b.u {
                Some(u) => u.tr_mul(&input),
                None => input,
            });
        }

        // Coupling.
        let mut yhat: Vec<Option<DMatrix<f64>>> = (0..nn)
            .map(|i| self.bases[i].as_ref().map(|b| DMatrix::zeros(b.rank(), q)))
            .collect();
        for blk in &self.coupling {
            let vb = vhat[blk.col].as_ref().expect("coefficients");
            let va = vhat[blk.row].as_ref().expect("coefficients");
            yhat[blk.row].as_mut().unwrap().gemm(1.0, &blk.data, vb, 1.0);
            if blk.row != blk.col {
                yhat[blk.col].as_mut().unwrap().gemm_tr(1.0, &blk.data, va, 1.0);
            }
        }

        // Downward pass.
        for &i in &order {
            let Some(b) = &self.bases[i] else { continue };
            let yi = yhat[i].take().expect("coefficients");
            let out = match &b.u {
                Some(u) => u * yi,
                None => yi,
            };
            let node = &self.tree.nodes[i];
            if node.is_leaf() {
                let mut rows = y.rows_mut(node.start, node.len());
                rows += &out;
            } else {
                let mut off = 0;
                for &c in &node.children {
                    let rc = self.bases[c].as_ref().unwrap().rank();
                    let mut dst = yhat[c].take().unwrap();
                    dst += out.rows(off, rc);
                    yhat[c] = Some(dst);
                    off += rc;
                }
            }
        }

        // Near field.
        for blk in &self.dense {
            let (na, nb) = (&self.tree.nodes[blk.row], &self.tree.nodes[blk.col]);
            let vb = v.rows(nb.start, nb.len()).into_owned();
            let ya = &blk.data * vb;
            let mut dst = y.rows_mut(na.start, na.len());
            dst += &ya;
            if blk.row != blk.col {
                let va = v.rows(na.start, na.len()).into_owned();
                let yb = blk.data.tr_mul(&va);
                let mut dst = y.rows_mut(nb.start, nb.len());
                dst += &yb;
            }
        }
        y
    }

    /// Expanded basis `E_i` (`|own points| × rank`) for every node with a basis.
    pub fn expanded_bases(&self) -> Vec<Option<DMatrix<f64>>> {
        let nn = self.tree.nodes.len();
        let mut out: Vec<Option<DMatrix<f64>>> = vec![None; nn];
        for &i in self.top_down().iter().rev() {
            let Some(b) = &self.bases[i] else { continue };
            let node = &self.tree.nodes[i];
            let u = b.u.clone().unwrap_or_else(|| DMatrix::identity(b.input_len, b.input_len));
            if node.is_leaf() {
                out[i] = Some(u);
            } else {
                let mut e = DMatrix::zeros(node.len(), b.rank());
                let (mut row_off, mut in_off) = (0, 0);
                for &c in &node.children {
                    let ec = out[c].as_ref().expect("child expanded basis");
                    let rc = ec.ncols();
                    let part = ec * u.rows(in_off, rc);
                    e.rows_mut(row_off, ec.nrows()).copy_from(&part);
                    row_off += ec.nrows();
                    in_off += rc;
                }
                out[i] = Some(e);
            }
        }
        out
    }
}

/// Relative Frobenius error over all coupling blocks, `K(X_a, X_b)` against
/// `E_a K(skel_a, skel_b) E_b^T`. Rows are subsampled with a fixed stride when
/// the blocks hold more than `budget` entries.
pub fn audit(h2: &H2Matrix, budget: usize) -> Result<AuditResult> {
    let total: usize = h2.coupling.iter().map(|b| h2.tree.nodes[b.row].len() * h2.tree.nodes[b.col].len()).sum();
    let stride = if total <= budget.max(1) { 1 } else { total.div_ceil(budget.max(1)) };
    let e = h2.expanded_bases();
    let (mut num, mut den) = (0.0, 0.0);
    let mut entries = 0;
    for (bi, blk) in h2.coupling.iter().enumerate() {
        let (na, nb) = (&h2.tree.nodes[blk.row], &h2.tree.nodes[blk.col]);
        let rows: Vec<usize> = (bi % stride..na.len()).step_by(stride).collect();
        if rows.is_empty() {
            continue;
        }
        let ea = e[blk.row].as_ref().expect("basis").select_rows(rows.iter());
        let eb = e[blk.col].as_ref().expect("basis");
        let approx = (ea * &blk.data) * eb.transpose();
        let xa = h2.tree.points.select(&rows.iter().map(|r| na.start + r).collect::<Vec<_>>());
        let xb = h2.tree.points.select(&(nb.start..nb.end).collect::<Vec<_>>());
        let exact = assemble(&h2.kernel, &xa, &xb)?;
        num += (&exact - approx).norm_squared();
        den += exact.norm_squared();
        entries += exact.len();
    }
    let relative_error = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    Ok(AuditResult { relative_error, sampled: stride > 1, entries })
}

/// Dense `K(X, X)` in original point order (diagonal of a singular kernel set
/// to zero), for oracle comparisons at small `N`.
pub fn dense_matrix(k: &Kernel, points: &PointSet) -> Result<DMatrix<f64>> {
    assemble_self_block(k, points, points)
}
