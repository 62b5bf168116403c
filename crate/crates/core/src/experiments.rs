//! Runners for the numerical experiments. Each runner returns structured
//! results plus CSV tables; timings live in separate `*_timing.csv` tables so
//! that the main tables are byte-identical across runs with the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::compress::{
    average_entry_error, compress_proxy, default_xp, diagnostics, evaluate_approx, refine_weights, threshold_for,
    DEFAULT_C, DEFAULT_TOL,
};
use crate::geometry::{generate_points, Admissibility, DomainPair, GenMode, PointSet, Region};
use crate::h2::{audit, build_h2_from_points, generate_cloud, BuildMode, H2Options, DEFAULT_AUDIT_BUDGET, DEFAULT_LEAF_CAP};
use crate::kernels::{assemble, Kernel};
use crate::linalg::{aca, id_rows, truncated_svd, AcaStop, Stop};
use crate::proxy::{select, AdaptiveCandidates, IdSelectParams, ProxyCache, ProxyScheme};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
}

impl ExperimentId {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
            ExperimentId::Exp5 => "exp5",
        }
    }
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(ExperimentId::Exp1),
            "exp2" => Ok(ExperimentId::Exp2),
            "exp3" => Ok(ExperimentId::Exp3),
            "exp4" => Ok(ExperimentId::Exp4),
            "exp5" => Ok(ExperimentId::Exp5),
            _ => Err(Error::Parse(format!("unknown experiment '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Far,
    Near,
}

impl PairKind {
    pub fn pair(&self, dim: usize) -> Result<DomainPair> {
        match self {
            PairKind::Far => DomainPair::far_apart(dim),
            PairKind::Near => DomainPair::nearby(dim),
        }
    }
}

impl FromStr for PairKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "far" => Ok(PairKind::Far),
            "near" => Ok(PairKind::Near),
            _ => Err(Error::Parse(format!("unknown pair '{s}' (far|near)"))),
        }
    }
}

/// `id`, `random:<n>` or `surface:<n>`. Random sets use `seed`.
pub fn parse_scheme(s: &str, seed: u64) -> Result<ProxyScheme> {
    let bad = || Error::Parse(format!("bad proxy scheme '{s}' (id|random:<n>|surface:<n>)"));
    if s == "id" {
        return Ok(ProxyScheme::Id(IdSelectParams::default()));
    }
    let (kind, n) = s.split_once(':').ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    match kind {
        "random" => Ok(ProxyScheme::Random { n, seed }),
        "surface" => Ok(ProxyScheme::Surface { n }),
        _ => Err(bad()),
    }
}

fn scheme_label(s: &ProxyScheme) -> String {
    match s {
        ProxyScheme::Id(p) if p.adaptive.is_some() => "id-adaptive".into(),
        ProxyScheme::Id(_) => "id".into(),
        ProxyScheme::Random { n, .. } => format!("random:{n}"),
        ProxyScheme::Surface { n } => format!("surface:{n}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub kernels: Vec<String>,
    pub dim: usize,
    pub pair: PairKind,
    pub admissibility: Admissibility,
    pub mode: BuildMode,
    /// Proxy schemes compared (exp1) or used for the build (exp5, first entry).
    pub schemes: Vec<String>,
    pub x0: usize,
    pub y0: Vec<usize>,
    pub n: Vec<usize>,
    pub tol: f64,
    pub c: f64,
    pub random_n: usize,
    pub probe: usize,
    /// exp2: largest |Y0| for which the SVD baseline runs.
    pub svd_max: usize,
    pub leaf_cap: usize,
    pub audit_budget: usize,
    pub near_fraction: f64,
    pub band_width: f64,
    pub repeats: usize,
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId) -> Self {
        let mut c = Self {
            id,
            kernels: vec!["inv-dist".into(), "multiquadric".into()],
            dim: 2,
            pair: PairKind::Far,
            admissibility: Admissibility::Strong,
            mode: BuildMode::Proxy,
            schemes: vec!["id".into()],
            x0: 1000,
            y0: vec![4000, 16000, 64000],
            n: vec![5000, 10000, 20000, 40000],
            tol: DEFAULT_TOL,
            c: DEFAULT_C,
            random_n: 2000,
            probe: 40000,
            svd_max: 16000,
            leaf_cap: DEFAULT_LEAF_CAP,
            audit_budget: DEFAULT_AUDIT_BUDGET,
            near_fraction: AdaptiveCandidates::default().near_fraction,
            band_width: AdaptiveCandidates::default().band_width,
            repeats: 3,
            seed: 1,
            threads: 1,
            out_dir: PathBuf::from("results"),
        };
        match id {
            ExperimentId::Exp1 => c.schemes = vec!["id".into(), "random:2000".into()],
            ExperimentId::Exp2 | ExperimentId::Exp3 => c.dim = 3,
            ExperimentId::Exp4 => {
                c.pair = PairKind::Near;
                c.kernels = vec!["inv-dist".into()];
            }
            ExperimentId::Exp5 => {}
        }
        c
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse(format!("bad value '{v}' for '{k}'")))
        }
        fn list<T: FromStr>(k: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).map(|s| num(k, s)).collect()
        }
        let v = value.trim();
        match key.trim() {
            "experiment" => self.id = v.parse()?,
            "kernel" | "kernels" => self.kernels = list(key, v)?,
            "dim" => self.dim = num(key, v)?,
            "pair" => self.pair = v.parse()?,
            "adm" | "admissibility" => self.admissibility = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "scheme" | "schemes" => self.schemes = list(key, v)?,
            "x0" => self.x0 = num(key, v)?,
            "y0" => self.y0 = list(key, v)?,
            "n" => self.n = list(key, v)?,
            "tol" => self.tol = num(key, v)?,
            "c" => self.c = num(key, v)?,
            "random_n" => self.random_n = num(key, v)?,
            "probe" => self.probe = num(key, v)?,
            "svd_max" => self.svd_max = num(key, v)?,
            "leaf_cap" => self.leaf_cap = num(key, v)?,
            "audit_budget" => self.audit_budget = num(key, v)?,
            "near_fraction" => self.near_fraction = num(key, v)?,
            "band_width" => self.band_width = num(key, v)?,
            "repeats" => self.repeats = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "threads" => self.threads = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Parse(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(1..=3).contains(&self.dim) {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol = {} must lie in (0, 1)", self.tol));
        }
        if !(self.c >= 1.0) {
            return bad(format!("C = {} must be at least 1", self.c));
        }
        if self.kernels.is_empty() || self.schemes.is_empty() {
            return bad("kernel and scheme lists must be non-empty".into());
        }
        let sizes = [self.x0, self.random_n, self.probe, self.leaf_cap, self.repeats];
        if sizes.contains(&0) || self.y0.contains(&0) || self.n.contains(&0) {
            return bad("sizes must be positive".into());
        }
        if self.y0.is_empty() || self.n.is_empty() {
            return bad("size lists must be non-empty".into());
        }
        if self.threads == 0 {
            return bad("threads must be positive".into());
        }
        for k in &self.kernels {
            let pair = self.pair.pair(self.dim)?;
            Kernel::parse(k, Some(&pair))?;
        }
        for s in &self.schemes {
            parse_scheme(s, self.seed)?;
        }
        Ok(())
    }

    /// Canonical `key=value` rendering (sorted keys) that the config hash covers.
    pub fn canonical(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        m.insert("experiment", self.id.name().to_string());
        m.insert("kernels", self.kernels.join(","));
        m.insert("dim", self.dim.to_string());
        m.insert("pair", format!("{:?}", self.pair).to_lowercase());
        m.insert("adm", format!("{:?}", self.admissibility).to_lowercase());
        m.insert("mode", format!("{:?}", self.mode).to_lowercase());
        m.insert("schemes", self.schemes.join(","));
        m.insert("x0", self.x0.to_string());
        m.insert("y0", join(&self.y0));
        m.insert("n", join(&self.n));
        m.insert("tol", format!("{:e}", self.tol));
        m.insert("c", format!("{:e}", self.c));
        m.insert("random_n", self.random_n.to_string());
        m.insert("probe", self.probe.to_string());
        m.insert("svd_max", self.svd_max.to_string());
        m.insert("leaf_cap", self.leaf_cap.to_string());
        m.insert("audit_budget", self.audit_budget.to_string());
        m.insert("near_fraction", format!("{:e}", self.near_fraction));
        m.insert("band_width", format!("{:e}", self.band_width));
        m.insert("repeats", self.repeats.to_string());
        m.insert("seed", self.seed.to_string());
        m.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        short_hash(&self.canonical())
    }

    fn kernel(&self, name: &str, pair: &DomainPair) -> Result<Kernel> {
        Kernel::parse(name, Some(pair))
    }

    /// Derived seeds for independent random draws within one run.
    fn sub_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(stream)
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone)]
pub struct CsvTable {
    /// File stem, e.g. `exp1_ratios`.
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Self { name: name.into(), header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Full CSV text with the schema, seed and config-hash header lines.
    pub fn render(&self, cfg: &ExperimentConfig) -> Result<String> {
        self.render_tagged(cfg.id.name(), cfg.seed, &cfg.hash())
    }

    /// As [`render`](Self::render) for tables not produced by an experiment
    /// runner; `hash` should identify the producing settings.
    pub fn render_tagged(&self, source: &str, seed: u64, hash: &str) -> Result<String> {
        let mut out =
            format!("# schema-version: {SCHEMA_VERSION}\n# experiment: {source}\n# seed: {seed}\n# config-hash: {hash}\n");
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub tables: Vec<CsvTable>,
    pub summary: String,
}

impl ExperimentOutput {
    pub fn table(&self, name: &str) -> Option<&CsvTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes every table to `<out_dir>/<name>.csv`.
    pub fn write(&self, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&cfg.out_dir)?;
        let mut paths = Vec::new();
        for t in &self.tables {
            let p = cfg.out_dir.join(format!("{}.csv", t.name));
            std::fs::write(&p, t.render(cfg)?)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

fn f(x: f64) -> String {
    format!("{x:.6e}")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Median wall time of `repeats` runs of `job`, returning the last result.
fn timed<T>(repeats: usize, mut job: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        last = Some(job()?);
        times.push(t.elapsed().as_secs_f64());
    }
    Ok((last.unwrap(), median(times)))
}

fn random_in(region: &Region, n: usize, seed: u64) -> Result<PointSet> {
    generate_points(region, &GenMode::RandomUniform { n, seed })
}

/// Summary of one (kernel, scheme) cell of exp1.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Summary {
    pub kernel: String,
    pub scheme: String,
    pub proxy_size: usize,
    pub rank: usize,
    pub max_ratio: f64,
    pub ratio_bound: f64,
    pub mean_ratio_avg: f64,
    pub max_ratio_avg: f64,
    pub representation_deviation: f64,
}

/// Entrywise error ratios and representation deviation on a dense probe grid.
pub fn exp1(cfg: &ExperimentConfig) -> Result<(Vec<Exp1Summary>, ExperimentOutput)> {
    cfg.validate()?;
    let pair = cfg.pair.pair(cfg.dim)?;
    let x0 = random_in(&Region::Box(pair.source), cfg.x0, cfg.sub_seed(0))?;
    let probe = generate_points(&Region::Shell(pair.target), &GenMode::GridApprox { n: cfg.probe })?;
    let mut ratios = CsvTable::new(
        "exp1_ratios",
        &["kernel", "method", "rank", "proxy_size", "row_index", "err_Yp", "err_Y0", "ratio_max", "ratio_avg"],
    );
    let mut summary_t = CsvTable::new(
        "exp1_summary",
        &[
            "kernel",
            "method",
            "rank",
            "proxy_size",
            "probe_size",
            "max_ratio",
            "ratio_bound",
            "mean_ratio_avg",
            "max_ratio_avg",
            "representation_deviation",
        ],
    );
    let mut timing = CsvTable::new("exp1_timing", &["kernel", "method", "rank", "selection_seconds", "compress_seconds"]);
    let mut out = Vec::new();
    for kname in &cfg.kernels {
        let k = cfg.kernel(kname, &pair)?;
        for sname in &cfg.schemes {
            let scheme = parse_scheme(sname, cfg.sub_seed(1))?;
            let t = Instant::now();
            let proxy = select(&k, &pair, scheme)?;
            let sel = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let res = compress_proxy(&k, &x0, &proxy, Stop::Threshold(threshold_for(cfg.tol, proxy.len())), cfg.c)?;
            let comp = t.elapsed().as_secs_f64();
            let xp = default_xp(&pair, proxy.len())?;
            let rep = diagnostics(&k, &x0, &res, &probe, &xp)?;
            let label = scheme_label(&scheme);
            let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
            for i in 0..x0.len() {
                ratios.push(vec![
                    kname.clone(),
                    label.clone(),
                    res.rank().to_string(),
                    proxy.len().to_string(),
                    i.to_string(),
                    f(rep.err_yp[i]),
                    f(rep.err_y0[i]),
                    opt(rep.ratio_max[i]),
                    opt(rep.ratio_avg[i]),
                ]);
            }
            let s = Exp1Summary {
                kernel: kname.clone(),
                scheme: label.clone(),
                proxy_size: proxy.len(),
                rank: res.rank(),
                max_ratio: rep.max_ratio(),
                ratio_bound: proxy.len() as f64 * cfg.c,
                mean_ratio_avg: rep.mean_ratio_avg(),
                max_ratio_avg: rep.max_ratio_avg(),
                representation_deviation: rep.representation_deviation,
            };
            summary_t.push(vec![
                kname.clone(),
                label.clone(),
                s.rank.to_string(),
                s.proxy_size.to_string(),
                probe.len().to_string(),
                f(s.max_ratio),
                f(s.ratio_bound),
                f(s.mean_ratio_avg),
                f(s.max_ratio_avg),
                f(s.representation_deviation),
            ]);
            timing.push(vec![kname.clone(), label, s.rank.to_string(), f(sel), f(comp)]);
            out.push(s);
        }
    }
    let summary = out
        .iter()
        .map(|s| {
            format!(
                "exp1 {} {}: |Y_p| = {}, rank = {}, max ratio = {:.3e} (bound {:.0}), mean avg ratio = {:.3}, deviation = {:.3e}",
                s.kernel, s.scheme, s.proxy_size, s.rank, s.max_ratio, s.ratio_bound, s.mean_ratio_avg, s.representation_deviation
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok((out, ExperimentOutput { tables: vec![ratios, summary_t, timing], summary }))
}

/// One (kernel, method, |Y0|) cell of exp2.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Cell {
    pub kernel: String,
    pub method: String,
    pub y0: usize,
    pub rank: usize,
    pub avg_error: f64,
    pub seconds: f64,
}

/// Proxy compression against algebraic baselines at matched rank.
pub fn exp2(cfg: &ExperimentConfig) -> Result<(Vec<Exp2Cell>, ExperimentOutput)> {
    cfg.validate()?;
    let pair = cfg.pair.pair(cfg.dim)?;
    let x0 = random_in(&Region::Box(pair.source), cfg.x0, cfg.sub_seed(0))?;
    let mut table = CsvTable::new("exp2", &["kernel", "method", "y0_size", "rank", "avg_error"]);
    let mut timing = CsvTable::new("exp2_timing", &["kernel", "method", "y0_size", "rank", "seconds"]);
    let mut cells = Vec::new();
    for kname in &cfg.kernels {
        let k = cfg.kernel(kname, &pair)?;
        let proxy_id = select(&k, &pair, ProxyScheme::Id(IdSelectParams::default()))?;
        let proxy_rand = select(&k, &pair, ProxyScheme::Random { n: cfg.random_n, seed: cfg.sub_seed(1) })?;
        let eps = threshold_for(cfg.tol, proxy_id.len());
        let base = compress_proxy(&k, &x0, &proxy_id, Stop::Threshold(eps), cfg.c)?;
        let r = base.rank();
        for (yi, &ny) in cfg.y0.iter().enumerate() {
            let y0 = random_in(&Region::Shell(pair.target), ny, cfg.sub_seed(10 + yi as u64))?;
            let exact = assemble(&k, &x0, &y0)?;
            let mut push = |method: &str, approx: &DMatrix<f64>, rank: usize, secs: f64| {
                let c = Exp2Cell {
                    kernel: kname.clone(),
                    method: method.into(),
                    y0: ny,
                    rank,
                    avg_error: average_entry_error(&exact, approx),
                    seconds: secs,
                };
                table.push(vec![kname.clone(), method.into(), ny.to_string(), rank.to_string(), f(c.avg_error)]);
                timing.push(vec![kname.clone(), method.into(), ny.to_string(), rank.to_string(), f(secs)]);
                cells.push(c);
            };

            // Compression itself never touches Y0; timing covers K(X0, Y_p) and the ID.
            let (res, secs) =
                timed(cfg.repeats, || compress_proxy(&k, &x0, &proxy_id, Stop::Threshold(eps), cfg.c))?;
            let approx = evaluate_approx(&res, &k, &x0, &y0)?.matrix;
            push("proxy-id", &approx, res.rank(), secs);

            let (res_r, secs) =
                timed(cfg.repeats, || compress_proxy(&k, &x0, &proxy_rand, Stop::FixedRank(r), cfg.c))?;
            let approx = evaluate_approx(&res_r, &k, &x0, &y0)?.matrix;
            push("proxy-random", &approx, res_r.rank(), secs);

            let (refined, secs) = timed(cfg.repeats, || refine_weights(&base, &k, &x0, &y0))?;
            let approx = evaluate_approx(&refined, &k, &x0, &y0)?.matrix;
            push("refined-id", &approx, refined.rank(), secs);

            let (id, secs) = timed(cfg.repeats, || id_rows(&assemble(&k, &x0, &y0)?, cfg.c, Stop::FixedRank(r)))?;
            let approx = &id.u * exact.select_rows(id.skeleton.iter());
            push("srrqr", &approx, id.rank(), secs);

            if ny <= cfg.svd_max {
                let (s, secs) = timed(1, || truncated_svd(&assemble(&k, &x0, &y0)?, r))?;
                push("svd", &s.reconstruct(), r, secs);
            }

            let (a, secs) = timed(cfg.repeats, || {
                aca(
                    x0.len(),
                    y0.len(),
                    |i, buf| {
                        for (j, b) in buf.iter_mut().enumerate() {
                            *b = k.eval(x0.point(i), y0.point(j));
                        }
                    },
                    |j, buf| {
                        for (i, b) in buf.iter_mut().enumerate() {
                            *b = k.eval(x0.point(i), y0.point(j));
                        }
                    },
                    AcaStop::FixedRank(r),
                )
            })?;
            push("aca", &(&a.u * &a.v), a.rank, secs);
        }
    }
    let summary = cells
        .iter()
        .map(|c| format!("exp2 {} {:<12} |Y0| = {:>6}: rank {:>4}, avg error {:.3e}, {:.3} s", c.kernel, c.method, c.y0, c.rank, c.avg_error, c.seconds))
        .collect::<Vec<_>>()
        .join("\n");
    Ok((cells, ExperimentOutput { tables: vec![table, timing], summary }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp3Cell {
    pub kernel: String,
    pub scheme: String,
    pub proxy_size: usize,
    pub y0: usize,
    pub rank: usize,
    pub avg_error: f64,
}

/// Random, surface and ID proxies at ½, 1 and 2 times `|Y_p^id|` points, all at
/// the rank the ID proxies give.
pub fn exp3(cfg: &ExperimentConfig) -> Result<(Vec<Exp3Cell>, ExperimentOutput)> {
    cfg.validate()?;
    let pair = cfg.pair.pair(cfg.dim)?;
    let x0 = random_in(&Region::Box(pair.source), cfg.x0, cfg.sub_seed(0))?;
    let mut table = CsvTable::new("exp3", &["kernel", "scheme", "proxy_size", "y0_size", "rank", "avg_error"]);
    let mut cells = Vec::new();
    for kname in &cfg.kernels {
        let k = cfg.kernel(kname, &pair)?;
        let proxy_id = select(&k, &pair, ProxyScheme::Id(IdSelectParams::default()))?;
        let base = compress_proxy(&k, &x0, &proxy_id, Stop::Threshold(threshold_for(cfg.tol, proxy_id.len())), cfg.c)?;
        let r = base.rank();
        let m = proxy_id.len();
        let mut variants = vec![("id".to_string(), base)];
        for size in [m.div_ceil(2), m, 2 * m] {
            for scheme in [ProxyScheme::Random { n: size, seed: cfg.sub_seed(1) }, ProxyScheme::Surface { n: size }] {
                let p = select(&k, &pair, scheme)?;
                let res = compress_proxy(&k, &x0, &p, Stop::FixedRank(r), cfg.c)?;
                variants.push((scheme_label(&scheme), res));
            }
        }
        for (yi, &ny) in cfg.y0.iter().enumerate() {
            let y0 = random_in(&Region::Shell(pair.target), ny, cfg.sub_seed(10 + yi as u64))?;
            let exact = assemble(&k, &x0, &y0)?;
            for (label, res) in &variants {
                let approx = evaluate_approx(res, &k, &x0, &y0)?.matrix;
                let c = Exp3Cell {
                    kernel: kname.clone(),
                    scheme: label.clone(),
                    proxy_size: res.proxy.len(),
                    y0: ny,
                    rank: res.rank(),
                    avg_error: average_entry_error(&exact, &approx),
                };
                table.push(vec![
                    kname.clone(),
                    label.clone(),
                    c.proxy_size.to_string(),
                    ny.to_string(),
                    c.rank.to_string(),
                    f(c.avg_error),
                ]);
                cells.push(c);
            }
        }
    }
    let summary = cells
        .iter()
        .map(|c| format!("exp3 {} {:<14} |Y0| = {:>6}: rank {}, avg error {:.3e}", c.kernel, c.scheme, c.y0, c.rank, c.avg_error))
        .collect::<Vec<_>>()
        .join("\n");
    Ok((cells, ExperimentOutput { tables: vec![table], summary }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp4Summary {
    pub kernel: String,
    pub variant: String,
    pub proxy_size: usize,
    pub rank: usize,
    /// Largest mean error over the whole probe grid.
    pub max_field: f64,
    /// Largest mean error within one source-box edge of `X`.
    pub max_field_near: f64,
}

/// Mean error field `mean_{i ∉ X_rep} |e_i(y)|` over a grid in `Y`, with the
/// default uniform candidates and with adaptive candidates.
pub fn exp4(cfg: &ExperimentConfig) -> Result<(Vec<Exp4Summary>, ExperimentOutput)> {
    cfg.validate()?;
    let pair = cfg.pair.pair(cfg.dim)?;
    let x0 = random_in(&Region::Box(pair.source), cfg.x0, cfg.sub_seed(0))?;
    let probe = generate_points(&Region::Shell(pair.target), &GenMode::GridApprox { n: cfg.probe })?;
    let near_box = pair.source.expanded(pair.source.max_width() / 2.0)?;
    let mut header: Vec<&'static str> = vec!["kernel", "variant"];
    header.extend(["y0", "y1", "y2"].iter().take(cfg.dim));
    header.push("mean_abs_error");
    let mut field_t = CsvTable::new("exp4_field", &header);
    let mut summary_t =
        CsvTable::new("exp4_summary", &["kernel", "variant", "proxy_size", "rank", "max_field", "max_field_near"]);
    let mut out = Vec::new();
    for kname in &cfg.kernels {
        let k = cfg.kernel(kname, &pair)?;
        let adaptive = AdaptiveCandidates { near_fraction: cfg.near_fraction, band_width: cfg.band_width };
        let variants = [
            ("default", IdSelectParams::default()),
            ("adaptive", IdSelectParams { adaptive: Some(adaptive), ..IdSelectParams::default() }),
        ];
        for (label, params) in variants {
            let proxy = select(&k, &pair, ProxyScheme::Id(params))?;
            let res = compress_proxy(&k, &x0, &proxy, Stop::Threshold(threshold_for(cfg.tol, proxy.len())), cfg.c)?;
            let mut is_skel = vec![false; x0.len()];
            for &i in &res.x_rep {
                is_skel[i] = true;
            }
            let others = (x0.len() - res.rank()).max(1) as f64;
            let xr = x0.select(&res.x_rep);
            let (mut max_field, mut max_near) = (0.0f64, 0.0f64);
            for start in (0..probe.len()).step_by(2048) {
                let idx: Vec<usize> = (start..(start + 2048).min(probe.len())).collect();
                let chunk = probe.select(&idx);
                let e = assemble(&k, &x0, &chunk)? - &res.w * assemble(&k, &xr, &chunk)?;
                for j in 0..chunk.len() {
                    let mean: f64 =
                        (0..x0.len()).filter(|&i| !is_skel[i]).map(|i| e[(i, j)].abs()).sum::<f64>() / others;
                    max_field = max_field.max(mean);
                    let y = chunk.point(j);
                    if near_box.contains(y) {
                        max_near = max_near.max(mean);
                    }
                    let mut row = vec![kname.clone(), label.to_string()];
                    row.extend(y.iter().map(|&c| f(c)));
                    row.push(f(mean));
                    field_t.push(row);
                }
            }
            let s = Exp4Summary {
                kernel: kname.clone(),
                variant: label.into(),
                proxy_size: proxy.len(),
                rank: res.rank(),
                max_field,
                max_field_near: max_near,
            };
            summary_t.push(vec![
                kname.clone(),
                label.into(),
                s.proxy_size.to_string(),
                s.rank.to_string(),
                f(max_field),
                f(max_near),
            ]);
            out.push(s);
        }
    }
    let summary = out
        .iter()
        .map(|s| {
            format!(
                "exp4 {} {}: |Y_p| = {}, rank = {}, max mean error = {:.3e} (near X: {:.3e})",
                s.kernel, s.variant, s.proxy_size, s.rank, s.max_field, s.max_field_near
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok((out, ExperimentOutput { tables: vec![field_t, summary_t], summary }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp5Row {
    pub kernel: String,
    pub n: usize,
    pub levels: usize,
    pub s_n: f64,
    pub s_inadm: f64,
    pub s_basis: f64,
    pub s_coupling: f64,
    pub s_total: f64,
    pub error: f64,
    pub sampled: bool,
    pub max_rank: usize,
    /// Median construction time excluding proxy selection.
    pub build_seconds: f64,
    pub proxy_seconds: f64,
}

/// H² construction over a list of `N`: storage, audited error and build time.
pub fn exp5(cfg: &ExperimentConfig) -> Result<(Vec<Exp5Row>, ExperimentOutput)> {
    cfg.validate()?;
    let mut table = CsvTable::new(
        "exp5",
        &[
            "kernel", "adm", "mode", "scheme", "N", "levels", "S_N", "S_inadm", "S_basis", "S_coupling", "S_total", "E",
            "E_sampled", "max_rank",
        ],
    );
    let mut timing = CsvTable::new("exp5_timing", &["kernel", "N", "build_seconds", "proxy_seconds"]);
    let scheme = parse_scheme(&cfg.schemes[0], cfg.sub_seed(1))?;
    let mut rows = Vec::new();
    for kname in &cfg.kernels {
        let k = Kernel::parse(kname, None)?;
        let opts = H2Options {
            admissibility: cfg.admissibility,
            mode: cfg.mode,
            scheme,
            tau: cfg.tol,
            entry_bound: cfg.c,
        };
        for &n in &cfg.n {
            let (pts, root) = generate_cloud(n, cfg.dim, cfg.sub_seed(20))?;
            let cache = ProxyCache::new();
            let mut builds = Vec::new();
            let mut last = None;
            for _ in 0..cfg.repeats {
                let (h2, stats) = build_h2_from_points(&k, &pts, root, cfg.leaf_cap, &opts, &cache)?;
                builds.push(stats.build_seconds());
                last = Some((h2, stats));
            }
            let (h2, stats) = last.expect("at least one repeat");
            let a = audit(&h2, cfg.audit_budget)?;
            let st = stats.storage;
            let row = Exp5Row {
                kernel: kname.clone(),
                n,
                levels: stats.levels,
                s_n: st.full_mb,
                s_inadm: st.dense_mb,
                s_basis: st.basis_mb,
                s_coupling: st.coupling_mb,
                s_total: st.total_mb(),
                error: a.relative_error,
                sampled: a.sampled,
                max_rank: stats.per_level.iter().map(|l| l.max_rank).max().unwrap_or(0),
                build_seconds: median(builds),
                proxy_seconds: stats.proxy_seconds,
            };
            table.push(vec![
                kname.clone(),
                format!("{:?}", cfg.admissibility).to_lowercase(),
                format!("{:?}", cfg.mode).to_lowercase(),
                scheme_label(&scheme),
                n.to_string(),
                row.levels.to_string(),
                f(row.s_n),
                f(row.s_inadm),
                f(row.s_basis),
                f(row.s_coupling),
                f(row.s_total),
                f(row.error),
                row.sampled.to_string(),
                row.max_rank.to_string(),
            ]);
            timing.push(vec![kname.clone(), n.to_string(), f(row.build_seconds), f(row.proxy_seconds)]);
            rows.push(row);
        }
    }
    let summary = rows
        .iter()
        .map(|r| {
            format!(
                "exp5 {} N = {}: S_N = {:.1} MB, S_total = {:.1} MB, E = {:.2e}{}, build {:.3} s",
                r.kernel,
                r.n,
                r.s_n,
                r.s_total,
                r.error,
                if r.sampled { " (sampled)" } else { "" },
                r.build_seconds
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok((rows, ExperimentOutput { tables: vec![table, timing], summary }))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    Ok(match cfg.id {
        ExperimentId::Exp1 => exp1(cfg)?.1,
        ExperimentId::Exp2 => exp2(cfg)?.1,
        ExperimentId::Exp3 => exp3(cfg)?.1,
        ExperimentId::Exp4 => exp4(cfg)?.1,
        ExperimentId::Exp5 => exp5(cfg)?.1,
    })
}
