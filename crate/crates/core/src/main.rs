use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use kernelskel::compress::{compress_hybrid, compress_proxy, default_xp, diagnostics, threshold_for};
use kernelskel::experiments::{parse_scheme, short_hash, run_experiment, CsvTable, ExperimentConfig, ExperimentId, ExperimentOutput};
use kernelskel::geometry::{generate_points, Admissibility, DomainPair, GenMode, PointSet, Region, ShellRegion};
use kernelskel::h2::{audit, build_h2_from_points, generate_cloud, BuildMode, H2Options, DEFAULT_AUDIT_BUDGET, DEFAULT_LEAF_CAP};
use kernelskel::h2::level_domain_pair;
use kernelskel::kernels::Kernel;
use kernelskel::linalg::Stop;
use kernelskel::proxy::{select, ProxyCache, ProxySet};
use kernelskel::{Error, Result};

#[derive(Parser)]
#[command(name = "kernelskel", version, about = "Proxy-point compression of kernel matrices and H2 construction")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (computation is single-threaded; recorded in configs).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Directory for CSV output.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// key = value file applied before command-line overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Select proxy points for a domain pair.
    ProxySelect {
        #[arg(long, default_value = "inv-dist")]
        kernel: String,
        /// far:<d>, near:<d> or level:<k>:<L>:<d>:<strong|weak>
        #[arg(long, default_value = "far:2")]
        pair: String,
        /// id, random:<n> or surface:<n>
        #[arg(long, default_value = "id")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress K(X0, Y0) with proxy points and report per-row errors.
    Compress {
        #[arg(long, default_value = "inv-dist")]
        kernel: String,
        #[arg(long, default_value = "far:2")]
        pair: String,
        /// Point file or random:<n> / grid:<n> in the source box.
        #[arg(long, default_value = "random:1000")]
        x0: String,
        /// Point file or random:<n> / grid:<n> in the far field.
        #[arg(long, default_value = "grid:10000")]
        y0: String,
        /// Point file or scheme (id, random:<n>, surface:<n>).
        #[arg(long, default_value = "id")]
        proxy: String,
        /// Relative tolerance; the ID threshold is eps * sqrt(|Y_p|).
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        /// Keep Y0 points near X literally, proxies only beyond the band.
        #[arg(long)]
        hybrid: bool,
        /// Width of the hybrid near band in source-box edges.
        #[arg(long, default_value_t = 1.0)]
        near: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build an H2 matrix over a random point cloud.
    H2Build {
        #[arg(long, default_value = "inv-dist")]
        kernel: String,
        #[arg(long, default_value_t = 10000)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "strong")]
        adm: String,
        #[arg(long, default_value = "proxy")]
        mode: String,
        #[arg(long, default_value = "id")]
        scheme: String,
        #[arg(long, default_value_t = 1e-6)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_LEAF_CAP)]
        leaf_cap: usize,
        #[arg(long, default_value_t = DEFAULT_AUDIT_BUDGET)]
        audit_budget: usize,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Error ratios and representation deviation.
    Exp1(ExpArgs),
    /// Proxy compression vs algebraic baselines.
    Exp2(ExpArgs),
    /// Proxy selection schemes compared.
    Exp3(ExpArgs),
    /// Error field with default and adaptive candidates.
    Exp4(ExpArgs),
    /// H2 storage, error and build time over N.
    Exp5(ExpArgs),
}

#[derive(Args)]
struct ExpArgs {
    /// Extra key=value settings (repeatable), applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn parse_pair(arg: &str) -> Result<DomainPair> {
    let parts: Vec<&str> = arg.split(':').collect();
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number '{s}' in pair"))) };
    match parts.as_slice() {
        ["far", d] => DomainPair::far_apart(num(d)? as usize),
        ["near", d] => DomainPair::nearby(num(d)? as usize),
        ["level", k, l, d, adm] => {
            let adm: Admissibility = adm.parse()?;
            level_domain_pair(num(k)? as usize, num(l)?, num(d)? as usize, adm)?
                .ok_or_else(|| Error::EmptyRegion("this level has no far field".into()))
        }
        _ => Err(Error::Parse(format!("bad pair '{arg}' (far:<d>|near:<d>|level:<k>:<L>:<d>:<adm>)"))),
    }
}

fn points_arg(arg: &str, region: &Region, seed: u64) -> Result<PointSet> {
    if let Some(n) = arg.strip_prefix("random:") {
        let n = n.parse().map_err(|_| Error::Parse(format!("bad count in '{arg}'")))?;
        return generate_points(region, &GenMode::RandomUniform { n, seed });
    }
    if let Some(n) = arg.strip_prefix("grid:") {
        let n = n.parse().map_err(|_| Error::Parse(format!("bad count in '{arg}'")))?;
        return generate_points(region, &GenMode::GridApprox { n });
    }
    PointSet::load(Path::new(arg))
}

/// Writes a table tagged with the command line that produced it.
fn write_table(seed: u64, table: &CsvTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::fs::write(path, table.render_tagged(&table.name, seed, &short_hash(&args.join(" ")))?)?;
    Ok(())
}

fn base_config(cli: &Cli, id: ExperimentId) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(id);
    cfg.seed = cli.seed;
    cfg.threads = cli.threads;
    cfg.out_dir = cli.out_dir.clone();
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::ProxySelect { kernel, pair, scheme, out } => {
            let pair = parse_pair(pair)?;
            let k = Kernel::parse(kernel, Some(&pair))?;
            let t = Instant::now();
            let p = select(&k, &pair, parse_scheme(scheme, cli.seed)?)?;
            p.points.save(out)?;
            let rounds = p.diagnostics.as_ref().map(|d| d.rounds).unwrap_or(0);
            println!("|Y_p| = {}, rounds = {}, seconds = {:.3}", p.len(), rounds, t.elapsed().as_secs_f64());
        }
        Cmd::Compress { kernel, pair, x0, y0, proxy, eps, c, hybrid, near, report } => {
            let pair = parse_pair(pair)?;
            let k = Kernel::parse(kernel, Some(&pair))?;
            let x0 = points_arg(x0, &Region::Box(pair.source), cli.seed)?;
            let y0 = points_arg(y0, &Region::Shell(pair.target), cli.seed.wrapping_add(1))?;
            let scheme_or_file = |pair: &DomainPair| -> Result<ProxySet> {
                match parse_scheme(proxy, cli.seed.wrapping_add(2)) {
                    Ok(s) => select(&k, pair, s),
                    Err(_) => ProxySet::from_points(PointSet::load(Path::new(proxy))?, *pair),
                }
            };
            let res = if *hybrid {
                let band = pair.target.inner().expanded(near * pair.source.max_width())?;
                let band = band.intersection(pair.target.outer())?;
                let near_region = ShellRegion::new(band, *pair.target.inner())?;
                let far_pair =
                    DomainPair::new(pair.source, ShellRegion::new(*pair.target.outer(), band)?, Admissibility::Weak, pair.eta)?;
                let far = scheme_or_file(&far_pair)?;
                let n_cols = far.len();
                let (res, split) =
                    compress_hybrid(&k, &x0, &y0, &near_region, &far, Stop::Threshold(threshold_for(*eps, n_cols)), *c)?;
                println!("hybrid: |Y0 near| = {}, |Y0 far| = {}", split.near.len(), split.far.len());
                res
            } else {
                let p = scheme_or_file(&pair)?;
                compress_proxy(&k, &x0, &p, Stop::Threshold(threshold_for(*eps, p.len())), *c)?
            };
            println!("|Y_p| = {}, rank = {}", res.proxy.len(), res.rank());
            if let Some(path) = report {
                let xp = default_xp(&res.proxy.pair, res.proxy.len())?;
                let rep = diagnostics(&k, &x0, &res, &y0, &xp)?;
                let mut t = CsvTable { name: "compress".into(), header: vec!["row_index", "err_Yp", "err_Y0", "ratio_max", "ratio_avg"], rows: vec![] };
                let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
                for i in 0..x0.len() {
                    t.rows.push(vec![
                        i.to_string(),
                        format!("{:.6e}", rep.err_yp[i]),
                        format!("{:.6e}", rep.err_y0[i]),
                        opt(rep.ratio_max[i]),
                        opt(rep.ratio_avg[i]),
                    ]);
                }
                write_table(cli.seed, &t, path)?;
                println!(
                    "max ratio = {:.3e}, representation deviation = {:.3e}",
                    rep.max_ratio(),
                    rep.representation_deviation
                );
            }
        }
        Cmd::H2Build { kernel, n, dim, adm, mode, scheme, tau, leaf_cap, audit_budget, stats } => {
            let k = Kernel::parse(kernel, None)?;
            let opts = H2Options {
                admissibility: adm.parse()?,
                mode: mode.parse::<BuildMode>()?,
                scheme: parse_scheme(scheme, cli.seed.wrapping_add(2))?,
                tau: *tau,
                entry_bound: 2.0,
            };
            let (pts, root) = generate_cloud(*n, *dim, cli.seed)?;
            let (h2, st) = build_h2_from_points(&k, &pts, root, *leaf_cap, &opts, &ProxyCache::new())?;
            let a = audit(&h2, *audit_budget)?;
            println!(
                "N = {}, levels = {}, S_N = {:.1} MB, S_inadm = {:.1} MB, S_total = {:.1} MB, E = {:.3e}{}, build = {:.3} s (+ proxy selection {:.3} s)",
                n,
                st.levels,
                st.storage.full_mb,
                st.storage.dense_mb,
                st.storage.total_mb(),
                a.relative_error,
                if a.sampled { " (sampled)" } else { "" },
                st.build_seconds(),
                st.proxy_seconds
            );
            for l in &st.per_level {
                println!(
                    "  level {}: {} nodes, rank {}..{} (mean {:.1}), |Y_p| = {}",
                    l.level,
                    l.nodes,
                    l.min_rank,
                    l.max_rank,
                    l.mean_rank,
                    l.proxy_size.map(|p| p.to_string()).unwrap_or_else(|| "-".into())
                );
            }
            if let Some(path) = stats {
                let mut t = CsvTable {
                    name: "h2".into(),
                    header: vec!["N", "S_N", "S_inadm", "S_total", "E", "build_seconds"],
                    rows: vec![],
                };
                t.rows.push(vec![
                    n.to_string(),
                    format!("{:.6e}", st.storage.full_mb),
                    format!("{:.6e}", st.storage.dense_mb),
                    format!("{:.6e}", st.storage.total_mb()),
                    format!("{:.6e}", a.relative_error),
                    format!("{:.6e}", st.build_seconds()),
                ]);
                write_table(cli.seed, &t, path)?;
            }
        }
        Cmd::Exp1(a) | Cmd::Exp2(a) | Cmd::Exp3(a) | Cmd::Exp4(a) | Cmd::Exp5(a) => {
            let id = match &cli.cmd {
                Cmd::Exp1(_) => ExperimentId::Exp1,
                Cmd::Exp2(_) => ExperimentId::Exp2,
                Cmd::Exp3(_) => ExperimentId::Exp3,
                Cmd::Exp4(_) => ExperimentId::Exp4,
                _ => ExperimentId::Exp5,
            };
            let mut cfg = base_config(cli, id)?;
            for kv in &a.set {
                let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("--set expects key=value, got '{kv}'")))?;
                cfg.set(k, v)?;
            }
            let out: ExperimentOutput = run_experiment(&cfg)?;
            println!("{}", out.summary);
            for p in out.write(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
