//! Command-line front end: `oqnet run` and `oqnet describe`.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use config::{ExperimentConfig, ExperimentKind};
use output::OutputDir;

pub const THREADS_ENV: &str = "OQNET_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "oqnet",
    version,
    about = "Open quantum oscillator networks: dynamics and heat transport"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write its artifacts.
    Run(RunArgs),
    /// Print the resolved plan without computing anything.
    Describe(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Dotted `KEY=VAL` override, e.g. `numerics.h=0.01`. Repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VAL")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output directory (defaults to `output.dir` from the config).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (falls back to OQNET_THREADS).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::from_path(&self.config, &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let base = self
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, base))
    }
}

/// Entry point used by the binary. Returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => run(&a),
        Command::Describe(a) => describe(&a).map(|text| {
            print!("{text}");
            true
        }),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                Error::config(THREADS_ENV, format!("expected a thread count, got `{v}`"))
            })
        }
        Err(_) => Ok(None),
    }
}

/// Run one experiment. `Ok(false)` means it completed but a self-check failed.
pub fn run(args: &RunArgs) -> Result<bool> {
    let (cfg, base) = args.common.load()?;
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let threads = thread_count(args.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(|| execute(&cfg, &base, &out_dir))
}

/// Run a parsed config and write artifacts plus `manifest.json` under `out_dir`.
pub fn execute(cfg: &ExperimentConfig, base: &Path, out_dir: &Path) -> Result<bool> {
    let mut out = OutputDir::create(out_dir)?;
    let start = Instant::now();
    let outcome = experiments::run(cfg, base, &mut out)?;
    let mut outputs = out.written().to_vec();
    outputs.push("manifest.json".into());
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.kind.name(),
        "seed": cfg.seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
        "exercises": experiments::exercises(cfg.kind),
        "outputs": outputs,
        "passed": outcome.passed,
        "summary": outcome.summary,
        "config": cfg,
    });
    out.json("manifest.json", &manifest)?;
    eprintln!(
        "{}: wrote {} files to {}",
        cfg.kind.name(),
        out.written().len(),
        out.root().display()
    );
    Ok(outcome.passed)
}

pub fn describe(args: &CommonArgs) -> Result<String> {
    let (cfg, base) = args.load()?;
    plan(&cfg, &base)
}

/// Human-readable plan. Builds the network (cheap) but runs no solver.
pub fn plan(cfg: &ExperimentConfig, base: &Path) -> Result<String> {
    use std::fmt::Write;
    let mut s = String::new();
    let n = &cfg.numerics;
    let _ = writeln!(s, "experiment: {}", cfg.kind.name());
    let _ = writeln!(s, "seed: {}", cfg.seed);
    let _ = writeln!(s, "exercises:");
    for e in experiments::exercises(cfg.kind) {
        let _ = writeln!(s, "  - {e}");
    }
    let _ = writeln!(
        s,
        "quadrature: abs_tol {:e}, rel_tol {:e}, max_panels {}",
        n.abs_tol, n.rel_tol, n.max_panels
    );
    let describe_network = |s: &mut String, t_max: f64| -> Result<()> {
        let spec = cfg.network(base)?;
        let k = spec.dim();
        let _ = writeln!(
            s,
            "network: {k} coordinates, {} regions",
            spec.regions().len()
        );
        for r in spec.regions() {
            let temps: Vec<String> = r
                .reservoirs
                .iter()
                .map(|b| format!("{}", b.temperature))
                .collect();
            let _ = writeln!(
                s,
                "  region {}: sites {:?}, temperatures [{}]",
                r.id,
                r.sites,
                temps.join(", ")
            );
        }
        let _ = writeln!(s, "  bare potential: {:?}", rows(spec.potential()));
        let steps = (t_max / n.h).round() as usize + 1;
        let _ = writeln!(
            s,
            "time grid: h {}, t_max {t_max}, {steps} points, {} stored floats per kernel series",
            n.h,
            steps * k * k
        );
        Ok(())
    };
    match cfg.kind {
        ExperimentKind::Dynamics | ExperimentKind::MasterCoefficients => {
            describe_network(&mut s, n.t_max)?;
            let _ = writeln!(s, "output stride: {}", n.output_stride);
        }
        ExperimentKind::HeatReport => {
            describe_network(&mut s, n.t_max)?;
            let spec = cfg.network(base)?;
            let top = n
                .omega_max
                .unwrap_or_else(|| spec.density_upper().min(10.0 * spec.cutoff_scale()));
            let _ = writeln!(s, "frequency grid: {} points on (0, {top}]", n.omega_points);
        }
        ExperimentKind::NogoScan => {
            let e = &cfg.nogo.ensemble;
            let _ = writeln!(s, "trials: {}", cfg.nogo.trials);
            let _ = writeln!(
                s,
                "ensemble: regions {:?}, up to {} interior sites, multi-bath probability {}, temperatures {:?}",
                e.region_counts, e.max_interior, e.multi_bath_probability, e.temperature_range
            );
        }
        ExperimentKind::ThirdLaw => {
            let t = &cfg.third_law;
            let _ = writeln!(
                s,
                "renormalized potential: {:?}, coupling {}, cutoff {} (sharp)",
                t.renormalized_potential, t.coupling, t.cutoff
            );
            let _ = writeln!(
                s,
                "exponents: {:?}, {} mean temperatures",
                t.exponents, t.points
            );
        }
        ExperimentKind::OracleCompare => {
            let spec = cfg.network(base)?;
            let upper = cfg
                .oracle
                .upper
                .unwrap_or_else(|| experiments::default_oracle_upper(&spec));
            let reservoirs: usize = spec.regions().iter().map(|r| r.multiplicity()).sum();
            let _ = writeln!(s, "discretization upper frequency: {upper}");
            let mut longest: f64 = 0.0;
            for &m in &cfg.oracle.modes {
                let recurrence = 2.0 * std::f64::consts::PI * m as f64 / upper;
                longest = longest.max(recurrence / 2.0);
                let dim = 2 * (spec.dim() + reservoirs * m);
                let _ = writeln!(
                    s,
                    "  M = {m}: recurrence time {recurrence:.3}, window {:.3}, phase-space dimension {dim}",
                    recurrence / 2.0
                );
            }
            describe_network(&mut s, longest)?;
            for &m in &cfg.oracle.modes {
                let window = std::f64::consts::PI * m as f64 / upper;
                if window < n.t_max {
                    let _ = writeln!(
                        s,
                        "warning: M = {m} recurs before numerics.t_max = {}; its comparison stops at t = {window:.3}",
                        n.t_max
                    );
                }
            }
        }
        ExperimentKind::FdtSelftest => {
            let _ = writeln!(
                s,
                "densities: {}, {} frequencies each",
                cfg.fdt.densities.len(),
                cfg.fdt.grid_points
            );
        }
    }
    let _ = writeln!(s, "output dir: {}", cfg.output.dir.display());
    Ok(s)
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
