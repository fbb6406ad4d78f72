//! `forksim`: classify, simulate and sweep forking equilibria from the command line.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 solver non-convergence. Errors are
//! also written to stderr as a JSON object.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forksim::equilibrium::{atomic_classify, critical_spending_frontier, stationary_treasury};
use forksim::{
    atomic_long_run, classify, emit_figure_series, run_sweep, MechanismSpec, RestartMode, Simulation, SpendingPolicy,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] forksim::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn from_core_config(e: forksim::Error) -> Self {
        CliError::Config(e.to_string())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(forksim::Error::NonConvergence { .. } | forksim::Error::Bracketing { .. }) => {
                "non_convergence"
            }
            CliError::Solver(_) => "invalid_input",
            CliError::Io(_) => "io",
        }
    }

    fn exit_code(&self) -> u8 {
        if self.kind() == "non_convergence" {
            2
        } else {
            1
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "forksim", version, about = "Forking equilibria of repeated treasury-backed auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; omitted keys take the baseline values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replications (`simulate`), per-cell replications (`sweep`) or periods (`atomic`).
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// pro-rata, pro-rata-tax, contribution-1 or contribution-2.
    #[arg(long, global = true)]
    mech: Option<String>,
    #[arg(long, global = true)]
    s0: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Vesting delay in periods.
    #[arg(long, global = true)]
    vesting: Option<usize>,
    #[arg(long, global = true, requires = "spend_lambda")]
    spend_k: Option<f64>,
    #[arg(long, global = true, requires = "spend_k")]
    spend_lambda: Option<f64>,
    /// Individual exit after every arbitrageur win.
    #[arg(long, global = true)]
    atomic: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Restart {
    CarriedOver,
    ResetN,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and classify one instance.
    Classify,
    /// Monte Carlo statistics for one instance.
    Simulate {
        /// Also write the first replication's trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Classification grid over S0 and kappa as CSV.
    Sweep,
    /// Stationary treasury and long-run simulation under atomic exit.
    Atomic {
        #[arg(long, value_enum)]
        restart: Option<Restart>,
    },
    /// Smallest spending fraction preventing a fork, per decay rate, as CSV.
    SpendingFrontier {
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Bid, win-accumulation and contribution-share series as JSON.
    Figures,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Simulate { .. } => "simulate",
            Command::Sweep => "sweep",
            Command::Atomic { .. } => "atomic",
            Command::SpendingFrontier { .. } => "spending-frontier",
            Command::Figures => "figures",
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &c.mech {
        let mech: MechanismSpec<f64> = name.parse().map_err(CliError::from_core_config)?;
        if mech.name() != cfg.mechanism.name() {
            cfg.mechanism = mech;
        }
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.long_run.seed = seed;
    }
    if let Some(reps) = c.reps {
        match cli.command {
            Command::Sweep => cfg.sweep_reps = reps,
            Command::Atomic { .. } => cfg.long_run.periods = reps,
            _ => cfg.reps = reps,
        }
    }
    cfg.s0 = c.s0.unwrap_or(cfg.s0);
    cfg.kappa = c.kappa.unwrap_or(cfg.kappa);
    cfg.delta = c.delta.unwrap_or(cfg.delta);
    cfg.vesting_delta = c.vesting.unwrap_or(cfg.vesting_delta);
    if let (Some(k), Some(lambda)) = (c.spend_k, c.spend_lambda) {
        cfg.spending = SpendingPolicy::ExpDecay { k, lambda };
    }
    cfg.atomic |= c.atomic;
    if let Command::Atomic { restart: Some(r) } = cli.command {
        cfg.long_run.restart = match r {
            Restart::CarriedOver => RestartMode::CarriedOver,
            Restart::ResetN => RestartMode::ResetN,
        };
    }
    if let Command::SpendingFrontier { lambdas: Some(l) } = &cli.command {
        cfg.lambdas = l.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    workers: usize,
    config: &'a RunConfig,
}

fn write_bytes(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| io_err(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn write_json(out: Option<&Path>, meta: &Meta<'_>, result: impl Serialize) -> Result<(), CliError> {
    let doc = json!({ "meta": meta, "result": result });
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_bytes(out, text.as_bytes())
}

/// Writes CSV and, for file output, the reproducibility header to `<out>.meta.json`.
fn write_csv(
    out: Option<&Path>,
    meta: &Meta<'_>,
    fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    fill(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    write_bytes(out, &buf)?;
    match out {
        Some(path) => {
            let mut name = path.as_os_str().to_owned();
            name.push(".meta.json");
            let sidecar = PathBuf::from(name);
            let mut text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Io(e.to_string()))?;
            text.push('\n');
            std::fs::write(&sidecar, text).map_err(|e| io_err(&sidecar, e))
        }
        None => {
            log::info!("CSV written to standard output; no metadata sidecar");
            Ok(())
        }
    }
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    let meta = Meta {
        tool: "forksim",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        seed: cfg.seed,
        workers: rayon::current_num_threads(),
        config: cfg,
    };
    let out = cli.common.out.as_deref();
    let params = cfg.params();
    let mech = cfg.mechanism;
    let ext = cfg.ext();
    let start = cfg.start();
    log::info!("{} with {} on {} threads", meta.command, mech, meta.workers);

    match &cli.command {
        Command::Classify => {
            let sol = classify(&params, &mech, &ext, &start, &cfg.solver)?;
            write_json(out, &meta, sol)
        }
        Command::Simulate { trace } => {
            let sim = Simulation {
                params: &params,
                mech: &mech,
                ext: &ext,
                start,
                policy: cfg.policy.clone(),
                solver: cfg.solver,
            };
            let (stats, traces) = sim.run_traced(cfg.reps, cfg.seed, usize::from(trace.is_some()))?;
            if let (Some(path), Some(first)) = (trace, traces.first()) {
                write_csv(Some(path), &meta, |buf| first.write_csv(buf))?;
            }
            write_json(out, &meta, stats)
        }
        Command::Sweep => {
            let result = run_sweep(&cfg.sweep())?;
            let failed = result.iter_cells().filter(|c| c.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} sweep cells failed");
            }
            write_csv(out, &meta, |buf| result.write_csv(buf))
        }
        Command::Atomic { .. } => {
            let mut atomic_params = params;
            atomic_params.kappa = 0.0;
            let atomic_ext = forksim::ExtensionSpec { atomic: true, ..ext };
            let opening = atomic_classify(&atomic_params, &mech, &atomic_ext, &start, &cfg.solver)?;
            let stationary = match mech.pro_rata_scale() {
                Some(_) => Some(stationary_treasury(&atomic_params, &mech, &cfg.solver)?),
                None => None,
            };
            let long_run = atomic_long_run(&atomic_params, &mech, &start, &cfg.long_run, &cfg.solver)?;
            write_json(
                out,
                &meta,
                json!({ "opening": opening, "stationary": stationary, "long_run": long_run }),
            )
        }
        Command::SpendingFrontier { .. } => {
            let points = critical_spending_frontier(&params, &mech, &ext, &start, &cfg.lambdas, &cfg.solver)?;
            write_csv(out, &meta, |buf| {
                buf.extend_from_slice(b"lambda,k_hat\n");
                for p in &points {
                    let k = p.k_hat.map(forksim::format::fmt_num).unwrap_or_default();
                    writeln!(buf, "{},{k}", forksim::format::fmt_num(p.lambda))?;
                }
                Ok(())
            })
        }
        Command::Figures => {
            let series = emit_figure_series(&params, &mech, &ext, &start, &cfg.solver, &cfg.treasury_grid)?;
            write_json(out, &meta, series)
        }
    }
}

fn fail(err: &CliError) -> ExitCode {
    let doc = json!({ "error": { "kind": err.kind(), "message": err.to_string() } });
    eprintln!("{doc}");
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FORKSIM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    let result = match cli.common.workers {
        Some(0) => Err(CliError::Config("--workers must be positive".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli, &cfg)),
            Err(e) => Err(CliError::Config(format!("thread pool: {e}"))),
        },
        None => run(&cli, &cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
