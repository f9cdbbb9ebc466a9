use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airls::bench::{self, ExperimentConfig};
use airls::snapshot::Snapshot;
use airls::{EstimatorKind, EstimatorSpec};
use anyhow::Context;
use clap::{Parser, Subcommand};

/// Robust online identification of linear systems with AIRLS.
#[derive(Debug, Parser)]
#[command(name = "airls", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one trace from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Outlier ratio; defaults to `noise.outlier_ratio`.
        #[arg(long)]
        ratio: Option<f64>,
        /// Noise seed; defaults to `noise.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Use `sweep.fast_steps` instead of `sweep.n_steps`.
        #[arg(long)]
        fast: bool,
    },
    /// Run an estimator over a trace and save its final state.
    Estimate {
        #[arg(long)]
        estimator: EstimatorKind,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        /// Settings for the estimator come from `[estimator.<name>]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        /// Continue from an earlier snapshot instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Outlier-ratio sweep; writes one row per estimator and ratio.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fast: bool,
    },
    /// Reconstruct per-step states from a snapshot.
    States {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            ratio,
            seed,
            fast,
        } => {
            let mut cfg = load_config(&config)?;
            if fast {
                cfg = cfg.fast();
            }
            let ratio = ratio.unwrap_or(cfg.noise.outlier_ratio);
            let trace = cfg.trace(ratio, seed.unwrap_or(cfg.noise.seed))?;
            bench::write_trace(&trace, create(&out)?)?;
        }
        Command::Estimate {
            estimator,
            trace,
            snapshot,
            config,
            beta,
            resume,
        } => {
            let trace = bench::read_trace(open(&trace)?)?;
            let (n, n_u) = (trace[0].n(), trace[0].n_u());
            let mut est = match resume {
                Some(path) => {
                    let snap = Snapshot::load(&path).with_context(|| format!("reading {}", path.display()))?;
                    if snap.estimator != estimator {
                        return Err(airls::Error::InvalidConfig(format!(
                            "snapshot holds a {} estimator, not {estimator}",
                            snap.estimator
                        ))
                        .into());
                    }
                    snap.restore()?
                }
                None => {
                    let mut spec = match &config {
                        Some(path) => load_config(path)?
                            .estimators
                            .into_iter()
                            .find(|e| e.spec.kind() == estimator)
                            .map(|e| e.spec)
                            .unwrap_or_else(|| EstimatorSpec::default_for(estimator)),
                        None => EstimatorSpec::default_for(estimator),
                    };
                    if let Some(b) = beta {
                        spec = spec.with_beta(b);
                    }
                    spec.build(n, n_u)?
                }
            };
            est.run(&trace)?;
            est.snapshot().save(&snapshot)?;
        }
        Command::Sweep { config, out, fast } => {
            let mut cfg = load_config(&config)?;
            if fast {
                cfg = cfg.fast();
            }
            let report = bench::run_sweep(&cfg)?;
            for r in report.trials.iter().filter(|t| t.failed()) {
                eprintln!(
                    "warning: {} failed at ratio {} (seed {}): {}",
                    r.estimator,
                    r.outlier_ratio,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
            bench::write_sweep_csv(&report.rows, create(&out)?)?;
        }
        Command::States { snapshot, trace, out } => {
            let snap = Snapshot::load(&snapshot).with_context(|| format!("reading {}", snapshot.display()))?;
            let est = snap.restore()?;
            let trace = bench::read_trace(open(&trace)?)?;
            if trace[0].n() != snap.n || trace[0].n_u() != snap.n_u {
                return Err(airls::Error::InvalidConfig(format!(
                    "trace has n = {}, n_u = {} but the snapshot has n = {}, n_u = {}",
                    trace[0].n(),
                    trace[0].n_u(),
                    snap.n,
                    snap.n_u
                ))
                .into());
            }
            bench::reconstruct_states(est.as_ref(), &trace, create(&out)?)?;
        }
    }
    Ok(())
}

/// 3 for numerical failures; bad input of any kind is a configuration error.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<airls::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
