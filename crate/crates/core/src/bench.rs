//! Outlier-sweep experiments: configuration, trials, aggregation and the CSV
//! formats shared with the CLI.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Deserialize;

use crate::airls::{BetaBoundMonitor, EstimatorConfig};
use crate::baselines::{RlsConfig, RtlsConfig};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorKind, EstimatorSpec};
use crate::sim::{generate_trajectory, GaussianNoise, LinearSystem, NoiseConfig, SnrScale, TrajectorySample};

/// Number of steps in `--fast` mode.
pub const DEFAULT_FAST_STEPS: usize = 5000;

/// `100 · ‖Θ − Θ̂‖_F / ‖Θ‖_F`.
pub fn rel_frobenius_error(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::DimensionMismatch {
            what: "estimate",
            expected: truth.shape(),
            found: estimate.shape(),
        });
    }
    let norm = truth.norm();
    if norm == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok(100.0 * (truth - estimate).norm() / norm)
}

/// `points` values spaced evenly in log scale from `start` to `stop`.
pub fn log_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let (a, b) = (start.ln(), stop.ln());
            let mut grid: Vec<f64> = (0..points)
                .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
                .collect();
            grid[0] = start;
            grid[points - 1] = stop;
            grid
        }
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // ties share their average rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a constant
/// series.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    #[serde(default)]
    noise: RawNoise,
    #[serde(default)]
    estimator: BTreeMap<String, RawEstimator>,
    #[serde(default)]
    sweep: RawSweep,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    x0: Option<Vec<f64>>,
    #[serde(default = "default_input_std")]
    input_std: f64,
}

fn default_input_std() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default = "default_snr")]
    snr: f64,
    #[serde(default)]
    scale: SnrScale,
    #[serde(default)]
    outlier_ratio: f64,
    #[serde(default = "default_low")]
    outlier_low: f64,
    #[serde(default = "default_high")]
    outlier_high: f64,
    #[serde(default)]
    seed: u64,
}

fn default_mode() -> String {
    "snr".into()
}
fn default_snr() -> f64 {
    100.0
}
fn default_low() -> f64 {
    -0.2
}
fn default_high() -> f64 {
    0.2
}

impl Default for RawNoise {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            snr: default_snr(),
            scale: SnrScale::default(),
            outlier_ratio: 0.0,
            outlier_low: default_low(),
            outlier_high: default_high(),
            seed: 0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    kind: Option<EstimatorKind>,
    beta: Option<f64>,
    alpha: Option<f64>,
    k: Option<usize>,
    l_z: Option<usize>,
    l_theta: Option<usize>,
    psi_scale: Option<f64>,
    point_iters: Option<usize>,
    ridge_fallback: Option<bool>,
    init_scale: Option<f64>,
    power_iters: Option<usize>,
    delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    n_steps: Option<usize>,
    fast_steps: Option<usize>,
    trials: Option<usize>,
    ratios: Option<Vec<f64>>,
    grid: Option<RawGrid>,
    seed_base: Option<u64>,
    estimators: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    start: f64,
    stop: f64,
    points: usize,
}

/// A named estimator configuration from the `[estimator.<name>]` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedEstimator {
    pub name: String,
    pub spec: EstimatorSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: LinearSystem,
    pub x0: DVector<f64>,
    pub input_std: f64,
    /// Template; the sweep overrides the outlier ratio and seed per trial.
    pub noise: NoiseConfig,
    pub estimators: Vec<NamedEstimator>,
    pub n_steps: usize,
    pub fast_steps: usize,
    pub trials: usize,
    pub outlier_ratios: Vec<f64>,
    pub seed_base: u64,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidConfig(format!(
            "`{what}` must be a non-empty rectangular array of rows"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn build_spec(name: &str, raw: &RawEstimator) -> Result<EstimatorSpec> {
    let kind = match raw.kind {
        Some(k) => k,
        None => name.parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "estimator `{name}` needs a `kind` (airls, rtls or rls)"
            ))
        })?,
    };
    let spec = match kind {
        EstimatorKind::Airls => {
            let d = EstimatorConfig::default();
            let config = EstimatorConfig {
                beta: raw.beta.unwrap_or(d.beta),
                alpha: raw.alpha.unwrap_or(d.alpha),
                outer_iters: raw.k.unwrap_or(d.outer_iters),
                z_iters: raw.l_z.unwrap_or(d.z_iters),
                theta_iters: raw.l_theta.unwrap_or(d.theta_iters),
                ridge_fallback: raw.ridge_fallback.unwrap_or(d.ridge_fallback),
                init_scale: raw.init_scale.unwrap_or(d.init_scale),
                point_iters: raw.point_iters.unwrap_or(d.point_iters),
            };
            config.validate()?;
            let psi_scale = raw.psi_scale.unwrap_or(1e-3);
            if !(psi_scale >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "estimator `{name}`: psi_scale must be non-negative"
                )));
            }
            EstimatorSpec::Airls { config, psi_scale }
        }
        EstimatorKind::Rtls => {
            let d = RtlsConfig::default();
            let c = RtlsConfig {
                beta: raw.beta.unwrap_or(d.beta),
                power_iters: raw.power_iters.unwrap_or(d.power_iters),
                init_scale: raw.init_scale.unwrap_or(d.init_scale),
            };
            if c.power_iters == 0 {
                return Err(Error::InvalidConfig(format!(
                    "estimator `{name}`: power_iters must be at least 1"
                )));
            }
            EstimatorSpec::Rtls(c)
        }
        EstimatorKind::Rls => {
            let d = RlsConfig::default();
            EstimatorSpec::Rls(RlsConfig {
                beta: raw.beta.unwrap_or(d.beta),
                delta: raw.delta.unwrap_or(d.delta),
            })
        }
    };
    let beta = spec.beta();
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "estimator `{name}`: beta must lie in (0, 1), got {beta}"
        )));
    }
    Ok(spec)
}

impl ExperimentConfig {
    /// The benchmark system with the default estimators and a 20-point ratio
    /// grid from 1e-4 to 5e-2.
    pub fn benchmark() -> Self {
        Self::from_toml_str(BENCHMARK_TOML).expect("built-in config is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let a = matrix_from_rows(&raw.system.a, "system.a")?;
        let b = matrix_from_rows(&raw.system.b, "system.b")?;
        let system = LinearSystem::new(a, b).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let x0 = match raw.system.x0 {
            Some(v) if v.len() == system.n() => DVector::from_vec(v),
            Some(v) => {
                return Err(Error::InvalidConfig(format!(
                    "system.x0 has {} entries, expected {}",
                    v.len(),
                    system.n()
                )))
            }
            None => DVector::zeros(system.n()),
        };
        if !(raw.system.input_std > 0.0) {
            return Err(Error::InvalidConfig("system.input_std must be positive".into()));
        }

        let gaussian = match raw.noise.mode.as_str() {
            "off" => GaussianNoise::Off,
            "snr" => GaussianNoise::Snr {
                snr: raw.noise.snr,
                scale: raw.noise.scale,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "noise.mode must be \"snr\" or \"off\", got \"{other}\""
                )))
            }
        };
        let noise = NoiseConfig {
            gaussian,
            outlier_ratio: raw.noise.outlier_ratio,
            outlier_low: raw.noise.outlier_low,
            outlier_high: raw.noise.outlier_high,
            seed: raw.noise.seed,
        };
        noise.validate()?;

        let mut table = raw.estimator;
        if table.is_empty() {
            for kind in [EstimatorKind::Airls, EstimatorKind::Rtls, EstimatorKind::Rls] {
                table.insert(kind.as_str().into(), RawEstimator::default());
            }
        }
        let names = raw
            .sweep
            .estimators
            .clone()
            .unwrap_or_else(|| table.keys().cloned().collect());
        if names.is_empty() {
            return Err(Error::InvalidConfig("sweep.estimators is empty".into()));
        }
        let estimators = names
            .iter()
            .map(|name| {
                let spec = match table.get(name) {
                    Some(r) => build_spec(name, r)?,
                    None => build_spec(name, &RawEstimator::default())?,
                };
                Ok(NamedEstimator {
                    name: name.clone(),
                    spec,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let sweep = raw.sweep;
        let outlier_ratios = match (sweep.ratios, sweep.grid) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "give either sweep.ratios or sweep.grid, not both".into(),
                ))
            }
            (Some(r), None) => r,
            (None, Some(g)) => {
                if !(g.start > 0.0 && g.stop >= g.start) {
                    return Err(Error::InvalidConfig(
                        "sweep.grid needs 0 < start <= stop".into(),
                    ));
                }
                log_grid(g.start, g.stop, g.points)
            }
            (None, None) => log_grid(1e-4, 5e-2, 20),
        };
        if outlier_ratios.is_empty() {
            return Err(Error::InvalidConfig("the outlier ratio list is empty".into()));
        }
        if outlier_ratios.iter().any(|r| !(0.0..=1.0).contains(r))
            || outlier_ratios.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidConfig(
                "outlier ratios must lie in [0, 1] and be ascending".into(),
            ));
        }

        let cfg = Self {
            system,
            x0,
            input_std: raw.system.input_std,
            noise,
            estimators,
            n_steps: sweep.n_steps.unwrap_or(50_000),
            fast_steps: sweep.fast_steps.unwrap_or(DEFAULT_FAST_STEPS),
            trials: sweep.trials.unwrap_or(10),
            outlier_ratios,
            seed_base: sweep.seed_base.unwrap_or(0),
        };
        if cfg.n_steps == 0 || cfg.fast_steps == 0 || cfg.trials == 0 {
            return Err(Error::InvalidConfig(
                "sweep.n_steps, sweep.fast_steps and sweep.trials must be at least 1".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Switches to the short CI run length.
    pub fn fast(mut self) -> Self {
        self.n_steps = self.fast_steps;
        self
    }

    pub fn estimator(&self, name: &str) -> Option<&NamedEstimator> {
        self.estimators.iter().find(|e| e.name == name)
    }

    /// Seed shared by every estimator for trial `trial` at ratio index
    /// `ratio_index`.
    pub fn trial_seed(&self, ratio_index: usize, trial: usize) -> u64 {
        self.seed_base
            .wrapping_add((ratio_index * self.trials + trial) as u64)
    }

    /// The noise template with `ratio` and `seed` filled in.
    pub fn noise_for(&self, ratio: f64, seed: u64) -> NoiseConfig {
        NoiseConfig {
            outlier_ratio: ratio,
            seed,
            ..self.noise.clone()
        }
    }

    pub fn trace(&self, ratio: f64, seed: u64) -> Result<Vec<TrajectorySample>> {
        generate_trajectory(
            &self.system,
            &self.x0,
            self.input_std,
            self.n_steps,
            &self.noise_for(ratio, seed),
        )
    }
}

/// Configuration of the outlier-sweep benchmark; also the template printed
/// by the README.
pub const BENCHMARK_TOML: &str = r#"
[system]
a = [[0.8, -0.25], [-0.25, 0.25]]
b = [[10.0, 2.0], [2.0, 10.0]]
input_std = 0.01

[noise]
mode = "snr"
snr = 100.0
scale = "amplitude"
outlier_low = -0.2
outlier_high = 0.2

[estimator.airls]
beta = 0.995
psi_scale = 1e-3

[estimator.rtls]
beta = 0.995

[estimator.rls]
beta = 0.995

[sweep]
n_steps = 50000
fast_steps = 5000
trials = 10
grid = { start = 1e-4, stop = 5e-2, points = 20 }
seed_base = 1
estimators = ["airls", "rtls", "rls"]
"#;

// ---------------------------------------------------------------------------
// trials

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub estimator: String,
    pub outlier_ratio: f64,
    /// Relative Frobenius error in percent; `NaN` for a failed trial.
    pub eps_f: f64,
    /// RMSE of the reconstructed `x_t` against the true state.
    pub state_rmse: f64,
    pub runtime_ms: f64,
    /// `None` when the bound could not be evaluated.
    pub beta_bound_ok: Option<bool>,
    pub seed: u64,
    pub error: Option<String>,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Steps between eigenvalue scans of the measured correlation.
const BOUND_STRIDE: usize = 50;

fn bound_check(trace: &[TrajectorySample], beta: f64, init_scale: f64) -> Option<bool> {
    let first = trace.first()?;
    let m = 2 * first.n() + first.n_u();
    let mut c = DMatrix::identity(m, m) * init_scale;
    let mut monitor = BetaBoundMonitor::new(beta);
    for (t, s) in trace.iter().enumerate() {
        let v = s.stacked(true);
        c.ger(1.0, &v, &v, beta);
        monitor.observe_sample(&v);
        if t % BOUND_STRIDE == BOUND_STRIDE - 1 {
            monitor.observe_correlation(&c);
        }
    }
    monitor.bound_holds()
}

/// RMSE of `x̂_t` from [`Estimator::point_estimate`] against the true states.
pub fn state_rmse(est: &dyn Estimator, trace: &[TrajectorySample]) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for s in trace {
        let p = est.point_estimate(s);
        sq += (&p.x_hat - &s.x).norm_squared();
        count += s.n();
    }
    (sq / count as f64).sqrt()
}

/// Streams `trace` through a fresh estimator built from `spec`.
pub fn run_on_trace(
    system: &LinearSystem,
    named: &NamedEstimator,
    trace: &[TrajectorySample],
    ratio: f64,
    seed: u64,
) -> TrialResult {
    let mut result = TrialResult {
        estimator: named.name.clone(),
        outlier_ratio: ratio,
        eps_f: f64::NAN,
        state_rmse: f64::NAN,
        runtime_ms: 0.0,
        beta_bound_ok: None,
        seed,
        error: None,
    };
    let start = Instant::now();
    let outcome = named
        .spec
        .build(system.n(), system.n_u())
        .and_then(|mut est| est.run(trace).map(|_| est));
    result.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome.and_then(|est| {
        let eps = rel_frobenius_error(&system.theta(), est.theta())?;
        Ok((eps, state_rmse(est.as_ref(), trace)))
    }) {
        Ok((eps, rmse)) if eps.is_finite() => {
            result.eps_f = eps;
            result.state_rmse = rmse;
        }
        Ok(_) => result.error = Some("estimate is not finite".into()),
        Err(e) => result.error = Some(e.to_string()),
    }
    let init_scale = match &named.spec {
        EstimatorSpec::Airls { config, .. } => config.init_scale,
        EstimatorSpec::Rtls(c) => c.init_scale,
        EstimatorSpec::Rls(_) => 1.0,
    };
    result.beta_bound_ok = bound_check(trace, named.spec.beta(), init_scale);
    result
}

/// One trial: generates the trace for `(ratio, seed)` and runs `estimator`
/// on it. Estimator failures are reported in the result.
pub fn run_trial(cfg: &ExperimentConfig, estimator: &NamedEstimator, ratio: f64, seed: u64) -> Result<TrialResult> {
    let trace = cfg.trace(ratio, seed)?;
    Ok(run_on_trace(&cfg.system, estimator, &trace, ratio, seed))
}

// ---------------------------------------------------------------------------
// sweeps

/// Aggregate over the trials of one `(estimator, ratio)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub estimator: String,
    pub ratio: f64,
    pub eps_f_mean: f64,
    pub eps_f_std: f64,
    pub rmse_mean: f64,
    /// Trials that finished; failed ones are left out of the statistics.
    pub trials: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialResult>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Worker pool sized by `AIRLS_THREADS` when set.
fn pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("AIRLS_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("AIRLS_THREADS must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(threads.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Runs every estimator on every `(ratio, trial)` trace. Each trace is
/// generated once and shared by all estimators.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let cells: Vec<(usize, usize)> = (0..cfg.outlier_ratios.len())
        .flat_map(|r| (0..cfg.trials).map(move |k| (r, k)))
        .collect();
    let per_cell: Vec<Result<Vec<TrialResult>>> = pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(r, k)| {
                let ratio = cfg.outlier_ratios[r];
                let seed = cfg.trial_seed(r, k);
                let trace = cfg.trace(ratio, seed)?;
                Ok(cfg
                    .estimators
                    .iter()
                    .map(|e| run_on_trace(&cfg.system, e, &trace, ratio, seed))
                    .collect())
            })
            .collect()
    });
    let mut trials = Vec::with_capacity(cells.len() * cfg.estimators.len());
    for cell in per_cell {
        trials.extend(cell?);
    }

    let mut rows = Vec::new();
    for e in &cfg.estimators {
        for &ratio in &cfg.outlier_ratios {
            let cell: Vec<&TrialResult> = trials
                .iter()
                .filter(|t| t.estimator == e.name && t.outlier_ratio == ratio)
                .collect();
            let ok: Vec<&&TrialResult> = cell.iter().filter(|t| !t.failed()).collect();
            let eps: Vec<f64> = ok.iter().map(|t| t.eps_f).collect();
            let rmse: Vec<f64> = ok.iter().map(|t| t.state_rmse).collect();
            let (eps_f_mean, eps_f_std) = mean_std(&eps);
            rows.push(SweepRow {
                estimator: e.name.clone(),
                ratio,
                eps_f_mean,
                eps_f_std,
                rmse_mean: mean_std(&rmse).0,
                trials: ok.len(),
                failed: cell.len() - ok.len(),
            });
        }
    }
    Ok(SweepReport { rows, trials })
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "ratio", "eps_F_mean", "eps_F_std", "rmse_mean", "trials"])?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            format!("{:e}", r.ratio),
            format!("{:.9e}", r.eps_f_mean),
            format!("{:.9e}", r.eps_f_std),
            format!("{:.9e}", r.rmse_mean),
            r.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// state reconstruction

/// Per-step true and reconstructed states, `t,x_true1..,x_hat1..`.
pub fn reconstruct_states<W: Write>(est: &dyn Estimator, trace: &[TrajectorySample], out: W) -> Result<()> {
    let n = trace.first().map_or(0, TrajectorySample::n);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_true{i}")));
    header.extend((1..=n).map(|i| format!("x_hat{i}")));
    w.write_record(&header)?;
    for s in trace {
        let p = est.point_estimate(s);
        let mut row = vec![s.t.to_string()];
        row.extend(s.x.iter().map(|v| format!("{v:e}")));
        row.extend(p.x_hat.iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// trace files

fn trace_header(n: usize, n_u: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let group = |h: &mut Vec<String>, prefix: &str, dim: usize, suffix: &str| {
        h.extend((1..=dim).map(|i| format!("{prefix}{i}{suffix}")));
    };
    group(&mut h, "x", n, "");
    group(&mut h, "u", n_u, "");
    group(&mut h, "x", n, "_next");
    group(&mut h, "x", n, "_noisy");
    group(&mut h, "u", n_u, "_noisy");
    group(&mut h, "x", n, "_next_noisy");
    h.push("is_outlier".into());
    h
}

/// Writes a trace with columns
/// `t,x1..,u1..,x1_next..,x1_noisy..,u1_noisy..,x1_next_noisy..,is_outlier`.
pub fn write_trace<W: Write>(trace: &[TrajectorySample], out: W) -> Result<()> {
    let first = trace
        .first()
        .ok_or_else(|| Error::Trace("cannot write an empty trace".into()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(first.n(), first.n_u()))?;
    for s in trace {
        let mut row = vec![s.t.to_string()];
        for v in [&s.x, &s.u, &s.x_next, &s.x_noisy, &s.u_noisy, &s.x_next_noisy] {
            // shortest representation that parses back to the same f64
            row.extend(v.iter().map(|x| format!("{x:?}")));
        }
        row.push(u8::from(s.is_outlier).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]; the dimensions come from the
/// header.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<TrajectorySample>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let count = |pred: &dyn Fn(&str) -> bool| header.iter().filter(|h| pred(h)).count();
    let n = count(&|h| h.starts_with('x') && !h.contains('_'));
    let n_u = count(&|h| h.starts_with('u') && !h.contains('_'));
    if n == 0 || header != trace_header(n, n_u) {
        return Err(Error::Trace(format!(
            "unexpected header `{}`",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|_| {
                Error::Trace(format!("row {}: cannot parse `{}` in column `{}`", line + 1, &rec[i], header[i]))
            })
        };
        let mut col = 1;
        let mut take = |dim: usize| -> Result<DVector<f64>> {
            let v = (col..col + dim).map(&field).collect::<Result<Vec<_>>>()?;
            col += dim;
            Ok(DVector::from_vec(v))
        };
        let (x, u, x_next) = (take(n)?, take(n_u)?, take(n)?);
        let (x_noisy, u_noisy, x_next_noisy) = (take(n)?, take(n_u)?, take(n)?);
        let t = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Trace(format!("row {}: bad step index `{}`", line + 1, &rec[0])))?;
        let is_outlier = match rec[header.len() - 1].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::Trace(format!("row {}: bad is_outlier `{other}`", line + 1))),
        };
        out.push(TrajectorySample {
            t,
            x_next,
            x,
            u,
            x_next_noisy,
            x_noisy,
            u_noisy,
            is_outlier,
        });
    }
    if out.is_empty() {
        return Err(Error::Trace("trace has no rows".into()));
    }
    Ok(out)
}
