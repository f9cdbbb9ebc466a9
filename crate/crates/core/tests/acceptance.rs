//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use airls::airls::{residual, update_z, update_z_column, BetaBoundMonitor};
use airls::bench::{rel_frobenius_error, run_sweep, write_sweep_csv, ExperimentConfig, NamedEstimator, SweepReport};
use airls::linalg::{weighted_pseudo_inverse, WeightMatrix};
use airls::sim::{generate_trajectory, GaussianNoise, LinearSystem, NoiseConfig, SnrScale, TrajectorySample};
use airls::{Airls, EstimatorConfig, EstimatorKind, EstimatorSpec, Regularization};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const BETAS: [f64; 3] = [0.99, 0.995, 0.999];
const RATIOS: [f64; 3] = [0.0, 0.01, 0.05];

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: usize, title: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id}. {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn noiseless_recovery(report: &mut Report) {
    let system = LinearSystem::benchmark();
    let trace =
        generate_trajectory(&system, &DVector::zeros(2), 0.01, 500, &NoiseConfig::noiseless(0)).unwrap();
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in [EstimatorKind::Airls, EstimatorKind::Rtls, EstimatorKind::Rls] {
        let mut est = EstimatorSpec::default_for(kind).build(2, 2).unwrap();
        est.run(&trace).unwrap();
        let eps = rel_frobenius_error(&system.theta(), est.theta()).unwrap();
        pass &= eps < 1e-4;
        parts.push(format!("{kind} {eps:.3e}%"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(1);
    report.line(
        1,
        "noiseless recovery, N = 500",
        pass,
        format!("{} (limit 1e-4%); {:.2} s (budget 1 s)", parts.join(", "), secs(elapsed)),
    );
}

/// Benchmark config with every default estimator at each `β` of the grid.
fn beta_sweep_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::benchmark();
    let mut estimators = Vec::new();
    for name in ["airls", "rtls"] {
        let base = cfg.estimator(name).unwrap().spec.clone();
        for beta in BETAS {
            estimators.push(NamedEstimator {
                name: format!("{name}@{beta}"),
                spec: base.clone().with_beta(beta),
            });
        }
    }
    cfg.estimators = estimators;
    cfg.outlier_ratios = RATIOS.to_vec();
    cfg.n_steps = 50_000;
    cfg.trials = 10;
    cfg
}

/// Lowest mean `ε_F` over the `β` grid for one method at one ratio, plus the
/// `β` that achieved it.
fn best(report: &SweepReport, method: &str, ratio: f64) -> (f64, f64) {
    BETAS
        .iter()
        .map(|&beta| {
            let name = format!("{method}@{beta}");
            let row = report
                .rows
                .iter()
                .find(|r| r.estimator == name && r.ratio == ratio)
                .unwrap();
            let mean = if row.failed > 0 { f64::INFINITY } else { row.eps_f_mean };
            (mean, beta)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

/// Summed estimator time for the trials at `ratio`.
fn ratio_runtime(report: &SweepReport, ratio: f64) -> Duration {
    let ms: f64 = report
        .trials
        .iter()
        .filter(|t| t.outlier_ratio == ratio)
        .map(|t| t.runtime_ms)
        .sum();
    Duration::from_secs_f64(ms / 1000.0)
}

fn outlier_sweeps(report: &mut Report) {
    let cfg = beta_sweep_config();
    let start = Instant::now();
    let sweep = run_sweep(&cfg).unwrap();
    let wall = start.elapsed();
    let describe = |ratio: f64| {
        let (a, ab) = best(&sweep, "airls", ratio);
        let (r, rb) = best(&sweep, "rtls", ratio);
        (a, r, format!("AIRLS {a:.3}% (β {ab}), RTLS {r:.3}% (β {rb})"))
    };

    let budget = Duration::from_secs(300);
    let (a, r, text) = describe(0.01);
    let t = ratio_runtime(&sweep, 0.01);
    report.line(
        2,
        "1% outliers, best β per method",
        a <= 3.0 && r >= 2.0 * a && t < budget,
        format!("{text}; need AIRLS ≤ 3% and RTLS ≥ 2× AIRLS; {:.0} s (budget 300 s)", secs(t)),
    );

    let (a, r, text) = describe(0.05);
    let t = ratio_runtime(&sweep, 0.05);
    report.line(
        3,
        "5% outliers, best β per method",
        a <= 8.0 && r >= 15.0 && a < r && t < budget,
        format!("{text}; need AIRLS ≤ 8%, RTLS ≥ 15%, AIRLS < RTLS; {:.0} s (budget 300 s)", secs(t)),
    );

    let (a, r, text) = describe(0.0);
    let t = ratio_runtime(&sweep, 0.0);
    let factor = a.max(r) / a.min(r);
    report.line(
        7,
        "Gaussian-only parity",
        factor <= 2.0 && t < Duration::from_secs(60),
        format!("{text}; ratio {factor:.2} (limit 2); {:.0} s (budget 60 s)", secs(t)),
    );
    println!("    sweep wall time {:.0} s for {} trials", secs(wall), sweep.trials.len());
}

/// A balanced system driven hard enough for the `β` bound to hold.
fn well_conditioned_trace(seed: u64, len: usize) -> Vec<TrajectorySample> {
    let sys = LinearSystem::new(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 2)).unwrap();
    let noise = NoiseConfig {
        gaussian: GaussianNoise::Snr {
            snr: 0.01,
            scale: SnrScale::Power,
        },
        ..NoiseConfig::noiseless(seed)
    };
    generate_trajectory(&sys, &DVector::zeros(2), 1.0, len, &noise).unwrap()
}

fn residual_monotonicity(report: &mut Report) {
    let beta: f64 = 0.9999;
    let slack = 1e-9;
    let burn_in = (1.0 / (1.0 - beta)).ceil() as usize;
    let (mut qualifying, mut checked, mut increases, mut within) = (0, 0, 0, 0);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let trace = well_conditioned_trace(seed, 12_000);
        let config = EstimatorConfig {
            beta,
            ..EstimatorConfig::default()
        };
        let mut est = Airls::new(2, 2, config, Regularization::scaled_identity(2, 2, 1e-3)).unwrap();
        let mut monitor = BetaBoundMonitor::new(beta);
        let mut c = DMatrix::identity(6, 6);
        let mut prev = f64::INFINITY;
        let (mut ups, mut within_ups, mut steps, mut run_worst) = (0, 0, 0, 0.0f64);
        for (t, s) in trace.iter().enumerate() {
            let v = s.stacked(true);
            c.ger(1.0, &v, &v, beta);
            monitor.observe_sample(&v);
            monitor.observe_correlation(&c);

            let mut discounted = est.state().corr.clone();
            discounted.discount_update_vector(&v).unwrap();
            let before = residual(est.theta(), discounted.matrix(), est.regularization());
            est.step(s).unwrap();
            let r = est.residual();
            if t >= burn_in {
                steps += 1;
                if r > prev * (1.0 + slack) {
                    ups += 1;
                    run_worst = run_worst.max(r / prev - 1.0);
                }
                if r > before * (1.0 + slack) {
                    within_ups += 1;
                }
            }
            prev = r;
        }
        if monitor.bound_holds() == Some(true) {
            qualifying += 1;
            checked += steps;
            increases += ups;
            within += within_ups;
            worst = worst.max(run_worst);
        }
    }
    report.line(
        4,
        "residual non-increasing where the β bound holds",
        qualifying > 0 && increases == 0,
        format!(
            "bound held on {qualifying}/20 runs; ‖R‖² rose on {increases}/{checked} steps after burn-in \
             (worst +{worst:.3e} relative, slack {slack:e}); within a step it rose on {within}/{checked}"
        ),
    );
}

fn update_oracles(report: &mut Report) {
    let start = Instant::now();
    let mut r = rng(500);
    let mut column_worst: f64 = 0.0;
    for _ in 0..100 {
        let theta = gaussian(&mut r, 2, 4);
        let c = gaussian_vec(&mut r, 6);
        let w = weights(&mut r, 6);
        let direct = normal_equations(&lift(&theta), &c, w.diag());
        column_worst = column_worst.max(rel_vec(&update_z_column(&theta, &c, &w), &direct));
    }
    let mut joint_worst: f64 = 0.0;
    for _ in 0..100 {
        let theta = gaussian(&mut r, 2, 4);
        let c = gaussian(&mut r, 6, 6);
        let z_prev = gaussian(&mut r, 4, 6);
        let alpha = 10f64.powf(r.random_range(-6.0..-1.0));
        let joint = joint_z_solve(&theta, &z_prev, &c, alpha);
        joint_worst = joint_worst.max(rel(&update_z(&theta, &z_prev, &c, alpha, 1), &joint));
    }
    let elapsed = start.elapsed();
    report.line(
        5,
        "projection update equals weighted LS; columns equal joint solve",
        column_worst <= 1e-9 && joint_worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!(
            "worst {column_worst:.2e} and {joint_worst:.2e} over 100 instances each (limit 1e-9); \
             {:.2} s (budget 10 s)",
            secs(elapsed)
        ),
    );
}

fn kernels(report: &mut Report) {
    let mut r = rng(600);
    let (mut repro, mut oracle): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let p = r.random_range(3..12);
        let q = r.random_range(1..=p);
        let x = gaussian(&mut r, p, q);
        let w = weights(&mut r, p);
        let m = weighted_pseudo_inverse(&x, &w).unwrap();
        repro = repro.max(rel(&(&x * &m * &x), &x));
        let plain = weighted_pseudo_inverse(&x, &WeightMatrix::identity(p)).unwrap();
        oracle = oracle.max(rel(&plain, &qr_pinv(&x)));
    }
    report.line(
        6,
        "weighted pseudo-inverse",
        repro <= 1e-9 && oracle <= 1e-9,
        format!("X X† X = X worst {repro:.2e}; W = I vs QR least squares worst {oracle:.2e} (limit 1e-9)"),
    );
}

const SMALL_CONFIG: &str = r#"
[system]
a = [[0.8, -0.25], [-0.25, 0.25]]
b = [[10.0, 2.0], [2.0, 10.0]]
input_std = 0.01

[noise]
snr = 100.0
scale = "amplitude"

[estimator.airls]
[estimator.rtls]
[estimator.rls]

[sweep]
n_steps = 1000
trials = 3
ratios = [0.0, 0.01, 0.05]
seed_base = 7
estimators = ["airls", "rtls", "rls"]
"#;

fn determinism(report: &mut Report) {
    let cfg = ExperimentConfig::from_toml_str(SMALL_CONFIG).unwrap();
    let csv = || {
        let mut out = Vec::new();
        write_sweep_csv(&run_sweep(&cfg).unwrap().rows, &mut out).unwrap();
        out
    };
    let (a, b) = (csv(), csv());
    report.line(
        8,
        "repeated sweeps",
        a == b && !a.is_empty(),
        format!("{} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    );
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    noiseless_recovery(&mut report);
    outlier_sweeps(&mut report);
    residual_monotonicity(&mut report);
    update_oracles(&mut report);
    kernels(&mut report);
    determinism(&mut report);
    println!("acceptance: {} of 8 criteria failed", report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
