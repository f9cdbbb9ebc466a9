//! Linear system `x_{t+1} = A x_t + B u_t`, trajectory generation and the
//! measurement noise model (weak Gaussian noise on every channel plus strong
//! uniform corruption on a random subset of samples).

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: "A must be square",
                expected: (a.nrows(), a.nrows()),
                found: a.shape(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                what: "B must have as many rows as A",
                expected: (a.nrows(), b.ncols()),
                found: b.shape(),
            });
        }
        Ok(Self { a, b })
    }

    /// The two-state, two-input benchmark plant used throughout the
    /// experiments.
    pub fn benchmark() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.8, -0.25, -0.25, 0.25]),
            b: DMatrix::from_row_slice(2, 2, &[10.0, 2.0, 2.0, 10.0]),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// Length of a stacked sample `(x_{t+1}, x_t, u_t)`.
    pub fn m(&self) -> usize {
        2 * self.n() + self.n_u()
    }

    /// `Θ = [A, B]`.
    pub fn theta(&self) -> DMatrix<f64> {
        let mut theta = DMatrix::zeros(self.n(), self.n() + self.n_u());
        theta.view_mut((0, 0), self.a.shape()).copy_from(&self.a);
        theta
            .view_mut((0, self.n()), self.b.shape())
            .copy_from(&self.b);
        theta
    }
}

pub fn simulate_step(
    sys: &LinearSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            what: "state",
            expected: (sys.n(), 1),
            found: (x.len(), 1),
        });
    }
    if u.len() != sys.n_u() {
        return Err(Error::DimensionMismatch {
            what: "input",
            expected: (sys.n_u(), 1),
            found: (u.len(), 1),
        });
    }
    Ok(&sys.a * x + &sys.b * u)
}

/// Gaussian measurement noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum GaussianNoise {
    /// Noiseless measurements.
    Off,
    /// Per-channel signal-to-noise ratio, read according to `scale`.
    Snr {
        snr: f64,
        #[serde(default)]
        scale: SnrScale,
    },
}

/// How an SNR figure relates signal to noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrScale {
    /// Mean signal power over noise variance.
    #[default]
    Power,
    /// RMS signal over noise standard deviation.
    Amplitude,
}

impl SnrScale {
    /// Noise standard deviation for a channel of mean power `power`.
    pub fn noise_std(self, power: f64, snr: f64) -> f64 {
        match self {
            SnrScale::Power => (power / snr).sqrt(),
            SnrScale::Amplitude => power.sqrt() / snr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub gaussian: GaussianNoise,
    pub outlier_ratio: f64,
    pub outlier_low: f64,
    pub outlier_high: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            gaussian: GaussianNoise::Off,
            outlier_ratio: 0.0,
            outlier_low: -0.2,
            outlier_high: 0.2,
            seed,
        }
    }

    /// SNR 100 with outliers uniform in `[-0.2, 0.2]`.
    pub fn benchmark(outlier_ratio: f64, seed: u64) -> Self {
        Self {
            gaussian: GaussianNoise::Snr {
                snr: 100.0,
                scale: SnrScale::Power,
            },
            outlier_ratio,
            outlier_low: -0.2,
            outlier_high: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let GaussianNoise::Snr { snr, .. } = self.gaussian {
            if !(snr > 0.0) || !snr.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "snr must be positive and finite, got {snr} (use mode = \"off\" for noiseless data)"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.outlier_ratio) {
            return Err(Error::InvalidConfig(format!(
                "outlier_ratio must be in [0, 1], got {}",
                self.outlier_ratio
            )));
        }
        if !(self.outlier_low < self.outlier_high) {
            return Err(Error::InvalidConfig(format!(
                "outlier_low ({}) must be below outlier_high ({})",
                self.outlier_low, self.outlier_high
            )));
        }
        Ok(())
    }

    /// Number of corrupted samples in a trace of length `len`.
    pub fn outlier_count(&self, len: usize) -> usize {
        (self.outlier_ratio * len as f64).round() as usize
    }
}

/// One `(x_{t+1}, x_t, u_t)` triple, true and measured.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: usize,
    pub x_next: DVector<f64>,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub x_next_noisy: DVector<f64>,
    pub x_noisy: DVector<f64>,
    pub u_noisy: DVector<f64>,
    pub is_outlier: bool,
}

impl TrajectorySample {
    /// A sample whose measured fields equal the true ones.
    pub fn exact(t: usize, x_next: DVector<f64>, x: DVector<f64>, u: DVector<f64>) -> Self {
        Self {
            t,
            x_next_noisy: x_next.clone(),
            x_noisy: x.clone(),
            u_noisy: u.clone(),
            x_next,
            x,
            u,
            is_outlier: false,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn n_u(&self) -> usize {
        self.u.len()
    }

    /// Stacked `(x_{t+1}, x_t, u_t)`, measured or true.
    pub fn stacked(&self, noisy: bool) -> DVector<f64> {
        let (a, b, c) = if noisy {
            (&self.x_next_noisy, &self.x_noisy, &self.u_noisy)
        } else {
            (&self.x_next, &self.x, &self.u)
        };
        DVector::from_iterator(
            a.len() + b.len() + c.len(),
            a.iter().chain(b.iter()).chain(c.iter()).copied(),
        )
    }
}

fn per_channel_power<'a>(rows: impl Iterator<Item = &'a DVector<f64>>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for v in rows {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x * x;
        }
        count += 1;
    }
    acc.iter().map(|s| s / count.max(1) as f64).collect()
}

/// Simulates `len` steps from `x0` under i.i.d. Gaussian inputs and returns
/// the measured trace.
///
/// The Gaussian noise is drawn once per measured quantity, so `x_next_noisy`
/// of step `t` equals `x_noisy` of step `t + 1` unless one of them is an
/// outlier. Outlier corruption is added on top of the Gaussian noise, to every
/// component of the selected sample's triple.
pub fn generate_trajectory(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    input_std: f64,
    len: usize,
    noise: &NoiseConfig,
) -> Result<Vec<TrajectorySample>> {
    if len == 0 {
        return Err(Error::InvalidConfig("trajectory length must be at least 1".into()));
    }
    if !(input_std > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "input_std must be positive, got {input_std}"
        )));
    }
    noise.validate()?;
    let (n, n_u) = (sys.n(), sys.n_u());
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let input_dist = Normal::new(0.0, input_std).expect("validated std");

    let inputs: Vec<DVector<f64>> = (0..len)
        .map(|_| DVector::from_fn(n_u, |_, _| input_dist.sample(&mut rng)))
        .collect();
    let mut states = Vec::with_capacity(len + 1);
    states.push(x0.clone());
    for u in &inputs {
        let next = simulate_step(sys, states.last().unwrap(), u)?;
        states.push(next);
    }

    let (states_meas, inputs_meas) = match noise.gaussian {
        GaussianNoise::Off => (states.clone(), inputs.clone()),
        GaussianNoise::Snr { snr, scale } => {
            let state_std: Vec<f64> = per_channel_power(states.iter(), n)
                .into_iter()
                .map(|p| scale.noise_std(p, snr))
                .collect();
            let input_std_meas: Vec<f64> = per_channel_power(inputs.iter(), n_u)
                .into_iter()
                .map(|p| scale.noise_std(p, snr))
                .collect();
            let std_normal = Normal::new(0.0, 1.0).unwrap();
            let xs = states
                .iter()
                .map(|x| {
                    DVector::from_fn(n, |i, _| x[i] + state_std[i] * std_normal.sample(&mut rng))
                })
                .collect();
            let us = inputs
                .iter()
                .map(|u| {
                    DVector::from_fn(n_u, |i, _| {
                        u[i] + input_std_meas[i] * std_normal.sample(&mut rng)
                    })
                })
                .collect();
            (xs, us)
        }
    };

    let mut samples: Vec<TrajectorySample> = (0..len)
        .map(|t| TrajectorySample {
            t,
            x_next: states[t + 1].clone(),
            x: states[t].clone(),
            u: inputs[t].clone(),
            x_next_noisy: states_meas[t + 1].clone(),
            x_noisy: states_meas[t].clone(),
            u_noisy: inputs_meas[t].clone(),
            is_outlier: false,
        })
        .collect();

    let count = noise.outlier_count(len);
    if count > 0 {
        let spread = Uniform::new(noise.outlier_low, noise.outlier_high).expect("validated bounds");
        let mut picked = index::sample(&mut rng, len, count).into_vec();
        picked.sort_unstable();
        for t in picked {
            let s = &mut samples[t];
            for v in s
                .x_next_noisy
                .iter_mut()
                .chain(s.x_noisy.iter_mut())
                .chain(s.u_noisy.iter_mut())
            {
                *v += spread.sample(&mut rng);
            }
            s.is_outlier = true;
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn benchmark_step() {
        let sys = LinearSystem::benchmark();
        let x = DVector::zeros(2);
        let u = DVector::from_vec(vec![0.1, 0.0]);
        let next = simulate_step(&sys, &x, &u).unwrap();
        assert_relative_eq!(next[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(next[1], 0.2, epsilon = 1e-15);
        assert_eq!(
            simulate_step(&sys, &x, &DVector::zeros(2)).unwrap(),
            DVector::zeros(2)
        );
    }

    #[test]
    fn identity_dynamics() {
        let sys = LinearSystem::new(DMatrix::identity(3, 3), DMatrix::zeros(3, 1)).unwrap();
        let x = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let next = simulate_step(&sys, &x, &DVector::from_vec(vec![9.0])).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn dimension_errors() {
        assert!(LinearSystem::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1)).is_err());
        assert!(LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)).is_err());
        let sys = LinearSystem::benchmark();
        assert!(simulate_step(&sys, &DVector::zeros(3), &DVector::zeros(2)).is_err());
        assert!(simulate_step(&sys, &DVector::zeros(2), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn noiseless_trace_matches_truth() {
        let sys = LinearSystem::benchmark();
        let trace =
            generate_trajectory(&sys, &DVector::zeros(2), 0.1, 50, &NoiseConfig::noiseless(3))
                .unwrap();
        for s in &trace {
            assert_eq!(s.x_noisy, s.x);
            assert_eq!(s.u_noisy, s.u);
            assert_eq!(s.x_next_noisy, s.x_next);
            let pred = sys.a() * &s.x + sys.b() * &s.u;
            assert!((pred - &s.x_next).amax() <= 1e-12);
        }
    }

    #[test]
    fn exact_outlier_count() {
        let sys = LinearSystem::benchmark();
        let noise = NoiseConfig::benchmark(0.01, 11);
        let trace = generate_trajectory(&sys, &DVector::zeros(2), 0.1, 1000, &noise).unwrap();
        assert_eq!(trace.iter().filter(|s| s.is_outlier).count(), 10);
    }

    #[test]
    fn snr_matches_per_channel() {
        let sys = LinearSystem::benchmark();
        let noise = NoiseConfig::benchmark(0.0, 5);
        let trace = generate_trajectory(&sys, &DVector::zeros(2), 0.1, 20000, &noise).unwrap();
        for ch in 0..2 {
            let sig: f64 = trace.iter().map(|s| s.u[ch] * s.u[ch]).sum::<f64>() / 20000.0;
            let err: f64 = trace
                .iter()
                .map(|s| (s.u_noisy[ch] - s.u[ch]).powi(2))
                .sum::<f64>()
                / 20000.0;
            assert!((sig / err / 100.0 - 1.0).abs() < 0.05, "{}", sig / err);
        }
    }

    #[test]
    fn amplitude_snr_scales_std() {
        assert_eq!(SnrScale::Amplitude.noise_std(4.0, 100.0), 0.02);
        assert_eq!(SnrScale::Power.noise_std(4.0, 100.0), 0.2);
    }

    #[test]
    fn shared_measurements_between_consecutive_samples() {
        let sys = LinearSystem::benchmark();
        let noise = NoiseConfig::benchmark(0.0, 8);
        let trace = generate_trajectory(&sys, &DVector::zeros(2), 0.1, 30, &noise).unwrap();
        for pair in trace.windows(2) {
            assert_eq!(pair[0].x_next_noisy, pair[1].x_noisy);
        }
    }

    #[test]
    fn rejects_bad_noise() {
        let mut noise = NoiseConfig::benchmark(0.0, 1);
        noise.outlier_low = 1.0;
        noise.outlier_high = -1.0;
        assert!(noise.validate().is_err());
        noise = NoiseConfig::benchmark(1.5, 1);
        assert!(noise.validate().is_err());
        noise.outlier_ratio = 0.0;
        noise.gaussian = GaussianNoise::Snr {
            snr: 0.0,
            scale: SnrScale::Power,
        };
        assert!(noise.validate().is_err());
        assert!(generate_trajectory(
            &LinearSystem::benchmark(),
            &DVector::zeros(2),
            0.1,
            0,
            &NoiseConfig::noiseless(0)
        )
        .is_err());
    }
}
