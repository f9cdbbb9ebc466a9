//! Uniform streaming interface over AIRLS and the baselines.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::airls::{Airls, EstimatorConfig, PointEstimate, Regularization};
use crate::baselines::{orthogonal_point_estimate, Rls, RlsConfig, Rtls, RtlsConfig};
use crate::error::Result;
use crate::sim::TrajectorySample;
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Airls,
    Rtls,
    Rls,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Airls => "airls",
            EstimatorKind::Rtls => "rtls",
            EstimatorKind::Rls => "rls",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "airls" => Ok(EstimatorKind::Airls),
            "rtls" => Ok(EstimatorKind::Rtls),
            "rls" => Ok(EstimatorKind::Rls),
            other => Err(format!("unknown estimator `{other}` (expected airls, rtls or rls)")),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub trait Estimator: Send {
    fn kind(&self) -> EstimatorKind;

    fn step(&mut self, sample: &TrajectorySample) -> Result<()>;

    /// Current `[Â, B̂]`.
    fn theta(&self) -> &DMatrix<f64>;

    fn point_estimate(&self, sample: &TrajectorySample) -> PointEstimate;

    fn snapshot(&self) -> Snapshot;

    /// Feeds every sample of `trace` through [`Estimator::step`].
    fn run(&mut self, trace: &[TrajectorySample]) -> Result<()> {
        trace.iter().try_for_each(|s| self.step(s))
    }
}

impl Estimator for Airls {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Airls
    }

    fn step(&mut self, sample: &TrajectorySample) -> Result<()> {
        Airls::step(self, sample)
    }

    fn theta(&self) -> &DMatrix<f64> {
        Airls::theta(self)
    }

    fn point_estimate(&self, sample: &TrajectorySample) -> PointEstimate {
        Airls::point_estimate(self, sample)
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::from_airls(self)
    }
}

impl Estimator for Rtls {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Rtls
    }

    fn step(&mut self, sample: &TrajectorySample) -> Result<()> {
        Rtls::step(self, sample)
    }

    fn theta(&self) -> &DMatrix<f64> {
        Rtls::theta(self)
    }

    fn point_estimate(&self, sample: &TrajectorySample) -> PointEstimate {
        orthogonal_point_estimate(Rtls::theta(self), sample)
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::from_rtls(self)
    }
}

impl Estimator for Rls {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Rls
    }

    fn step(&mut self, sample: &TrajectorySample) -> Result<()> {
        Rls::step(self, sample)
    }

    fn theta(&self) -> &DMatrix<f64> {
        Rls::theta(self)
    }

    /// RLS trusts the regressors; only `x_{t+1}` is re-predicted.
    fn point_estimate(&self, sample: &TrajectorySample) -> PointEstimate {
        let n = sample.n();
        let mut phi = nalgebra::DVector::zeros(n + sample.n_u());
        phi.rows_mut(0, n).copy_from(&sample.x_noisy);
        phi.rows_mut(n, sample.n_u()).copy_from(&sample.u_noisy);
        PointEstimate {
            x_next_hat: Rls::theta(self) * phi,
            x_hat: sample.x_noisy.clone(),
            u_hat: sample.u_noisy.clone(),
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::from_rls(self)
    }
}

/// Estimator settings as read from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    Airls {
        config: EstimatorConfig,
        /// `Ψ = psi_scale · I`, `μ = 0`; zero disables the prior.
        psi_scale: f64,
    },
    Rtls(RtlsConfig),
    Rls(RlsConfig),
}

impl EstimatorSpec {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorSpec::Airls { .. } => EstimatorKind::Airls,
            EstimatorSpec::Rtls(_) => EstimatorKind::Rtls,
            EstimatorSpec::Rls(_) => EstimatorKind::Rls,
        }
    }

    pub fn default_for(kind: EstimatorKind) -> Self {
        match kind {
            EstimatorKind::Airls => EstimatorSpec::Airls {
                config: EstimatorConfig::default(),
                psi_scale: 1e-3,
            },
            EstimatorKind::Rtls => EstimatorSpec::Rtls(RtlsConfig::default()),
            EstimatorKind::Rls => EstimatorSpec::Rls(RlsConfig::default()),
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            EstimatorSpec::Airls { config, .. } => config.beta,
            EstimatorSpec::Rtls(c) => c.beta,
            EstimatorSpec::Rls(c) => c.beta,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        match &mut self {
            EstimatorSpec::Airls { config, .. } => config.beta = beta,
            EstimatorSpec::Rtls(c) => c.beta = beta,
            EstimatorSpec::Rls(c) => c.beta = beta,
        }
        self
    }

    pub fn build(&self, n: usize, n_u: usize) -> Result<Box<dyn Estimator>> {
        Ok(match self {
            EstimatorSpec::Airls { config, psi_scale } => {
                let reg = if *psi_scale == 0.0 {
                    Regularization::none(n, n_u)
                } else {
                    Regularization::scaled_identity(n, n_u, *psi_scale)
                };
                Box::new(Airls::new(n, n_u, config.clone(), reg)?)
            }
            EstimatorSpec::Rtls(c) => Box::new(Rtls::new(n, n_u, c.clone())?),
            EstimatorSpec::Rls(c) => Box::new(Rls::new(n, n_u, c.clone())?),
        })
    }
}
