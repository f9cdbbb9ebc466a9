//! Versioned JSON snapshots for resuming an estimator.
//!
//! Matrices are stored row-major. The AIRLS fields are
//! `{n, n_u, beta, alpha, K, L_Z, L_Theta, theta_hat, C, step}`; the other
//! estimators reuse `C` for their own accumulator and add what they need.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::airls::{Airls, EstimatorConfig, EstimatorState, Regularization};
use crate::baselines::{Rls, RlsConfig, RlsState, Rtls, RtlsConfig, RtlsState};
use crate::correlation::CorrelationState;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorKind};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub n_u: usize,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub outer_iters: Option<usize>,
    #[serde(rename = "L_Z", default, skip_serializing_if = "Option::is_none")]
    pub z_iters: Option<usize>,
    #[serde(rename = "L_Theta", default, skip_serializing_if = "Option::is_none")]
    pub theta_iters: Option<usize>,
    pub theta_hat: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge_fallback: Option<bool>,
    /// Prior rows `M`, `Ψ` (row-major `M×n(n+n_u)`) and `μ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_iters: Option<usize>,
    /// RTLS null-space frame, row-major `m×n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nullspace_basis: Option<Vec<f64>>,
    /// RLS cross-correlation `Σ x̃_{t+1} φᵀ`, row-major `n×(n+n_u)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross: Option<Vec<f64>>,
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &'static str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            what,
            expected: (rows, cols),
            found: (data.len(), 1),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn required<T: Copy>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidConfig(format!("snapshot is missing `{field}`")))
}

impl Snapshot {
    fn base(kind: EstimatorKind, n: usize, n_u: usize, beta: f64, theta: &DMatrix<f64>, c: &DMatrix<f64>, step: usize) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            estimator: kind,
            n,
            n_u,
            beta,
            alpha: None,
            outer_iters: None,
            z_iters: None,
            theta_iters: None,
            theta_hat: row_major(theta),
            c: row_major(c),
            step,
            point_iters: None,
            ridge_fallback: None,
            psi: None,
            mu: None,
            power_iters: None,
            nullspace_basis: None,
            cross: None,
        }
    }

    pub fn from_airls(est: &Airls) -> Self {
        let st = est.state();
        let cfg = est.config();
        let reg = est.regularization();
        let mut s = Self::base(
            EstimatorKind::Airls,
            st.n(),
            st.n_u(),
            cfg.beta,
            &st.theta_hat,
            st.corr.matrix(),
            st.step,
        );
        s.alpha = Some(cfg.alpha);
        s.outer_iters = Some(cfg.outer_iters);
        s.z_iters = Some(cfg.z_iters);
        s.theta_iters = Some(cfg.theta_iters);
        s.point_iters = Some(cfg.point_iters);
        s.ridge_fallback = Some(cfg.ridge_fallback);
        s.psi = Some(row_major(reg.psi()));
        s.mu = Some(reg.mu().as_slice().to_vec());
        s
    }

    pub fn from_rtls(est: &Rtls) -> Self {
        let st = est.state();
        let mut s = Self::base(
            EstimatorKind::Rtls,
            st.n(),
            st.n_u(),
            est.config().beta,
            &st.theta_hat,
            &st.c_tilde,
            st.step,
        );
        s.power_iters = Some(est.config().power_iters);
        s.nullspace_basis = Some(row_major(&st.nullspace_basis));
        s
    }

    pub fn from_rls(est: &Rls) -> Self {
        let st = est.state();
        let n = st.theta_hat.nrows();
        let n_u = st.theta_hat.ncols() - n;
        let mut s = Self::base(
            EstimatorKind::Rls,
            n,
            n_u,
            est.config().beta,
            &st.theta_hat,
            &st.information,
            st.step,
        );
        s.cross = Some(row_major(&st.cross));
        s
    }

    pub fn theta(&self) -> Result<DMatrix<f64>> {
        from_row_major(self.n, self.n + self.n_u, &self.theta_hat, "theta_hat")
    }

    pub fn alpha_or_default(&self) -> f64 {
        self.alpha.unwrap_or(crate::airls::DEFAULT_ALPHA)
    }

    /// Rebuilds a live estimator that continues where the snapshot stopped.
    pub fn restore(&self) -> Result<Box<dyn Estimator>> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
                self.version
            )));
        }
        let (n, n_u) = (self.n, self.n_u);
        let m = 2 * n + n_u;
        let theta = self.theta()?;
        Ok(match self.estimator {
            EstimatorKind::Airls => {
                let defaults = EstimatorConfig::default();
                let config = EstimatorConfig {
                    beta: self.beta,
                    alpha: self.alpha_or_default(),
                    outer_iters: required(self.outer_iters, "K")?,
                    z_iters: required(self.z_iters, "L_Z")?,
                    theta_iters: required(self.theta_iters, "L_Theta")?,
                    ridge_fallback: self.ridge_fallback.unwrap_or(defaults.ridge_fallback),
                    init_scale: defaults.init_scale,
                    point_iters: self.point_iters.unwrap_or(defaults.point_iters),
                };
                let p = n * (n + n_u);
                let reg = match (&self.psi, &self.mu) {
                    (Some(psi), Some(mu)) if !mu.is_empty() => Regularization::new(
                        from_row_major(mu.len(), p, psi, "psi")?,
                        DVector::from_column_slice(mu),
                    )?,
                    _ => Regularization::none(n, n_u),
                };
                let corr = CorrelationState::from_matrix(
                    from_row_major(m, m, &self.c, "C")?,
                    self.beta,
                    n,
                    n_u,
                )?;
                let state = EstimatorState::from_parts(theta, corr, self.step, &reg);
                Box::new(Airls::from_state(config, reg, state)?)
            }
            EstimatorKind::Rtls => {
                let config = RtlsConfig {
                    beta: self.beta,
                    power_iters: required(self.power_iters, "power_iters")?,
                    ..RtlsConfig::default()
                };
                let basis = from_row_major(
                    m,
                    n,
                    self.nullspace_basis
                        .as_deref()
                        .ok_or_else(|| Error::InvalidConfig("snapshot is missing `nullspace_basis`".into()))?,
                    "nullspace_basis",
                )?;
                let mut state = RtlsState::new(n, n_u, &config)?;
                state.c_tilde = from_row_major(m, m, &self.c, "C")?;
                state.nullspace_basis = basis;
                state.theta_hat = theta;
                state.identified = true;
                state.step = self.step;
                Box::new(Rtls::from_state(config, state))
            }
            EstimatorKind::Rls => {
                let config = RlsConfig {
                    beta: self.beta,
                    ..RlsConfig::default()
                };
                let mut state = RlsState::new(n, n_u, &config)?;
                state.information = from_row_major(n + n_u, n + n_u, &self.c, "C")?;
                state.cross = from_row_major(
                    n,
                    n + n_u,
                    self.cross
                        .as_deref()
                        .ok_or_else(|| Error::InvalidConfig("snapshot is missing `cross`".into()))?,
                    "cross",
                )?;
                state.theta_hat = theta;
                state.step = self.step;
                Box::new(Rls::from_state(config, state))
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
