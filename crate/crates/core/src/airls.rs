//! Alternating and iteratively-reweighted recursive least squares.
//!
//! Each time step discounts the correlation matrix, then alternates between
//! a reweighted update of the `Z` block (one oblique projection per column of
//! `C̲_t`) and a reweighted update of `Θ = [A, B]` (a weighted least-squares
//! solve on the vectorised parameters). `K = L_Z = L_Θ = 1` is the one-step
//! AIRLS estimator; larger counts run the full nested loops.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::correlation::{CorrelationState, DEFAULT_BETA};
use crate::error::{Error, LinalgError, Result};
use crate::linalg::{self, make_projector, WeightMatrix};
use crate::sim::TrajectorySample;

pub const DEFAULT_ALPHA: f64 = 1e-8;
/// Strength of the ridge rows appended when the parameter solve is singular.
pub const RIDGE_EPSILON: f64 = 1e-6;

/// Prior term `‖Ψ vec(Θ) − μ‖₁`. Zero rows means no regularization.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularization {
    psi: DMatrix<f64>,
    mu: DVector<f64>,
}

impl Regularization {
    pub fn new(psi: DMatrix<f64>, mu: DVector<f64>) -> Result<Self> {
        if psi.nrows() != mu.len() {
            return Err(Error::DimensionMismatch {
                what: "Ψ rows vs μ length",
                expected: (psi.nrows(), 1),
                found: (mu.len(), 1),
            });
        }
        Ok(Self { psi, mu })
    }

    pub fn none(n: usize, n_u: usize) -> Self {
        Self {
            psi: DMatrix::zeros(0, n * (n + n_u)),
            mu: DVector::zeros(0),
        }
    }

    /// `Ψ = ε I`, `μ = 0`.
    pub fn scaled_identity(n: usize, n_u: usize, epsilon: f64) -> Self {
        let p = n * (n + n_u);
        Self {
            psi: DMatrix::identity(p, p) * epsilon,
            mu: DVector::zeros(p),
        }
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// Number of prior rows `M`.
    pub fn rows(&self) -> usize {
        self.psi.nrows()
    }

    fn check_params(&self, params: usize) -> Result<()> {
        if self.rows() > 0 && self.psi.ncols() != params {
            return Err(Error::DimensionMismatch {
                what: "Ψ columns",
                expected: (self.rows(), params),
                found: self.psi.shape(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub beta: f64,
    pub alpha: f64,
    /// Outer alternations per time step (`K`).
    pub outer_iters: usize,
    /// Reweighting passes of the `Z` update (`L_Z`).
    pub z_iters: usize,
    /// Reweighting passes of the `Θ` update (`L_Θ`).
    pub theta_iters: usize,
    pub ridge_fallback: bool,
    /// `C̲_0 = init_scale · I_m`.
    pub init_scale: f64,
    /// Reweighting passes used by [`point_estimate`].
    pub point_iters: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            outer_iters: 1,
            z_iters: 1,
            theta_iters: 1,
            ridge_fallback: true,
            init_scale: 1.0,
            point_iters: 2,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.outer_iters == 0 || self.z_iters == 0 || self.theta_iters == 0 {
            return Err(Error::InvalidConfig(
                "K, L_Z and L_Theta must all be at least 1".into(),
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta_hat: DMatrix<f64>,
    pub z_hat: DMatrix<f64>,
    pub corr: CorrelationState,
    pub last_residual_sq: f64,
    pub step: usize,
}

impl EstimatorState {
    /// `Θ̂_0 = 0`, `C̲_0 = scale · I_m`, `Ẑ_0 = E_z C̲_0`.
    pub fn new(n: usize, n_u: usize, config: &EstimatorConfig, reg: &Regularization) -> Result<Self> {
        config.validate()?;
        let corr = CorrelationState::new(n, n_u, config.beta, config.init_scale)?;
        let theta_hat = DMatrix::zeros(n, n + n_u);
        Ok(Self::from_parts(theta_hat, corr, 0, reg))
    }

    /// Rebuilds a state whose `Z` estimate is the `Z` block of `corr`, which
    /// holds after every completed step.
    pub fn from_parts(
        theta_hat: DMatrix<f64>,
        corr: CorrelationState,
        step: usize,
        reg: &Regularization,
    ) -> Self {
        let z_hat = corr.z_block();
        let last_residual_sq = residual(&theta_hat, corr.matrix(), reg);
        Self {
            theta_hat,
            z_hat,
            corr,
            last_residual_sq,
            step,
        }
    }

    pub fn n(&self) -> usize {
        self.corr.n()
    }

    pub fn n_u(&self) -> usize {
        self.corr.n_u()
    }
}

/// Per-timestep reconstruction of `(x_{t+1}, x_t, u_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub x_next_hat: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub u_hat: DVector<f64>,
}

impl PointEstimate {
    pub fn from_stacked(v: &DVector<f64>, n: usize, n_u: usize) -> Self {
        Self {
            x_next_hat: v.rows(0, n).into_owned(),
            x_hat: v.rows(n, n).into_owned(),
            u_hat: v.rows(2 * n, n_u).into_owned(),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.x_next_hat.len() + self.x_hat.len() + self.u_hat.len(),
            self.x_next_hat
                .iter()
                .chain(self.x_hat.iter())
                .chain(self.u_hat.iter())
                .copied(),
        )
    }
}

/// Stacks `[Θ z − y; z − z_obs]`, the residual of the column problem.
fn column_residual(theta: &DMatrix<f64>, z: &DVector<f64>, c_col: &DVector<f64>) -> DVector<f64> {
    let n = theta.nrows();
    let mut r = DVector::zeros(c_col.len());
    r.rows_mut(0, n)
        .copy_from(&(theta * z - c_col.rows(0, n)));
    r.rows_mut(n, z.len())
        .copy_from(&(z - c_col.rows(n, z.len())));
    r
}

/// IRLS weights for one column of the `Z` update, evaluated at the previous
/// iterate `z_prev`.
pub fn state_weights(
    theta: &DMatrix<f64>,
    z_prev: &DVector<f64>,
    c_col: &DVector<f64>,
    alpha: f64,
) -> WeightMatrix {
    WeightMatrix::from_residuals(&column_residual(theta, z_prev, c_col), alpha)
}

/// `E_z P c` with `P` the `W`-weighted projector onto `null([-I_n, Θ])`.
pub fn update_z_column(theta: &DMatrix<f64>, c_col: &DVector<f64>, w: &WeightMatrix) -> DVector<f64> {
    let n = theta.nrows();
    let projected = make_projector(theta, w).apply(c_col);
    projected.rows(n, theta.ncols()).into_owned()
}

fn reweighted_column(
    theta: &DMatrix<f64>,
    z_prev: DVector<f64>,
    c_col: &DVector<f64>,
    alpha: f64,
    iters: usize,
) -> DVector<f64> {
    let mut z = z_prev;
    for _ in 0..iters {
        let w = state_weights(theta, &z, c_col, alpha);
        z = update_z_column(theta, c_col, &w);
    }
    z
}

/// Reweighted `Z` update over every column of `C̲_t`. Columns are independent
/// problems; `z_prev` supplies the weight initialisation.
pub fn update_z(
    theta: &DMatrix<f64>,
    z_prev: &DMatrix<f64>,
    c: &DMatrix<f64>,
    alpha: f64,
    iters: usize,
) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(theta.ncols(), c.ncols());
    for i in 0..c.ncols() {
        let col = reweighted_column(
            theta,
            z_prev.column(i).into_owned(),
            &c.column(i).into_owned(),
            alpha,
            iters,
        );
        z.set_column(i, &col);
    }
    z
}

/// Same as [`update_z`], columns solved on the rayon pool.
pub fn update_z_parallel(
    theta: &DMatrix<f64>,
    z_prev: &DMatrix<f64>,
    c: &DMatrix<f64>,
    alpha: f64,
    iters: usize,
) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..c.ncols())
        .into_par_iter()
        .map(|i| {
            reweighted_column(
                theta,
                z_prev.column(i).into_owned(),
                &c.column(i).into_owned(),
                alpha,
                iters,
            )
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// `Ẑᵀ ⊗ I_n`, so that `vec(Θ Ẑ) = (Ẑᵀ ⊗ I_n) vec(Θ)`.
pub fn kron_regressor(z_hat: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    z_hat.transpose().kronecker(&DMatrix::<f64>::identity(n, n))
}

/// Column-major `vec`.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn param_system(
    z_hat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &Regularization,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = y.nrows();
    let kron = kron_regressor(z_hat, n);
    let rows = kron.nrows() + reg.rows();
    let mut x = DMatrix::zeros(rows, kron.ncols());
    x.rows_mut(0, kron.nrows()).copy_from(&kron);
    if reg.rows() > 0 {
        x.rows_mut(kron.nrows(), reg.rows()).copy_from(&reg.psi);
    }
    let mut b = DVector::zeros(rows);
    b.rows_mut(0, kron.nrows()).copy_from(&vec_of(y));
    if reg.rows() > 0 {
        b.rows_mut(kron.nrows(), reg.rows()).copy_from(&reg.mu);
    }
    (x, b)
}

/// Stacked parameter residual `[vec(Θ Ẑ − Y̲); Ψ vec(Θ) − μ]`.
pub fn param_residual(
    theta: &DMatrix<f64>,
    z_hat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &Regularization,
) -> DVector<f64> {
    let data = vec_of(&(theta * z_hat - y));
    if reg.rows() == 0 {
        return data;
    }
    let prior = &reg.psi * vec_of(theta) - &reg.mu;
    DVector::from_iterator(
        data.len() + prior.len(),
        data.iter().chain(prior.iter()).copied(),
    )
}

/// IRLS weights for the `Θ` update, size `n·m + M`.
pub fn param_weights(
    theta_prev: &DMatrix<f64>,
    z_hat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &Regularization,
    alpha: f64,
) -> WeightMatrix {
    WeightMatrix::from_residuals(&param_residual(theta_prev, z_hat, y, reg), alpha)
}

/// `vec(Θ̂) = [Ẑᵀ⊗I_n; Ψ]†_V [vec(Y̲); μ]`, reshaped to `n×(n+n_u)`.
pub fn update_theta(
    z_hat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &Regularization,
    v: &WeightMatrix,
) -> Result<DMatrix<f64>, LinalgError> {
    let n = y.nrows();
    let (x, b) = param_system(z_hat, y, reg);
    let theta = linalg::solve_weighted_ls(&x, &b, v)?;
    Ok(DMatrix::from_column_slice(n, z_hat.nrows(), theta.as_slice()))
}

/// [`update_theta`] that retries with `ε I` ridge rows appended to `Ψ` when
/// the normal matrix is singular.
pub fn update_theta_with_fallback(
    z_hat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &Regularization,
    v: &WeightMatrix,
    theta_prev: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>, LinalgError> {
    match update_theta(z_hat, y, reg, v) {
        Err(LinalgError::SingularNormalMatrix { .. }) => {
            let p = theta_prev.len();
            let rows = reg.rows() + p;
            let mut psi = DMatrix::zeros(rows, p);
            let mut mu = DVector::zeros(rows);
            if reg.rows() > 0 {
                psi.rows_mut(0, reg.rows()).copy_from(&reg.psi);
                mu.rows_mut(0, reg.rows()).copy_from(&reg.mu);
            }
            psi.rows_mut(reg.rows(), p)
                .copy_from(&(DMatrix::<f64>::identity(p, p) * RIDGE_EPSILON));
            let ridged = Regularization { psi, mu };
            let ridge_res = vec_of(theta_prev) * RIDGE_EPSILON;
            let ridge_w = WeightMatrix::from_residuals(&ridge_res, alpha);
            let weights = WeightMatrix::new(DVector::from_iterator(
                v.len() + p,
                v.diag().iter().chain(ridge_w.diag().iter()).copied(),
            ))?;
            update_theta(z_hat, y, &ridged, &weights)
        }
        other => other,
    }
}

/// `‖R(Θ̂, C̲)‖²` with `R = [vec([-I_n, Θ̂] C̲); Ψ vec(Θ̂) − μ]`.
pub fn residual(theta: &DMatrix<f64>, c: &DMatrix<f64>, reg: &Regularization) -> f64 {
    let data = (linalg::constraint_matrix(theta) * c).norm_squared();
    if reg.rows() == 0 {
        return data;
    }
    data + (&reg.psi * vec_of(theta) - &reg.mu).norm_squared()
}

/// One estimation step: discount, reweighted `Z` and `Θ` updates, `Z` block
/// replacement. Iteration counts come from `config`.
pub fn airls_step(
    state: &mut EstimatorState,
    sample: &TrajectorySample,
    config: &EstimatorConfig,
    reg: &Regularization,
) -> Result<()> {
    let v = sample.stacked(true);
    state.corr.discount_update_vector(&v)?;
    let c = state.corr.matrix();
    let y = state.corr.y_block();

    let mut theta = state.theta_hat.clone();
    let mut z = state.z_hat.clone();
    for _ in 0..config.outer_iters {
        z = update_z(&theta, &z, c, config.alpha, config.z_iters);
        for _ in 0..config.theta_iters {
            let weights = param_weights(&theta, &z, &y, reg, config.alpha);
            theta = if config.ridge_fallback {
                update_theta_with_fallback(&z, &y, reg, &weights, &theta, config.alpha)?
            } else {
                update_theta(&z, &y, reg, &weights)?
            };
        }
    }
    state.corr.replace_z_block(&z)?;
    state.theta_hat = theta;
    state.z_hat = z;
    state.last_residual_sq = residual(&state.theta_hat, state.corr.matrix(), reg);
    state.step += 1;
    Ok(())
}

/// Projects one measured triple onto the model null space, reweighting
/// `inner_iters` times. The first pass starts from the measurement itself,
/// i.e. zero residual and uniform weights; later passes weight each
/// component by its distance from the previous projection.
pub fn point_estimate(
    theta: &DMatrix<f64>,
    sample: &TrajectorySample,
    alpha: f64,
    inner_iters: usize,
) -> PointEstimate {
    let (n, n_u) = (sample.n(), sample.n_u());
    let c = sample.stacked(true);
    let mut projected = c.clone();
    for _ in 0..inner_iters.max(1) {
        let w = WeightMatrix::from_residuals(&(&projected - &c), alpha);
        projected = make_projector(theta, &w).apply(&c);
    }
    PointEstimate::from_stacked(&projected, n, n_u)
}

/// Sufficient condition for residual monotonicity:
/// `1 − β ≤ (γ_min / γ_max)²`.
pub fn check_beta_bound(gamma_max: f64, gamma_min: f64, beta: f64) -> Result<bool> {
    if !(gamma_min > 0.0) || gamma_min > gamma_max {
        return Err(Error::InvalidBounds {
            gamma_max,
            gamma_min,
        });
    }
    Ok(1.0 - beta <= (gamma_min / gamma_max).powi(2))
}

/// Running estimates of the eigenvalue bounds used by [`check_beta_bound`].
///
/// `γ_max` is the largest `λ_max(Γ̃_t) = ‖ṽ_t‖²` seen. `γ_min` is a heuristic:
/// the smallest `λ_min` of the symmetrised `(1 − β) C̲_t` over the steps
/// after a burn-in of `1/(1 − β)` samples, i.e. once `C̲_t` behaves like a
/// discounted average of the data rather than of its initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaBoundMonitor {
    beta: f64,
    burn_in: usize,
    seen: usize,
    gamma_max: f64,
    gamma_min: f64,
}

impl BetaBoundMonitor {
    pub fn new(beta: f64) -> Self {
        Self::with_burn_in(beta, (1.0 / (1.0 - beta)).ceil() as usize)
    }

    pub fn with_burn_in(beta: f64, burn_in: usize) -> Self {
        Self {
            beta,
            burn_in,
            seen: 0,
            gamma_max: 0.0,
            gamma_min: f64::INFINITY,
        }
    }

    pub fn observe_sample(&mut self, measured: &DVector<f64>) {
        self.gamma_max = self.gamma_max.max(measured.norm_squared());
    }

    pub fn observe_correlation(&mut self, c: &DMatrix<f64>) {
        self.seen += 1;
        if self.seen <= self.burn_in {
            return;
        }
        let sym = (c + c.transpose()) * (0.5 * (1.0 - self.beta));
        self.gamma_min = self.gamma_min.min(sym.symmetric_eigenvalues().min());
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    pub fn gamma_min(&self) -> Option<f64> {
        self.gamma_min.is_finite().then_some(self.gamma_min)
    }

    /// `None` until both bounds exist; `Some(false)` for a non-positive `γ_min`.
    pub fn bound_holds(&self) -> Option<bool> {
        let gmin = self.gamma_min()?;
        if self.gamma_max <= 0.0 {
            return None;
        }
        if gmin <= 0.0 || gmin > self.gamma_max {
            return Some(false);
        }
        check_beta_bound(self.gamma_max, gmin, self.beta).ok()
    }
}

/// Streaming AIRLS estimator owning its state, configuration and prior.
#[derive(Debug, Clone)]
pub struct Airls {
    config: EstimatorConfig,
    reg: Regularization,
    state: EstimatorState,
}

impl Airls {
    pub fn new(n: usize, n_u: usize, config: EstimatorConfig, reg: Regularization) -> Result<Self> {
        reg.check_params(n * (n + n_u))?;
        let state = EstimatorState::new(n, n_u, &config, &reg)?;
        Ok(Self { config, reg, state })
    }

    pub fn from_state(config: EstimatorConfig, reg: Regularization, state: EstimatorState) -> Result<Self> {
        config.validate()?;
        reg.check_params(state.theta_hat.len())?;
        Ok(Self { config, reg, state })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn regularization(&self) -> &Regularization {
        &self.reg
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn step(&mut self, sample: &TrajectorySample) -> Result<()> {
        airls_step(&mut self.state, sample, &self.config, &self.reg)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.state.theta_hat
    }

    pub fn residual(&self) -> f64 {
        self.state.last_residual_sq
    }

    pub fn point_estimate(&self, sample: &TrajectorySample) -> PointEstimate {
        point_estimate(
            &self.state.theta_hat,
            sample,
            self.config.alpha,
            self.config.point_iters,
        )
    }
}
