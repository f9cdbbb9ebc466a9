//! Comparison estimators.
//!
//! * RTLS tracks the `n`-dimensional null space of the measured correlation
//!   matrix `C̃_t` with a few shifted inverse-power iterations per sample.
//! * RLS is plain exponentially weighted least squares of `x̃_{t+1}` on
//!   `(x̃_t, ũ_t)`; it ignores the noise on the regressors.

use nalgebra::{DMatrix, DVector};

use crate::airls::PointEstimate;
use crate::correlation::DEFAULT_BETA;
use crate::error::{Error, Result};
use crate::linalg::{self, WeightMatrix};
use crate::sim::TrajectorySample;

/// Relative jitter added to a singular matrix before retrying a solve.
pub const JITTER: f64 = 1e-10;
/// Largest condition number of the basis `Y` block still treated as
/// identifying `[A, B]`.
const IDENTIFIABLE_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct RtlsConfig {
    pub beta: f64,
    pub power_iters: usize,
    /// `C̃_0 = init_scale · I_m`.
    pub init_scale: f64,
}

impl Default for RtlsConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            power_iters: 2,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtlsState {
    pub c_tilde: DMatrix<f64>,
    /// Orthonormal `m×n` frame for the smallest eigenvectors of `C̃_t`.
    pub nullspace_basis: DMatrix<f64>,
    pub theta_hat: DMatrix<f64>,
    /// Whether the last extraction produced a well-posed `[Â, B̂]`.
    pub identified: bool,
    pub step: usize,
    n: usize,
    n_u: usize,
}

/// Inverts `mat · x = rhs`, adding diagonal jitter if `mat` is singular.
fn jittered_solve(mat: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = mat.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let scale = mat.diagonal().amax().max(1.0);
    let mut jitter = JITTER * scale;
    for _ in 0..8 {
        let shifted = mat + DMatrix::identity(mat.nrows(), mat.ncols()) * jitter;
        if let Some(chol) = shifted.cholesky() {
            return Ok(chol.solve(rhs));
        }
        jitter *= 100.0;
    }
    Err(linalg_singular())
}

fn linalg_singular() -> Error {
    Error::Linalg(crate::error::LinalgError::SingularNormalMatrix {
        condition: f64::INFINITY,
    })
}

/// Thin Q factor of `x`.
fn orthonormalize(x: DMatrix<f64>) -> DMatrix<f64> {
    let cols = x.ncols();
    let q = x.qr().q();
    q.columns(0, cols).into_owned()
}

/// Reads `[A, B]` off a basis of `null(C) = range([-I_n, Θ]ᵀ)`: with the
/// basis split as `[N_y; N_z]`, `N_z = -Θᵀ N_y`, so `N_yᵀ Θ = -N_zᵀ`.
pub fn theta_from_nullspace(basis: &DMatrix<f64>, n: usize) -> Option<DMatrix<f64>> {
    let ny = basis.rows(0, n).into_owned();
    let nz = basis.rows(n, basis.nrows() - n).into_owned();
    let sv = ny.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(min > 0.0) || max / min > IDENTIFIABLE_CONDITION {
        return None;
    }
    ny.transpose().lu().solve(&(-nz.transpose()))
}

impl RtlsState {
    pub fn new(n: usize, n_u: usize, config: &RtlsConfig) -> Result<Self> {
        if !(config.beta > 0.0 && config.beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in (0, 1), got {}",
                config.beta
            )));
        }
        if config.power_iters == 0 {
            return Err(Error::InvalidConfig("power_iters must be at least 1".into()));
        }
        let m = 2 * n + n_u;
        let c_tilde = DMatrix::identity(m, m) * config.init_scale;
        // Start from the exact null space of Θ = 0.
        let mut basis = DMatrix::zeros(m, n);
        basis.view_mut((0, 0), (n, n)).fill_with_identity();
        Ok(Self {
            c_tilde,
            nullspace_basis: basis,
            theta_hat: DMatrix::zeros(n, n + n_u),
            identified: false,
            step: 0,
            n,
            n_u,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    /// Runs inverse-power iterations on the current `C̃` and re-extracts `Θ̂`.
    pub fn refine(&mut self, iters: usize) -> Result<()> {
        let mut q = self.nullspace_basis.clone();
        for _ in 0..iters {
            q = orthonormalize(jittered_solve(&self.c_tilde, &q)?);
        }
        self.nullspace_basis = q;
        match theta_from_nullspace(&self.nullspace_basis, self.n) {
            Some(theta) if self.eigen_gap_ok() => {
                self.theta_hat = theta;
                self.identified = true;
            }
            _ => self.identified = false,
        }
        Ok(())
    }

    /// The tracked frame must be separated from its complement: the largest
    /// Rayleigh quotient inside the frame has to sit below the smallest one
    /// outside. An isotropic `C̃` fails this.
    fn eigen_gap_ok(&self) -> bool {
        let m = self.c_tilde.nrows();
        let sym = (&self.c_tilde + self.c_tilde.transpose()) * 0.5;
        let inside = (self.nullspace_basis.transpose() * &sym * &self.nullspace_basis)
            .symmetric_eigenvalues()
            .max();
        let n = self.nullspace_basis.ncols();
        let mut ext = DMatrix::zeros(m, n + m);
        ext.columns_mut(0, n).copy_from(&self.nullspace_basis);
        ext.columns_mut(n, m).fill_with_identity();
        let comp = ext.qr().q().columns(n, m - n).into_owned();
        let outside = (comp.transpose() * &sym * &comp).symmetric_eigenvalues().min();
        inside < outside * (1.0 - 1e-9)
    }
}

pub fn rtls_step(state: &mut RtlsState, sample: &TrajectorySample, config: &RtlsConfig) -> Result<()> {
    let v = sample.stacked(true);
    if v.len() != state.c_tilde.nrows() {
        return Err(Error::DimensionMismatch {
            what: "stacked sample",
            expected: (state.c_tilde.nrows(), 1),
            found: (v.len(), 1),
        });
    }
    state.c_tilde *= config.beta;
    state.c_tilde.ger(1.0, &v, &v, 1.0);
    // only the extraction needs the gap check; skip it on the hot path
    let mut q = state.nullspace_basis.clone();
    for _ in 0..config.power_iters {
        q = orthonormalize(jittered_solve(&state.c_tilde, &q)?);
    }
    state.nullspace_basis = q;
    match theta_from_nullspace(&state.nullspace_basis, state.n) {
        Some(theta) => {
            state.theta_hat = theta;
            state.identified = true;
        }
        None => state.identified = false,
    }
    state.step += 1;
    Ok(())
}

/// Orthogonal projection of the measured triple onto `null([-I_n, Θ̂])`,
/// the total-least-squares reconstruction.
pub fn orthogonal_point_estimate(theta: &DMatrix<f64>, sample: &TrajectorySample) -> PointEstimate {
    let m = 2 * sample.n() + sample.n_u();
    let p = linalg::make_projector(theta, &WeightMatrix::identity(m));
    PointEstimate::from_stacked(&p.apply(&sample.stacked(true)), sample.n(), sample.n_u())
}

#[derive(Debug, Clone)]
pub struct Rtls {
    config: RtlsConfig,
    state: RtlsState,
}

impl Rtls {
    pub fn new(n: usize, n_u: usize, config: RtlsConfig) -> Result<Self> {
        let state = RtlsState::new(n, n_u, &config)?;
        Ok(Self { config, state })
    }

    pub fn from_state(config: RtlsConfig, state: RtlsState) -> Self {
        Self { config, state }
    }

    pub fn config(&self) -> &RtlsConfig {
        &self.config
    }

    pub fn state(&self) -> &RtlsState {
        &self.state
    }

    pub fn step(&mut self, sample: &TrajectorySample) -> Result<()> {
        rtls_step(&mut self.state, sample, &self.config)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.state.theta_hat
    }

    /// Full identification check including the eigenvalue gap.
    pub fn is_identified(&self) -> bool {
        self.state.identified && self.state.eigen_gap_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsConfig {
    pub beta: f64,
    /// Initial information `δ I`.
    pub delta: f64,
}

impl Default for RlsConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            delta: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    pub theta_hat: DMatrix<f64>,
    /// `Σ β^{t-i} φ_i φ_iᵀ` with `φ = (x̃_t, ũ_t)`, plus the decayed prior.
    pub information: DMatrix<f64>,
    /// `Σ β^{t-i} x̃_{i+1} φ_iᵀ`, plus the decayed prior.
    pub cross: DMatrix<f64>,
    pub step: usize,
}

impl RlsState {
    pub fn new(n: usize, n_u: usize, config: &RlsConfig) -> Result<Self> {
        if !(config.beta > 0.0 && config.beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in (0, 1), got {}",
                config.beta
            )));
        }
        if !(config.delta > 0.0) {
            return Err(Error::InvalidConfig("delta must be positive".into()));
        }
        let p = n + n_u;
        Ok(Self {
            theta_hat: DMatrix::zeros(n, p),
            information: DMatrix::identity(p, p) * config.delta,
            cross: DMatrix::zeros(n, p),
            step: 0,
        })
    }
}

pub fn rls_step(state: &mut RlsState, sample: &TrajectorySample, config: &RlsConfig) -> Result<()> {
    let n = sample.n();
    let phi = DVector::from_iterator(
        n + sample.n_u(),
        sample.x_noisy.iter().chain(sample.u_noisy.iter()).copied(),
    );
    if phi.len() != state.information.nrows() || sample.x_next_noisy.len() != state.cross.nrows() {
        return Err(Error::DimensionMismatch {
            what: "regressor",
            expected: (state.information.nrows(), state.cross.nrows()),
            found: (phi.len(), sample.x_next_noisy.len()),
        });
    }
    state.information *= config.beta;
    state.information.ger(1.0, &phi, &phi, 1.0);
    state.cross *= config.beta;
    state.cross.ger(1.0, &sample.x_next_noisy, &phi, 1.0);
    // Θ R = S  ⇔  R Θᵀ = Sᵀ (R symmetric)
    let theta_t = jittered_solve(&state.information, &state.cross.transpose())?;
    state.theta_hat = theta_t.transpose();
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Rls {
    config: RlsConfig,
    state: RlsState,
}

impl Rls {
    pub fn new(n: usize, n_u: usize, config: RlsConfig) -> Result<Self> {
        let state = RlsState::new(n, n_u, &config)?;
        Ok(Self { config, state })
    }

    pub fn from_state(config: RlsConfig, state: RlsState) -> Self {
        Self { config, state }
    }

    pub fn config(&self) -> &RlsConfig {
        &self.config
    }

    pub fn state(&self) -> &RlsState {
        &self.state
    }

    pub fn step(&mut self, sample: &TrajectorySample) -> Result<()> {
        rls_step(&mut self.state, sample, &self.config)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.state.theta_hat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_correlation_is_not_identified() {
        let mut st = RtlsState::new(2, 2, &RtlsConfig::default()).unwrap();
        st.refine(3).unwrap();
        let gram = st.nullspace_basis.transpose() * &st.nullspace_basis;
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(!st.identified);
    }

    #[test]
    fn nullspace_extraction_inverts_constraint() {
        let theta = DMatrix::from_row_slice(2, 4, &[0.8, -0.25, 10.0, 2.0, -0.25, 0.25, 2.0, 10.0]);
        let basis = orthonormalize(linalg::constraint_matrix(&theta).transpose());
        let back = theta_from_nullspace(&basis, 2).unwrap();
        assert!((back - theta).amax() < 1e-12);
    }

    #[test]
    fn degenerate_basis_rejected() {
        let mut basis = DMatrix::zeros(6, 2);
        basis[(2, 0)] = 1.0;
        basis[(3, 1)] = 1.0;
        assert!(theta_from_nullspace(&basis, 2).is_none());
    }

    #[test]
    fn rls_zero_data_keeps_theta() {
        let mut est = Rls::new(2, 2, RlsConfig::default()).unwrap();
        let zero = TrajectorySample::exact(0, DVector::zeros(2), DVector::zeros(2), DVector::zeros(2));
        for _ in 0..50 {
            est.step(&zero).unwrap();
        }
        assert_eq!(est.theta(), &DMatrix::zeros(2, 4));
    }

    #[test]
    fn jitter_rescues_singular_solve() {
        let mat = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = jittered_solve(&mat, &DMatrix::identity(2, 2)).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
