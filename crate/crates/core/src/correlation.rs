//! Discounted correlation matrix `C̲_t` of stacked samples `(x_{t+1}, x_t, u_t)`.
//!
//! Rows `0..n` form the `Y` block (always built from measurements), rows
//! `n..m` the `Z` block, which the estimator overwrites with its own estimate
//! after every step. Once that happens `C̲_t` is no longer symmetric.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sim::TrajectorySample;

pub const DEFAULT_BETA: f64 = 0.995;

/// Rank-one sample matrix `v vᵀ` with `v = (x_{t+1}, x_t, u_t)`.
pub fn build_gamma(sample: &TrajectorySample, use_noisy: bool) -> Result<DMatrix<f64>> {
    let n = sample.n();
    let (xn, x, u) = if use_noisy {
        (&sample.x_next_noisy, &sample.x_noisy, &sample.u_noisy)
    } else {
        (&sample.x_next, &sample.x, &sample.u)
    };
    if xn.len() != n {
        return Err(Error::DimensionMismatch {
            what: "x_next",
            expected: (n, 1),
            found: (xn.len(), 1),
        });
    }
    if x.len() != n || u.len() != sample.n_u() {
        return Err(Error::DimensionMismatch {
            what: "measured sample",
            expected: (n, sample.n_u()),
            found: (x.len(), u.len()),
        });
    }
    Ok(outer(&sample.stacked(use_noisy)))
}

pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

/// `β C + Γ`.
pub fn discount(c: &DMatrix<f64>, beta: f64, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    c * beta + gamma
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationState {
    c: DMatrix<f64>,
    beta: f64,
    n: usize,
    n_u: usize,
}

impl CorrelationState {
    /// `C̲_0 = scale · I_m`.
    pub fn new(n: usize, n_u: usize, beta: f64, scale: f64) -> Result<Self> {
        let m = 2 * n + n_u;
        Self::from_matrix(DMatrix::identity(m, m) * scale, beta, n, n_u)
    }

    pub fn from_matrix(c: DMatrix<f64>, beta: f64, n: usize, n_u: usize) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta must lie in (0, 1), got {beta}")));
        }
        let m = 2 * n + n_u;
        if c.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                what: "correlation matrix",
                expected: (m, m),
                found: c.shape(),
            });
        }
        Ok(Self { c, beta, n, n_u })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn m(&self) -> usize {
        2 * self.n + self.n_u
    }

    /// `E_y C̲`, an `n×m` view.
    pub fn y_block(&self) -> DMatrix<f64> {
        self.c.rows(0, self.n).into_owned()
    }

    /// `E_z C̲`, an `(n+n_u)×m` view.
    pub fn z_block(&self) -> DMatrix<f64> {
        self.c.rows(self.n, self.n + self.n_u).into_owned()
    }

    /// `C̲ ← β C̲ + Γ`.
    pub fn discount_update(&mut self, gamma: &DMatrix<f64>) -> Result<()> {
        if gamma.shape() != self.c.shape() {
            return Err(Error::DimensionMismatch {
                what: "sample matrix",
                expected: self.c.shape(),
                found: gamma.shape(),
            });
        }
        self.c *= self.beta;
        self.c += gamma;
        Ok(())
    }

    /// Accumulates the outer product of `v` directly, without forming `Γ`.
    pub fn discount_update_vector(&mut self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.m() {
            return Err(Error::DimensionMismatch {
                what: "stacked sample",
                expected: (self.m(), 1),
                found: (v.len(), 1),
            });
        }
        self.c *= self.beta;
        self.c.ger(1.0, v, v, 1.0);
        Ok(())
    }

    /// `C̲ ← E_yᵀE_y C̲ + E_zᵀ Ẑ`: keeps the measured `Y` rows, overwrites the
    /// `Z` rows.
    pub fn replace_z_block(&mut self, z_hat: &DMatrix<f64>) -> Result<()> {
        let expected = (self.n + self.n_u, self.m());
        if z_hat.shape() != expected {
            return Err(Error::DimensionMismatch {
                what: "Z estimate",
                expected,
                found: z_hat.shape(),
            });
        }
        self.c.rows_mut(self.n, self.n + self.n_u).copy_from(z_hat);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_from(v: &[f64]) -> TrajectorySample {
        TrajectorySample::exact(
            0,
            DVector::from_column_slice(&v[0..2]),
            DVector::from_column_slice(&v[2..4]),
            DVector::from_column_slice(&v[4..6]),
        )
    }

    #[test]
    fn basis_outer_product() {
        let g = build_gamma(&sample_from(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), true).unwrap();
        let mut expected = DMatrix::zeros(6, 6);
        expected[(0, 0)] = 1.0;
        assert_eq!(g, expected);
    }

    #[test]
    fn sparse_outer_product() {
        let g = build_gamma(&sample_from(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]), false).unwrap();
        let ones = [0usize, 3, 4];
        for i in 0..6 {
            for j in 0..6 {
                let want = if ones.contains(&i) && ones.contains(&j) { 1.0 } else { 0.0 };
                assert_eq!(g[(i, j)], want);
            }
        }
    }

    #[test]
    fn noisy_flag_selects_fields() {
        let mut s = sample_from(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        s.u_noisy[1] = 0.0;
        let g_true = build_gamma(&s, false).unwrap();
        let g_meas = build_gamma(&s, true).unwrap();
        assert_eq!(g_true[(5, 5)], 36.0);
        assert_eq!(g_meas[(5, 5)], 0.0);
        assert_eq!(g_true.trace(), 91.0);
    }

    #[test]
    fn discount_edge_cases() {
        let gamma = build_gamma(&sample_from(&[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]), true).unwrap();
        let c0 = DMatrix::<f64>::identity(6, 6) * 7.0;
        assert_eq!(discount(&c0, 0.0, &gamma), gamma);
        let zero = DMatrix::zeros(6, 6);
        let twice = discount(&discount(&zero, 1.0, &gamma), 1.0, &gamma);
        assert_eq!(twice, &gamma * 2.0);

        let mut st = CorrelationState::new(2, 2, 0.9, 1.0).unwrap();
        st.discount_update(&DMatrix::zeros(6, 6)).unwrap();
        assert_eq!(st.matrix(), &(DMatrix::identity(6, 6) * 0.9));
    }

    #[test]
    fn vector_update_matches_gamma_update() {
        let s = sample_from(&[0.3, -1.0, 2.0, 0.1, -0.4, 0.9]);
        let mut a = CorrelationState::new(2, 2, 0.97, 1.0).unwrap();
        let mut b = a.clone();
        a.discount_update(&build_gamma(&s, true).unwrap()).unwrap();
        b.discount_update_vector(&s.stacked(true)).unwrap();
        assert!((a.matrix() - b.matrix()).amax() <= 1e-15);
    }

    #[test]
    fn z_block_replacement() {
        let c = DMatrix::from_fn(6, 6, |i, j| (i * 6 + j) as f64);
        let mut st = CorrelationState::from_matrix(c.clone(), 0.5, 2, 2).unwrap();
        let own_z = st.z_block();
        st.replace_z_block(&own_z).unwrap();
        assert_eq!(st.matrix(), &c);

        st.replace_z_block(&DMatrix::zeros(4, 6)).unwrap();
        assert_eq!(st.y_block(), c.rows(0, 2).into_owned());
        assert_eq!(st.z_block(), DMatrix::zeros(4, 6));
        assert!(st.replace_z_block(&DMatrix::zeros(3, 6)).is_err());
    }

    #[test]
    fn beta_must_be_open_unit_interval() {
        assert!(CorrelationState::new(2, 2, 0.0, 1.0).is_err());
        assert!(CorrelationState::new(2, 2, 1.0, 1.0).is_err());
        assert!(CorrelationState::new(2, 2, 0.5, 1.0).is_ok());
    }
}
