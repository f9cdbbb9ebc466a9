#![allow(dead_code)]

use airls::airls::state_weights;
use airls::linalg::WeightMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Weights spread over two decades.
pub fn weights(rng: &mut ChaCha8Rng, len: usize) -> WeightMatrix {
    WeightMatrix::new(DVector::from_fn(len, |_, _| 10f64.powf(rng.random_range(-1.0..1.0)))).unwrap()
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Dense `diag(w)`.
pub fn dense(w: &WeightMatrix) -> DMatrix<f64> {
    DMatrix::from_diagonal(w.diag())
}

/// Least-squares pseudo-inverse `R⁻¹Qᵀ` from a thin QR factorisation.
pub fn qr_pinv(x: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = x.clone().qr();
    qr.r().solve_upper_triangular(&qr.q().transpose()).unwrap()
}

/// `[Θ; I]`, the map from a `Z` column to the full stacked column.
pub fn lift(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = theta.shape();
    let mut x = DMatrix::zeros(n + p, p);
    x.rows_mut(0, n).copy_from(theta);
    x.rows_mut(n, p).fill_with_identity();
    x
}

/// Weighted LS through an LU solve of the normal equations.
pub fn normal_equations(x: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let xtw = x.transpose() * DMatrix::from_diagonal(w);
    (&xtw * x).lu().solve(&(&xtw * b)).unwrap()
}

/// Every column of the `Z` update in one solve: block-diagonal regressor and
/// stacked weights.
pub fn joint_z_solve(theta: &DMatrix<f64>, z_prev: &DMatrix<f64>, c: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let (m, cols) = c.shape();
    let p = theta.ncols();
    let block = lift(theta);
    let mut x = DMatrix::zeros(m * cols, p * cols);
    let mut b = DVector::zeros(m * cols);
    let mut w = DVector::zeros(m * cols);
    for i in 0..cols {
        x.view_mut((m * i, p * i), (m, p)).copy_from(&block);
        b.rows_mut(m * i, m).copy_from(&c.column(i));
        let wi = state_weights(theta, &z_prev.column(i).into_owned(), &c.column(i).into_owned(), alpha);
        w.rows_mut(m * i, m).copy_from(wi.diag());
    }
    let joint = normal_equations(&x, &b, &w);
    DMatrix::from_column_slice(p, cols, joint.as_slice())
}
