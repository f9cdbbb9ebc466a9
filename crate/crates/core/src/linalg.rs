//! Small dense kernels: weighted pseudo-inverse, weighted least squares and
//! the oblique projector onto the null space of `[-I_n, Θ]`.
//!
//! Problem sizes here are tiny (at most `m = 2n + n_u` unknowns per solve), so
//! everything goes through the normal equations `XᵀWX`. A QR route on
//! `W^{1/2} X` is available through [`SolveMethod::Qr`] for badly scaled data.

use nalgebra::{DMatrix, DVector};

use crate::error::LinalgError;

/// Condition number of `XᵀWX` above which solves are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Diagonal weight matrix. Off-diagonal entries are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    diag: DVector<f64>,
}

impl WeightMatrix {
    pub fn new(diag: DVector<f64>) -> Result<Self, LinalgError> {
        if let Some(bad) = diag.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(LinalgError::NonPositiveWeight(*bad));
        }
        Ok(Self { diag })
    }

    pub fn identity(size: usize) -> Self {
        Self {
            diag: DVector::from_element(size, 1.0),
        }
    }

    /// IRLS weights `w_j = (r_j² + α)^{-1/2}`. Every weight lies in `(0, α^{-1/2}]`.
    pub fn from_residuals(residuals: &DVector<f64>, alpha: f64) -> Self {
        debug_assert!(alpha > 0.0);
        Self {
            diag: residuals.map(|r| 1.0 / (r * r + alpha).sqrt()),
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn inverse(&self) -> Self {
        Self {
            diag: self.diag.map(|w| 1.0 / w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    /// `(XᵀWX)⁻¹XᵀW`, as written.
    #[default]
    NormalEquations,
    /// Householder QR of `W^{1/2}X`.
    Qr,
}

fn check_rows(x: &DMatrix<f64>, w: &WeightMatrix) -> Result<(), LinalgError> {
    if x.nrows() != w.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: (x.nrows(), 1),
            found: (w.len(), 1),
        });
    }
    Ok(())
}

/// `XᵀWX` without materialising `W`.
fn weighted_gram(x: &DMatrix<f64>, w: &WeightMatrix) -> DMatrix<f64> {
    let mut wx = x.clone();
    for (mut row, wi) in wx.row_iter_mut().zip(w.diag.iter()) {
        row *= *wi;
    }
    x.transpose() * wx
}

fn condition_of_gram(gram: &DMatrix<f64>) -> f64 {
    let eig = gram.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Factor `XᵀWX` after checking its conditioning.
fn factor_gram(gram: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, LinalgError> {
    let condition = condition_of_gram(&gram);
    if condition > MAX_CONDITION {
        return Err(LinalgError::SingularNormalMatrix { condition });
    }
    gram.cholesky()
        .ok_or(LinalgError::SingularNormalMatrix { condition })
}

/// `X†_W = (XᵀWX)⁻¹XᵀW`, a `q×p` matrix.
pub fn weighted_pseudo_inverse(
    x: &DMatrix<f64>,
    w: &WeightMatrix,
) -> Result<DMatrix<f64>, LinalgError> {
    check_rows(x, w)?;
    let chol = factor_gram(weighted_gram(x, w))?;
    let mut xtw = x.transpose();
    for (mut col, wi) in xtw.column_iter_mut().zip(w.diag.iter()) {
        col *= *wi;
    }
    Ok(chol.solve(&xtw))
}

/// `argmin_z ‖Xz − b‖²_W`.
pub fn solve_weighted_ls(
    x: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &WeightMatrix,
) -> Result<DVector<f64>, LinalgError> {
    solve_weighted_ls_with(x, b, w, SolveMethod::NormalEquations)
}

pub fn solve_weighted_ls_with(
    x: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &WeightMatrix,
    method: SolveMethod,
) -> Result<DVector<f64>, LinalgError> {
    check_rows(x, w)?;
    if b.len() != x.nrows() {
        return Err(LinalgError::DimensionMismatch {
            expected: (x.nrows(), 1),
            found: (b.len(), 1),
        });
    }
    match method {
        SolveMethod::NormalEquations => {
            let chol = factor_gram(weighted_gram(x, w))?;
            let wb = b.component_mul(&w.diag);
            Ok(chol.solve(&(x.transpose() * wb)))
        }
        SolveMethod::Qr => {
            let sqrt_w = w.diag.map(f64::sqrt);
            let mut sx = x.clone();
            for (mut row, s) in sx.row_iter_mut().zip(sqrt_w.iter()) {
                row *= *s;
            }
            let sb = b.component_mul(&sqrt_w);
            let condition = condition_of_gram(&(sx.transpose() * &sx));
            if condition > MAX_CONDITION {
                return Err(LinalgError::SingularNormalMatrix { condition });
            }
            let qr = sx.qr();
            let rhs = qr.q().transpose() * sb;
            qr.r()
                .solve_upper_triangular(&rhs)
                .ok_or(LinalgError::SingularNormalMatrix { condition })
        }
    }
}

/// `[-I_n, Θ]`, the constraint matrix whose null space holds every
/// noiseless sample `(x_{t+1}, x_t, u_t)`.
pub fn constraint_matrix(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = theta.nrows();
    let mut k = DMatrix::zeros(n, n + theta.ncols());
    k.view_mut((0, 0), (n, n)).fill_with_identity();
    k.view_mut((0, 0), (n, n)).neg_mut();
    k.view_mut((0, n), (n, theta.ncols())).copy_from(theta);
    k
}

/// Oblique projector onto `null([-I_n, Θ])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueProjector {
    matrix: DMatrix<f64>,
}

impl ObliqueProjector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.matrix
    }
}

/// Builds `P` such that `P c = argmin_d ‖d − c‖²_W  s.t.  [-I_n, Θ] d = 0`.
///
/// With `K = [-I_n, Θ]` this is `P = I_m − ((Kᵀ)†_{W⁻¹})ᵀ K`
/// `= I_m − W⁻¹Kᵀ(KW⁻¹Kᵀ)⁻¹K`. `Kᵀ` always has full column rank so the
/// pseudo-inverse cannot fail for a strictly positive `W`.
pub fn make_projector(theta: &DMatrix<f64>, w: &WeightMatrix) -> ObliqueProjector {
    let k = constraint_matrix(theta);
    let m = k.ncols();
    assert_eq!(w.len(), m, "projector weight must have size m = 2n + n_u");
    // KW⁻¹Kᵀ ⪰ W_y⁻¹ ≻ 0, so the condition guard is skipped here; very
    // uneven IRLS weights can push the ratio past MAX_CONDITION while the
    // system stays perfectly solvable.
    let w_inv = w.inverse();
    let gram = weighted_gram(&k.transpose(), &w_inv);
    let mut rhs = k.clone();
    for (mut col, wi) in rhs.column_iter_mut().zip(w_inv.diag.iter()) {
        col *= *wi;
    }
    let kt_pinv = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .expect("[-I, Θ]ᵀ has full column rank for positive weights"),
    };
    let matrix = DMatrix::identity(m, m) - kt_pinv.transpose() * k;
    ObliqueProjector { matrix }
}
