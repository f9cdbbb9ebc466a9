//! Robust online joint estimation of the state, input and parameters of a
//! linear system `x_{t+1} = A x_t + B u_t` from outlier-contaminated
//! measurements.
//!
//! The [`airls`] module holds the estimator; [`baselines`] provides RTLS and
//! RLS for comparison; [`sim`] generates test traces and [`bench`] runs the
//! outlier-sweep experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod airls;
pub mod baselines;
pub mod bench;
pub mod correlation;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod sim;
pub mod snapshot;

pub use airls::{Airls, EstimatorConfig, EstimatorState, PointEstimate, Regularization};
pub use error::{Error, LinalgError, Result};
pub use estimator::{Estimator, EstimatorKind, EstimatorSpec};
pub use sim::{LinearSystem, NoiseConfig, SnrScale, TrajectorySample};
