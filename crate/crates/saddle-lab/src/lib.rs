//! Strict-saddle certification and leave-one-out stability measurement.
//!
//! The crate classifies points of constrained empirical objectives into
//! strict-saddle regimes (large gradient, negative restricted curvature, or a
//! strongly convex basin around a global minimum), runs leave-one-out ERM
//! stability experiments, and checks the resulting fast generalization rates
//! on two concrete applications: leading-eigenvector PCA and orthogonal
//! fourth-order tensor decomposition (ICA with Rademacher sources).
//!
//! Layout:
//! - [`numerics`]: dense symmetric eigensolver, pseudoinverse solves,
//!   orthonormal tangent bases, operator norms.
//! - [`objective`]: per-datum losses, empirical risks, equality constraints
//!   and Lagrangian states.
//! - [`certifier`]: regime classification and (alpha, gamma, tau) estimation.
//! - [`solvers`]: exact PCA ERM, projected gradient descent on the sphere
//!   with negative-curvature escape, leave-one-out sweeps.
//! - [`stability`]: trial runner, stability/generalization aggregates, bound
//!   chain checks.
//! - [`pca`] / [`ica`]: the two applications.
//! - [`experiments`] / [`config`]: batch experiment runner behind the CLI.

pub mod certifier;
pub mod config;
pub mod experiments;
pub mod ica;
pub mod numerics;
pub mod objective;
pub mod pca;
pub mod solvers;
pub mod stability;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})")]
    EigNonConvergence { sweeps: usize, residual: f64 },
    #[error("LICQ violation: constraint gradients are rank deficient (min Gram eigenvalue {min_eig:.3e})")]
    LicqViolation { min_eig: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("empty effective sample")]
    EmptySample,
    #[error("index {index} out of range for sample of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("point infeasible: |c_{index}(w)| = {violation:.3e} exceeds tolerance")]
    Infeasible { index: usize, violation: f64 },
    #[error("iteration budget of {max_iters} exhausted (gradient norm {grad_norm:.3e}, min curvature {min_curvature:.3e})")]
    IterationBudget {
        max_iters: usize,
        grad_norm: f64,
        min_curvature: f64,
        last_iterate: Vec<f64>,
    },
    #[error("no feasible (tau, gamma, alpha) triple found; worst point had gradient norm {grad_norm:.3e} and min curvature {min_curvature:.3e}")]
    NoFeasibleParams { grad_norm: f64, min_curvature: f64 },
    #[error("solver failed at index {index}: {source}")]
    SolveAt {
        index: usize,
        source: Box<Error>,
    },
    #[error("tensor dimension {dim} exceeds the dense-storage cap of {cap}")]
    TensorDimCap { dim: usize, cap: usize },
    #[error("admissibility precondition violated: gradient norm {grad_norm:.3e} exceeds tau = {tau:.3e}")]
    NotAdmissible { grad_norm: f64, tau: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
