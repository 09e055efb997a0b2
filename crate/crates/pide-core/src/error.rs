//! Error types shared across the library.

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("adaptive quadrature did not settle within budget: {0}")]
    NonConvergentQuadrature(String),

    #[error("tail moment diverges: {0}")]
    DivergentTail(String),

    #[error("shell count {count} exceeds budget {budget}")]
    ShellBudgetExceeded { count: usize, budget: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("nondegeneracy condition is stated for gradient-independent jumps")]
    GradientDependentKernel,

    #[error("Hessian argument is not symmetric (skew part {0:.3e})")]
    AsymmetricHessian(f64),

    #[error("grid index {index:?} touches the box edge; differentials need interior nodes")]
    IndexOnBoxEdge { index: [usize; 2] },

    #[error("quadrature was built for epsilon {quad_eps} but truncation asks {trunc_eps}")]
    QuadratureMismatch { quad_eps: f64, trunc_eps: f64 },

    #[error("non-finite sample at landing point {point:?}")]
    NonFiniteSample { point: [f64; 2] },

    #[error("integrand fails the L1 stabilization check: {0}")]
    NonIntegrable(String),

    #[error("no Perron bound found below cap {cap}")]
    UnboundedSearch { cap: f64 },

    #[error(
        "no convergence within {} iterations; best residual {:.3e}",
        .0.report.iterations,
        .0.report.residual_sup
    )]
    MaxIterExceeded(Box<crate::solver::BestSoFar>),

    #[error("time step {dt} exceeds the CFL bound {bound}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("comparison hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Expr(#[from] crate::exprlang::ExprError),
}
