//! Numerical kernels for degenerate elliptic and parabolic integro-differential
//! equations driven by Lévy-type jump operators.
//!
//! The library is organized around the pieces of the problem
//!
//! ```text
//!     F(x, u, ∇u, ∇²u) + sup_i G_i( -I_i[u](x) ) = 0   in Ω,
//!     u = g                                             on Ω^c,
//! ```
//!
//! where each `I_i` is a Lévy operator with jump map `β_i(x, p, z)` and Lévy
//! measure `dq_i(z)`:
//!
//! * [`measure`] — Lévy measures, moment formulas and annular quadratures,
//! * [`kernel`] — jump maps `β` and sampled validators for their growth,
//!   Lipschitz and nondegeneracy conditions,
//! * [`local_op`] — the local operator `F` and the scalar map `G`,
//! * [`exprlang`] — the small expression language used for data functions,
//! * [`grid`] — uniform grids, exterior Dirichlet extension and differentials,
//! * [`nonlocal`] — evaluation of `I[u]` in split (grid) and smooth forms,
//! * [`solver`] — monotone explicit marching for the stationary, evolutionary
//!   and finite sup-of-operators problems,
//! * [`verify`] — sub/supersolution classification and comparison checks,
//! * [`mc`] — a jump-process Monte Carlo cross-validator for linear instances.

pub mod error;
pub mod exprlang;
pub mod grid;
pub mod kernel;
pub mod local_op;
pub mod mc;
pub mod measure;
pub mod nonlocal;
pub mod quad1d;
pub(crate) mod sampling;
pub mod solver;
pub mod verify;

pub use error::{CoreError, Result};
pub use exprlang::Expr;
pub use grid::{Differentials, Domain, GridField, OmegaShape};
pub use kernel::JumpKernel;
pub use local_op::{LocalOperator, NonlocalScalarMap};
pub use measure::{AnnularQuadrature, LevyMeasure, MeasureFamily};
pub use nonlocal::{OperatorValue, TruncationParams, TruncationSign};
pub use solver::{PerronBounds, ProblemSpec, SolverConfig, SolverReport};
pub use verify::{Classification, Verdict, WeightFunction};

/// Points and vectors live in R^N with N ∈ {1, 2}; the second slot is unused
/// (and kept at zero) for one-dimensional problems.
pub const MAX_DIM: usize = 2;

/// A point or vector in R^N, N ≤ [`MAX_DIM`].
pub type VecN = [f64; MAX_DIM];

/// A (symmetric, where documented) N×N matrix, N ≤ [`MAX_DIM`].
pub type MatN = [[f64; MAX_DIM]; MAX_DIM];

pub(crate) fn dot(a: &VecN, b: &VecN, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        s += a[k] * b[k];
    }
    s
}

pub(crate) fn norm(a: &VecN, dim: usize) -> f64 {
    dot(a, a, dim).sqrt()
}

/// ⟨X a, a⟩ for a symmetric matrix X.
pub(crate) fn quad_form(x: &MatN, a: &VecN, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += x[i][j] * a[i] * a[j];
        }
    }
    s
}

pub(crate) fn zero_vec() -> VecN {
    [0.0; MAX_DIM]
}

pub(crate) fn zero_mat() -> MatN {
    [[0.0; MAX_DIM]; MAX_DIM]
}
