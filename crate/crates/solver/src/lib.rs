//! Linear and mixed-integer programming engine.
//!
//! [`solve_lp`] runs a bounded revised simplex method on a sparse LU
//! factorized basis. [`solve_mip`] wraps it in a best-bound
//! branch-and-bound search with most-fractional branching, optionally
//! seeded by a partial assignment through [`solve_mip_with_hint`].

mod lu;
mod mip;
mod model;
mod simplex;

pub use mip::{solve_mip, solve_mip_with, solve_mip_with_hint, MipOptions, MipSolution, MipStatus};
pub use model::{LinearProgram, MixedIntegerProgram, Row, RowId, RowSense, Sense, VarId, Variable};
pub use simplex::{solve_lp, solve_lp_with, LpOptions, LpSolution, LpStatus};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("the relaxation is unbounded")]
    UnboundedRelaxation,
}
