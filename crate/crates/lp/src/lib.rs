//! Bounded-variable revised simplex for maximization problems.
//!
//! The engine keeps the basis in "kernel" form: with `k` basic structural
//! columns and `k` tight rows, only the `k x k` submatrix of the constraint
//! matrix has to be factored. Row activities of non-tight rows are basic
//! and never enter the factorization, which keeps iterations cheap for
//! masters with many rows and few columns.
//!
//! Besides primal/dual solutions the engine exposes basis statuses,
//! objective ranging along a direction and a basis adjacency test, which the
//! parametric penalty sweep relies on.

mod basis;
mod error;
mod lu;
mod mps;
mod problem;
mod ranging;
mod simplex;

pub use basis::{adjacent, Basis, VarStatus};
pub use error::LpError;
pub use mps::write_mps;
pub use problem::{Cmp, ColumnSpec, LinearProgram, Row, RowSpec};
pub use ranging::{objective_ranging, RangeInterval};
pub use simplex::{solve, LpEngine, ReferenceEngine, SimplexOptions, SolveResult, Status};
