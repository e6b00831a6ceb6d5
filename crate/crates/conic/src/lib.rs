//! Block-structured conic programs over products of real symmetric PSD cones
//! and the nonnegative orthant, and a primal-dual interior-point solver for
//! them.
//!
//! Programs are stated in a natural form (equalities and one-sided
//! inequalities over PSD blocks and nonnegative scalars) by [`ConicProgram`]
//! and solved by [`solve`]. Internally the solver works on the homogeneous
//! self-dual embedding of the standard-form problem, so infeasible programs
//! terminate with a Farkas-type certificate instead of diverging.

mod error;
mod export;
mod program;
mod schur;
mod solver;

pub use error::ConicError;
pub use export::{read_sparse_text, write_sparse_text};
pub use program::{Constraint, ConstraintKind, ConicProgram, LinearExpr, PsdBlock, SymSparse};
pub use solver::{solve, IterationInfo, Residuals, SolverConfig, SolverResult, SolverStatus};
