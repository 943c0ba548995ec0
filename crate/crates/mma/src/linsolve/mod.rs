//! Numerical kernels: a dependency-free LP solver and a min-cost-flow solver.

pub mod lp;
pub mod mcf;

pub use lp::{solve_lp, LpError, LpOutcome, LpProblem, RowOp, Sense, SparseRow, FEAS_TOL};
pub use mcf::{solve_mcf, McfArc, McfError, McfFlow, McfProblem};
