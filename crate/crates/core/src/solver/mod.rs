//! Sparse storage, Jacobi-preconditioned conjugate gradient, and the
//! reweighting loops for joint (d-BiNI) and single-sheet (BiNI) integration.

mod irls;
mod pcg;
mod sparse;

pub use irls::{
    bini_optimize, dbini_optimize, dbini_optimize_observed, initial_depth, relative_change,
    write_trace_csv, BiniSolution, DbiniProblem, DbiniSolution, GaugeAnchor, IterationRecord,
    IterationState, ENERGY_EPS,
};
pub use pcg::{pcg_solve, CgReport};
pub use sparse::SparseSpd;
