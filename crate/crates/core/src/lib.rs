//! Joint front/back normal integration with depth priors and silhouette
//! coupling, plus a single-sheet bilateral baseline, synthetic scenes,
//! meshing, and file formats.
//!
//! Conventions: pixel `u` grows rightward and `v` downward, depth `z` grows
//! away from the camera. Depths are in scene units; `GridShape::pitch`
//! gives the scene length of one pixel step.

pub mod assembly;
pub mod error;
pub mod field;
pub mod io;
pub mod meshing;
pub mod solver;
pub mod synth;

pub use assembly::{
    assemble_bini, assemble_joint_system, bilateral_weights, build_prior_mask,
    build_silhouette_coupling, energy, energy_terms, BilateralWeights, BiniOperator,
    EnergyTerms, Hyperparameters, JointOperators, JointSystem,
};
pub use error::{Error, Result};
pub use field::{
    build_domain, rasterize, vectorize, DepthVector, Direction, DomainMask, GridShape,
    ScalarField2D, VectorField2D,
};
pub use solver::{
    bini_optimize, dbini_optimize, pcg_solve, BiniSolution, CgReport, DbiniProblem,
    DbiniSolution, GaugeAnchor, SparseSpd,
};
pub use synth::{generate, perturb_normals, PriorKind, SceneBundle, SceneSpec, Shape, ShapeKind};
pub use meshing::{depth_metrics, depth_to_mesh, zipper, DepthMetrics, Orientation, TriangleMesh};
