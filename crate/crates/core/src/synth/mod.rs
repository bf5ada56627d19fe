//! Analytic test scenes: ground-truth depth sheets, normals and priors,
//! normal-noise injection, and a dense reference solver.

mod noise;
mod oracle;
mod scene;

pub use noise::{angular_deviation_deg, perturb_normals};
pub use oracle::{dense_oracle_solve, OracleSolution, ORACLE_MAX_UNKNOWNS};
pub use scene::{
    default_suite, erode, generate, pixel_position, Ball, PriorKind, SceneBundle, SceneSpec,
    Shape, ShapeKind, GRAZING_NZ, INSCRIBED_SCALE, PRIOR_EROSION,
};
