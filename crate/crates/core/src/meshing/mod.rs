//! Depth maps to triangle meshes, front/back stitching along the
//! silhouette, and depth error metrics.

mod mesh;
mod metrics;
mod zipper;

pub use mesh::{depth_to_mesh, Orientation, TriangleMesh};
pub use metrics::{depth_metrics, inversion_count, max_boundary_gap, max_gradient, DepthMetrics};
pub use zipper::{zipper, ZipperResult, WELD_TOL};
