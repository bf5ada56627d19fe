use std::collections::{BTreeMap, HashSet};

use super::TriangleMesh;
use crate::error::{shape_mismatch, Result};
use crate::field::DomainMask;

/// Boundary front/back vertices closer than this many pitches in depth are
/// merged into one.
pub const WELD_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ZipperResult {
    pub mesh: TriangleMesh,
    /// Every edge is shared by exactly two faces.
    pub watertight: bool,
    /// Pixels of `Ω_n` where the front sheet lies behind the back sheet.
    pub inversion_count: usize,
    /// Boundary loops that were stitched.
    pub loops: usize,
    pub welded: usize,
}

/// Directed boundary edges of `mesh`, chained into loops. Starts at the
/// smallest unused edge and always takes the smallest unused continuation,
/// so the order is deterministic.
fn boundary_loops(mesh: &TriangleMesh) -> Vec<Vec<(usize, usize)>> {
    let directed: HashSet<(usize, usize)> = mesh
        .faces
        .iter()
        .flat_map(|f| (0..3).map(move |k| (f[k], f[(k + 1) % 3])))
        .collect();
    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in &directed {
        if !directed.contains(&(b, a)) {
            outgoing.entry(a).or_default().push(b);
        }
    }
    for ends in outgoing.values_mut() {
        ends.sort_unstable();
        ends.reverse();
    }
    let mut loops = Vec::new();
    while let Some((&start, _)) = outgoing.iter().find(|(_, ends)| !ends.is_empty()) {
        let mut chain = Vec::new();
        let mut a = start;
        while let Some(b) = outgoing.get_mut(&a).and_then(|ends| ends.pop()) {
            chain.push((a, b));
            a = b;
        }
        loops.push(chain);
    }
    loops
}

/// Joins a front mesh and a back mesh built from the same domain into one
/// surface by strips along the front boundary loops. Boundary vertices whose
/// two depths coincide are welded. Pixels with the sheets in the wrong order
/// are bridged anyway and counted.
///
/// Meshes of a domain with holes or pinch points are stitched as far as the
/// boundary allows; `watertight` reports the outcome of the edge check.
pub fn zipper(front: &TriangleMesh, back: &TriangleMesh, domain: &DomainMask) -> Result<ZipperResult> {
    let n = domain.len();
    if front.vertices.len() != n || back.vertices.len() != n {
        return Err(shape_mismatch(
            format!("{n} vertices per sheet"),
            format!("front {} / back {}", front.vertices.len(), back.vertices.len()),
        ));
    }
    let inversion_count = (0..n)
        .filter(|&i| front.vertices[i][2] > back.vertices[i][2])
        .count();
    let tol = WELD_TOL * domain.shape().pitch();

    let loops = boundary_loops(front);
    // Back vertex i becomes n + i unless welded onto front vertex i.
    let mut back_index: Vec<usize> = (n..2 * n).collect();
    let mut welded = 0;
    for &(a, _) in loops.iter().flatten() {
        if back_index[a] != a && (front.vertices[a][2] - back.vertices[a][2]).abs() <= tol {
            back_index[a] = a;
            welded += 1;
        }
    }

    let mut vertices = front.vertices.clone();
    vertices.extend_from_slice(&back.vertices);
    let mut faces = front.faces.clone();
    faces.extend(back.faces.iter().map(|f| f.map(|i| back_index[i])));
    for &(a, b) in loops.iter().flatten() {
        let (a2, b2) = (back_index[a], back_index[b]);
        faces.push([b, a, a2]);
        faces.push([b, a2, b2]);
    }
    faces.retain(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2]);

    let mut mesh = TriangleMesh { vertices, faces };
    mesh.compact();
    Ok(ZipperResult {
        watertight: mesh.is_closed(),
        mesh,
        inversion_count,
        loops: loops.len(),
        welded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_domain, GridShape, ScalarField2D};
    use crate::meshing::{depth_to_mesh, Orientation};
    use crate::synth::{generate, SceneSpec, Shape, ShapeKind};

    fn sheets(front: &ScalarField2D, back: &ScalarField2D, d: &DomainMask) -> ZipperResult {
        let f = depth_to_mesh(front, d, Orientation::Front).unwrap();
        let b = depth_to_mesh(back, d, Orientation::Back).unwrap();
        zipper(&f, &b, d).unwrap()
    }

    #[test]
    fn parallel_planes_over_a_disk_close_into_a_sphere() {
        let spec = SceneSpec {
            shape: Shape::TiltedPlane {
                center: [0.0, 0.0],
                radius: 12.0,
                depth: 40.0,
                tilt: [0.0, 0.0],
                gap: 3.0,
            },
            ..SceneSpec::preset(ShapeKind::TiltedPlane, 32).unwrap()
        };
        let b = generate(&spec).unwrap();
        let z = sheets(&b.depth_front_gt, &b.depth_back_gt, &b.domain);
        assert!(z.watertight);
        assert_eq!(z.mesh.euler_characteristic(), 2);
        assert_eq!(z.loops, 1);
        assert_eq!(z.inversion_count, 0);
        assert!(z.mesh.signed_volume() > 0.0);
    }

    #[test]
    fn touching_sheets_are_welded() {
        let b = generate(&SceneSpec::preset(ShapeKind::TiltedPlane, 24).unwrap()).unwrap();
        let z = sheets(&b.depth_front_gt, &b.depth_back_gt, &b.domain);
        assert!(z.welded > 0);
        assert!(z.mesh.faces.iter().all(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2]));
    }

    #[test]
    fn analytic_sphere_closes_near_the_true_volume() {
        let spec = SceneSpec::preset(ShapeKind::Sphere, 128).unwrap();
        let b = generate(&spec).unwrap();
        let Shape::Sphere { radius, .. } = spec.shape else { unreachable!() };
        let z = sheets(&b.depth_front_gt, &b.depth_back_gt, &b.domain);
        assert!(z.watertight);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
        assert!((z.mesh.signed_volume() - exact).abs() < 0.05 * exact);
    }

    #[test]
    fn torus_stitches_both_loops() {
        let b = generate(&SceneSpec::preset(ShapeKind::Torus, 64).unwrap()).unwrap();
        let z = sheets(&b.depth_front_gt, &b.depth_back_gt, &b.domain);
        assert_eq!(z.loops, 2);
        assert!(z.watertight);
        assert_eq!(z.mesh.euler_characteristic(), 0);
    }

    #[test]
    fn inverted_pixels_are_counted() {
        let g = GridShape::square(4).unwrap();
        let d = build_domain(&[true; 16], &[true; 16], g).unwrap();
        let front = ScalarField2D::from_fn(g, |u, _| if u == 0 { 5.0 } else { 1.0 });
        let back = ScalarField2D::filled(g, 2.0);
        let z = sheets(&front, &back, &d);
        assert_eq!(z.inversion_count, 4);
        assert!(z.watertight);
    }

    #[test]
    fn single_pixel_is_not_watertight() {
        let g = GridShape::square(3).unwrap();
        let mut m = [false; 9];
        m[4] = true;
        let d = build_domain(&m, &m, g).unwrap();
        let z = sheets(&ScalarField2D::filled(g, 1.0), &ScalarField2D::filled(g, 2.0), &d);
        assert!(!z.watertight);
        assert!(z.mesh.faces.is_empty());
    }
}
