use std::collections::HashMap;

use crate::error::{shape_mismatch, Error, Result};
use crate::field::{DomainMask, ScalarField2D};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Counter-clockwise seen from outside.
    pub faces: Vec<[usize; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl TriangleMesh {
    /// Area-weighted normal (twice the area in length).
    pub fn face_normal(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        cross(sub(b, a), sub(c, a))
    }

    /// Faces per undirected edge, keyed `(min, max)`.
    pub fn edge_face_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge lies on exactly two faces.
    pub fn is_closed(&self) -> bool {
        !self.faces.is_empty() && self.edge_face_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F` over vertices used by some face.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        self.faces.iter().flatten().for_each(|&i| used[i] = true);
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_face_counts().len() as i64 + self.faces.len() as i64
    }

    /// Enclosed volume by the divergence theorem; positive when faces wind
    /// counter-clockwise seen from outside.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                let n = cross(b, c);
                a[0] * n[0] + a[1] * n[1] + a[2] * n[2]
            })
            .sum::<f64>()
            / 6.0
    }

    /// Drops vertices no face uses, keeping the order of the rest.
    pub fn compact(&mut self) {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        self.faces.iter().flatten().for_each(|&i| remap[i] = 0);
        let mut next = 0;
        let mut kept = Vec::with_capacity(self.vertices.len());
        for (i, slot) in remap.iter_mut().enumerate() {
            if *slot == 0 {
                *slot = next;
                next += 1;
                kept.push(self.vertices[i]);
            }
        }
        self.vertices = kept;
        for f in &mut self.faces {
            *f = f.map(|i| remap[i]);
        }
    }
}

/// Which side of the body a depth sheet bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Outward normals face the camera.
    Front,
    /// Outward normals face away from the camera.
    Back,
}

/// One vertex per pixel of `Ω_n` at `(u·pitch, v·pitch, z)`, in unknown
/// order, and two triangles per 2×2 block of domain pixels split along the
/// top-left to bottom-right diagonal.
pub fn depth_to_mesh(
    depth: &ScalarField2D,
    domain: &DomainMask,
    orientation: Orientation,
) -> Result<TriangleMesh> {
    let g = domain.shape();
    if !depth.shape().same_extent(&g) {
        return Err(shape_mismatch(g, depth.shape()));
    }
    let pitch = g.pitch();
    let mut vertices = Vec::with_capacity(domain.len());
    for &p in domain.pixels() {
        let z = depth.values()[p];
        let (u, v) = g.coords(p);
        if !z.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "depth undefined at in-domain pixel ({u}, {v})"
            )));
        }
        vertices.push([u as f64 * pitch, v as f64 * pitch, z]);
    }
    let mut faces = Vec::new();
    for v in 0..g.height() - 1 {
        for u in 0..g.width() - 1 {
            let corners = [g.index(u, v), g.index(u + 1, v), g.index(u, v + 1), g.index(u + 1, v + 1)];
            let Some([tl, tr, bl, br]) = corners
                .iter()
                .map(|&p| domain.index_of(p))
                .collect::<Option<Vec<_>>>()
                .map(|c| [c[0], c[1], c[2], c[3]])
            else {
                continue;
            };
            match orientation {
                Orientation::Front => {
                    faces.push([tl, bl, br]);
                    faces.push([tl, br, tr]);
                }
                Orientation::Back => {
                    faces.push([tl, br, bl]);
                    faces.push([tl, tr, br]);
                }
            }
        }
    }
    Ok(TriangleMesh { vertices, faces })
}
