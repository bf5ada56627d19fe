//! Pixel-grid containers and the integration domain.
//!
//! Conventions shared by every module:
//!
//! - pixel `(u, v)`: `u` is the column (rightward), `v` the row (downward);
//!   rasters are stored row-major, `index = v * width + u`;
//! - depth `z` grows away from the camera along the viewing axis and is
//!   measured in scene length units;
//! - one pixel step spans `pitch` scene units, so depth slopes are
//!   `Δz / pitch`;
//! - pixels outside a domain carry `NaN` and are never read by the math.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};

/// Smallest accepted `|n_z|` on an in-domain pixel.
pub const N_Z_MIN: f64 = 1e-4;

/// Accepted deviation of `‖n‖` from one.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Grid dimensions plus the physical size of one pixel step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridShape {
    width: usize,
    height: usize,
    pitch: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    width: usize,
    height: usize,
    pitch: f64,
}

impl TryFrom<RawGrid> for GridShape {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        GridShape::new(raw.width, raw.height, raw.pitch)
    }
}

impl From<GridShape> for RawGrid {
    fn from(g: GridShape) -> Self {
        RawGrid {
            width: g.width,
            height: g.height,
            pitch: g.pitch,
        }
    }
}

impl GridShape {
    pub fn new(width: usize, height: usize, pitch: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "pitch must be positive, got {pitch}"
            )));
        }
        Ok(Self {
            width,
            height,
            pitch,
        })
    }

    /// Square grid with unit pitch.
    pub fn square(res: usize) -> Result<Self> {
        Self::new(res, res, 1.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Flat index of the neighbor in `dir`, if it lies on the grid.
    pub fn neighbor(&self, index: usize, dir: Direction) -> Option<usize> {
        let (u, v) = self.coords(index);
        match dir {
            Direction::UPlus if u + 1 < self.width => Some(index + 1),
            Direction::UMinus if u > 0 => Some(index - 1),
            Direction::VPlus if v + 1 < self.height => Some(index + self.width),
            Direction::VMinus if v > 0 => Some(index - self.width),
            _ => None,
        }
    }

    /// Same extent, ignoring pitch.
    pub fn same_extent(&self, other: &GridShape) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check(&self, other: &GridShape) -> Result<()> {
        if self.same_extent(other) {
            Ok(())
        } else {
            Err(shape_mismatch(self, other))
        }
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} (pitch {})", self.width, self.height, self.pitch)
    }
}

/// One of the four one-sided difference directions.
///
/// The discriminant is the row offset inside a pixel's block of four
/// residual rows: `[u+, u-, v+, v-]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    UPlus = 0,
    UMinus = 1,
    VPlus = 2,
    VMinus = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::UPlus,
        Direction::UMinus,
        Direction::VPlus,
        Direction::VMinus,
    ];
}

/// A real value per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField2D {
    shape: GridShape,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(shape_mismatch(
                format!("{} values", shape.len()),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: GridShape, value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..shape.len())
            .map(|i| {
                let (u, v) = shape.coords(i);
                f(u, v)
            })
            .collect();
        Self { shape, values }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[self.shape.index(u, v)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same values on a grid with a different pitch.
    pub fn with_pitch(mut self, pitch: f64) -> Result<Self> {
        self.shape = GridShape::new(self.shape.width, self.shape.height, pitch)?;
        Ok(self)
    }

    pub fn mirror_horizontal(&self) -> Self {
        Self::from_fn(self.shape, |u, v| self.get(self.shape.width - 1 - u, v))
    }
}

/// A normal vector per pixel, camera coordinates `(n_x, n_y, n_z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField2D {
    shape: GridShape,
    vectors: Vec<[f64; 3]>,
}

impl VectorField2D {
    pub fn new(shape: GridShape, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != shape.len() {
            return Err(shape_mismatch(
                format!("{} vectors", shape.len()),
                format!("{} vectors", vectors.len()),
            ));
        }
        Ok(Self { shape, vectors })
    }

    pub fn filled(shape: GridShape, n: [f64; 3]) -> Self {
        Self {
            shape,
            vectors: vec![n; shape.len()],
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn get(&self, u: usize, v: usize) -> [f64; 3] {
        self.vectors[self.shape.index(u, v)]
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.vectors
    }

    pub fn with_pitch(mut self, pitch: f64) -> Result<Self> {
        self.shape = GridShape::new(self.shape.width, self.shape.height, pitch)?;
        Ok(self)
    }

    /// Renormalizes every finite, nonzero vector.
    pub fn normalized(mut self) -> Self {
        for n in &mut self.vectors {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len.is_finite() && len > 0.0 {
                n.iter_mut().for_each(|c| *c /= len);
            }
        }
        self
    }

    /// Checks unit length and `|n_z| >= N_Z_MIN` on every `Ω_n` pixel.
    pub fn validate_on(&self, domain: &DomainMask) -> Result<()> {
        self.shape.check(&domain.shape())?;
        for &p in domain.pixels() {
            let n = self.vectors[p];
            let (u, v) = self.shape.coords(p);
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !len.is_finite() || (len - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::DegenerateNormal {
                    u,
                    v,
                    reason: format!("norm {len} is not unit"),
                });
            }
            if n[2].abs() < N_Z_MIN {
                return Err(Error::DegenerateNormal {
                    u,
                    v,
                    reason: format!("|n_z| = {:e} below {N_Z_MIN:e}", n[2].abs()),
                });
            }
        }
        Ok(())
    }
}

/// Integration domain `Ω_n`, prior domain `Ω_z`, the silhouette `∂Ω_n`,
/// and the row-major bijection between `Ω_n` pixels and unknown indices.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMask {
    shape: GridShape,
    omega_n: Vec<bool>,
    omega_z: Vec<bool>,
    boundary: Vec<bool>,
    index_of: Vec<Option<usize>>,
    pixels: Vec<usize>,
}

impl DomainMask {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// `|Ω_n|`, the number of unknowns per depth sheet.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn omega_n(&self) -> &[bool] {
        &self.omega_n
    }

    pub fn omega_z(&self) -> &[bool] {
        &self.omega_z
    }

    /// Per-pixel silhouette flags.
    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    /// Flat pixel index of every unknown, in unknown order.
    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn pixel(&self, unknown: usize) -> usize {
        self.pixels[unknown]
    }

    pub fn index_of(&self, pixel: usize) -> Option<usize> {
        self.index_of[pixel]
    }

    /// Unknown index of the neighbor of `unknown` in `dir`, if in `Ω_n`.
    pub fn neighbor(&self, unknown: usize, dir: Direction) -> Option<usize> {
        self.shape
            .neighbor(self.pixels[unknown], dir)
            .and_then(|q| self.index_of[q])
    }

    pub fn in_prior(&self, unknown: usize) -> bool {
        self.omega_z[self.pixels[unknown]]
    }

    pub fn on_boundary(&self, unknown: usize) -> bool {
        self.boundary[self.pixels[unknown]]
    }

    pub fn boundary_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| self.boundary[p]).count()
    }

    /// 4-connected components of `Ω_n`: a label per unknown and the count.
    /// Labels are assigned in order of each component's first unknown.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for seed in 0..self.len() {
            if label[seed] != usize::MAX {
                continue;
            }
            label[seed] = count;
            queue.push_back(seed);
            while let Some(i) = queue.pop_front() {
                for dir in Direction::ALL {
                    if let Some(j) = self.neighbor(i, dir) {
                        if label[j] == usize::MAX {
                            label[j] = count;
                            queue.push_back(j);
                        }
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Same domain with a different prior domain.
    pub fn with_prior_domain(&self, omega_z: Vec<bool>) -> Result<Self> {
        build_domain(&self.omega_n, &omega_z, self.shape)
    }
}

/// Builds the domain from raw rasters.
///
/// A pixel is on the silhouette when it is in `Ω_n` and one of its
/// 4-neighbors is outside `Ω_n` or off the grid.
pub fn build_domain(omega_n: &[bool], omega_z: &[bool], shape: GridShape) -> Result<DomainMask> {
    if omega_n.len() != shape.len() {
        return Err(shape_mismatch(
            format!("{} omega_n pixels", shape.len()),
            omega_n.len(),
        ));
    }
    if omega_z.len() != shape.len() {
        return Err(shape_mismatch(
            format!("{} omega_z pixels", shape.len()),
            omega_z.len(),
        ));
    }
    let mut index_of = vec![None; shape.len()];
    let mut pixels = Vec::new();
    for (p, _) in omega_n.iter().enumerate().filter(|(_, &inside)| inside) {
        index_of[p] = Some(pixels.len());
        pixels.push(p);
    }
    if pixels.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let mut boundary = vec![false; shape.len()];
    for &p in &pixels {
        boundary[p] = Direction::ALL
            .iter()
            .any(|&d| shape.neighbor(p, d).is_none_or(|q| !omega_n[q]));
    }
    Ok(DomainMask {
        shape,
        omega_n: omega_n.to_vec(),
        omega_z: omega_z.to_vec(),
        boundary,
        index_of,
        pixels,
    })
}

/// Depth values over `Ω_n`, ordered by the domain's index map.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DepthVector(Vec<f64>);

impl DepthVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for DepthVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DepthVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Gathers `field` over `Ω_n` in unknown order.
pub fn vectorize(field: &ScalarField2D, domain: &DomainMask) -> Result<DepthVector> {
    field.shape.check(&domain.shape)?;
    Ok(DepthVector(
        domain.pixels.iter().map(|&p| field.values[p]).collect(),
    ))
}

/// Scatters `vec` back onto the grid; pixels outside `Ω_n` get `fill`.
pub fn rasterize(vec: &[f64], domain: &DomainMask, fill: f64) -> Result<ScalarField2D> {
    if vec.len() != domain.len() {
        return Err(shape_mismatch(
            format!("{} entries", domain.len()),
            format!("{} entries", vec.len()),
        ));
    }
    let mut values = vec![fill; domain.shape.len()];
    for (&p, &z) in domain.pixels.iter().zip(vec) {
        values[p] = z;
    }
    Ok(ScalarField2D {
        shape: domain.shape,
        values,
    })
}

/// Mirrors a boolean raster left-right.
pub fn mirror_mask(mask: &[bool], shape: GridShape) -> Vec<bool> {
    (0..shape.len())
        .map(|i| {
            let (u, v) = shape.coords(i);
            mask[shape.index(shape.width() - 1 - u, v)]
        })
        .collect()
}
