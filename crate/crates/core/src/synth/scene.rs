use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::perturb_normals;
use crate::error::{Error, Result};
use crate::field::{build_domain, Direction, DomainMask, GridShape, ScalarField2D, VectorField2D};
use crate::solver::DbiniProblem;

/// Hits whose `|n_z|` falls below this are treated as misses, keeping
/// grazing pixels out of the domain.
pub const GRAZING_NZ: f64 = 1e-3;

/// Pixels removed from the prior domain by the eroded prior.
pub const PRIOR_EROSION: usize = 2;

/// Scale applied to the shape that builds the inscribed prior.
pub const INSCRIBED_SCALE: f64 = 0.85;

/// A ball, used by the occlusion scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Analytic geometry. Lateral coordinates are in scene units measured from
/// the grid center (`x` right, `y` down); depths grow away from the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// A plate over a disk footprint: front sheet
    /// `depth + tilt·(x, y)`, back sheet `gap` behind it.
    TiltedPlane {
        center: [f64; 2],
        radius: f64,
        depth: f64,
        tilt: [f64; 2],
        gap: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
    },
    /// Segment `start..end` at constant `depth`, swept by `radius`.
    Capsule {
        start: [f64; 2],
        end: [f64; 2],
        depth: f64,
        radius: f64,
    },
    /// Axis along the viewing direction, so the footprint is an annulus.
    Torus {
        center: [f64; 3],
        major_radius: f64,
        minor_radius: f64,
    },
    /// `near` partly hides `far`.
    TwoSpheresOccluding { near: Ball, far: Ball },
    /// A frontal rectangular board with a rectangular slab raised `height`
    /// toward the camera; the back is flat, `thickness` behind the board.
    StepRelief {
        half_size: [f64; 2],
        depth: f64,
        slab_center: [f64; 2],
        slab_half_size: [f64; 2],
        height: f64,
        thickness: f64,
    },
}

/// Shape families, for presets and the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    TiltedPlane,
    Sphere,
    Ellipsoid,
    Capsule,
    Torus,
    TwoSpheresOccluding,
    StepRelief,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 7] = [
        ShapeKind::TiltedPlane,
        ShapeKind::Sphere,
        ShapeKind::Ellipsoid,
        ShapeKind::Capsule,
        ShapeKind::Torus,
        ShapeKind::TwoSpheresOccluding,
        ShapeKind::StepRelief,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::TiltedPlane => "tilted_plane",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Capsule => "capsule",
            ShapeKind::Torus => "torus",
            ShapeKind::TwoSpheresOccluding => "two_spheres_occluding",
            ShapeKind::StepRelief => "step_relief",
        }
    }

    /// True when the footprint is simply connected.
    pub fn simply_connected(&self) -> bool {
        !matches!(self, ShapeKind::Torus)
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown shape '{s}'")))
    }
}

/// How the coarse prior is derived from the ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// Ground truth on all of `Ω_n`.
    Exact,
    /// Ground truth pushed `delta` away from the camera, on `Ω_n` eroded
    /// by [`PRIOR_EROSION`] pixels.
    ErodedOffset { delta: f64 },
    /// The sheets of the same shape shrunk by [`INSCRIBED_SCALE`].
    InscribedPrimitive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub grid: GridShape,
    pub prior: PriorKind,
    /// Standard deviation of the normal perturbation angle, degrees.
    pub noise_deg: f64,
    pub seed: u64,
}

/// Ground truth and inputs of one synthetic scene.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub normals_front: VectorField2D,
    pub normals_back: VectorField2D,
    pub depth_front_gt: ScalarField2D,
    pub depth_back_gt: ScalarField2D,
    pub prior_front: ScalarField2D,
    pub prior_back: ScalarField2D,
    pub domain: DomainMask,
}

impl SceneBundle {
    pub fn problem(&self) -> Result<DbiniProblem> {
        DbiniProblem::new(
            self.normals_front.clone(),
            self.normals_back.clone(),
            self.prior_front.clone(),
            self.prior_back.clone(),
            self.domain.clone(),
        )
    }
}

/// Both sheets along one viewing ray.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Hit {
    front: f64,
    back: f64,
    n_front: [f64; 3],
    n_back: [f64; 3],
}

/// Hit on a round cross-section: `d` is the lateral offset from the closest
/// point of the core (point, segment, or circle) sitting at depth `depth`.
/// Normals point into the solid, which gives `n_z > 0` on the front sheet.
fn round_hit(d: [f64; 2], depth: f64, radius: f64) -> Option<Hit> {
    let s2 = radius * radius - d[0] * d[0] - d[1] * d[1];
    if s2 <= 0.0 {
        return None;
    }
    let s = s2.sqrt();
    if s / radius < GRAZING_NZ {
        return None;
    }
    Some(Hit {
        front: depth - s,
        back: depth + s,
        n_front: [-d[0] / radius, -d[1] / radius, s / radius],
        n_back: [-d[0] / radius, -d[1] / radius, -s / radius],
    })
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / len, v[1] / len, v[2] / len]
}

impl Shape {
    /// Default geometry of `kind` for a `res`-pixel square grid of unit pitch.
    /// Sizes scale with the grid less a margin, so every preset fits from
    /// small grids up.
    pub fn preset(kind: ShapeKind, res: usize) -> Shape {
        let r = (res as f64 - 3.0).max(1.0);
        let depth = 2.0 * r;
        match kind {
            ShapeKind::TiltedPlane => Shape::TiltedPlane {
                center: [0.0, 0.0],
                radius: 0.4 * r,
                depth,
                tilt: [0.3, -0.2],
                gap: 0.0,
            },
            ShapeKind::Sphere => Shape::Sphere {
                center: [0.0, 0.0, depth],
                radius: 0.35 * r,
            },
            ShapeKind::Ellipsoid => Shape::Ellipsoid {
                center: [0.0, 0.0, depth],
                radii: [0.4 * r, 0.28 * r, 0.2 * r],
            },
            ShapeKind::Capsule => Shape::Capsule {
                start: [-0.22 * r, -0.12 * r],
                end: [0.22 * r, 0.12 * r],
                depth,
                radius: 0.15 * r,
            },
            ShapeKind::Torus => Shape::Torus {
                center: [0.0, 0.0, depth],
                major_radius: 0.28 * r,
                minor_radius: 0.12 * r,
            },
            ShapeKind::TwoSpheresOccluding => Shape::TwoSpheresOccluding {
                near: Ball {
                    center: [-0.12 * r, -0.04 * r, depth - 0.1 * r],
                    radius: 0.22 * r,
                },
                far: Ball {
                    center: [0.14 * r, 0.06 * r, depth + 0.1 * r],
                    radius: 0.25 * r,
                },
            },
            ShapeKind::StepRelief => Shape::StepRelief {
                half_size: [0.4 * r, 0.3 * r],
                depth,
                slab_center: [0.05 * r, 0.0],
                slab_half_size: [0.15 * r, 0.12 * r],
                height: 0.08 * r,
                thickness: 0.2 * r,
            },
        }
    }

    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::TiltedPlane { .. } => ShapeKind::TiltedPlane,
            Shape::Sphere { .. } => ShapeKind::Sphere,
            Shape::Ellipsoid { .. } => ShapeKind::Ellipsoid,
            Shape::Capsule { .. } => ShapeKind::Capsule,
            Shape::Torus { .. } => ShapeKind::Torus,
            Shape::TwoSpheresOccluding { .. } => ShapeKind::TwoSpheresOccluding,
            Shape::StepRelief { .. } => ShapeKind::StepRelief,
        }
    }

    /// Every length multiplied by `f`, about the origin. Used to carry a
    /// unit-pitch preset onto a grid of pitch `f`.
    pub fn scaled(&self, f: f64) -> Shape {
        let s2 = |p: [f64; 2]| p.map(|c| c * f);
        let s3 = |p: [f64; 3]| p.map(|c| c * f);
        match self.clone() {
            Shape::TiltedPlane { center, radius, depth, tilt, gap } => Shape::TiltedPlane {
                center: s2(center),
                radius: radius * f,
                depth: depth * f,
                tilt,
                gap: gap * f,
            },
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: s3(center),
                radius: radius * f,
            },
            Shape::Ellipsoid { center, radii } => Shape::Ellipsoid {
                center: s3(center),
                radii: s3(radii),
            },
            Shape::Capsule { start, end, depth, radius } => Shape::Capsule {
                start: s2(start),
                end: s2(end),
                depth: depth * f,
                radius: radius * f,
            },
            Shape::Torus { center, major_radius, minor_radius } => Shape::Torus {
                center: s3(center),
                major_radius: major_radius * f,
                minor_radius: minor_radius * f,
            },
            Shape::TwoSpheresOccluding { near, far } => Shape::TwoSpheresOccluding {
                near: Ball { center: s3(near.center), radius: near.radius * f },
                far: Ball { center: s3(far.center), radius: far.radius * f },
            },
            Shape::StepRelief { half_size, depth, slab_center, slab_half_size, height, thickness } => {
                Shape::StepRelief {
                    half_size: s2(half_size),
                    depth: depth * f,
                    slab_center: s2(slab_center),
                    slab_half_size: s2(slab_half_size),
                    height: height * f,
                    thickness: thickness * f,
                }
            }
        }
    }

    /// Moved `dz` away from the camera.
    pub fn shifted(&self, dz: f64) -> Shape {
        let mut out = self.clone();
        match &mut out {
            Shape::TiltedPlane { depth, .. }
            | Shape::Capsule { depth, .. }
            | Shape::StepRelief { depth, .. } => *depth += dz,
            Shape::Sphere { center, .. } | Shape::Ellipsoid { center, .. } | Shape::Torus { center, .. } => {
                center[2] += dz
            }
            Shape::TwoSpheresOccluding { near, far } => {
                near.center[2] += dz;
                far.center[2] += dz;
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            Shape::TiltedPlane { radius, gap, .. } => {
                positive("radius", *radius)?;
                if !(*gap >= 0.0) {
                    return Err(Error::InvalidParameter(format!("gap must be >= 0, got {gap}")));
                }
            }
            Shape::Sphere { radius, .. } => positive("radius", *radius)?,
            Shape::Ellipsoid { radii, .. } => radii.iter().try_for_each(|&r| positive("radius", r))?,
            Shape::Capsule { radius, .. } => positive("radius", *radius)?,
            Shape::Torus {
                major_radius,
                minor_radius,
                ..
            } => {
                positive("minor radius", *minor_radius)?;
                if !(major_radius > minor_radius) {
                    return Err(Error::InvalidParameter(
                        "torus major radius must exceed the minor radius".into(),
                    ));
                }
            }
            Shape::TwoSpheresOccluding { near, far } => {
                positive("near radius", near.radius)?;
                positive("far radius", far.radius)?;
            }
            Shape::StepRelief {
                half_size,
                slab_half_size,
                height,
                thickness,
                ..
            } => {
                half_size.iter().try_for_each(|&h| positive("half size", h))?;
                slab_half_size
                    .iter()
                    .try_for_each(|&h| positive("slab half size", h))?;
                positive("thickness", *thickness)?;
                if !(*height >= 0.0) {
                    return Err(Error::InvalidParameter("height must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Lateral bounding box `[x_min, x_max, y_min, y_max]` of the footprint.
    fn footprint(&self) -> [f64; 4] {
        let around = |c: [f64; 2], rx: f64, ry: f64| [c[0] - rx, c[0] + rx, c[1] - ry, c[1] + ry];
        match self {
            Shape::TiltedPlane { center, radius, .. } => around(*center, *radius, *radius),
            Shape::Sphere { center, radius } => around([center[0], center[1]], *radius, *radius),
            Shape::Ellipsoid { center, radii } => around([center[0], center[1]], radii[0], radii[1]),
            Shape::Capsule {
                start, end, radius, ..
            } => [
                start[0].min(end[0]) - radius,
                start[0].max(end[0]) + radius,
                start[1].min(end[1]) - radius,
                start[1].max(end[1]) + radius,
            ],
            Shape::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let r = major_radius + minor_radius;
                around([center[0], center[1]], r, r)
            }
            Shape::TwoSpheresOccluding { near, far } => {
                let a = around([near.center[0], near.center[1]], near.radius, near.radius);
                let b = around([far.center[0], far.center[1]], far.radius, far.radius);
                [a[0].min(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].max(b[3])]
            }
            Shape::StepRelief { half_size, .. } => around([0.0, 0.0], half_size[0], half_size[1]),
        }
    }

    fn hit(&self, x: f64, y: f64) -> Option<Hit> {
        match *self {
            Shape::TiltedPlane {
                center,
                radius,
                depth,
                tilt,
                gap,
            } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                if dx * dx + dy * dy >= radius * radius {
                    return None;
                }
                let front = depth + tilt[0] * dx + tilt[1] * dy;
                let n = normalize([-tilt[0], -tilt[1], 1.0]);
                Some(Hit {
                    front,
                    back: front + gap,
                    n_front: n,
                    n_back: [-n[0], -n[1], -n[2]],
                })
            }
            Shape::Sphere { center, radius } => {
                round_hit([x - center[0], y - center[1]], center[2], radius)
            }
            Shape::Ellipsoid { center, radii } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let q = (dx / radii[0]).powi(2) + (dy / radii[1]).powi(2);
                if q >= 1.0 {
                    return None;
                }
                let t = (1.0 - q).sqrt();
                let gx = dx / (radii[0] * radii[0]);
                let gy = dy / (radii[1] * radii[1]);
                let gz = t / radii[2];
                let n_front = normalize([-gx, -gy, gz]);
                if n_front[2] < GRAZING_NZ {
                    return None;
                }
                Some(Hit {
                    front: center[2] - radii[2] * t,
                    back: center[2] + radii[2] * t,
                    n_front,
                    n_back: [n_front[0], n_front[1], -n_front[2]],
                })
            }
            Shape::Capsule {
                start,
                end,
                depth,
                radius,
            } => {
                let seg = [end[0] - start[0], end[1] - start[1]];
                let len2 = seg[0] * seg[0] + seg[1] * seg[1];
                let rel = [x - start[0], y - start[1]];
                let t = if len2 > 0.0 {
                    ((rel[0] * seg[0] + rel[1] * seg[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                round_hit([rel[0] - t * seg[0], rel[1] - t * seg[1]], depth, radius)
            }
            Shape::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let rho = (dx * dx + dy * dy).sqrt();
                if rho == 0.0 {
                    return None;
                }
                let scale = 1.0 - major_radius / rho;
                round_hit([dx * scale, dy * scale], center[2], minor_radius)
            }
            Shape::TwoSpheresOccluding { near, far } => {
                let a = round_hit([x - near.center[0], y - near.center[1]], near.center[2], near.radius);
                let b = round_hit([x - far.center[0], y - far.center[1]], far.center[2], far.radius);
                match (a, b) {
                    (Some(a), Some(b)) => {
                        let (front, n_front) = if a.front <= b.front {
                            (a.front, a.n_front)
                        } else {
                            (b.front, b.n_front)
                        };
                        let (back, n_back) = if a.back >= b.back {
                            (a.back, a.n_back)
                        } else {
                            (b.back, b.n_back)
                        };
                        Some(Hit {
                            front,
                            back,
                            n_front,
                            n_back,
                        })
                    }
                    (a, b) => a.or(b),
                }
            }
            Shape::StepRelief {
                half_size,
                depth,
                slab_center,
                slab_half_size,
                height,
                thickness,
            } => {
                if x.abs() >= half_size[0] || y.abs() >= half_size[1] {
                    return None;
                }
                let on_slab = (x - slab_center[0]).abs() < slab_half_size[0]
                    && (y - slab_center[1]).abs() < slab_half_size[1];
                Some(Hit {
                    front: if on_slab { depth - height } else { depth },
                    back: depth + thickness,
                    n_front: [0.0, 0.0, 1.0],
                    n_back: [0.0, 0.0, -1.0],
                })
            }
        }
    }

    /// The same shape shrunk about its own center, used as a coarse prior.
    fn inscribed(&self, s: f64) -> Shape {
        let mut out = self.clone();
        match &mut out {
            Shape::TiltedPlane { radius, .. } => *radius *= s,
            Shape::Sphere { radius, .. } => *radius *= s,
            Shape::Ellipsoid { radii, .. } => radii.iter_mut().for_each(|r| *r *= s),
            Shape::Capsule { radius, .. } => *radius *= s,
            Shape::Torus { minor_radius, .. } => *minor_radius *= s,
            Shape::TwoSpheresOccluding { near, far } => {
                near.radius *= s;
                far.radius *= s;
            }
            Shape::StepRelief { height, .. } => *height = 0.0,
        }
        out
    }
}

impl SceneSpec {
    /// Default scene of `kind` on a `res`² unit-pitch grid with an exact prior
    /// and no noise.
    pub fn preset(kind: ShapeKind, res: usize) -> Result<SceneSpec> {
        Ok(SceneSpec {
            shape: Shape::preset(kind, res),
            grid: GridShape::square(res)?,
            prior: PriorKind::Exact,
            noise_deg: 0.0,
            seed: 0,
        })
    }

    /// Benchmark configuration: eroded, offset prior and 5° normal noise.
    pub fn benchmark(kind: ShapeKind, res: usize, seed: u64) -> Result<SceneSpec> {
        Ok(SceneSpec {
            prior: PriorKind::ErodedOffset {
                delta: 0.02 * res as f64,
            },
            noise_deg: 5.0,
            seed,
            ..SceneSpec::preset(kind, res)?
        })
    }
}

/// The six scene families of the default benchmark suite.
pub fn default_suite() -> [ShapeKind; 6] {
    [
        ShapeKind::Sphere,
        ShapeKind::Ellipsoid,
        ShapeKind::Capsule,
        ShapeKind::Torus,
        ShapeKind::TwoSpheresOccluding,
        ShapeKind::StepRelief,
    ]
}

/// Lateral scene coordinates of a pixel center.
pub fn pixel_position(grid: &GridShape, u: usize, v: usize) -> (f64, f64) {
    let cx = (grid.width() - 1) as f64 / 2.0;
    let cy = (grid.height() - 1) as f64 / 2.0;
    ((u as f64 - cx) * grid.pitch(), (v as f64 - cy) * grid.pitch())
}

struct Sheets {
    front: ScalarField2D,
    back: ScalarField2D,
    n_front: VectorField2D,
    n_back: VectorField2D,
    mask: Vec<bool>,
}

fn trace(shape: &Shape, grid: GridShape) -> Sheets {
    let len = grid.len();
    let mut front = vec![f64::NAN; len];
    let mut back = vec![f64::NAN; len];
    let nan3 = [f64::NAN; 3];
    let mut n_front = vec![nan3; len];
    let mut n_back = vec![nan3; len];
    let mut mask = vec![false; len];
    for p in 0..len {
        let (u, v) = grid.coords(p);
        let (x, y) = pixel_position(&grid, u, v);
        if let Some(h) = shape.hit(x, y) {
            front[p] = h.front;
            back[p] = h.back;
            n_front[p] = h.n_front;
            n_back[p] = h.n_back;
            mask[p] = true;
        }
    }
    Sheets {
        front: ScalarField2D::new(grid, front).unwrap(),
        back: ScalarField2D::new(grid, back).unwrap(),
        n_front: VectorField2D::new(grid, n_front).unwrap(),
        n_back: VectorField2D::new(grid, n_back).unwrap(),
        mask,
    }
}

/// Removes `steps` layers of 4-connected boundary pixels.
pub fn erode(mask: &[bool], grid: GridShape, steps: usize) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for _ in 0..steps {
        cur = (0..grid.len())
            .map(|p| {
                cur[p]
                    && Direction::ALL
                        .iter()
                        .all(|&d| grid.neighbor(p, d).is_some_and(|q| cur[q]))
            })
            .collect();
    }
    cur
}

/// Renders ground truth, inputs, and prior of a scene.
pub fn generate(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.shape.validate()?;
    if !(spec.noise_deg >= 0.0 && spec.noise_deg.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise must be >= 0 degrees, got {}",
            spec.noise_deg
        )));
    }
    let grid = spec.grid;
    let (x0, y0) = pixel_position(&grid, 0, 0);
    let (x1, y1) = pixel_position(&grid, grid.width() - 1, grid.height() - 1);
    let margin = grid.pitch();
    let [fx0, fx1, fy0, fy1] = spec.shape.footprint();
    if fx0 < x0 + margin || fx1 > x1 - margin || fy0 < y0 + margin || fy1 > y1 - margin {
        return Err(Error::SceneOutOfBounds(format!(
            "{} footprint [{fx0:.3}, {fx1:.3}] x [{fy0:.3}, {fy1:.3}] leaves no one-pixel margin \
             inside [{x0:.3}, {x1:.3}] x [{y0:.3}, {y1:.3}]",
            spec.shape.kind()
        )));
    }

    let truth = trace(&spec.shape, grid);
    if !truth.mask.iter().any(|&m| m) {
        return Err(Error::SceneOutOfBounds(format!(
            "{} covers no pixel center",
            spec.shape.kind()
        )));
    }
    for p in (0..grid.len()).filter(|&p| truth.mask[p]) {
        assert!(
            truth.front.values()[p] <= truth.back.values()[p],
            "front sheet behind back sheet at pixel {p}"
        );
    }

    let (omega_z, prior_front, prior_back) = match spec.prior {
        PriorKind::Exact => (truth.mask.clone(), truth.front.clone(), truth.back.clone()),
        PriorKind::ErodedOffset { delta } => {
            let omega_z = erode(&truth.mask, grid, PRIOR_EROSION);
            let shift = |f: &ScalarField2D| {
                ScalarField2D::from_fn(grid, |u, v| {
                    if omega_z[grid.index(u, v)] {
                        f.get(u, v) + delta
                    } else {
                        f64::NAN
                    }
                })
            };
            let (pf, pb) = (shift(&truth.front), shift(&truth.back));
            (omega_z, pf, pb)
        }
        PriorKind::InscribedPrimitive => {
            let inner = trace(&spec.shape.inscribed(INSCRIBED_SCALE), grid);
            let omega_z: Vec<bool> = inner
                .mask
                .iter()
                .zip(&truth.mask)
                .map(|(&a, &b)| a && b)
                .collect();
            (omega_z, inner.front, inner.back)
        }
    };
    let domain = build_domain(&truth.mask, &omega_z, grid)?;

    let (normals_front, normals_back) = if spec.noise_deg > 0.0 {
        (
            perturb_normals(&truth.n_front, spec.noise_deg, spec.seed),
            perturb_normals(&truth.n_back, spec.noise_deg, spec.seed.wrapping_add(1)),
        )
    } else {
        (truth.n_front, truth.n_back)
    };

    Ok(SceneBundle {
        spec: spec.clone(),
        normals_front,
        normals_back,
        depth_front_gt: truth.front,
        depth_back_gt: truth.back,
        prior_front,
        prior_back,
        domain,
    })
}
