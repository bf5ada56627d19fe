use std::fs;

use anyhow::Context;
use dbini_core::io::SceneFile;
use dbini_core::{generate, GridShape, PriorKind, SceneSpec, Shape, ShapeKind};

use crate::args::{Command, PriorArg, SynthArgs};
use crate::error::{CliError, CliResult};
use crate::record::Session;
use crate::scene_dir::write_scene;

const BENCHMARK_NOISE_DEG: f64 = 5.0;
const BENCHMARK_DELTA_PER_PIXEL: f64 = 0.02;

/// Depth the `--depth` flag refers to.
fn reference_depth(shape: &Shape) -> f64 {
    match shape {
        Shape::TiltedPlane { depth, .. } | Shape::Capsule { depth, .. } | Shape::StepRelief { depth, .. } => *depth,
        Shape::Sphere { center, .. } | Shape::Ellipsoid { center, .. } | Shape::Torus { center, .. } => center[2],
        Shape::TwoSpheresOccluding { near, far } => 0.5 * (near.center[2] + far.center[2]),
    }
}

fn not_for(flag: &str, kind: ShapeKind) -> CliError {
    CliError::usage(format!("{flag} does not apply to {kind}; use --spec for full control"))
}

fn apply_overrides(mut shape: Shape, a: &SynthArgs) -> CliResult<Shape> {
    let kind = shape.kind();
    if let Some(r) = a.radius {
        match &mut shape {
            Shape::TiltedPlane { radius, .. } | Shape::Sphere { radius, .. } | Shape::Capsule { radius, .. } => {
                *radius = r
            }
            Shape::Torus { major_radius, .. } => *major_radius = r,
            _ => return Err(not_for("--radius", kind)),
        }
    }
    if let Some(r) = a.minor_radius {
        match &mut shape {
            Shape::Torus { minor_radius, .. } => *minor_radius = r,
            _ => return Err(not_for("--minor-radius", kind)),
        }
    }
    if let Some(t) = &a.tilt {
        let [dx, dy] = t[..] else {
            return Err(CliError::usage(format!("--tilt takes two values, got {}", t.len())));
        };
        match &mut shape {
            Shape::TiltedPlane { tilt, .. } => *tilt = [dx, dy],
            _ => return Err(not_for("--tilt", kind)),
        }
    }
    if let Some(g) = a.gap {
        match &mut shape {
            Shape::TiltedPlane { gap, .. } => *gap = g,
            _ => return Err(not_for("--gap", kind)),
        }
    }
    if let Some(d) = a.depth {
        shape = shape.shifted(d - reference_depth(&shape));
    }
    Ok(shape)
}

/// Scene description from flags: the preset of the shape at this grid,
/// scaled to the pitch, then overridden.
pub fn resolve_spec(a: &SynthArgs) -> CliResult<SceneSpec> {
    if let Some(path) = &a.spec {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if let Ok(file) = serde_json::from_str::<SceneFile>(&text) {
            return Ok(file.spec);
        }
        return serde_json::from_str::<SceneSpec>(&text)
            .map_err(|e| CliError::usage(format!("{}: not a scene description: {e}", path.display())));
    }
    let kind = a.shape.expect("clap requires --shape without --spec");
    let grid = GridShape::new(a.res, a.res, a.pitch)?;
    let shape = apply_overrides(Shape::preset(kind, a.res).scaled(a.pitch), a)?;
    let prior = match a.prior.unwrap_or(if a.benchmark { PriorArg::ErodedOffset } else { PriorArg::Exact }) {
        PriorArg::Exact => PriorKind::Exact,
        PriorArg::Inscribed => PriorKind::InscribedPrimitive,
        PriorArg::ErodedOffset => PriorKind::ErodedOffset {
            delta: a
                .delta
                .unwrap_or(BENCHMARK_DELTA_PER_PIXEL * a.res as f64 * a.pitch),
        },
    };
    if a.delta.is_some() && !matches!(prior, PriorKind::ErodedOffset { .. }) {
        return Err(CliError::usage("--delta needs --prior eroded-offset"));
    }
    Ok(SceneSpec {
        shape,
        grid,
        prior,
        noise_deg: a
            .noise
            .unwrap_or(if a.benchmark { BENCHMARK_NOISE_DEG } else { 0.0 }),
        seed: a.seed.unwrap_or(0),
    })
}

pub fn run(cmd: &Command, a: &SynthArgs, quiet: bool) -> CliResult<()> {
    let spec = resolve_spec(a)?;
    let bundle = generate(&spec)?;
    let mut session = Session::new(&a.out)?.quiet(quiet);
    if let Some(path) = &a.spec {
        session.input(path)?;
    }
    write_scene(&mut session, &bundle)?;
    let g = spec.grid;
    session.log(format!(
        "{} {}x{} pitch={} |omega_n|={} |omega_z|={} noise={} seed={}",
        spec.shape.kind(),
        g.width(),
        g.height(),
        g.pitch(),
        bundle.domain.len(),
        bundle.domain.omega_z().iter().filter(|&&z| z).count(),
        spec.noise_deg,
        spec.seed
    ));
    session.finish(cmd, serde_json::to_value(&spec)?)?;
    Ok(())
}
