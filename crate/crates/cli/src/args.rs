use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dbini_core::ShapeKind;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "dbini",
    version,
    about = "Front and back depth from normal maps, with depth priors and silhouette coupling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Command {
    /// Render a synthetic scene into a directory.
    Synth(SynthArgs),
    /// Integrate the normal maps of a scene directory.
    Integrate(IntegrateArgs),
    /// Run methods over a suite of synthetic scenes and tabulate errors.
    Bench(BenchArgs),
    /// Turn depth maps into a triangle mesh.
    Mesh(MeshArgs),
    /// Compare a depth map against ground truth.
    Metrics(MetricsArgs),
    /// Re-run the invocation recorded in a run.json.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Integrate(_) => "integrate",
            Command::Bench(_) => "bench",
            Command::Mesh(_) => "mesh",
            Command::Metrics(_) => "metrics",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            Command::Synth(a) => &a.out,
            Command::Integrate(a) => &a.out,
            Command::Bench(a) => &a.out,
            Command::Mesh(a) => &a.out,
            Command::Metrics(a) => &a.out,
            Command::Replay(a) => &a.out,
        }
    }

    pub fn with_out(mut self, dir: PathBuf) -> Self {
        match &mut self {
            Command::Synth(a) => a.out = dir,
            Command::Integrate(a) => a.out = dir,
            Command::Bench(a) => a.out = dir,
            Command::Mesh(a) => a.out = dir,
            Command::Metrics(a) => a.out = dir,
            Command::Replay(a) => a.out = dir,
        }
        self
    }
}

fn parse_shape(s: &str) -> Result<ShapeKind, String> {
    s.parse().map_err(|e: dbini_core::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorArg {
    Exact,
    ErodedOffset,
    Inscribed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bini,
    Dbini,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bini => "bini",
            Method::Dbini => "dbini",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// lambda_d = 1e-4, lambda_s = 1e-6, k = 2, 150 outer iterations.
    Paper,
}

/// How plain BiNI fixes its free depth offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorArg {
    /// Zero mean depth per component.
    ZeroMean,
    /// Mean depth of each sheet's prior.
    PriorMean,
    /// This mean depth per component.
    Value(f64),
}

fn parse_anchor(s: &str) -> Result<AnchorArg, String> {
    match s {
        "zero-mean" => Ok(AnchorArg::ZeroMean),
        "prior-mean" => Ok(AnchorArg::PriorMean),
        _ => s
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(AnchorArg::Value)
            .ok_or_else(|| format!("expected zero-mean, prior-mean or a depth value, got '{s}'")),
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Shape family.
    #[arg(long, value_parser = parse_shape, required_unless_present = "spec")]
    pub shape: Option<ShapeKind>,
    /// Grid resolution (square).
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    /// Pixel pitch in scene units; preset geometry scales with it.
    #[arg(long, default_value_t = 1.0)]
    pub pitch: f64,
    /// Sphere, capsule or plate radius; torus major radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Torus tube radius.
    #[arg(long)]
    pub minor_radius: Option<f64>,
    /// Depth of the shape center; for two spheres, midway between centers.
    #[arg(long)]
    pub depth: Option<f64>,
    /// Plate slope as `dx,dy`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub tilt: Option<Vec<f64>>,
    /// Distance between the plate's two sheets.
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    /// Prior offset for eroded-offset, scene units. Defaults to 0.02 res pitch.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Normal noise standard deviation, degrees.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Eroded-offset prior and 5 degree noise unless overridden.
    #[arg(long)]
    pub benchmark: bool,
    /// Full scene description as JSON (a scene.json or a bare spec).
    #[arg(
        long,
        conflicts_with_all = ["shape", "radius", "minor_radius", "depth", "tilt", "gap", "prior",
                              "delta", "noise", "seed", "benchmark"]
    )]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrateArgs {
    /// Scene directory.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Dbini)]
    pub method: Method,
    #[arg(long, value_enum, conflicts_with_all = ["lambda_d", "lambda_s", "k", "max_iters"])]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Bilateral weight stiffness.
    #[arg(long)]
    pub k: Option<f64>,
    /// Cap on outer reweighting iterations.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative energy change that ends the outer loop.
    #[arg(long)]
    pub energy_tol: Option<f64>,
    #[arg(long)]
    pub cg_tol: Option<f64>,
    #[arg(long)]
    pub cg_max_iters: Option<usize>,
    /// Depth offset for bini: zero-mean, prior-mean or a value.
    #[arg(long, value_parser = parse_anchor)]
    pub anchor: Option<AnchorArg>,
    /// Overrides the pitch in scene.json.
    #[arg(long)]
    pub pitch: Option<f64>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Comma-separated shape names, or "default" for the six-scene suite.
    #[arg(long, default_value = "default")]
    pub scenes: String,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Bini, Method::Dbini])]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value_t = PriorArg::ErodedOffset)]
    pub prior: PriorArg,
    /// Prior offset for eroded-offset. Defaults to 0.02 res.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Normal noise, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub noise: f64,
    /// Sweep values; the default setting when absent.
    #[arg(long, value_delimiter = ',')]
    pub lambda_d: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_s: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_parser = parse_anchor, default_value = "zero-mean")]
    pub anchor: AnchorArg,
    /// Scenes solved concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Skip writing PLY meshes.
    #[arg(long)]
    pub no_meshes: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationArg {
    Front,
    Back,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Ply,
    Obj,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshArgs {
    /// Domain mask PNG.
    #[arg(long)]
    pub mask: PathBuf,
    /// Single depth map to triangulate.
    #[arg(long, required_unless_present = "front", conflicts_with_all = ["front", "back"])]
    pub depth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OrientationArg::Front)]
    pub orientation: OrientationArg,
    /// Front depth map; with --back, zippers both into one closed mesh.
    #[arg(long, requires = "back")]
    pub front: Option<PathBuf>,
    #[arg(long, requires = "front")]
    pub back: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub pitch: f64,
    #[arg(long, value_enum, default_value_t = MeshFormat::Ply)]
    pub format: MeshFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Domain mask PNG.
    #[arg(long)]
    pub mask: PathBuf,
    /// Remove the mean residual first.
    #[arg(long)]
    pub align: bool,
    #[arg(long, default_value_t = 1.0)]
    pub pitch: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A run.json written by an earlier invocation.
    #[arg(long)]
    pub run: PathBuf,
    /// Where the re-run writes its outputs.
    #[arg(long)]
    pub out: PathBuf,
}
