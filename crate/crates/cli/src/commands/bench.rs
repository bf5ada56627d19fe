use std::cmp::Ordering;
use std::time::Instant;

use anyhow::anyhow;
use dbini_core::io::save_ply;
use dbini_core::synth::default_suite;
use dbini_core::{generate, Hyperparameters, PriorKind, SceneBundle, SceneSpec, ShapeKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::solve::{build_meshes, solve_bini, solve_dbini, Diagnostics, Estimate, SheetErrors};
use crate::args::{BenchArgs, Command, Method, PriorArg};
use crate::error::{CliError, CliResult};
use crate::record::Session;

pub const BENCH_CSV: &str = "bench.csv";
pub const TIMING_CSV: &str = "timing.csv";

/// Scene kinds named by `--scenes`.
pub fn parse_scenes(list: &str) -> CliResult<Vec<ShapeKind>> {
    let mut kinds = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "default" {
            kinds.extend(default_suite());
        } else {
            kinds.push(name.parse().map_err(|e: dbini_core::Error| CliError::usage(e.to_string()))?);
        }
    }
    if kinds.is_empty() {
        return Err(CliError::usage("bench needs at least one scene"));
    }
    Ok(kinds)
}

/// One hyperparameter setting of the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Point {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub k: f64,
}

impl Point {
    fn cmp(&self, other: &Point) -> Ordering {
        self.lambda_d
            .total_cmp(&other.lambda_d)
            .then(self.lambda_s.total_cmp(&other.lambda_s))
            .then(self.k.total_cmp(&other.k))
    }
}

/// Sweep grid per method. BiNI has no prior or silhouette term, so only `k`
/// varies for it and its lambdas are reported as zero.
fn sweep(a: &BenchArgs, method: Method) -> Vec<Point> {
    let d = Hyperparameters::default();
    let or = |v: &Vec<f64>, x: f64| if v.is_empty() { vec![x] } else { v.clone() };
    let ks = or(&a.k, d.k);
    let mut points = Vec::new();
    match method {
        Method::Dbini => {
            for &lambda_d in &or(&a.lambda_d, d.lambda_d) {
                for &lambda_s in &or(&a.lambda_s, d.lambda_s) {
                    for &k in &ks {
                        points.push(Point { lambda_d, lambda_s, k });
                    }
                }
            }
        }
        Method::Bini => points.extend(ks.iter().map(|&k| Point { lambda_d: 0.0, lambda_s: 0.0, k })),
    }
    points.sort_by(Point::cmp);
    points.dedup();
    points
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Row {
    pub scene: String,
    pub seed: Option<u64>,
    pub method: String,
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub k: f64,
    pub status: String,
    /// Rows averaged; 1 except in summary rows.
    pub count: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub rmse_aligned: Option<f64>,
    pub mae_aligned: Option<f64>,
    pub rmse_front: Option<f64>,
    pub rmse_back: Option<f64>,
    pub outer_iterations: Option<f64>,
    pub converged: Option<bool>,
    pub inversion_count: Option<f64>,
    pub boundary_gap: Option<f64>,
    pub max_gradient_front: Option<f64>,
    pub error: String,
}

impl Row {
    fn blank(scene: &str, seed: Option<u64>, method: Method, p: Point, status: &str) -> Self {
        Row {
            scene: scene.to_string(),
            seed,
            method: method.name().to_string(),
            lambda_d: p.lambda_d,
            lambda_s: p.lambda_s,
            k: p.k,
            status: status.to_string(),
            count: 1,
            rmse: None,
            mae: None,
            rmse_aligned: None,
            mae_aligned: None,
            rmse_front: None,
            rmse_back: None,
            outer_iterations: None,
            converged: None,
            inversion_count: None,
            boundary_gap: None,
            max_gradient_front: None,
            error: String::new(),
        }
    }

    fn key(&self) -> (&str, Option<u64>, &str) {
        (&self.scene, self.seed, &self.method)
    }

    fn point(&self) -> Point {
        Point { lambda_d: self.lambda_d, lambda_s: self.lambda_s, k: self.k }
    }
}

fn row_order(a: &Row, b: &Row) -> Ordering {
    a.key().cmp(&b.key()).then(a.point().cmp(&b.point()))
}

#[derive(Serialize)]
struct TimingRow<'a> {
    scene: &'a str,
    seed: Option<u64>,
    method: &'a str,
    lambda_d: f64,
    lambda_s: f64,
    k: f64,
    wall_ms: f64,
}

/// Bench scene for `kind` under the chosen prior and noise.
pub fn bench_spec(a: &BenchArgs, kind: ShapeKind, seed: u64) -> CliResult<SceneSpec> {
    let prior = match a.prior {
        PriorArg::Exact => PriorKind::Exact,
        PriorArg::Inscribed => PriorKind::InscribedPrimitive,
        PriorArg::ErodedOffset => PriorKind::ErodedOffset {
            delta: a.delta.unwrap_or(0.02 * a.res as f64),
        },
    };
    Ok(SceneSpec {
        prior,
        noise_deg: a.noise,
        seed,
        ..SceneSpec::preset(kind, a.res)?
    })
}

struct Task<'a> {
    bundle: &'a SceneBundle,
    scene: &'a str,
    seed: u64,
    method: Method,
    point: Point,
}

struct Outcome {
    row: Row,
    wall_ms: f64,
    meshes: Vec<(String, dbini_core::TriangleMesh)>,
}

type NamedMeshes = Vec<(String, dbini_core::TriangleMesh)>;

fn solve_task(a: &BenchArgs, t: &Task) -> CliResult<(Estimate, SheetErrors, NamedMeshes)> {
    let hyper = Hyperparameters {
        lambda_d: t.point.lambda_d,
        lambda_s: t.point.lambda_s,
        k: t.point.k,
        max_outer_iters: a.max_iters.unwrap_or(Hyperparameters::default().max_outer_iters),
        ..Hyperparameters::default()
    };
    let b = t.bundle;
    let est = match t.method {
        Method::Dbini => solve_dbini(&b.problem()?, &hyper)?,
        Method::Bini => solve_bini(
            [&b.normals_front, &b.normals_back],
            Some([&b.prior_front, &b.prior_back]),
            &b.domain,
            &hyper,
            Some(a.anchor),
        )?,
    };
    let rasters = est.rasters(&b.domain)?;
    let errors = SheetErrors::measure(&rasters, &(b.depth_front_gt.clone(), b.depth_back_gt.clone()), &b.domain)?;
    let mut meshes = Vec::new();
    if !a.no_meshes {
        let stem = format!(
            "meshes/{}_s{}_{}_ld{:e}_ls{:e}_k{}",
            t.scene,
            t.seed,
            t.method.name(),
            t.point.lambda_d,
            t.point.lambda_s,
            t.point.k
        );
        let m = build_meshes(&rasters, &b.domain, t.method == Method::Dbini)?;
        meshes.push((format!("{stem}_f.ply"), m.front));
        meshes.push((format!("{stem}_b.ply"), m.back));
        if let Some(fused) = m.fused {
            meshes.push((format!("{stem}_fused.ply"), fused.mesh));
        }
    }
    Ok((est, errors, meshes))
}

fn run_task(a: &BenchArgs, t: &Task) -> Outcome {
    let start = Instant::now();
    let result = solve_task(a, t);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut row = Row::blank(t.scene, Some(t.seed), t.method, t.point, "ok");
    match result {
        Ok((est, e, meshes)) => {
            let diag = Diagnostics::of(&est, &t.bundle.domain);
            let (rmse, mae) = e.pooled(false);
            let (rmse_a, mae_a) = e.pooled(true);
            row.rmse = Some(rmse);
            row.mae = Some(mae);
            row.rmse_aligned = Some(rmse_a);
            row.mae_aligned = Some(mae_a);
            row.rmse_front = Some(e.front.rmse);
            row.rmse_back = Some(e.back.rmse);
            row.outer_iterations = Some(est.outer_iterations as f64);
            row.converged = Some(est.converged);
            row.inversion_count = Some(diag.inversion_count as f64);
            row.boundary_gap = Some(diag.boundary_gap);
            row.max_gradient_front = Some(diag.max_gradient_front);
            Outcome { row, wall_ms, meshes }
        }
        Err(e) => {
            row.status = "failed".into();
            row.error = e.to_string();
            Outcome { row, wall_ms, meshes: Vec::new() }
        }
    }
}

/// Method-wise means over successful rows, one per sweep point.
fn summary(rows: &[Row]) -> Vec<Row> {
    let mut groups: Vec<(Method, Point, Vec<&Row>)> = Vec::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        let method = if r.method == Method::Bini.name() { Method::Bini } else { Method::Dbini };
        match groups.iter_mut().find(|(m, p, _)| *m == method && *p == r.point()) {
            Some(g) => g.2.push(r),
            None => groups.push((method, r.point(), vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    groups
        .into_iter()
        .map(|(method, p, members)| {
            let n = members.len() as f64;
            let mean = |f: fn(&Row) -> Option<f64>| Some(members.iter().filter_map(|r| f(r)).sum::<f64>() / n);
            let mut row = Row::blank("mean", None, method, p, "summary");
            row.count = members.len();
            row.rmse = mean(|r| r.rmse);
            row.mae = mean(|r| r.mae);
            row.rmse_aligned = mean(|r| r.rmse_aligned);
            row.mae_aligned = mean(|r| r.mae_aligned);
            row.rmse_front = mean(|r| r.rmse_front);
            row.rmse_back = mean(|r| r.rmse_back);
            row.outer_iterations = mean(|r| r.outer_iterations);
            row.converged = Some(members.iter().all(|r| r.converged == Some(true)));
            row.inversion_count = mean(|r| r.inversion_count);
            row.boundary_gap = mean(|r| r.boundary_gap);
            row.max_gradient_front = mean(|r| r.max_gradient_front);
            row
        })
        .collect()
}

pub fn run(cmd: &Command, a: &BenchArgs, quiet: bool) -> CliResult<()> {
    let kinds = parse_scenes(&a.scenes)?;
    if a.methods.is_empty() {
        return Err(CliError::usage("bench needs at least one method"));
    }
    if a.seeds.is_empty() {
        return Err(CliError::usage("bench needs at least one seed"));
    }
    if a.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let mut methods = a.methods.clone();
    methods.sort();
    methods.dedup();
    let mut session = Session::new(&a.out)?.quiet(quiet);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Runtime(anyhow!(e)))?;

    let mut scenes: Vec<(String, u64)> = Vec::new();
    for kind in &kinds {
        for &seed in &a.seeds {
            let entry = (kind.name().to_string(), seed);
            if !scenes.contains(&entry) {
                scenes.push(entry);
            }
        }
    }
    let specs: Vec<SceneSpec> = scenes
        .iter()
        .map(|(name, seed)| bench_spec(a, name.parse().expect("validated name"), *seed))
        .collect::<CliResult<_>>()?;
    let bundles: Vec<Result<SceneBundle, String>> =
        pool.install(|| specs.par_iter().map(|s| generate(s).map_err(|e| e.to_string())).collect());

    let mut rows = Vec::new();
    let mut tasks = Vec::new();
    for ((name, seed), bundle) in scenes.iter().zip(&bundles) {
        for &method in &methods {
            for point in sweep(a, method) {
                match bundle {
                    Ok(bundle) => tasks.push(Task { bundle, scene: name, seed: *seed, method, point }),
                    Err(e) => {
                        let mut row = Row::blank(name, Some(*seed), method, point, "failed");
                        row.error = e.clone();
                        rows.push((row, f64::NAN, Vec::new()));
                    }
                }
            }
        }
    }
    let outcomes: Vec<Outcome> = pool.install(|| tasks.par_iter().map(|t| run_task(a, t)).collect());
    rows.extend(outcomes.into_iter().map(|o| (o.row, o.wall_ms, o.meshes)));
    rows.sort_by(|x, y| row_order(&x.0, &y.0));

    for (_, _, meshes) in &rows {
        for (name, mesh) in meshes {
            save_ply(&session.output(name)?, mesh)?;
        }
    }
    let table: Vec<Row> = rows.iter().map(|r| r.0.clone()).collect();
    let means = summary(&table);
    let mut w = csv::Writer::from_path(session.output(BENCH_CSV)?)?;
    for r in table.iter().chain(&means) {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut t = csv::Writer::from_path(session.volatile_output(TIMING_CSV))?;
    for (r, ms, _) in &rows {
        t.serialize(TimingRow {
            scene: &r.scene,
            seed: r.seed,
            method: &r.method,
            lambda_d: r.lambda_d,
            lambda_s: r.lambda_s,
            k: r.k,
            wall_ms: *ms,
        })?;
    }
    t.flush()?;

    let ok = table.iter().filter(|r| r.status == "ok").count();
    session.log(format!("{ok} of {} runs succeeded", table.len()));
    for r in &table {
        if r.status == "failed" {
            session.log(format!("failed: {} seed {:?} {}: {}", r.scene, r.seed, r.method, r.error));
        }
    }
    for m in &means {
        session.log(format!(
            "{:<6} lambda_d={:e} lambda_s={:e} k={} rmse={:.4} rmse_aligned={:.4} over {} scenes",
            m.method,
            m.lambda_d,
            m.lambda_s,
            m.k,
            m.rmse.unwrap_or(f64::NAN),
            m.rmse_aligned.unwrap_or(f64::NAN),
            m.count
        ));
    }
    let parameters = json!({
        "scenes": scenes,
        "methods": methods,
        "specs": specs,
        "max_outer_iters": a.max_iters.unwrap_or(Hyperparameters::default().max_outer_iters),
        "anchor": a.anchor,
    });
    session.finish(cmd, parameters)?;
    if ok == 0 {
        return Err(CliError::Runtime(anyhow!("every bench run failed")));
    }
    Ok(())
}
