use std::fs::File;
use std::io::BufWriter;

use dbini_core::io::{save_ply, save_scalar_pfm};
use dbini_core::{DbiniProblem, Hyperparameters};
use serde_json::json;

use super::solve::{build_meshes, solve_bini, solve_dbini, Diagnostics, SheetErrors};
use crate::args::{Command, IntegrateArgs, Method};
use crate::error::{CliError, CliResult};
use crate::record::Session;
use crate::scene_dir::load_scene;

pub fn resolve_hyper(a: &IntegrateArgs) -> CliResult<Hyperparameters> {
    let base = match a.preset {
        Some(_) => Hyperparameters::paper(),
        None => Hyperparameters::default(),
    };
    let hyper = Hyperparameters {
        lambda_d: a.lambda_d.unwrap_or(base.lambda_d),
        lambda_s: a.lambda_s.unwrap_or(base.lambda_s),
        k: a.k.unwrap_or(base.k),
        max_outer_iters: a.max_iters.unwrap_or(base.max_outer_iters),
        energy_rel_tol: a.energy_tol.unwrap_or(base.energy_rel_tol),
        cg_tol: a.cg_tol.unwrap_or(base.cg_tol),
        cg_max_iters: a.cg_max_iters.unwrap_or(base.cg_max_iters),
    };
    hyper.validate()?;
    Ok(hyper)
}

pub fn run(cmd: &Command, a: &IntegrateArgs, quiet: bool) -> CliResult<()> {
    let hyper = resolve_hyper(a)?;
    if a.method == Method::Bini && a.anchor.is_none() {
        return Err(CliError::usage(
            "bini leaves the depth offset free; pass --anchor zero-mean, prior-mean or a depth value",
        ));
    }
    let mut session = Session::new(&a.out)?.quiet(quiet);
    let need_priors = a.method == Method::Dbini || a.anchor == Some(crate::args::AnchorArg::PriorMean);
    let scene = load_scene(&mut session, &a.scene, a.pitch, need_priors)?;
    let domain = &scene.domain;

    session.log(format!(
        "method={} lambda_d={:e} lambda_s={:e} k={} max_outer_iters={}",
        a.method.name(),
        hyper.lambda_d,
        hyper.lambda_s,
        hyper.k,
        hyper.max_outer_iters
    ));
    session.log(format!("|omega_n|={} pitch={}", domain.len(), scene.pitch));

    let est = match a.method {
        Method::Dbini => {
            let (pf, pb) = scene.priors.clone().expect("priors loaded for dbini");
            let problem = DbiniProblem::new(
                scene.normals_front.clone(),
                scene.normals_back.clone(),
                pf,
                pb,
                domain.clone(),
            )?;
            solve_dbini(&problem, &hyper)?
        }
        Method::Bini => solve_bini(
            [&scene.normals_front, &scene.normals_back],
            scene.priors.as_ref().map(|(f, b)| [f, b]),
            domain,
            &hyper,
            a.anchor,
        )?,
    };
    session.log(format!(
        "outer_iterations={} converged={}",
        est.outer_iterations, est.converged
    ));

    let rasters = est.rasters(domain)?;
    save_scalar_pfm(&session.output("depth_f_est.pfm")?, &rasters.0)?;
    save_scalar_pfm(&session.output("depth_b_est.pfm")?, &rasters.1)?;
    est.write_trace(BufWriter::new(File::create(session.output("trace.csv")?)?))?;

    let meshes = build_meshes(&rasters, domain, a.method == Method::Dbini)?;
    save_ply(&session.output("mesh_f.ply")?, &meshes.front)?;
    save_ply(&session.output("mesh_b.ply")?, &meshes.back)?;
    if let Some(fused) = &meshes.fused {
        save_ply(&session.output("fused.ply")?, &fused.mesh)?;
        session.log(format!(
            "fused: vertices={} faces={} watertight={} loops={}",
            fused.mesh.vertices.len(),
            fused.mesh.faces.len(),
            fused.watertight,
            fused.loops
        ));
    }
    let diag = Diagnostics::of(&est, domain);
    session.log(format!(
        "inversion_count={} boundary_gap={:.6e}",
        diag.inversion_count, diag.boundary_gap
    ));

    let mut errors = None;
    if let Some(truth) = &scene.truth {
        let e = SheetErrors::measure(&rasters, truth, domain)?;
        let name = a
            .scene
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (ld, ls) = match a.method {
            Method::Dbini => (hyper.lambda_d, hyper.lambda_s),
            Method::Bini => (0.0, 0.0),
        };
        let mut w = csv::Writer::from_path(session.output("metrics.csv")?)?;
        w.write_record([
            "scene", "method", "lambda_d", "lambda_s", "k", "sheet", "aligned", "rmse", "mae", "inversion_count",
        ])?;
        for (sheet, m) in [
            ("front", e.front),
            ("back", e.back),
            ("front", e.front_aligned),
            ("back", e.back_aligned),
        ] {
            w.write_record([
                name.clone(),
                a.method.name().to_string(),
                ld.to_string(),
                ls.to_string(),
                hyper.k.to_string(),
                sheet.to_string(),
                m.aligned.to_string(),
                m.rmse.to_string(),
                m.mae.to_string(),
                diag.inversion_count.to_string(),
            ])?;
        }
        w.flush()?;
        let (rmse, mae) = e.pooled(false);
        session.log(format!("rmse={rmse:.6e} mae={mae:.6e}"));
        errors = Some(e);
    }

    session.finish(
        cmd,
        json!({
            "method": a.method,
            "hyperparameters": hyper,
            "anchor": a.anchor,
            "pitch": scene.pitch,
            "outer_iterations": est.outer_iterations,
            "converged": est.converged,
            "errors": errors,
        }),
    )?;
    Ok(())
}
