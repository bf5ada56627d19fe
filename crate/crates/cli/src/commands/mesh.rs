use std::path::Path;

use dbini_core::io::{load_scalar_pfm, save_obj, save_ply};
use dbini_core::{build_domain, depth_to_mesh, zipper, Orientation, ScalarField2D, TriangleMesh};
use serde_json::json;

use crate::args::{Command, MeshArgs, MeshFormat, OrientationArg};
use crate::error::CliResult;
use crate::record::{require_files, Session};
use crate::scene_dir::load_mask;

fn load_depth(session: &mut Session, path: &Path, pitch: f64) -> CliResult<ScalarField2D> {
    Ok(load_scalar_pfm(&session.input(path)?, pitch)?)
}

pub fn run(cmd: &Command, a: &MeshArgs, quiet: bool) -> CliResult<()> {
    let mut needed = vec![a.mask.clone()];
    needed.extend([&a.depth, &a.front, &a.back].into_iter().flatten().cloned());
    require_files(&needed)?;
    let mut session = Session::new(&a.out)?.quiet(quiet);

    let (mesh, name, watertight): (TriangleMesh, &str, Option<bool>) = match (&a.depth, &a.front, &a.back) {
        (Some(depth), _, _) => {
            let z = load_depth(&mut session, depth, a.pitch)?;
            let omega_n = load_mask(&mut session, &a.mask, z.shape())?;
            let domain = build_domain(&omega_n, &vec![false; omega_n.len()], z.shape())?;
            let orientation = match a.orientation {
                OrientationArg::Front => Orientation::Front,
                OrientationArg::Back => Orientation::Back,
            };
            (depth_to_mesh(&z, &domain, orientation)?, "mesh", None)
        }
        (None, Some(front), Some(back)) => {
            let zf = load_depth(&mut session, front, a.pitch)?;
            let zb = load_depth(&mut session, back, a.pitch)?;
            let omega_n = load_mask(&mut session, &a.mask, zf.shape())?;
            let domain = build_domain(&omega_n, &vec![false; omega_n.len()], zf.shape())?;
            let mf = depth_to_mesh(&zf, &domain, Orientation::Front)?;
            let mb = depth_to_mesh(&zb, &domain, Orientation::Back)?;
            let fused = zipper(&mf, &mb, &domain)?;
            session.log(format!(
                "loops={} inversion_count={} welded={}",
                fused.loops, fused.inversion_count, fused.welded
            ));
            (fused.mesh, "fused", Some(fused.watertight))
        }
        _ => unreachable!("clap requires --depth or --front with --back"),
    };

    let file = match a.format {
        MeshFormat::Ply => format!("{name}.ply"),
        MeshFormat::Obj => format!("{name}.obj"),
    };
    let path = session.output(&file)?;
    match a.format {
        MeshFormat::Ply => save_ply(&path, &mesh)?,
        MeshFormat::Obj => save_obj(&path, &mesh)?,
    }
    session.log(format!(
        "{file}: vertices={} faces={}{}",
        mesh.vertices.len(),
        mesh.faces.len(),
        watertight.map(|w| format!(" watertight={w}")).unwrap_or_default()
    ));
    session.finish(cmd, json!({ "pitch": a.pitch, "format": a.format, "watertight": watertight }))?;
    Ok(())
}
