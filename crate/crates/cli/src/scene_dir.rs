use std::path::{Path, PathBuf};

use anyhow::anyhow;
use dbini_core::io::{
    load_mask_png, load_normals, load_scalar_pfm, save_mask_png, save_scalar_pfm, save_vector_pfm, SceneFile,
};
use dbini_core::{build_domain, DomainMask, GridShape, ScalarField2D, SceneBundle, VectorField2D};

use crate::error::{CliError, CliResult};
use crate::record::{require_files, Session};

pub const NORMALS_F: &str = "normals_f.pfm";
pub const NORMALS_B: &str = "normals_b.pfm";
pub const DEPTH_F_GT: &str = "depth_f_gt.pfm";
pub const DEPTH_B_GT: &str = "depth_b_gt.pfm";
pub const PRIOR_F: &str = "prior_f.pfm";
pub const PRIOR_B: &str = "prior_b.pfm";
pub const MASK_N: &str = "mask_n.png";
pub const MASK_Z: &str = "mask_z.png";
pub const SCENE_JSON: &str = "scene.json";

/// Writes every raster of `bundle` plus `scene.json`.
pub fn write_scene(session: &mut Session, bundle: &SceneBundle) -> CliResult<()> {
    let g = bundle.domain.shape();
    save_vector_pfm(&session.output(NORMALS_F)?, &bundle.normals_front)?;
    save_vector_pfm(&session.output(NORMALS_B)?, &bundle.normals_back)?;
    save_scalar_pfm(&session.output(DEPTH_F_GT)?, &bundle.depth_front_gt)?;
    save_scalar_pfm(&session.output(DEPTH_B_GT)?, &bundle.depth_back_gt)?;
    save_scalar_pfm(&session.output(PRIOR_F)?, &bundle.prior_front)?;
    save_scalar_pfm(&session.output(PRIOR_B)?, &bundle.prior_back)?;
    save_mask_png(&session.output(MASK_N)?, bundle.domain.omega_n(), g)?;
    save_mask_png(&session.output(MASK_Z)?, bundle.domain.omega_z(), g)?;
    SceneFile::new(bundle.spec.clone()).save(&session.output(SCENE_JSON)?)?;
    Ok(())
}

/// What a scene directory provided.
pub struct LoadedScene {
    pub normals_front: VectorField2D,
    pub normals_back: VectorField2D,
    pub priors: Option<(ScalarField2D, ScalarField2D)>,
    pub truth: Option<(ScalarField2D, ScalarField2D)>,
    pub domain: DomainMask,
    pub pitch: f64,
}

pub fn load_mask(session: &mut Session, path: &Path, grid: GridShape) -> CliResult<Vec<bool>> {
    let (mask, w, h) = load_mask_png(&session.input(path)?)?;
    if (w, h) != (grid.width(), grid.height()) {
        return Err(CliError::Runtime(anyhow!(
            "{} is {w}x{h}, expected {}x{}",
            path.display(),
            grid.width(),
            grid.height()
        )));
    }
    Ok(mask)
}

/// Loads a scene directory. Priors and the prior mask are read only when
/// `need_priors`; ground truth only when both depth files exist.
pub fn load_scene(
    session: &mut Session,
    dir: &Path,
    pitch: Option<f64>,
    need_priors: bool,
) -> CliResult<LoadedScene> {
    let file = |name: &str| dir.join(name);
    let mut required: Vec<PathBuf> = vec![file(NORMALS_F), file(NORMALS_B), file(MASK_N)];
    if need_priors {
        required.extend([file(PRIOR_F), file(PRIOR_B), file(MASK_Z)]);
    }
    require_files(&required)?;

    let pitch = match pitch {
        Some(p) => p,
        None if file(SCENE_JSON).is_file() => SceneFile::load(&session.input(&file(SCENE_JSON))?)?
            .spec
            .grid
            .pitch(),
        None => 1.0,
    };
    let normals_front = load_normals(&session.input(&file(NORMALS_F))?, pitch)?.normalized();
    let normals_back = load_normals(&session.input(&file(NORMALS_B))?, pitch)?.normalized();
    let grid = normals_front.shape();
    let omega_n = load_mask(session, &file(MASK_N), grid)?;

    let (omega_z, priors) = if need_priors {
        let omega_z = load_mask(session, &file(MASK_Z), grid)?;
        let pf = load_scalar_pfm(&session.input(&file(PRIOR_F))?, pitch)?;
        let pb = load_scalar_pfm(&session.input(&file(PRIOR_B))?, pitch)?;
        (omega_z, Some((pf, pb)))
    } else {
        (vec![false; grid.len()], None)
    };
    let domain = build_domain(&omega_n, &omega_z, grid)?;

    let truth = if file(DEPTH_F_GT).is_file() && file(DEPTH_B_GT).is_file() {
        let tf = load_scalar_pfm(&session.input(&file(DEPTH_F_GT))?, pitch)?;
        let tb = load_scalar_pfm(&session.input(&file(DEPTH_B_GT))?, pitch)?;
        Some((tf, tb))
    } else {
        None
    };

    Ok(LoadedScene {
        normals_front,
        normals_back,
        priors,
        truth,
        domain,
        pitch,
    })
}
