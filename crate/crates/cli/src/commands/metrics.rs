use dbini_core::io::load_scalar_pfm;
use dbini_core::{build_domain, depth_metrics};
use serde_json::json;

use crate::args::{Command, MetricsArgs};
use crate::error::CliResult;
use crate::record::{require_files, Session};
use crate::scene_dir::load_mask;

pub fn run(cmd: &Command, a: &MetricsArgs, quiet: bool) -> CliResult<()> {
    require_files(&[a.estimate.clone(), a.truth.clone(), a.mask.clone()])?;
    let mut session = Session::new(&a.out)?.quiet(quiet);
    let est = load_scalar_pfm(&session.input(&a.estimate)?, a.pitch)?;
    let truth = load_scalar_pfm(&session.input(&a.truth)?, a.pitch)?;
    let omega_n = load_mask(&mut session, &a.mask, est.shape())?;
    let domain = build_domain(&omega_n, &vec![false; omega_n.len()], est.shape())?;
    let m = depth_metrics(&est, &truth, &domain, a.align)?;

    let mut w = csv::Writer::from_path(session.output("metrics.csv")?)?;
    w.serialize(m)?;
    w.flush()?;
    session.log(format!(
        "rmse={:.6e} mae={:.6e} aligned={} offset={:.6e} count={}",
        m.rmse, m.mae, m.aligned, m.offset, m.count
    ));
    session.finish(cmd, json!({ "pitch": a.pitch, "align": a.align, "metrics": m }))?;
    Ok(())
}
