use std::io::Write;

use dbini_core::meshing::{inversion_count, max_boundary_gap, max_gradient, ZipperResult};
use dbini_core::solver::{write_trace_csv, IterationRecord};
use dbini_core::{
    bini_optimize, dbini_optimize, depth_metrics, depth_to_mesh, zipper, DbiniProblem, DepthMetrics, DomainMask,
    GaugeAnchor, Hyperparameters, Orientation, ScalarField2D, TriangleMesh, VectorField2D,
};
use serde::Serialize;

use crate::args::{AnchorArg, Method};
use crate::error::{CliError, CliResult};

/// Solved sheets of one method run.
pub struct Estimate {
    pub method: Method,
    pub front: Vec<f64>,
    pub back: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Per sheet for BiNI, one joint trace for d-BiNI.
    pub traces: Vec<(&'static str, Vec<IterationRecord>)>,
}

impl Estimate {
    pub fn rasters(&self, domain: &DomainMask) -> CliResult<(ScalarField2D, ScalarField2D)> {
        Ok((
            dbini_core::rasterize(&self.front, domain, f64::NAN)?,
            dbini_core::rasterize(&self.back, domain, f64::NAN)?,
        ))
    }

    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        match &self.traces[..] {
            [(_, records)] => write_trace_csv(records, out),
            sheets => {
                writeln!(out, "sheet,outer_iter,energy,cg_iters,cg_residual")?;
                for (sheet, records) in sheets {
                    let mut block = Vec::new();
                    write_trace_csv(records, &mut block)?;
                    let text = String::from_utf8(block).expect("trace is ASCII");
                    for line in text.lines().skip(1) {
                        writeln!(out, "{sheet},{line}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

pub fn solve_dbini(problem: &DbiniProblem, hyper: &Hyperparameters) -> CliResult<Estimate> {
    let sol = dbini_optimize(problem, hyper)?;
    Ok(Estimate {
        method: Method::Dbini,
        front: sol.z_front.to_vec(),
        back: sol.z_back.to_vec(),
        outer_iterations: sol.outer_iterations,
        converged: sol.converged,
        traces: vec![("joint", sol.iterations)],
    })
}

fn prior_mean(prior: &ScalarField2D, domain: &DomainMask) -> CliResult<f64> {
    let values: Vec<f64> = (0..domain.len())
        .filter(|&i| domain.in_prior(i))
        .map(|i| prior.values()[domain.pixel(i)])
        .collect();
    if values.is_empty() {
        return Err(CliError::usage("--anchor prior-mean needs a non-empty prior mask"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Plain BiNI on each sheet independently.
pub fn solve_bini(
    normals: [&VectorField2D; 2],
    priors: Option<[&ScalarField2D; 2]>,
    domain: &DomainMask,
    hyper: &Hyperparameters,
    anchor: Option<AnchorArg>,
) -> CliResult<Estimate> {
    let Some(anchor) = anchor else {
        return Err(CliError::usage(
            "bini leaves the depth offset free; pass --anchor zero-mean, prior-mean or a depth value",
        ));
    };
    let mut sheets = Vec::with_capacity(2);
    for s in 0..2 {
        let gauge = match anchor {
            AnchorArg::ZeroMean => GaugeAnchor::ZeroMean,
            AnchorArg::Value(v) => GaugeAnchor::Mean(v),
            AnchorArg::PriorMean => {
                let priors = priors.ok_or_else(|| CliError::usage("--anchor prior-mean needs prior maps"))?;
                GaugeAnchor::Mean(prior_mean(priors[s], domain)?)
            }
        };
        sheets.push(bini_optimize(normals[s], domain, hyper, Some(gauge))?);
    }
    let back = sheets.pop().unwrap();
    let front = sheets.pop().unwrap();
    Ok(Estimate {
        method: Method::Bini,
        outer_iterations: front.outer_iterations.max(back.outer_iterations),
        converged: front.converged && back.converged,
        front: front.z.to_vec(),
        back: back.z.to_vec(),
        traces: vec![("front", front.iterations), ("back", back.iterations)],
    })
}

/// Errors of both sheets against ground truth.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SheetErrors {
    pub front: DepthMetrics,
    pub back: DepthMetrics,
    pub front_aligned: DepthMetrics,
    pub back_aligned: DepthMetrics,
}

impl SheetErrors {
    pub fn measure(
        est: &(ScalarField2D, ScalarField2D),
        truth: &(ScalarField2D, ScalarField2D),
        domain: &DomainMask,
    ) -> CliResult<Self> {
        Ok(Self {
            front: depth_metrics(&est.0, &truth.0, domain, false)?,
            back: depth_metrics(&est.1, &truth.1, domain, false)?,
            front_aligned: depth_metrics(&est.0, &truth.0, domain, true)?,
            back_aligned: depth_metrics(&est.1, &truth.1, domain, true)?,
        })
    }

    /// RMSE and MAE over both sheets pooled.
    pub fn pooled(&self, aligned: bool) -> (f64, f64) {
        let (f, b) = if aligned {
            (self.front_aligned, self.back_aligned)
        } else {
            (self.front, self.back)
        };
        let (nf, nb) = (f.count as f64, b.count as f64);
        let n = nf + nb;
        (
            ((f.rmse * f.rmse * nf + b.rmse * b.rmse * nb) / n).sqrt(),
            (f.mae * nf + b.mae * nb) / n,
        )
    }
}

/// Sheet meshes and, when asked, the two zippered into one.
pub struct Meshes {
    pub front: TriangleMesh,
    pub back: TriangleMesh,
    pub fused: Option<ZipperResult>,
}

pub fn build_meshes(
    est: &(ScalarField2D, ScalarField2D),
    domain: &DomainMask,
    fuse: bool,
) -> CliResult<Meshes> {
    let front = depth_to_mesh(&est.0, domain, Orientation::Front)?;
    let back = depth_to_mesh(&est.1, domain, Orientation::Back)?;
    let fused = if fuse {
        Some(zipper(&front, &back, domain)?)
    } else {
        None
    };
    Ok(Meshes { front, back, fused })
}

/// Shape statistics that need no ground truth.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Diagnostics {
    pub inversion_count: usize,
    pub boundary_gap: f64,
    pub max_gradient_front: f64,
}

impl Diagnostics {
    pub fn of(est: &Estimate, domain: &DomainMask) -> Self {
        Self {
            inversion_count: inversion_count(&est.front, &est.back),
            boundary_gap: max_boundary_gap(&est.front, &est.back, domain),
            max_gradient_front: max_gradient(&est.front, domain),
        }
    }
}
