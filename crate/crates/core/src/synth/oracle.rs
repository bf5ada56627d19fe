use nalgebra::{DMatrix, DVector};

use crate::assembly::{bilateral_weights, energy, BilateralWeights, Hyperparameters, JointOperators};
use crate::error::{Error, Result};
use crate::solver::{initial_depth, relative_change, DbiniProblem};

/// Largest stacked system the dense oracle accepts, `2 |Ω_n|`.
pub const ORACLE_MAX_UNKNOWNS: usize = 2048;

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub z_front: Vec<f64>,
    pub z_back: Vec<f64>,
    /// `(z_F, z_B)` after every outer iteration.
    pub iterates: Vec<(Vec<f64>, Vec<f64>)>,
    pub energy_trace: Vec<f64>,
    pub converged: bool,
}

/// Dense `AᵀWA + λd M̃ + λs S̃` and `AᵀWb + λd M̃ z`, built entry by entry
/// from the residual rows.
fn dense_system(
    ops: &JointOperators,
    wf: &BilateralWeights,
    wb: &BilateralWeights,
    hyper: &Hyperparameters,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = ops.unknowns();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let mut g = DVector::<f64>::zeros(2 * n);
    for (block, (op, w)) in [(&ops.front, wf), (&ops.back, wb)].into_iter().enumerate() {
        let off = block * n;
        for r in 0..op.rows_len() {
            let Some(s) = op.row(r) else { continue };
            let wr = w.values()[r];
            // Row a has +coef at plus and -coef at minus.
            let entries = [(s.plus + off, s.coef), (s.minus + off, -s.coef)];
            for &(i, ai) in &entries {
                for &(j, aj) in &entries {
                    h[(i, j)] += wr * ai * aj;
                }
                g[i] += wr * ai * op.b()[r];
            }
        }
    }
    for i in 0..2 * n {
        if ops.prior_mask.diag(i) {
            h[(i, i)] += hyper.lambda_d;
            let z = if i < n {
                ops.prior_front[i]
            } else {
                ops.prior_back[i - n]
            };
            g[i] += hyper.lambda_d * z;
        }
    }
    for (i, &s) in ops.silhouette.flags().iter().enumerate() {
        if s {
            h[(i, i)] += hyper.lambda_s;
            h[(i + n, i + n)] += hyper.lambda_s;
            h[(i, i + n)] -= hyper.lambda_s;
            h[(i + n, i)] -= hyper.lambda_s;
        }
    }
    (h, g)
}

/// The joint reweighting loop with every frozen-weight system solved by dense
/// Cholesky factorization. Starting point, weight updates, and stopping rule
/// follow the sparse solver step for step, so the two can be compared per
/// iteration.
pub fn dense_oracle_solve(problem: &DbiniProblem, hyper: &Hyperparameters) -> Result<OracleSolution> {
    hyper.validate()?;
    let ops = problem.operators()?;
    let n = ops.unknowns();
    if 2 * n > ORACLE_MAX_UNKNOWNS {
        return Err(Error::OracleTooLarge {
            size: 2 * n,
            limit: ORACLE_MAX_UNKNOWNS,
        });
    }
    let domain = &problem.domain;
    let mut zf = initial_depth(ops.prior_mask.front(), &ops.prior_front, domain).into_inner();
    let mut zb = initial_depth(ops.prior_mask.back(), &ops.prior_back, domain).into_inner();
    let mut wf = BilateralWeights::uniform(&ops.front, hyper.k);
    let mut wb = BilateralWeights::uniform(&ops.back, hyper.k);
    let mut energy_trace = vec![energy(&ops, &wf, &wb, hyper, &zf, &zb)];
    let mut iterates = Vec::new();
    let mut converged = false;

    for _ in 0..hyper.max_outer_iters {
        let (h, g) = dense_system(&ops, &wf, &wb, hyper);
        let chol = h.cholesky().ok_or_else(|| {
            Error::GaugeDeficient("dense oracle system is not positive definite".into())
        })?;
        let x = chol.solve(&g);
        zf.copy_from_slice(&x.as_slice()[..n]);
        zb.copy_from_slice(&x.as_slice()[n..]);
        let e = energy(&ops, &wf, &wb, hyper, &zf, &zb);
        let previous = *energy_trace.last().unwrap();
        energy_trace.push(e);
        iterates.push((zf.clone(), zb.clone()));
        wf = bilateral_weights(&zf, &ops.front, hyper.k);
        wb = bilateral_weights(&zb, &ops.back, hyper.k);
        if relative_change(previous, e) < hyper.energy_rel_tol {
            converged = true;
            break;
        }
    }
    Ok(OracleSolution {
        z_front: zf,
        z_back: zb,
        iterates,
        energy_trace,
        converged,
    })
}
