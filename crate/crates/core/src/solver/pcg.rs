use serde::{Deserialize, Serialize};

use super::SparseSpd;
use crate::error::{shape_mismatch, Error, Result};

/// Outcome of one conjugate-gradient solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖A x - rhs‖ / ‖rhs‖`, recomputed from scratch at exit.
    pub final_residual_norm: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual(a: &SparseSpd, x: &[f64], rhs: &[f64], r: &mut [f64]) {
    a.matvec(x, r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
}

/// Jacobi-preconditioned conjugate gradient.
///
/// Stops once the relative residual `‖A x - rhs‖ / ‖rhs‖` drops to `tol`.
/// The recurrence residual is confirmed against the true residual before
/// reporting convergence; if they disagree the iteration restarts from the
/// true residual. Summation order is fixed, so results are reproducible.
pub fn pcg_solve(
    a: &SparseSpd,
    rhs: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, CgReport)> {
    let n = a.n();
    if rhs.len() != n || x0.len() != n {
        return Err(shape_mismatch(
            format!("vectors of length {n}"),
            format!("rhs {} / x0 {}", rhs.len(), x0.len()),
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .enumerate()
        .map(|(index, d)| {
            if d > 0.0 && d.is_finite() {
                Ok(1.0 / d)
            } else {
                Err(Error::NotSpd { index, value: d })
            }
        })
        .collect::<Result<_>>()?;

    let rhs_norm = norm(rhs);
    if !rhs_norm.is_finite() {
        return Err(Error::NumericalBreakdown { iteration: 0 });
    }
    if rhs_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                final_residual_norm: 0.0,
                converged: true,
            },
        ));
    }

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    true_residual(a, &x, rhs, &mut r);
    let mut rel = norm(&r) / rhs_norm;
    if !rel.is_finite() {
        return Err(Error::NumericalBreakdown { iteration: 0 });
    }
    if rel <= tol {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                final_residual_norm: rel,
                converged: true,
            },
        ));
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for iteration in 1..=max_iters {
        a.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if !pq.is_finite() || pq <= 0.0 {
            return Err(Error::NumericalBreakdown { iteration });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rel = norm(&r) / rhs_norm;
        if !rel.is_finite() {
            return Err(Error::NumericalBreakdown { iteration });
        }
        if rel <= tol {
            true_residual(a, &x, rhs, &mut r);
            rel = norm(&r) / rhs_norm;
            if rel <= tol {
                return Ok((
                    x,
                    CgReport {
                        iterations: iteration,
                        final_residual_norm: rel,
                        converged: true,
                    },
                ));
            }
            // Recurrence drifted; restart the search directions.
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
                p[i] = z[i];
            }
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    true_residual(a, &x, rhs, &mut r);
    rel = norm(&r) / rhs_norm;
    Ok((
        x,
        CgReport {
            iterations: max_iters,
            final_residual_norm: rel,
            converged: rel <= tol,
        },
    ))
}
