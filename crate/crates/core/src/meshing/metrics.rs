use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::field::{Direction, DomainMask, ScalarField2D};

/// Depth error over `Ω_n`, in scene units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// The mean residual was removed before measuring.
    pub aligned: bool,
    /// Mean residual, removed only when `aligned`.
    pub offset: f64,
    pub count: usize,
}

pub fn depth_metrics(
    estimate: &ScalarField2D,
    truth: &ScalarField2D,
    domain: &DomainMask,
    align_offset: bool,
) -> Result<DepthMetrics> {
    let g = domain.shape();
    for f in [estimate, truth] {
        if !f.shape().same_extent(&g) {
            return Err(shape_mismatch(g, f.shape()));
        }
    }
    if domain.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let mut residuals = Vec::with_capacity(domain.len());
    for &p in domain.pixels() {
        let r = estimate.values()[p] - truth.values()[p];
        if !r.is_finite() {
            let (u, v) = g.coords(p);
            return Err(Error::InvalidParameter(format!(
                "depth undefined at in-domain pixel ({u}, {v})"
            )));
        }
        residuals.push(r);
    }
    let count = residuals.len();
    let offset = residuals.iter().sum::<f64>() / count as f64;
    let shift = if align_offset { offset } else { 0.0 };
    let (mut sq, mut abs) = (0.0, 0.0);
    for r in &residuals {
        let r = r - shift;
        sq += r * r;
        abs += r.abs();
    }
    Ok(DepthMetrics {
        rmse: (sq / count as f64).sqrt(),
        mae: abs / count as f64,
        aligned: align_offset,
        offset,
        count,
    })
}

/// Pixels of `Ω_n` with the front sheet behind the back sheet.
pub fn inversion_count(front: &[f64], back: &[f64]) -> usize {
    front.iter().zip(back).filter(|(f, b)| f > b).count()
}

/// `max |z_F - z_B|` over the silhouette.
pub fn max_boundary_gap(front: &[f64], back: &[f64], domain: &DomainMask) -> f64 {
    (0..domain.len())
        .filter(|&i| domain.on_boundary(i))
        .map(|i| (front[i] - back[i]).abs())
        .fold(0.0, f64::max)
}

/// Largest forward-difference slope `|Δz| / pitch` between neighboring
/// domain pixels; a sharp step shows up as a large value.
pub fn max_gradient(z: &[f64], domain: &DomainMask) -> f64 {
    let pitch = domain.shape().pitch();
    let mut worst = 0.0f64;
    for i in 0..domain.len() {
        for dir in [Direction::UPlus, Direction::VPlus] {
            if let Some(j) = domain.neighbor(i, dir) {
                worst = worst.max((z[j] - z[i]).abs() / pitch);
            }
        }
    }
    worst
}
