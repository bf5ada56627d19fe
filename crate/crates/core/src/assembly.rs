//! Normal-integration operators and the joint front/back normal equations.
//!
//! For a pixel `p = (u, v)` with normal `(n_x, n_y, n_z)` the operator holds
//! four one-sided residual rows, in the order `[u+, u-, v+, v-]`:
//!
//! ```text
//! r_u+ = n_z (z(u+1, v) - z(u, v)) / pitch + n_x
//! r_u- = n_z (z(u, v) - z(u-1, v)) / pitch + n_x
//! r_v+ = n_z (z(u, v+1) - z(u, v)) / pitch + n_y
//! r_v- = n_z (z(u, v) - z(u, v-1)) / pitch + n_y
//! ```
//!
//! so that `A z - b` stacks the residuals with `b = -n_x` or `-n_y`. A row
//! whose neighbor is outside `Ω_n` is invalid: it has no entries and is
//! given zero weight forever.
//!
//! The joint system stacks front and back depths `[z_F; z_B]` and solves
//!
//! ```text
//! (AᵀWA + λd M̃ + λs S̃) ẑ = AᵀWb + λd M̃ z
//! ```
//!
//! with `M̃ = diag(M, M)` selecting pixels in `Ω_n ∩ Ω_z` and
//! `S̃ = [[S, -S], [-S, S]]` coupling the two sheets on the silhouette.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::field::{vectorize, DepthVector, Direction, DomainMask, ScalarField2D, VectorField2D};
use crate::solver::SparseSpd;

/// One valid residual row: `coef * (z[plus] - z[minus])`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StencilRow {
    pub plus: usize,
    pub minus: usize,
    pub coef: f64,
}

/// The BiNI data term `A z - b` for one depth sheet.
#[derive(Clone, Debug)]
pub struct BiniOperator {
    unknowns: usize,
    rows: Vec<Option<StencilRow>>,
    b: Vec<f64>,
}

impl BiniOperator {
    /// Number of depth unknowns, `|Ω_n|`.
    pub fn unknowns(&self) -> usize {
        self.unknowns
    }

    /// Number of residual rows, `4 |Ω_n|`.
    pub fn rows_len(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> Option<StencilRow> {
        self.rows[r]
    }

    pub fn row_valid(&self, r: usize) -> bool {
        self.rows[r].is_some()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `A z`, zero on invalid rows.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.unknowns);
        self.rows
            .iter()
            .map(|row| row.map_or(0.0, |s| s.coef * (z[s.plus] - z[s.minus])))
            .collect()
    }

    /// `A z - b`.
    pub fn residual(&self, z: &[f64]) -> Vec<f64> {
        let mut r = self.apply(z);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    /// `(A z - b)ᵀ W (A z - b)`.
    pub fn weighted_energy(&self, weights: &BilateralWeights, z: &[f64]) -> f64 {
        self.residual(z)
            .iter()
            .zip(&weights.w)
            .map(|(r, w)| w * r * r)
            .sum()
    }

    /// Accumulates `AᵀWA` as triplets shifted by `offset` and adds `AᵀWb`
    /// into `rhs` (which covers this block only).
    pub(crate) fn accumulate_normal_equations(
        &self,
        weights: &BilateralWeights,
        offset: usize,
        triplets: &mut Vec<(usize, usize, f64)>,
        rhs: &mut [f64],
    ) {
        for ((row, &w), &b) in self.rows.iter().zip(&weights.w).zip(&self.b) {
            let Some(s) = row else { continue };
            if w == 0.0 {
                continue;
            }
            let a2 = w * s.coef * s.coef;
            let (p, m) = (s.plus + offset, s.minus + offset);
            triplets.push((p, p, a2));
            triplets.push((m, m, a2));
            triplets.push((p, m, -a2));
            triplets.push((m, p, -a2));
            let wb = w * s.coef * b;
            rhs[s.plus] += wb;
            rhs[s.minus] -= wb;
        }
    }
}

/// Builds the BiNI operator from a normal map over `Ω_n`.
pub fn assemble_bini(normals: &VectorField2D, domain: &DomainMask) -> Result<BiniOperator> {
    normals.validate_on(domain)?;
    let pitch = domain.shape().pitch();
    let n = domain.len();
    let mut rows = Vec::with_capacity(4 * n);
    let mut b = Vec::with_capacity(4 * n);
    for i in 0..n {
        let [nx, ny, nz] = normals.vectors()[domain.pixel(i)];
        let coef = nz / pitch;
        for dir in Direction::ALL {
            let row = domain.neighbor(i, dir).map(|j| match dir {
                Direction::UPlus | Direction::VPlus => StencilRow {
                    plus: j,
                    minus: i,
                    coef,
                },
                Direction::UMinus | Direction::VMinus => StencilRow {
                    plus: i,
                    minus: j,
                    coef,
                },
            });
            let target = match dir {
                Direction::UPlus | Direction::UMinus => -nx,
                Direction::VPlus | Direction::VMinus => -ny,
            };
            b.push(if row.is_some() { target } else { 0.0 });
            rows.push(row);
        }
    }
    Ok(BiniOperator {
        unknowns: n,
        rows,
        b,
    })
}

/// Diagonal of `W`, one weight per residual row.
#[derive(Clone, Debug, PartialEq)]
pub struct BilateralWeights {
    w: Vec<f64>,
    k: f64,
}

impl BilateralWeights {
    /// Starting weights: `0.5` on each member of a complete directional
    /// pair, `1` on a lone valid row, `0` on invalid rows.
    pub fn uniform(op: &BiniOperator, k: f64) -> Self {
        let mut w = vec![0.0; op.rows_len()];
        for pair in 0..op.rows_len() / 2 {
            let (r0, r1) = (2 * pair, 2 * pair + 1);
            match (op.row_valid(r0), op.row_valid(r1)) {
                (true, true) => {
                    w[r0] = 0.5;
                    w[r1] = 0.5;
                }
                (true, false) => w[r0] = 1.0,
                (false, true) => w[r1] = 1.0,
                (false, false) => {}
            }
        }
        Self { w, k }
    }

    pub fn from_raw(w: Vec<f64>, k: f64) -> Self {
        Self { w, k }
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn stiffness(&self) -> f64 {
        self.k
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Depth-dependent bilateral weights.
///
/// For each complete pair, with `δ+ = z(next) - z(p)` and
/// `δ- = z(p) - z(prev)` in scene units,
/// `w+ = σ(k (δ-² - δ+²))` and `w- = 1 - w+`. A jump on one side drives the
/// weight to the other side.
pub fn bilateral_weights(z: &[f64], op: &BiniOperator, k: f64) -> BilateralWeights {
    assert_eq!(z.len(), op.unknowns(), "depth length must match the operator");
    let mut weights = BilateralWeights::uniform(op, k);
    let diff = |r: usize| op.row(r).map(|s| z[s.plus] - z[s.minus]);
    for pair in 0..op.rows_len() / 2 {
        let (r_plus, r_minus) = (2 * pair, 2 * pair + 1);
        if let (Some(dp), Some(dm)) = (diff(r_plus), diff(r_minus)) {
            let w_plus = sigmoid(k * (dm * dm - dp * dp));
            weights.w[r_plus] = w_plus;
            weights.w[r_minus] = 1.0 - w_plus;
        }
    }
    weights
}

/// Diagonal selector `M̃`: unknowns in `Ω_n ∩ Ω_z`, per sheet.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMask {
    front: Vec<bool>,
    back: Vec<bool>,
}

impl PriorMask {
    pub fn front(&self) -> &[bool] {
        &self.front
    }

    pub fn back(&self) -> &[bool] {
        &self.back
    }

    /// Entry `i` of the stacked diagonal, `i < 2 |Ω_n|`.
    pub fn diag(&self, i: usize) -> bool {
        let n = self.front.len();
        if i < n {
            self.front[i]
        } else {
            self.back[i - n]
        }
    }

    /// True when no unknown carries a prior, so the prior cannot pin the gauge.
    pub fn is_empty(&self) -> bool {
        !self.front.iter().chain(&self.back).any(|&m| m)
    }
}

/// Builds `M̃` from the front and back domains, which must share `Ω_n`.
pub fn build_prior_mask(front: &DomainMask, back: &DomainMask) -> Result<PriorMask> {
    if !front.shape().same_extent(&back.shape()) || front.omega_n() != back.omega_n() {
        return Err(shape_mismatch(
            "front and back domains with identical Ω_n",
            "differing domains",
        ));
    }
    let mask = |d: &DomainMask| (0..d.len()).map(|i| d.in_prior(i)).collect();
    Ok(PriorMask {
        front: mask(front),
        back: mask(back),
    })
}

/// `S̃`: silhouette flags per unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteCoupling {
    s: Vec<bool>,
}

impl SilhouetteCoupling {
    pub fn flags(&self) -> &[bool] {
        &self.s
    }

    /// `ẑᵀ S̃ ẑ = Σ_{i ∈ ∂Ω_n} (z_F,i - z_B,i)²`.
    pub fn quadratic_form(&self, zf: &[f64], zb: &[f64]) -> f64 {
        self.s
            .iter()
            .zip(zf.iter().zip(zb))
            .filter(|(&s, _)| s)
            .map(|(_, (f, b))| (f - b) * (f - b))
            .sum()
    }
}

pub fn build_silhouette_coupling(domain: &DomainMask) -> SilhouetteCoupling {
    SilhouetteCoupling {
        s: (0..domain.len()).map(|i| domain.on_boundary(i)).collect(),
    }
}

/// Weights and stopping rules of the joint optimization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub k: f64,
    pub max_outer_iters: usize,
    pub energy_rel_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            lambda_d: 1e-4,
            lambda_s: 1e-6,
            k: 2.0,
            max_outer_iters: 150,
            energy_rel_tol: 1e-6,
            cg_tol: 1e-9,
            cg_max_iters: 5000,
        }
    }
}

impl Hyperparameters {
    /// The `--preset paper` setting: `λd = 1e-4`, `λs = 1e-6`, `k = 2`, 150 iterations.
    pub fn paper() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v}")));
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return bad("lambda_d", self.lambda_d);
        }
        if !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return bad("lambda_s", self.lambda_s);
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad("k", self.k);
        }
        if !(self.energy_rel_tol > 0.0) {
            return bad("energy_rel_tol", self.energy_rel_tol);
        }
        if !(self.cg_tol > 0.0) {
            return bad("cg_tol", self.cg_tol);
        }
        if self.max_outer_iters == 0 || self.cg_max_iters == 0 {
            return Err(Error::InvalidParameter(
                "iteration caps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Components of `Ω_n` whose constant offset nothing pins.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeDeficiency {
    pub unpinned_components: Vec<usize>,
    pub total_components: usize,
}

/// Everything of the joint problem that stays fixed across reweighting.
#[derive(Clone, Debug)]
pub struct JointOperators {
    pub front: BiniOperator,
    pub back: BiniOperator,
    pub prior_mask: PriorMask,
    pub silhouette: SilhouetteCoupling,
    /// Prior depths per unknown; only entries selected by the mask are read.
    pub prior_front: DepthVector,
    pub prior_back: DepthVector,
    components: Vec<usize>,
    component_count: usize,
}

impl JointOperators {
    pub fn new(
        normals_front: &VectorField2D,
        normals_back: &VectorField2D,
        prior_front: &ScalarField2D,
        prior_back: &ScalarField2D,
        domain: &DomainMask,
    ) -> Result<Self> {
        let front = assemble_bini(normals_front, domain)?;
        let back = assemble_bini(normals_back, domain)?;
        let prior_mask = build_prior_mask(domain, domain)?;
        let zf = vectorize(prior_front, domain)?;
        let zb = vectorize(prior_back, domain)?;
        for i in 0..domain.len() {
            if prior_mask.front[i] && !(zf[i].is_finite() && zb[i].is_finite()) {
                let (u, v) = domain.shape().coords(domain.pixel(i));
                return Err(Error::InvalidParameter(format!(
                    "prior depth undefined at pixel ({u}, {v}) inside Ω_z"
                )));
            }
        }
        let (components, component_count) = domain.components();
        Ok(Self {
            front,
            back,
            prior_mask,
            silhouette: build_silhouette_coupling(domain),
            prior_front: zf,
            prior_back: zb,
            components,
            component_count,
        })
    }

    pub fn unknowns(&self) -> usize {
        self.front.unknowns()
    }

    /// Components that neither sheet's prior term pins. The silhouette term
    /// never pins: shifting both sheets together leaves it unchanged.
    pub fn gauge_deficiency(&self, lambda_d: f64) -> Option<GaugeDeficiency> {
        let mut pinned = vec![false; self.component_count];
        if lambda_d > 0.0 {
            for (i, &c) in self.components.iter().enumerate() {
                if self.prior_mask.front[i] || self.prior_mask.back[i] {
                    pinned[c] = true;
                }
            }
        }
        let unpinned: Vec<usize> = (0..self.component_count).filter(|&c| !pinned[c]).collect();
        (!unpinned.is_empty()).then(|| GaugeDeficiency {
            unpinned_components: unpinned,
            total_components: self.component_count,
        })
    }
}

/// The frozen-weight linear system for the stacked depths.
#[derive(Clone, Debug)]
pub struct JointSystem {
    pub lhs: SparseSpd,
    pub rhs: Vec<f64>,
    /// Set when some component's offset is unconstrained; the matrix is then
    /// only semidefinite.
    pub gauge_warning: Option<GaugeDeficiency>,
}

impl JointSystem {
    /// Front unknowns come first: `0..n` front, `n..2n` back.
    pub fn unknowns_per_sheet(&self) -> usize {
        self.rhs.len() / 2
    }

    /// `row col value` lines of the left-hand side, followed by
    /// `rhs index value` lines.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# n={} nnz={}", self.lhs.n(), self.lhs.nnz())?;
        for (r, c, v) in self.lhs.triplets() {
            writeln!(out, "{r} {c} {v:.17e}")?;
        }
        for (i, v) in self.rhs.iter().enumerate() {
            writeln!(out, "rhs {i} {v:.17e}")?;
        }
        Ok(())
    }
}

pub fn assemble_joint_system(
    ops: &JointOperators,
    weights_front: &BilateralWeights,
    weights_back: &BilateralWeights,
    hyper: &Hyperparameters,
) -> JointSystem {
    let n = ops.unknowns();
    let mut triplets = Vec::with_capacity(40 * n);
    // Structural diagonal, so the matrix always has one.
    triplets.extend((0..2 * n).map(|i| (i, i, 0.0)));
    let mut rhs = vec![0.0; 2 * n];
    {
        let (rf, rb) = rhs.split_at_mut(n);
        ops.front
            .accumulate_normal_equations(weights_front, 0, &mut triplets, rf);
        ops.back
            .accumulate_normal_equations(weights_back, n, &mut triplets, rb);
    }
    if hyper.lambda_d > 0.0 {
        for i in 0..n {
            if ops.prior_mask.front[i] {
                triplets.push((i, i, hyper.lambda_d));
                rhs[i] += hyper.lambda_d * ops.prior_front[i];
            }
            if ops.prior_mask.back[i] {
                triplets.push((n + i, n + i, hyper.lambda_d));
                rhs[n + i] += hyper.lambda_d * ops.prior_back[i];
            }
        }
    }
    if hyper.lambda_s > 0.0 {
        for (i, _) in ops.silhouette.s.iter().enumerate().filter(|(_, &s)| s) {
            let l = hyper.lambda_s;
            triplets.push((i, i, l));
            triplets.push((n + i, n + i, l));
            triplets.push((i, n + i, -l));
            triplets.push((n + i, i, -l));
        }
    }
    JointSystem {
        lhs: SparseSpd::from_triplets(2 * n, &triplets),
        rhs,
        gauge_warning: ops.gauge_deficiency(hyper.lambda_d),
    }
}

/// The five terms of the joint objective, each already scaled by its λ.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EnergyTerms {
    pub normal_front: f64,
    pub normal_back: f64,
    pub prior_front: f64,
    pub prior_back: f64,
    pub silhouette: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.normal_front + self.normal_back + self.prior_front + self.prior_back + self.silhouette
    }
}

pub fn energy_terms(
    ops: &JointOperators,
    weights_front: &BilateralWeights,
    weights_back: &BilateralWeights,
    hyper: &Hyperparameters,
    zf: &[f64],
    zb: &[f64],
) -> EnergyTerms {
    let prior = |mask: &[bool], prior: &[f64], z: &[f64]| -> f64 {
        mask.iter()
            .zip(prior.iter().zip(z))
            .filter(|(&m, _)| m)
            .map(|(_, (p, z))| (z - p) * (z - p))
            .sum()
    };
    EnergyTerms {
        normal_front: ops.front.weighted_energy(weights_front, zf),
        normal_back: ops.back.weighted_energy(weights_back, zb),
        prior_front: hyper.lambda_d * prior(&ops.prior_mask.front, &ops.prior_front, zf),
        prior_back: hyper.lambda_d * prior(&ops.prior_mask.back, &ops.prior_back, zb),
        silhouette: hyper.lambda_s * ops.silhouette.quadratic_form(zf, zb),
    }
}

/// Frozen-weight objective value.
pub fn energy(
    ops: &JointOperators,
    weights_front: &BilateralWeights,
    weights_back: &BilateralWeights,
    hyper: &Hyperparameters,
    zf: &[f64],
    zb: &[f64],
) -> f64 {
    energy_terms(ops, weights_front, weights_back, hyper, zf, zb).total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_domain, GridShape};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(w: usize, h: usize) -> DomainMask {
        let g = GridShape::new(w, h, 1.0).unwrap();
        build_domain(&vec![true; g.len()], &vec![true; g.len()], g).unwrap()
    }

    fn disk(res: usize, r: f64) -> Vec<bool> {
        let c = (res as f64 - 1.0) / 2.0;
        (0..res * res)
            .map(|p| {
                let (u, v) = ((p % res) as f64 - c, (p / res) as f64 - c);
                u * u + v * v < r * r
            })
            .collect()
    }

    fn random_ops(seed: u64, res: usize) -> (JointOperators, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GridShape::square(res).unwrap();
        let omega_n = disk(res, res as f64 * 0.45);
        let omega_z: Vec<bool> = (0..g.len()).map(|p| p % res < res / 2).collect();
        let domain = build_domain(&omega_n, &omega_z, g).unwrap();
        let mut normal = |flip: f64| {
            let v: Vec<[f64; 3]> = (0..g.len())
                .map(|_| {
                    let x: f64 = rng.random_range(-0.5..0.5);
                    let y: f64 = rng.random_range(-0.5..0.5);
                    let l = (x * x + y * y + 1.0).sqrt();
                    [x / l, y / l, flip / l]
                })
                .collect();
            VectorField2D::new(g, v).unwrap()
        };
        let (nf, nb) = (normal(1.0), normal(-1.0));
        let pf = ScalarField2D::from_fn(g, |u, v| 10.0 + 0.1 * (u + v) as f64);
        let pb = ScalarField2D::from_fn(g, |u, v| 14.0 - 0.05 * (u * v) as f64);
        (JointOperators::new(&nf, &nb, &pf, &pb, &domain).unwrap(), rng)
    }

    fn random_weights(op: &BiniOperator, rng: &mut ChaCha8Rng) -> BilateralWeights {
        let z: Vec<f64> = (0..op.unknowns()).map(|_| rng.random_range(0.0..2.0)).collect();
        bilateral_weights(&z, op, 2.0)
    }

    #[test]
    fn frontal_normals_give_pure_difference_stencils() {
        let d = full(4, 4);
        let op = assemble_bini(&VectorField2D::filled(d.shape(), [0.0, 0.0, 1.0]), &d).unwrap();
        assert!(op.b().iter().all(|&b| b == 0.0));
        assert_eq!(op.rows_len(), 64);
        for r in 0..op.rows_len() {
            if let Some(s) = op.row(r) {
                assert_eq!(s.coef, 1.0);
                assert_ne!(s.plus, s.minus);
            }
        }
        // Corner pixel 0 has u+ and v+ only.
        assert_eq!(
            (0..4).map(|r| op.row_valid(r)).collect::<Vec<_>>(),
            [true, false, true, false]
        );
    }

    #[test]
    fn tilted_plane_has_zero_residual() {
        let g = GridShape::new(6, 5, 0.25).unwrap();
        let d = build_domain(&vec![true; 30], &vec![true; 30], g).unwrap();
        let (a, c) = (0.6f64, 0.8f64);
        let op = assemble_bini(&VectorField2D::filled(g, [a, 0.0, c]), &d).unwrap();
        let z: Vec<f64> = d
            .pixels()
            .iter()
            .map(|&p| -(a / c) * g.coords(p).0 as f64 * g.pitch() + 3.0)
            .collect();
        assert!(op.residual(&z).iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn sphere_cap_residual_matches_direct_differences() {
        let g = GridShape::new(8, 8, 0.5).unwrap();
        let r = 10.0;
        let d = build_domain(&vec![true; 64], &vec![true; 64], g).unwrap();
        let c = 3.5 * g.pitch();
        let depth = |u: usize, v: usize| {
            let (x, y) = (u as f64 * g.pitch() - c, v as f64 * g.pitch() - c);
            20.0 - (r * r - x * x - y * y).sqrt()
        };
        let normals = VectorField2D::new(
            g,
            (0..64)
                .map(|p| {
                    let (u, v) = g.coords(p);
                    let (x, y) = (u as f64 * g.pitch() - c, v as f64 * g.pitch() - c);
                    [-x / r, -y / r, (r * r - x * x - y * y).sqrt() / r]
                })
                .collect(),
        )
        .unwrap();
        let op = assemble_bini(&normals, &d).unwrap();
        let z: Vec<f64> = (0..64).map(|p| depth(p % 8, p / 8)).collect();
        let res = op.residual(&z);
        let mut worst = 0.0f64;
        for p in 0..64 {
            let (u, v) = (p % 8, p / 8);
            let [nx, ny, nz] = normals.vectors()[p];
            let h = g.pitch();
            let rows = [
                (u < 7).then(|| nz * (depth(u + 1, v) - depth(u, v)) / h + nx),
                (u > 0).then(|| nz * (depth(u, v) - depth(u - 1, v)) / h + nx),
                (v < 7).then(|| nz * (depth(u, v + 1) - depth(u, v)) / h + ny),
                (v > 0).then(|| nz * (depth(u, v) - depth(u, v - 1)) / h + ny),
            ];
            for (k, expect) in rows.iter().enumerate() {
                let got = res[4 * p + k];
                match expect {
                    Some(e) => {
                        assert!((got - e).abs() < 1e-12, "pixel {p} row {k}");
                        worst = worst.max(got.abs());
                    }
                    None => assert_eq!(got, 0.0),
                }
            }
        }
        // One-sided differences are first order in the pitch.
        assert!(worst < g.pitch());
    }

    #[test]
    fn grazing_normal_is_rejected_with_its_pixel() {
        let d = full(3, 3);
        let mut n = VectorField2D::filled(d.shape(), [0.0, 0.0, 1.0]);
        n.vectors_mut()[5] = [1.0, 0.0, 0.0];
        assert!(matches!(
            assemble_bini(&n, &d),
            Err(Error::DegenerateNormal { u: 2, v: 1, .. })
        ));
    }

    #[test]
    fn weights_on_smooth_and_jumping_depth() {
        let d = full(3, 2);
        let op = assemble_bini(&VectorField2D::filled(d.shape(), [0.0, 0.0, 1.0]), &d).unwrap();
        // Row-major: pixel 1 is the middle of the top row.
        let smooth = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let w = bilateral_weights(&smooth, &op, 2.0);
        assert_eq!(&w.values()[4..6], &[0.5, 0.5]);
        // Backward jump twice the forward jump.
        let jump = [0.0, 0.2, 0.3, 0.0, 0.2, 0.3];
        let w = bilateral_weights(&jump, &op, 2.0);
        let (dp, dm): (f64, f64) = (0.1, 0.2);
        let expect = 1.0 / (1.0 + (-(2.0 * (dm * dm - dp * dp))).exp());
        assert!((w.values()[4] - expect).abs() < 1e-15);
        assert!(w.values()[4] > 0.5);
        assert!((w.values()[4] + w.values()[5] - 1.0).abs() < 1e-15);
        // Lone rows: pixel 0 has only u+ and v+ (v- invalid on the top row).
        assert_eq!(&w.values()[0..4], &[1.0, 0.0, 1.0, 0.0]);
        let soft = bilateral_weights(&jump, &op, 1e-12);
        assert!((soft.values()[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_assembled_two_by_two_system() {
        let g = GridShape::new(2, 2, 1.0).unwrap();
        let d = build_domain(&[true; 4], &[true; 4], g).unwrap();
        let nf = VectorField2D::filled(g, [0.6, 0.0, 0.8]);
        let nb = VectorField2D::filled(g, [0.0, 0.0, -1.0]);
        let pf = ScalarField2D::filled(g, 2.0);
        let pb = ScalarField2D::filled(g, 3.0);
        let ops = JointOperators::new(&nf, &nb, &pf, &pb, &d).unwrap();
        let h = Hyperparameters::default();
        let wf = BilateralWeights::uniform(&ops.front, h.k);
        let wb = BilateralWeights::uniform(&ops.back, h.k);
        let sys = assemble_joint_system(&ops, &wf, &wb, &h);
        // Every edge of the 4-cycle 0-1-3-2 is seen once from each end with
        // weight 1, so AᵀWA = 2 c² (D - Adj) per sheet.
        let (ld, ls) = (h.lambda_d, h.lambda_s);
        let cf = 2.0 * 0.64;
        let cb = 2.0 * 1.0;
        let edges = [(0, 1), (0, 2), (1, 3), (2, 3)];
        let mut expect = [[0.0f64; 8]; 8];
        for (off, c) in [(0, cf), (4, cb)] {
            for i in 0..4 {
                expect[off + i][off + i] = 2.0 * c + ld + ls;
            }
            for &(a, b) in &edges {
                expect[off + a][off + b] = -c;
                expect[off + b][off + a] = -c;
            }
        }
        for i in 0..4 {
            expect[i][i + 4] = -ls;
            expect[i + 4][i] = -ls;
        }
        let dense = sys.lhs.to_dense();
        for r in 0..8 {
            for c in 0..8 {
                assert!((dense[r * 8 + c] - expect[r][c]).abs() < 1e-15, "({r}, {c})");
            }
        }
        // u-rows carry b = -0.6 with coefficient 0.8: ±2 · 0.8 · 0.6.
        let rhs_f = [0.96, -0.96, 0.96, -0.96];
        for i in 0..4 {
            assert!((sys.rhs[i] - (rhs_f[i] + ld * 2.0)).abs() < 1e-15);
            assert!((sys.rhs[4 + i] - ld * 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..3 {
            let (ops, mut rng) = random_ops(seed, 10);
            let h = Hyperparameters::default();
            let wf = random_weights(&ops.front, &mut rng);
            let wb = random_weights(&ops.back, &mut rng);
            let sys = assemble_joint_system(&ops, &wf, &wb, &h);
            let n = ops.unknowns();
            for _ in 0..20 {
                let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(5.0..15.0)).collect();
                let e = |x: &[f64]| energy(&ops, &wf, &wb, &h, &x[..n], &x[n..]);
                let hx = sys.lhs.mul(&x);
                let analytic: Vec<f64> = (0..2 * n).map(|i| 2.0 * (hx[i] - sys.rhs[i])).collect();
                let step = 1e-3;
                let mut num = 0.0;
                let mut den = 0.0;
                let mut xp = x.clone();
                for i in 0..2 * n {
                    xp[i] = x[i] + step;
                    let ep = e(&xp);
                    xp[i] = x[i] - step;
                    let em = e(&xp);
                    xp[i] = x[i];
                    let fd = (ep - em) / (2.0 * step);
                    num += (fd - analytic[i]).powi(2);
                    den += analytic[i].powi(2);
                }
                let rel = (num / den).sqrt();
                assert!(rel < 1e-6, "relative gradient error {rel}");
            }
        }
    }

    #[test]
    fn silhouette_form_matches_direct_sum() {
        let (ops, mut rng) = random_ops(5, 16);
        let n = ops.unknowns();
        let zf: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zb: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut direct = 0.0;
        for i in 0..n {
            if ops.silhouette.flags()[i] {
                direct += (zf[i] - zb[i]).powi(2);
            }
        }
        assert!((ops.silhouette.quadratic_form(&zf, &zb) - direct).abs() < 1e-12);
        assert_eq!(ops.silhouette.quadratic_form(&zf, &zf), 0.0);
        // Same value through the assembled matrix with only λs active.
        let zero_f = BilateralWeights::from_raw(vec![0.0; 4 * n], 2.0);
        let zero_b = zero_f.clone();
        let h = Hyperparameters {
            lambda_d: 0.0,
            lambda_s: 1.0,
            ..Hyperparameters::default()
        };
        let sys = assemble_joint_system(&ops, &zero_f, &zero_b, &h);
        let x: Vec<f64> = zf.iter().chain(&zb).copied().collect();
        let q: f64 = sys.lhs.mul(&x).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((q - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn single_pixel_coupling_pattern() {
        let g = GridShape::square(3).unwrap();
        let mut m = vec![false; 9];
        m[4] = true;
        let d = build_domain(&m, &m, g).unwrap();
        let nf = VectorField2D::filled(g, [0.0, 0.0, 1.0]);
        let nb = VectorField2D::filled(g, [0.0, 0.0, -1.0]);
        let p = ScalarField2D::filled(g, 1.0);
        let ops = JointOperators::new(&nf, &nb, &p, &p, &d).unwrap();
        let h = Hyperparameters {
            lambda_d: 0.0,
            lambda_s: 1.0,
            ..Hyperparameters::default()
        };
        let w = BilateralWeights::uniform(&ops.front, 2.0);
        let sys = assemble_joint_system(&ops, &w, &w, &h);
        assert_eq!(sys.lhs.to_dense(), vec![1.0, -1.0, -1.0, 1.0]);
        assert!(sys.gauge_warning.is_some());
    }

    #[test]
    fn prior_mask_is_the_set_intersection() {
        let res = 24;
        let g = GridShape::square(res).unwrap();
        let omega_n = disk(res, 9.0);
        let omega_z: Vec<bool> = (0..g.len()).map(|p| p / res >= 10).collect();
        let d = build_domain(&omega_n, &omega_z, g).unwrap();
        let m = build_prior_mask(&d, &d).unwrap();
        for i in 0..d.len() {
            let p = d.pixel(i);
            let expect = omega_n[p] && omega_z[p];
            assert_eq!(m.diag(i), expect);
            assert_eq!(m.diag(i + d.len()), expect);
        }
        let full_z = build_domain(&omega_n, &vec![true; g.len()], g).unwrap();
        let m = build_prior_mask(&full_z, &full_z).unwrap();
        assert!((0..2 * d.len()).all(|i| m.diag(i)));
        let no_z = build_domain(&omega_n, &vec![false; g.len()], g).unwrap();
        assert!(build_prior_mask(&no_z, &no_z).unwrap().is_empty());
        let other = build_domain(&disk(res, 5.0), &omega_z, g).unwrap();
        assert!(matches!(
            build_prior_mask(&d, &other),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn empty_prior_intersection_flags_gauge() {
        let (ops, _) = random_ops(1, 8);
        assert!(ops.gauge_deficiency(1e-4).is_none());
        assert!(ops.gauge_deficiency(0.0).is_some());
    }

    #[test]
    fn zero_lambdas_give_block_diagonal_with_constant_null_space() {
        let (ops, mut rng) = random_ops(2, 12);
        let h = Hyperparameters {
            lambda_d: 0.0,
            lambda_s: 0.0,
            ..Hyperparameters::default()
        };
        let wf = random_weights(&ops.front, &mut rng);
        let wb = random_weights(&ops.back, &mut rng);
        let sys = assemble_joint_system(&ops, &wf, &wb, &h);
        let n = ops.unknowns();
        for (r, c, v) in sys.lhs.triplets() {
            if (r < n) != (c < n) {
                assert_eq!(v, 0.0);
            }
        }
        let y = sys.lhs.mul(&vec![1.0; 2 * n]);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-10 * sys.lhs.max_abs());
        assert!(sys.gauge_warning.is_some());
    }

    #[test]
    fn frozen_weight_solution_is_the_minimum() {
        let (ops, mut rng) = random_ops(3, 10);
        let h = Hyperparameters::default();
        let wf = random_weights(&ops.front, &mut rng);
        let wb = random_weights(&ops.back, &mut rng);
        let sys = assemble_joint_system(&ops, &wf, &wb, &h);
        let m = sys.lhs.n();
        let dense = DMatrix::from_row_slice(m, m, &sys.lhs.to_dense());
        let x = dense.cholesky().unwrap().solve(&DVector::from_vec(sys.rhs.clone()));
        let n = ops.unknowns();
        let e0 = energy(&ops, &wf, &wb, &h, &x.as_slice()[..n], &x.as_slice()[n..]);
        for _ in 0..100 {
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            assert!(energy(&ops, &wf, &wb, &h, &y[..n], &y[n..]) >= e0);
        }
    }

    #[test]
    fn exact_plane_with_matching_prior_has_zero_energy() {
        let g = GridShape::square(6).unwrap();
        let d = build_domain(&vec![true; 36], &vec![true; 36], g).unwrap();
        let nf = VectorField2D::filled(g, [0.0, 0.0, 1.0]);
        let nb = VectorField2D::filled(g, [0.0, 0.0, -1.0]);
        let p = ScalarField2D::filled(g, 4.0);
        let ops = JointOperators::new(&nf, &nb, &p, &p, &d).unwrap();
        let w = BilateralWeights::uniform(&ops.front, 2.0);
        let z = vec![4.0; 36];
        assert_eq!(energy(&ops, &w, &w, &Hyperparameters::default(), &z, &z), 0.0);
    }

    #[test]
    fn five_terms_sum_to_the_total() {
        let (ops, mut rng) = random_ops(4, 12);
        let h = Hyperparameters::default();
        let n = ops.unknowns();
        for _ in 0..10 {
            let wf = random_weights(&ops.front, &mut rng);
            let wb = random_weights(&ops.back, &mut rng);
            let zf: Vec<f64> = (0..n).map(|_| rng.random_range(8.0..12.0)).collect();
            let zb: Vec<f64> = (0..n).map(|_| rng.random_range(12.0..16.0)).collect();
            let data = |op: &BiniOperator, w: &BilateralWeights, z: &[f64]| {
                let mut s = 0.0;
                for r in 0..op.rows_len() {
                    if let Some(row) = op.row(r) {
                        let res = row.coef * (z[row.plus] - z[row.minus]) - op.b()[r];
                        s += w.values()[r] * res * res;
                    }
                }
                s
            };
            let mut prior = 0.0;
            let mut sil = 0.0;
            for i in 0..n {
                if ops.prior_mask.diag(i) {
                    prior += (zf[i] - ops.prior_front[i]).powi(2);
                    prior += (zb[i] - ops.prior_back[i]).powi(2);
                }
                if ops.silhouette.flags()[i] {
                    sil += (zf[i] - zb[i]).powi(2);
                }
            }
            let independent =
                data(&ops.front, &wf, &zf) + data(&ops.back, &wb, &zb) + h.lambda_d * prior + h.lambda_s * sil;
            let total = energy(&ops, &wf, &wb, &h, &zf, &zb);
            assert!((total - independent).abs() <= 1e-12 * total.max(1.0));
        }
    }

    #[test]
    fn triplet_export_round_trips() {
        let (ops, _) = random_ops(6, 6);
        let h = Hyperparameters::default();
        let w = BilateralWeights::uniform(&ops.front, h.k);
        let wb = BilateralWeights::uniform(&ops.back, h.k);
        let sys = assemble_joint_system(&ops, &w, &wb, &h);
        let mut buf = Vec::new();
        sys.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut triplets = Vec::new();
        let mut rhs = vec![0.0; sys.rhs.len()];
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(' ').collect();
            if f[0] == "rhs" {
                rhs[f[1].parse::<usize>().unwrap()] = f[2].parse().unwrap();
            } else {
                triplets.push((f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap()));
            }
        }
        assert_eq!(SparseSpd::from_triplets(sys.lhs.n(), &triplets), sys.lhs);
        assert_eq!(rhs, sys.rhs);
    }

    proptest! {
        #[test]
        fn weights_pair_up_and_stay_in_unit_interval(
            z in proptest::collection::vec(-5.0f64..5.0, 20),
            k in 0.01f64..20.0,
        ) {
            let g = GridShape::new(5, 4, 0.7).unwrap();
            let d = build_domain(&[true; 20], &[true; 20], g).unwrap();
            let op = assemble_bini(&VectorField2D::filled(g, [0.0, 0.0, 1.0]), &d).unwrap();
            let w = bilateral_weights(&z, &op, k);
            for pair in 0..40 {
                let (a, b) = (w.values()[2 * pair], w.values()[2 * pair + 1]);
                prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
                match (op.row_valid(2 * pair), op.row_valid(2 * pair + 1)) {
                    (true, true) => prop_assert!((a + b - 1.0).abs() < 1e-15),
                    (true, false) => prop_assert_eq!((a, b), (1.0, 0.0)),
                    (false, true) => prop_assert_eq!((a, b), (0.0, 1.0)),
                    (false, false) => prop_assert_eq!((a, b), (0.0, 0.0)),
                }
            }
        }

        #[test]
        fn forward_weight_grows_with_stiffness(
            dp in 0.0f64..0.5,
            extra in 0.05f64..0.5,
            k in 0.1f64..4.0,
        ) {
            let g = GridShape::new(3, 2, 1.0).unwrap();
            let d = build_domain(&[true; 6], &[true; 6], g).unwrap();
            let op = assemble_bini(&VectorField2D::filled(g, [0.0, 0.0, 1.0]), &d).unwrap();
            let dm = dp + extra;
            let z = [0.0, dm, dm + dp, 0.0, dm, dm + dp];
            let lo = bilateral_weights(&z, &op, k).values()[4];
            let hi = bilateral_weights(&z, &op, 1.5 * k).values()[4];
            prop_assert!(hi > lo || hi == 1.0);
        }

        #[test]
        fn assembled_lhs_is_symmetric(seed in 0u64..1000) {
            let (ops, mut rng) = random_ops(seed, 9);
            let h = Hyperparameters {
                lambda_d: rng.random_range(0.0..1.0),
                lambda_s: rng.random_range(0.0..1.0),
                ..Hyperparameters::default()
            };
            let wf = random_weights(&ops.front, &mut rng);
            let wb = random_weights(&ops.back, &mut rng);
            let sys = assemble_joint_system(&ops, &wf, &wb, &h);
            prop_assert!(sys.lhs.symmetry_error() < 1e-12);
            prop_assert!(sys.lhs.diagonal().iter().all(|&d| d >= 0.0));
        }
    }
}
