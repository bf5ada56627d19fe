use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{pcg_solve, CgReport, SparseSpd};
use crate::assembly::{
    assemble_bini, assemble_joint_system, bilateral_weights, energy, BilateralWeights,
    Hyperparameters, JointOperators,
};
use crate::error::{shape_mismatch, Error, Result};
use crate::field::{rasterize, DepthVector, Direction, DomainMask, ScalarField2D, VectorField2D};

/// Floor of the relative-energy denominator.
pub const ENERGY_EPS: f64 = 1e-12;

/// Inputs of the joint front/back integration. Both sheets share one domain.
#[derive(Clone, Debug)]
pub struct DbiniProblem {
    pub normals_front: VectorField2D,
    pub normals_back: VectorField2D,
    pub prior_front: ScalarField2D,
    pub prior_back: ScalarField2D,
    pub domain: DomainMask,
}

impl DbiniProblem {
    pub fn new(
        normals_front: VectorField2D,
        normals_back: VectorField2D,
        prior_front: ScalarField2D,
        prior_back: ScalarField2D,
        domain: DomainMask,
    ) -> Result<Self> {
        let g = domain.shape();
        for (what, shape) in [
            ("front normals", normals_front.shape()),
            ("back normals", normals_back.shape()),
            ("front prior", prior_front.shape()),
            ("back prior", prior_back.shape()),
        ] {
            if !shape.same_extent(&g) {
                return Err(shape_mismatch(g, format!("{what} {shape}")));
            }
        }
        normals_front.validate_on(&domain)?;
        normals_back.validate_on(&domain)?;
        Ok(Self {
            normals_front,
            normals_back,
            prior_front,
            prior_back,
            domain,
        })
    }

    pub fn operators(&self) -> Result<JointOperators> {
        JointOperators::new(
            &self.normals_front,
            &self.normals_back,
            &self.prior_front,
            &self.prior_back,
            &self.domain,
        )
    }
}

/// Energies around one frozen-weight solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// At the previous iterate, with the weights used by this solve.
    pub energy_before: f64,
    /// At the new iterate, same weights.
    pub energy_after: f64,
    pub cg: CgReport,
}

/// What an observer sees after each outer iteration.
pub struct IterationState<'a> {
    /// Zero-based outer iteration.
    pub iteration: usize,
    pub z_front: &'a [f64],
    pub z_back: &'a [f64],
    pub weights_front: &'a BilateralWeights,
    pub weights_back: &'a BilateralWeights,
    pub record: &'a IterationRecord,
}

#[derive(Clone, Debug)]
pub struct DbiniSolution {
    pub z_front: DepthVector,
    pub z_back: DepthVector,
    pub outer_iterations: usize,
    /// Energy at the starting point, then after each solve.
    pub energy_trace: Vec<f64>,
    pub per_iteration_cg: Vec<CgReport>,
    pub iterations: Vec<IterationRecord>,
    /// Stopped on the relative energy change rather than the iteration cap.
    pub converged: bool,
}

impl DbiniSolution {
    pub fn front_raster(&self, domain: &DomainMask) -> Result<ScalarField2D> {
        rasterize(&self.z_front, domain, f64::NAN)
    }

    pub fn back_raster(&self, domain: &DomainMask) -> Result<ScalarField2D> {
        rasterize(&self.z_back, domain, f64::NAN)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_trace_csv(&self.iterations, out)
    }
}

/// `outer_iter,energy,cg_iters,cg_residual`, one row per solve.
pub fn write_trace_csv<W: Write>(records: &[IterationRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "outer_iter,energy,cg_iters,cg_residual")?;
    for (t, r) in records.iter().enumerate() {
        writeln!(
            out,
            "{},{:.12e},{},{:.6e}",
            t + 1,
            r.energy_after,
            r.cg.iterations,
            r.cg.final_residual_norm
        )?;
    }
    Ok(())
}

/// Starting depth for one sheet: the prior where it applies, elsewhere the
/// prior value of the nearest prior pixel by 4-connected grid distance
/// (ties go to the earliest source in row-major order), zero without any
/// prior.
pub fn initial_depth(mask: &[bool], prior: &[f64], domain: &DomainMask) -> DepthVector {
    let g = domain.shape();
    let mut value = vec![f64::NAN; g.len()];
    let mut queue = VecDeque::new();
    for i in (0..domain.len()).filter(|&i| mask[i]) {
        let p = domain.pixel(i);
        value[p] = prior[i];
        queue.push_back(p);
    }
    if queue.is_empty() {
        return DepthVector::zeros(domain.len());
    }
    while let Some(p) = queue.pop_front() {
        for dir in Direction::ALL {
            if let Some(q) = g.neighbor(p, dir) {
                if value[q].is_nan() {
                    value[q] = value[p];
                    queue.push_back(q);
                }
            }
        }
    }
    domain.pixels().iter().map(|&p| value[p]).collect::<Vec<_>>().into()
}

pub fn dbini_optimize(problem: &DbiniProblem, hyper: &Hyperparameters) -> Result<DbiniSolution> {
    dbini_optimize_observed(problem, hyper, |_| {})
}

/// Alternates frozen-weight joint solves with weight updates until the
/// relative energy change drops below `energy_rel_tol` or the iteration cap
/// is hit. `observer` runs after every solve.
pub fn dbini_optimize_observed(
    problem: &DbiniProblem,
    hyper: &Hyperparameters,
    mut observer: impl FnMut(&IterationState<'_>),
) -> Result<DbiniSolution> {
    hyper.validate()?;
    let ops = problem.operators()?;
    if let Some(gauge) = ops.gauge_deficiency(hyper.lambda_d) {
        return Err(Error::GaugeDeficient(format!(
            "{} of {} domain components have no prior pixels under lambda_d = {:e}",
            gauge.unpinned_components.len(),
            gauge.total_components,
            hyper.lambda_d
        )));
    }
    let n = ops.unknowns();
    let domain = &problem.domain;
    let mut zf = initial_depth(ops.prior_mask.front(), &ops.prior_front, domain).into_inner();
    let mut zb = initial_depth(ops.prior_mask.back(), &ops.prior_back, domain).into_inner();
    let mut wf = BilateralWeights::uniform(&ops.front, hyper.k);
    let mut wb = BilateralWeights::uniform(&ops.back, hyper.k);

    let mut energy_trace = vec![energy(&ops, &wf, &wb, hyper, &zf, &zb)];
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut x = Vec::with_capacity(2 * n);

    for t in 0..hyper.max_outer_iters {
        let system = assemble_joint_system(&ops, &wf, &wb, hyper);
        let energy_before = energy(&ops, &wf, &wb, hyper, &zf, &zb);
        x.clear();
        x.extend_from_slice(&zf);
        x.extend_from_slice(&zb);
        let (sol, cg) = pcg_solve(
            &system.lhs,
            &system.rhs,
            &x,
            hyper.cg_tol,
            hyper.cg_max_iters,
        )?;
        zf.copy_from_slice(&sol[..n]);
        zb.copy_from_slice(&sol[n..]);
        let energy_after = energy(&ops, &wf, &wb, hyper, &zf, &zb);
        let record = IterationRecord {
            energy_before,
            energy_after,
            cg,
        };
        observer(&IterationState {
            iteration: t,
            z_front: &zf,
            z_back: &zb,
            weights_front: &wf,
            weights_back: &wb,
            record: &record,
        });
        iterations.push(record);
        let previous = *energy_trace.last().unwrap();
        energy_trace.push(energy_after);
        wf = bilateral_weights(&zf, &ops.front, hyper.k);
        wb = bilateral_weights(&zb, &ops.back, hyper.k);
        if relative_change(previous, energy_after) < hyper.energy_rel_tol {
            converged = true;
            break;
        }
    }

    Ok(DbiniSolution {
        z_front: zf.into(),
        z_back: zb.into(),
        outer_iterations: iterations.len(),
        per_iteration_cg: iterations.iter().map(|r| r.cg).collect(),
        energy_trace,
        iterations,
        converged,
    })
}

pub fn relative_change(previous: f64, current: f64) -> f64 {
    (current - previous).abs() / previous.max(ENERGY_EPS)
}

/// How the free constant of a single-sheet integration is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GaugeAnchor {
    /// Each connected component gets zero mean depth.
    ZeroMean,
    /// Each connected component gets this mean depth.
    Mean(f64),
}

#[derive(Clone, Debug)]
pub struct BiniSolution {
    pub z: DepthVector,
    pub outer_iterations: usize,
    pub energy_trace: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

/// Plain bilateral normal integration of one sheet.
///
/// Same reweighting scheme as [`dbini_optimize`] without prior or silhouette
/// terms; `lambda_d` and `lambda_s` of `hyper` are ignored. The normal
/// equations alone are singular along a constant per component, so the
/// first unknown of each component is held at zero during the solve and the
/// anchor shifts every component afterwards.
pub fn bini_optimize(
    normals: &VectorField2D,
    domain: &DomainMask,
    hyper: &Hyperparameters,
    anchor: Option<GaugeAnchor>,
) -> Result<BiniSolution> {
    let Some(anchor) = anchor else {
        return Err(Error::GaugeDeficient(
            "plain normal integration needs a gauge anchor".into(),
        ));
    };
    hyper.validate()?;
    let op = assemble_bini(normals, domain)?;
    let n = op.unknowns();
    let (labels, count) = domain.components();
    let mut pinned = vec![false; count];
    let pins: Vec<usize> = (0..n)
        .filter(|&i| !std::mem::replace(&mut pinned[labels[i]], true))
        .collect();
    let pitch = domain.shape().pitch();
    let pin_weight = 1.0 / (pitch * pitch);

    let mut z = vec![0.0; n];
    let mut w = BilateralWeights::uniform(&op, hyper.k);
    let mut energy_trace = vec![op.weighted_energy(&w, &z)];
    let mut iterations = Vec::new();
    let mut converged = false;
    for _ in 0..hyper.max_outer_iters {
        let mut triplets: Vec<_> = (0..n).map(|i| (i, i, 0.0)).collect();
        let mut rhs = vec![0.0; n];
        op.accumulate_normal_equations(&w, 0, &mut triplets, &mut rhs);
        triplets.extend(pins.iter().map(|&i| (i, i, pin_weight)));
        let lhs = SparseSpd::from_triplets(n, &triplets);
        let energy_before = op.weighted_energy(&w, &z);
        let (sol, cg) = pcg_solve(&lhs, &rhs, &z, hyper.cg_tol, hyper.cg_max_iters)?;
        z = sol;
        let energy_after = op.weighted_energy(&w, &z);
        iterations.push(IterationRecord {
            energy_before,
            energy_after,
            cg,
        });
        let previous = *energy_trace.last().unwrap();
        energy_trace.push(energy_after);
        w = bilateral_weights(&z, &op, hyper.k);
        if relative_change(previous, energy_after) < hyper.energy_rel_tol {
            converged = true;
            break;
        }
    }

    let target = match anchor {
        GaugeAnchor::ZeroMean => 0.0,
        GaugeAnchor::Mean(m) => m,
    };
    let mut sums = vec![0.0; count];
    let mut sizes = vec![0usize; count];
    for (i, &c) in labels.iter().enumerate() {
        sums[c] += z[i];
        sizes[c] += 1;
    }
    for (i, &c) in labels.iter().enumerate() {
        z[i] += target - sums[c] / sizes[c] as f64;
    }

    Ok(BiniSolution {
        z: z.into(),
        outer_iterations: iterations.len(),
        energy_trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_domain, vectorize, GridShape};
    use crate::synth::{generate, PriorKind, SceneSpec, Shape, ShapeKind};

    fn rmse(a: &[f64], b: &[f64], align: bool) -> f64 {
        let n = a.len() as f64;
        let shift = if align {
            a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n
        } else {
            0.0
        };
        (a.iter().zip(b).map(|(x, y)| (x - y - shift).powi(2)).sum::<f64>() / n).sqrt()
    }

    fn plate(res: usize, tilt: [f64; 2], gap: f64) -> SceneSpec {
        SceneSpec {
            shape: Shape::TiltedPlane {
                center: [0.0, 0.0],
                radius: 0.4 * res as f64,
                depth: 50.0,
                tilt,
                gap,
            },
            ..SceneSpec::preset(ShapeKind::TiltedPlane, res).unwrap()
        }
    }

    #[test]
    fn parallel_planes_are_recovered_exactly() {
        let b = generate(&plate(32, [0.0, 0.0], 6.0)).unwrap();
        let hyper = Hyperparameters {
            lambda_s: 0.0,
            ..Hyperparameters::default()
        };
        let sol = dbini_optimize(&b.problem().unwrap(), &hyper).unwrap();
        let gt_f = vectorize(&b.depth_front_gt, &b.domain).unwrap();
        let gt_b = vectorize(&b.depth_back_gt, &b.domain).unwrap();
        assert!(rmse(&sol.z_front, &gt_f, false) < 1e-9);
        assert!(rmse(&sol.z_back, &gt_b, false) < 1e-9);
        assert!(sol.converged);
    }

    #[test]
    fn tilted_zero_gap_plate_is_recovered_at_defaults() {
        let b = generate(&plate(32, [0.3, -0.2], 0.0)).unwrap();
        let sol = dbini_optimize(&b.problem().unwrap(), &Hyperparameters::default()).unwrap();
        let gt = vectorize(&b.depth_front_gt, &b.domain).unwrap();
        assert!(rmse(&sol.z_front, &gt, false) < 1e-6);
        assert!(rmse(&sol.z_back, &gt, false) < 1e-6);
    }

    #[test]
    fn trace_is_finite_nonnegative_and_solves_descend() {
        let spec = SceneSpec::benchmark(ShapeKind::Sphere, 32, 3).unwrap();
        let problem = generate(&spec).unwrap().problem().unwrap();
        let hyper = Hyperparameters::default();
        let sol = dbini_optimize(&problem, &hyper).unwrap();
        assert_eq!(sol.energy_trace.len(), sol.outer_iterations + 1);
        assert!(sol.energy_trace.iter().all(|e| e.is_finite() && *e >= 0.0));
        for r in &sol.iterations {
            assert!(r.energy_after - r.energy_before <= 10.0 * hyper.cg_tol * r.energy_before);
            assert!(r.cg.converged);
        }
        let mut csv = Vec::new();
        sol.write_trace_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("outer_iter,energy,cg_iters,cg_residual\n"));
        assert_eq!(text.lines().count(), sol.outer_iterations + 1);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let spec = SceneSpec::benchmark(ShapeKind::TwoSpheresOccluding, 32, 8).unwrap();
        let problem = generate(&spec).unwrap().problem().unwrap();
        let hyper = Hyperparameters::default();
        let a = dbini_optimize(&problem, &hyper).unwrap();
        let b = dbini_optimize(&problem, &hyper).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.energy_trace), bits(&b.energy_trace));
        assert_eq!(bits(&a.z_front), bits(&b.z_front));
        assert_eq!(bits(&a.z_back), bits(&b.z_back));
    }

    #[test]
    fn unpinned_gauge_is_an_error() {
        let b = generate(&SceneSpec::preset(ShapeKind::Sphere, 24).unwrap()).unwrap();
        let problem = b.problem().unwrap();
        let free = Hyperparameters {
            lambda_d: 0.0,
            ..Hyperparameters::default()
        };
        assert!(matches!(dbini_optimize(&problem, &free), Err(Error::GaugeDeficient(_))));
        let g = b.domain.shape();
        let no_prior = b.domain.with_prior_domain(vec![false; g.len()]).unwrap();
        let problem = DbiniProblem { domain: no_prior, ..problem };
        assert!(matches!(
            dbini_optimize(&problem, &Hyperparameters::default()),
            Err(Error::GaugeDeficient(_))
        ));
    }

    #[test]
    fn bini_needs_an_anchor() {
        let b = generate(&SceneSpec::preset(ShapeKind::Sphere, 16).unwrap()).unwrap();
        assert!(matches!(
            bini_optimize(&b.normals_front, &b.domain, &Hyperparameters::default(), None),
            Err(Error::GaugeDeficient(_))
        ));
    }

    #[test]
    fn bini_recovers_a_tilted_plane_up_to_offset() {
        let b = generate(&plate(32, [0.3, -0.2], 0.0)).unwrap();
        let gt = vectorize(&b.depth_front_gt, &b.domain).unwrap();
        let mean = gt.iter().sum::<f64>() / gt.len() as f64;
        let sol = bini_optimize(
            &b.normals_front,
            &b.domain,
            &Hyperparameters::default(),
            Some(GaugeAnchor::Mean(mean)),
        )
        .unwrap();
        assert!(rmse(&sol.z, &gt, false) < 1e-6);
        let zero = bini_optimize(
            &b.normals_front,
            &b.domain,
            &Hyperparameters::default(),
            Some(GaugeAnchor::ZeroMean),
        )
        .unwrap();
        assert!(zero.z.iter().sum::<f64>().abs() < 1e-9 * gt.len() as f64);
    }

    #[test]
    fn bini_energy_ignores_a_constant_offset() {
        let spec = SceneSpec::benchmark(ShapeKind::Capsule, 24, 2).unwrap();
        let b = generate(&spec).unwrap();
        let op = assemble_bini(&b.normals_front, &b.domain).unwrap();
        let sol = bini_optimize(&b.normals_front, &b.domain, &Hyperparameters::default(), Some(GaugeAnchor::ZeroMean)).unwrap();
        let w = bilateral_weights(&sol.z, &op, 2.0);
        let shifted: Vec<f64> = sol.z.iter().map(|z| z + 37.5).collect();
        let (e0, e1) = (op.weighted_energy(&w, &sol.z), op.weighted_energy(&w, &shifted));
        assert!((e0 - e1).abs() <= 1e-9 * e0.max(1e-12));
    }

    /// A shallow spherical cap over a disk: no silhouette steepness, so the
    /// prior only fixes the offset.
    fn sphere_cap(res: usize) -> DbiniProblem {
        let g = GridShape::square(res).unwrap();
        let c = (res as f64 - 1.0) / 2.0;
        let (r, depth, rim) = (3.0 * res as f64 / 4.0, 2.0 * res as f64, res as f64 / 3.0);
        let mut omega = vec![false; g.len()];
        let mut nf = vec![[0.0, 0.0, 1.0]; g.len()];
        let mut nb = vec![[0.0, 0.0, -1.0]; g.len()];
        let mut zf = vec![f64::NAN; g.len()];
        let mut zb = vec![f64::NAN; g.len()];
        for p in 0..g.len() {
            let (u, v) = g.coords(p);
            let (x, y) = (u as f64 - c, v as f64 - c);
            if x * x + y * y < rim * rim {
                let s = (r * r - x * x - y * y).sqrt();
                omega[p] = true;
                nf[p] = [-x / r, -y / r, s / r];
                nb[p] = [-x / r, -y / r, -s / r];
                zf[p] = depth - s;
                zb[p] = depth + s;
            }
        }
        DbiniProblem::new(
            VectorField2D::new(g, nf).unwrap(),
            VectorField2D::new(g, nb).unwrap(),
            ScalarField2D::new(g, zf).unwrap(),
            ScalarField2D::new(g, zb).unwrap(),
            build_domain(&omega, &omega, g).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn bini_and_dbini_agree_on_a_cap_after_alignment() {
        let problem = sphere_cap(32);
        let hyper = Hyperparameters {
            lambda_s: 0.0,
            ..Hyperparameters::default()
        };
        let d = dbini_optimize(&problem, &hyper).unwrap();
        let b = bini_optimize(&problem.normals_front, &problem.domain, &hyper, Some(GaugeAnchor::ZeroMean)).unwrap();
        let gt = vectorize(&problem.prior_front, &problem.domain).unwrap();
        let (ed, eb) = (rmse(&d.z_front, &gt, true), rmse(&b.z, &gt, true));
        assert!(eb > 0.0);
        assert!((ed - eb).abs() <= 0.05 * eb, "dbini {ed} vs bini {eb}");
    }

    #[test]
    fn stronger_prior_pulls_closer_to_it() {
        let spec = SceneSpec {
            prior: PriorKind::InscribedPrimitive,
            ..SceneSpec::benchmark(ShapeKind::Sphere, 24, 1).unwrap()
        };
        let problem = generate(&spec).unwrap().problem().unwrap();
        let ops = problem.operators().unwrap();
        let mut last = f64::INFINITY;
        for lambda_d in [1e-4, 1e-2, 1.0, 1e3] {
            let hyper = Hyperparameters {
                lambda_d,
                ..Hyperparameters::default()
            };
            let sol = dbini_optimize(&problem, &hyper).unwrap();
            let mut dev = 0.0f64;
            for i in 0..ops.unknowns() {
                if ops.prior_mask.diag(i) {
                    dev = dev.max((sol.z_front[i] - ops.prior_front[i]).abs());
                    dev = dev.max((sol.z_back[i] - ops.prior_back[i]).abs());
                }
            }
            assert!(dev <= last, "lambda_d {lambda_d}: {dev} > {last}");
            last = dev;
        }
    }

    #[test]
    fn mirrored_problem_gives_mirrored_solution() {
        let spec = SceneSpec::benchmark(ShapeKind::Capsule, 24, 6).unwrap();
        let b = generate(&spec).unwrap();
        let flip = |f: &VectorField2D| {
            let g = f.shape();
            let v = (0..g.len())
                .map(|p| {
                    let (u, v) = g.coords(p);
                    let [x, y, z] = f.get(g.width() - 1 - u, v);
                    [-x, y, z]
                })
                .collect();
            VectorField2D::new(g, v).unwrap()
        };
        let mirrored = DbiniProblem::new(
            flip(&b.normals_front),
            flip(&b.normals_back),
            b.prior_front.mirror_horizontal(),
            b.prior_back.mirror_horizontal(),
            {
                let g = b.domain.shape();
                let n = crate::field::mirror_mask(b.domain.omega_n(), g);
                let z = crate::field::mirror_mask(b.domain.omega_z(), g);
                build_domain(&n, &z, g).unwrap()
            },
        )
        .unwrap();
        let hyper = Hyperparameters::default();
        let a = dbini_optimize(&b.problem().unwrap(), &hyper).unwrap();
        let m = dbini_optimize(&mirrored, &hyper).unwrap();
        let ra = a.front_raster(&b.domain).unwrap();
        let rm = m.front_raster(&mirrored.domain).unwrap().mirror_horizontal();
        for &p in b.domain.pixels() {
            assert!((ra.values()[p] - rm.values()[p]).abs() < 1e-6);
        }
    }

    #[test]
    fn initial_depth_spreads_the_nearest_prior() {
        let g = GridShape::new(5, 2, 1.0).unwrap();
        let omega_n = [true; 10];
        let mut omega_z = [false; 10];
        omega_z[0] = true;
        omega_z[4] = true;
        let d = build_domain(&omega_n, &omega_z, g).unwrap();
        let prior: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let z = initial_depth(&omega_z, &prior, &d);
        assert_eq!(&z[..], &[0.0, 0.0, 0.0, 4.0, 4.0, 0.0, 0.0, 0.0, 4.0, 4.0]);
        let none = initial_depth(&[false; 10], &prior, &d);
        assert!(none.iter().all(|&v| v == 0.0));
    }
}
