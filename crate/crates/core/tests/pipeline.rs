use dbini_core::meshing::{depth_to_mesh, max_boundary_gap, zipper, Orientation};
use dbini_core::synth::{dense_oracle_solve, generate, PriorKind, SceneSpec, Shape, ShapeKind};
use dbini_core::{
    assemble_joint_system, bilateral_weights, depth_metrics, pcg_solve, vectorize, dbini_optimize,
    Hyperparameters,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_scene(kind: ShapeKind, res: usize, prior: PriorKind, noise: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        prior,
        noise_deg: noise,
        seed,
        ..SceneSpec::preset(kind, res).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pcg_matches_dense_solve_on_assembled_systems(
        kind in 0usize..7,
        res in 8usize..=16,
        noise in 0.0f64..6.0,
        seed in any::<u64>(),
        lambda_d in 1e-3f64..1.0,
        lambda_s in 0.0f64..1e-2,
        k in 0.2f64..8.0,
    ) {
        let spec = small_scene(ShapeKind::ALL[kind], res, PriorKind::Exact, noise, seed);
        let bundle = generate(&spec);
        prop_assume!(bundle.is_ok());
        let problem = bundle.unwrap().problem().unwrap();
        let ops = problem.operators().unwrap();
        let n = ops.unknowns();
        prop_assume!(2 * n <= 512);
        let hyper = Hyperparameters { lambda_d, lambda_s, k, ..Hyperparameters::default() };
        let zf = ops.prior_front.to_vec();
        let zb: Vec<f64> = ops.prior_back.iter().map(|z| z + 0.3).collect();
        let wf = bilateral_weights(&zf, &ops.front, k);
        let wb = bilateral_weights(&zb, &ops.back, k);
        let sys = assemble_joint_system(&ops, &wf, &wb, &hyper);
        let (x, report) = pcg_solve(&sys.lhs, &sys.rhs, &vec![0.0; 2 * n], 1e-13, 20_000).unwrap();
        prop_assert!(report.converged);
        let m = sys.lhs.n();
        let dense = DMatrix::from_row_slice(m, m, &sys.lhs.to_dense());
        let exact = dense.cholesky().unwrap().solve(&DVector::from_vec(sys.rhs.clone()));
        let err = (DVector::from_vec(x) - &exact).norm() / exact.norm();
        prop_assert!(err < 1e-8, "relative error {}", err);
    }
}

#[test]
fn oracle_and_sparse_paths_agree_per_iteration() {
    for (i, kind) in [ShapeKind::Sphere, ShapeKind::TwoSpheresOccluding, ShapeKind::Capsule]
        .into_iter()
        .enumerate()
    {
        let spec = small_scene(kind, 24, PriorKind::ErodedOffset { delta: 0.4 }, 2.0, i as u64);
        let problem = generate(&spec).unwrap().problem().unwrap();
        let hyper = Hyperparameters {
            cg_tol: 1e-13,
            max_outer_iters: 25,
            ..Hyperparameters::default()
        };
        let oracle = dense_oracle_solve(&problem, &hyper).unwrap();
        let mut iterates = Vec::new();
        let sol = dbini_core::solver::dbini_optimize_observed(&problem, &hyper, |s| {
            iterates.push((s.z_front.to_vec(), s.z_back.to_vec()))
        })
        .unwrap();
        assert_eq!(iterates.len(), oracle.iterates.len());
        assert_eq!(sol.converged, oracle.converged);
        for ((pf, pb), (of, ob)) in iterates.iter().zip(&oracle.iterates) {
            let scale = of.iter().chain(ob).fold(0.0f64, |m, z| m.max(z.abs()));
            let diff = pf
                .iter()
                .zip(of)
                .chain(pb.iter().zip(ob))
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(diff <= 1e-8 * scale, "{kind}: {diff}");
        }
    }
}

#[test]
fn synthetic_sphere_round_trip_closes_into_a_mesh() {
    let spec = SceneSpec::preset(ShapeKind::Sphere, 64).unwrap();
    let bundle = generate(&spec).unwrap();
    let problem = bundle.problem().unwrap();
    let sol = dbini_optimize(&problem, &Hyperparameters::default()).unwrap();
    let zf = sol.front_raster(&bundle.domain).unwrap();
    let zb = sol.back_raster(&bundle.domain).unwrap();
    let m = depth_metrics(&zf, &bundle.depth_front_gt, &bundle.domain, false).unwrap();
    let Shape::Sphere { radius, .. } = spec.shape else { unreachable!() };
    assert!(m.rmse < 0.05 * radius, "front rmse {}", m.rmse);
    let front = depth_to_mesh(&zf, &bundle.domain, Orientation::Front).unwrap();
    let back = depth_to_mesh(&zb, &bundle.domain, Orientation::Back).unwrap();
    let fused = zipper(&front, &back, &bundle.domain).unwrap();
    assert!(fused.watertight);
    assert_eq!(fused.mesh.euler_characteristic(), 2);
    let exact = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
    assert!((fused.mesh.signed_volume() - exact).abs() < 0.1 * exact);
}

#[test]
fn silhouette_term_closes_the_boundary_gap_on_a_step_scene() {
    let spec = SceneSpec::benchmark(ShapeKind::StepRelief, 48, 2).unwrap();
    let bundle = generate(&spec).unwrap();
    let problem = bundle.problem().unwrap();
    let gap = |lambda_s: f64| {
        let hyper = Hyperparameters {
            lambda_s,
            ..Hyperparameters::default()
        };
        let sol = dbini_optimize(&problem, &hyper).unwrap();
        max_boundary_gap(&sol.z_front, &sol.z_back, &bundle.domain)
    };
    assert!(gap(0.0) > gap(1e-6));
}

#[test]
fn vectorize_of_generated_truth_has_no_holes() {
    for kind in ShapeKind::ALL {
        let b = generate(&SceneSpec::preset(kind, 40).unwrap()).unwrap();
        let z = vectorize(&b.depth_front_gt, &b.domain).unwrap();
        assert!(z.iter().all(|v| v.is_finite()), "{kind}");
    }
}
