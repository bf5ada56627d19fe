//! Fixtures shared by the criterion benchmarks.

use dbini_core::{
    assemble_joint_system, BilateralWeights, DbiniProblem, Hyperparameters, JointOperators,
    JointSystem, SceneSpec, ShapeKind,
};

/// Noisy sphere with an eroded, offset prior on a `res`² grid.
pub fn sphere_problem(res: usize) -> DbiniProblem {
    let spec = SceneSpec::benchmark(ShapeKind::Sphere, res, 1).expect("valid preset");
    dbini_core::generate(&spec)
        .and_then(|b| b.problem())
        .expect("sphere preset generates")
}

/// First-iteration joint system of `problem` under default settings.
pub fn first_system(problem: &DbiniProblem) -> (JointOperators, JointSystem) {
    let ops = problem.operators().expect("operators");
    let hyper = Hyperparameters::default();
    let wf = BilateralWeights::uniform(&ops.front, hyper.k);
    let wb = BilateralWeights::uniform(&ops.back, hyper.k);
    let system = assemble_joint_system(&ops, &wf, &wb, &hyper);
    (ops, system)
}
