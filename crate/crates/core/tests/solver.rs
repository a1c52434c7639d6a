mod common;

use common::{random_small_graph, random_vec3, rng, uniform};
use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use quadslam::factors::{
    graph_jacobian, graph_residual, FactorGraph, NoiseModel, PriorFactor, QuadricUpdate, RelPosFactor,
    RelativePositionMeasurement, Values,
};
use quadslam::geometry::{CameraExtrinsics, CameraIntrinsics, DualQuadric, RobotPose};
use quadslam::harness::{build_graph, ground_truth_values, FactorNoiseConfig};
use quadslam::init::InitStrategy;
use quadslam::metrics::{rmse_lm, rmse_pos, Mode};
use quadslam::simulator::{generate_dataset, LandmarkShape, SensorConfig, WorldConfig};
use quadslam::solver::{linear_step, solve, solve_with, FreeVariables, SolverConfig, TerminationReason};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_step_matches_dense_oracle(seed in any::<u64>(), lambda in prop_oneof![Just(0.0), 1e-4..10.0f64]) {
        let g = random_small_graph(&mut rng(seed), QuadricUpdate::Centered);
        let j = graph_jacobian(&g).unwrap();
        let r = graph_residual(&g).unwrap().values;
        let jd = j.to_dense();
        let mut h = jd.transpose() * &jd;
        for i in 0..h.nrows() {
            h[(i, i)] *= 1.0 + lambda;
        }
        let sv = h.clone().svd(false, false).singular_values;
        let cond = sv.max() / sv.min();
        prop_assume!(sv.min() > 0.0 && cond < 1e8);
        let oracle = h.lu().solve(&(-(jd.transpose() * &r))).unwrap();
        let step = linear_step(&j, &r, lambda).unwrap();
        let err = (&step - &oracle).amax() / oracle.amax().max(1e-12);
        prop_assert!(err < 1e-10 * cond.max(1.0), "relative error {err:e}, condition {cond:e}");
    }

    #[test]
    fn solve_never_increases_cost(seed in any::<u64>()) {
        let g = random_small_graph(&mut rng(seed), QuadricUpdate::Centered);
        let (values, report) = solve(&g, &SolverConfig::default()).unwrap();
        prop_assert!(report.final_cost <= report.initial_cost);
        let recomputed = g.residual_at(&values).unwrap().cost;
        prop_assert_eq!(recomputed, report.final_cost);
    }

    #[test]
    fn quadrics_only_stage_keeps_poses(seed in any::<u64>()) {
        let g = random_small_graph(&mut rng(seed), QuadricUpdate::Centered);
        let (values, report) = solve_with(&g, &SolverConfig::default(), FreeVariables::QuadricsOnly).unwrap();
        prop_assert_eq!(&values.poses, &g.values().poses);
        prop_assert!(report.final_cost <= report.initial_cost);
        if g.values().quadrics.is_empty() {
            prop_assert_eq!(report.iterations, 0);
        }
    }
}

/// Relative-position factors are linear in the centroid, so with poses held
/// fixed one undamped step lands on the least-squares centroid: the mean of
/// the world-frame observations.
#[test]
fn linear_centroid_problem_converges_in_one_step() {
    let mut r = rng(21);
    let poses: Vec<RobotPose> = (0..6)
        .map(|_| RobotPose::new(uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0)))
        .collect();
    let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
    let mut g = FactorGraph::new(
        Values { poses: poses.clone(), quadrics: vec![DualQuadric::identity()] },
        k,
        CameraExtrinsics::left_facing_mount(),
    );
    g.add_prior(PriorFactor { pose_index: 0, anchor: poses[0], noise: NoiseModel::isotropic(3, 1e-3).unwrap() })
        .unwrap();
    let mut world_points = Vec::new();
    for (i, p) in poses.iter().enumerate() {
        let z = random_vec3(&mut r, -4.0, 4.0);
        world_points.push(p.robot_to_world(&z));
        g.add_relpos(RelPosFactor {
            measurement: RelativePositionMeasurement { pose_index: i, landmark_id: 0, z },
            noise: NoiseModel::isotropic(3, 0.1).unwrap(),
        })
        .unwrap();
    }
    let expected = world_points.iter().sum::<Vector3<f64>>() / world_points.len() as f64;

    let cfg = SolverConfig { initial_lambda: 1e-14, ..Default::default() };
    let (values, report) = solve_with(&g, &cfg, FreeVariables::QuadricsOnly).unwrap();
    assert!((values.quadrics[0].centroid() - expected).amax() < 1e-10);
    assert_eq!(values.poses, poses);
    assert!(report.converged);
    assert!(report.iterations <= 2, "{report:?}");

    // the minimum-norm undamped step reaches the same centroid; the plain
    // linear solve refuses the shape columns that no factor constrains
    let j = graph_jacobian(&g).unwrap();
    let first = g.values().quadric_column(0);
    let jq = j.columns_from(first);
    let r0 = graph_residual(&g).unwrap().values;
    assert!(linear_step(&jq, &r0, 0.0).is_err());
    let oracle = -(jq.to_dense().pseudo_inverse(1e-12).unwrap() * r0);
    let mut delta = nalgebra::DVector::zeros(g.values().dim());
    delta.rows_mut(first, 9).copy_from(&oracle);
    let moved = g.retract(g.values(), &delta);
    assert!((moved.quadrics[0].centroid() - expected).amax() < 1e-10);
    assert!((moved.quadrics[0].centroid() - values.quadrics[0].centroid()).amax() < 1e-10);
}

#[test]
fn noise_free_world_at_ground_truth_stays_put() {
    let world = WorldConfig { landmark_shape: LandmarkShape::Sphere, seed: 3, ..Default::default() };
    let d = generate_dataset(&world, &SensorConfig::default().noise_free()).unwrap();
    for mode in Mode::ALL {
        let mut g = build_graph(&d, mode, &FactorNoiseConfig::default(), &InitStrategy::default()).unwrap().graph;
        g.set_values(ground_truth_values(&d)).unwrap();
        let (values, report) = solve(&g, &SolverConfig::default()).unwrap();
        assert!(report.iterations <= 2, "{mode}: {report:?}");
        assert!(report.final_cost < 1e-10, "{mode}: {report:?}");
        assert!(report.converged);
        assert!(rmse_pos(&values.poses, &d.ground_truth).unwrap() < 1e-9);
        assert!(rmse_lm(&values.quadrics, &d.landmarks).unwrap() < 1e-9);
    }
}

#[test]
fn graph_without_variables_in_stage_terminates() {
    let mut g = FactorGraph::new(
        Values { poses: vec![RobotPose::new(0.5, 0.0, 0.0)], quadrics: Vec::new() },
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap(),
        CameraExtrinsics::left_facing_mount(),
    );
    g.add_prior(PriorFactor { pose_index: 0, anchor: RobotPose::default(), noise: NoiseModel::isotropic(3, 1.0).unwrap() })
        .unwrap();
    let (_, report) = solve_with(&g, &SolverConfig::default(), FreeVariables::QuadricsOnly).unwrap();
    assert_eq!(report.iterations, 0);
    assert!(matches!(report.termination_reason, TerminationReason::CostTol | TerminationReason::GradTol));
}

#[test]
fn unobservable_system_is_not_fatal() {
    // a quadric with no factors has zero curvature everywhere
    let mut g = FactorGraph::new(
        Values { poses: vec![RobotPose::new(1.0, 0.0, 0.0)], quadrics: vec![DualQuadric::identity()] },
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap(),
        CameraExtrinsics::left_facing_mount(),
    );
    g.add_prior(PriorFactor {
        pose_index: 0,
        anchor: RobotPose::default(),
        noise: NoiseModel::isotropic(3, 1.0).unwrap(),
    })
    .unwrap();
    let (values, report) = solve(&g, &SolverConfig::default()).unwrap();
    assert!(report.final_cost < 1e-20, "{report:?}");
    assert_eq!(values.quadrics[0], DualQuadric::identity());
}

#[test]
fn invalid_configuration_names_the_flag() {
    let cases = [
        (SolverConfig { max_iterations: 0, ..Default::default() }, "max-iterations"),
        (SolverConfig { initial_lambda: -1.0, ..Default::default() }, "initial-lambda"),
        (SolverConfig { lambda_up: 0.5, ..Default::default() }, "lambda-up"),
        (SolverConfig { lambda_down: 1.5, ..Default::default() }, "lambda-down"),
        (SolverConfig { rel_cost_tol: 0.0, ..Default::default() }, "rel-cost-tol"),
        (SolverConfig { grad_tol: f64::NAN, ..Default::default() }, "grad-tol"),
    ];
    for (cfg, flag) in cases {
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains(flag), "{e}");
    }
}

#[test]
fn dense_helper_agrees_with_sparse_product() {
    let g = random_small_graph(&mut rng(77), QuadricUpdate::Centered);
    let j = graph_jacobian(&g).unwrap();
    let r = graph_residual(&g).unwrap().values;
    let dense: DMatrix<f64> = j.to_dense();
    assert!((j.transpose_mul(&r) - dense.transpose() * r).amax() < 1e-12);
}
