//! Chaining and metric oracles: the perfect predictor must reproduce the
//! ground truth exactly, and every metric must agree with a naive loop
//! reference.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use usrecon_core::dataio::ImageGeom;
use usrecon_core::geometry::{
    compose, corner_points, invert, params_to_matrix, relative_gt, RigidTransform,
    TransformParams,
};
use usrecon_core::reconstruct::{
    accumulated_error, chain, dice_overlap, evaluate_scan, final_drift, frame_error,
    window_starts, EvalOptions, OraclePredictor, Placement, Trajectory,
};
use usrecon_core::sampling::{sample_tasks_seeded, TaskPair, TaskSet};

fn random_rigid<R: Rng>(rng: &mut R, rot: f64, trans: f64) -> RigidTransform {
    params_to_matrix(&TransformParams {
        rx: rng.gen_range(-rot..rot),
        ry: rng.gen_range(-rot..rot),
        rz: rng.gen_range(-rot..rot),
        tx: rng.gen_range(-trans..trans),
        ty: rng.gen_range(-trans..trans),
        tz: rng.gen_range(-trans..trans),
    })
    .unwrap()
}

#[test]
fn oracle_predictor_reproduces_ground_truth() {
    let scan = common::posed_scan("s", 30, 6, 0.8, true);
    let tasks = sample_tasks_seeded(6, 9, TaskPair::new(3, 4), 11).unwrap();
    let predictor = OraclePredictor::new(tasks);
    let traj = chain(&scan, &predictor, TaskPair::new(3, 4)).unwrap();
    let gt = Trajectory::ground_truth(&scan);
    for (a, b) in traj.transforms.iter().zip(&gt.transforms) {
        assert!(a.approx_eq(b, 1e-8), "difference {}", a.max_abs_diff(b));
    }
    let geom = scan.geom();
    let corners = corner_points(geom.width, geom.height, geom.spacing_mm).unwrap();
    assert!(final_drift(&gt, &traj, &corners).unwrap() < 1e-8);
    assert!((dice_overlap(&gt, &traj, &geom, 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(accumulated_error(&gt, &traj, &geom, 1).unwrap() < 1e-8);
}

#[test]
fn interval_one_chain_equals_composed_gt() {
    // With the (k, k+1) main task the anchor chain is exactly the composed
    // per-pair ground-truth chain.
    let scan = common::posed_scan("s", 12, 4, 1.0, true);
    let tasks = TaskSet::full(4, TaskPair::new(2, 3)).unwrap();
    let predictor = OraclePredictor::new(tasks);
    let traj = chain(&scan, &predictor, TaskPair::new(2, 3)).unwrap();

    // Direct composition oracle in tool space.
    let calib_inv = invert(&scan.calib);
    let mut g = RigidTransform::identity();
    for k in 1..scan.len() as usize {
        let rel = relative_gt(&scan.world_poses[k - 1], &scan.world_poses[k], &scan.calib);
        let rel_tool = compose(&rel, &calib_inv);
        g = compose(&g, &invert(&rel_tool));
        assert!(
            traj.transforms[k].approx_eq(&g, 1e-9),
            "frame {}: diff {}",
            k + 1,
            traj.transforms[k].max_abs_diff(&g)
        );
    }
}

#[test]
fn single_window_reconstructs_m_minus_1_frames() {
    let scan = common::posed_scan("s", 8, 4, 1.0, true);
    let tasks = TaskSet::full(8, TaskPair::new(4, 5)).unwrap();
    let predictor = OraclePredictor::new(tasks);
    let starts = window_starts(scan.len(), 8, TaskPair::new(4, 5));
    assert_eq!(starts, vec![1]);
    let traj = chain(&scan, &predictor, TaskPair::new(4, 5)).unwrap();
    assert_eq!(traj.len(), 8);
    let reconstructed = traj
        .placements
        .iter()
        .filter(|p| **p != Placement::Reference)
        .count();
    assert_eq!(reconstructed, 7);
    assert_eq!(traj.interpolated_count(), 0);
}

#[test]
fn frame_error_examples_and_loop_oracle() {
    let corners = corner_points(32, 24, 0.5).unwrap();
    let t = random_rigid(&mut ChaCha12Rng::seed_from_u64(1), 0.8, 20.0);
    assert_eq!(frame_error(&t, &t, &corners), 0.0);

    let gt = RigidTransform::identity();
    let pred = RigidTransform::translation(0.0, 2.0, 0.0);
    assert!((frame_error(&gt, &pred, &corners) - 2.0).abs() < 1e-12);

    let mut rng = ChaCha12Rng::seed_from_u64(2);
    for _ in 0..200 {
        let a = random_rigid(&mut rng, 1.0, 30.0);
        let b = random_rigid(&mut rng, 1.0, 30.0);
        let fast = frame_error(&a, &b, &corners);
        let mut slow = 0.0;
        for &p in corners.points() {
            let pa = a.apply(p);
            let pb = b.apply(p);
            let mut d2 = 0.0;
            for c in 0..3 {
                d2 += (pb[c] - pa[c]) * (pb[c] - pa[c]);
            }
            slow += d2.sqrt();
        }
        slow /= corners.len() as f64;
        assert!((fast - slow).abs() < 1e-10);
    }
}

fn straight_trajectory(n: usize, step: &RigidTransform, geom: ImageGeom) -> Trajectory {
    let mut transforms = vec![RigidTransform::identity()];
    for _ in 1..n {
        transforms.push(compose(transforms.last().unwrap(), step));
    }
    let mut placements = vec![Placement::MainChain; n];
    placements[0] = Placement::Reference;
    Trajectory { transforms, placements, calib: RigidTransform::identity(), geom }
}

#[test]
fn accumulated_error_uniform_offset() {
    let geom = ImageGeom { width: 16, height: 16, spacing_mm: 1.0 };
    let step = RigidTransform::translation(0.0, 0.0, 2.0);
    let gt = straight_trajectory(10, &step, geom);
    let mut offset = gt.clone();
    for (k, t) in offset.transforms.iter_mut().enumerate() {
        if k > 0 {
            *t = compose(&RigidTransform::translation(3.0, 0.0, 0.0), t);
        }
    }
    assert_eq!(accumulated_error(&gt, &gt, &geom, 1).unwrap(), 0.0);
    let err = accumulated_error(&gt, &offset, &geom, 1).unwrap();
    assert!((err - 3.0).abs() < 1e-12);
}

#[test]
fn accumulated_error_stride_approximation_and_loop_oracle() {
    // Smooth random trajectories: stride 8 stays within 2% of the full
    // lattice, and stride 1 equals an explicit per-pixel loop.
    let geom = ImageGeom { width: 32, height: 32, spacing_mm: 0.6 };
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    for _ in 0..5 {
        let step_gt = params_to_matrix(&TransformParams {
            rx: 0.01,
            ry: -0.004,
            rz: 0.008,
            tx: 1.0,
            ty: 0.2,
            tz: 0.5,
        })
        .unwrap();
        let gt = straight_trajectory(20, &step_gt, geom);
        let mut pred = gt.clone();
        for (k, t) in pred.transforms.iter_mut().enumerate() {
            if k > 0 {
                let noise = random_rigid(&mut rng, 0.01, 0.8);
                *t = compose(t, &noise);
            }
        }
        let full = accumulated_error(&gt, &pred, &geom, 1).unwrap();
        let strided = accumulated_error(&gt, &pred, &geom, 8).unwrap();
        assert!(
            (full - strided).abs() / full < 0.02,
            "stride drift: {full} vs {strided}"
        );

        // Loop oracle at stride 1.
        let mut acc = 0.0;
        let mut count = 0usize;
        for m in 2..=gt.len() {
            let a = gt.image_transform(m);
            let b = pred.image_transform(m);
            for y in 0..geom.height {
                for x in 0..geom.width {
                    let p = [x as f64 * geom.spacing_mm, y as f64 * geom.spacing_mm, 0.0];
                    let pa = a.apply(p);
                    let pb = b.apply(p);
                    let mut d2 = 0.0;
                    for c in 0..3 {
                        d2 += (pb[c] - pa[c]) * (pb[c] - pa[c]);
                    }
                    acc += d2.sqrt();
                    count += 1;
                }
            }
        }
        let slow = acc / count as f64;
        assert!((full - slow).abs() < 1e-10);
    }
}

#[test]
fn dice_half_overlap_boxes() {
    // Two cubes of pixels offset by half their side: analytic box
    // intersection gives dice = 2 * 0.5 / (1 + 1) = 0.5. Voxel-aligned
    // shift makes the quantisation exact; tolerance is one voxel layer.
    let geom = ImageGeom { width: 11, height: 11, spacing_mm: 1.0 };
    let step = RigidTransform::translation(0.0, 0.0, 1.0);
    let gt = straight_trajectory(11, &step, geom); // 10x10x10 mm cube of pixels
    let mut shifted = gt.clone();
    for t in shifted.transforms.iter_mut() {
        *t = compose(&RigidTransform::translation(5.0, 0.0, 0.0), t);
    }
    // The reference frame of the shifted trajectory is no longer identity,
    // which is fine for the metric: it only reads placed pixel positions.
    let dice = dice_overlap(&gt, &shifted, &geom, 1.0).unwrap();
    // |A| = |B| = 11^3 voxels; intersection 6*11*11 (columns 5..10 of 0..10).
    let analytic = 2.0 * (6.0 * 11.0 * 11.0) / (2.0 * 11.0 * 11.0 * 11.0);
    assert!((dice - analytic).abs() < 1e-12, "dice {dice} vs analytic {analytic}");
    assert!((dice - 0.5).abs() <= 1.0 / 11.0 + 1e-12, "within one voxel layer of 0.5");
}

#[test]
fn dice_disjoint_clouds_is_zero() {
    let geom = ImageGeom { width: 8, height: 8, spacing_mm: 1.0 };
    let gt = straight_trajectory(5, &RigidTransform::translation(0.0, 0.0, 1.0), geom);
    let mut far = gt.clone();
    for t in far.transforms.iter_mut() {
        *t = compose(&RigidTransform::translation(500.0, 0.0, 0.0), t);
    }
    assert_eq!(dice_overlap(&gt, &far, &geom, 1.0).unwrap(), 0.0);
}

#[test]
fn final_drift_examples_and_identity_with_frame_error() {
    let geom = ImageGeom { width: 16, height: 12, spacing_mm: 0.5 };
    let corners = corner_points(geom.width, geom.height, geom.spacing_mm).unwrap();
    let gt = straight_trajectory(12, &RigidTransform::translation(0.5, 0.0, 1.5), geom);
    let mut pred = gt.clone();
    let last = pred.transforms.len() - 1;
    pred.transforms[last] =
        compose(&RigidTransform::translation(0.0, 5.0, 0.0), &pred.transforms[last]);
    let drift = final_drift(&gt, &pred, &corners).unwrap();
    assert!((drift - 5.0).abs() < 1e-12);

    // Cross-metric identity: final drift is frame_error at the last frame's
    // accumulated transforms.
    let direct = frame_error(
        &gt.image_transform(gt.len()),
        &pred.image_transform(pred.len()),
        &corners,
    );
    assert_eq!(drift, direct);

    assert!(final_drift(&gt, &gt, &corners).unwrap() < 1e-15);
}

#[test]
fn drift_grows_linearly_under_constant_bias() {
    // Constant per-step translation bias along a straight trajectory:
    // the final drift after k steps is k * |bias| within 1%.
    let geom = ImageGeom { width: 8, height: 8, spacing_mm: 1.0 };
    let corners = corner_points(geom.width, geom.height, geom.spacing_mm).unwrap();
    let step_gt = RigidTransform::translation(0.0, 0.0, 2.0);
    let bias = RigidTransform::translation(0.05, 0.0, 0.0);
    let step_pred = compose(&step_gt, &bias);
    let mut drifts = Vec::new();
    for n in [5usize, 10, 20, 40] {
        let gt = straight_trajectory(n, &step_gt, geom);
        let pred = straight_trajectory(n, &step_pred, geom);
        drifts.push((n, final_drift(&gt, &pred, &corners).unwrap()));
    }
    for &(n, d) in &drifts {
        let expected = 0.05 * (n as f64 - 1.0);
        assert!(
            (d - expected).abs() / expected < 0.01,
            "n = {n}: drift {d} vs {expected}"
        );
    }
}

#[test]
fn metrics_invariant_to_common_rigid_motion() {
    let scan = common::posed_scan("s", 25, 8, 0.7, true);
    let tasks = sample_tasks_seeded(5, 6, TaskPair::new(3, 4), 3).unwrap();
    let predictor = OraclePredictor::new(tasks);
    let mut pred = chain(&scan, &predictor, TaskPair::new(3, 4)).unwrap();
    let gt = Trajectory::ground_truth(&scan);
    // Perturb the prediction so the metrics are non-trivial.
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    for (k, t) in pred.transforms.iter_mut().enumerate() {
        if k > 0 {
            *t = compose(t, &random_rigid(&mut rng, 0.01, 0.4));
        }
    }
    let geom = scan.geom();
    let corners = corner_points(geom.width, geom.height, geom.spacing_mm).unwrap();
    let base_acc = accumulated_error(&gt, &pred, &geom, 1).unwrap();
    let base_drift = final_drift(&gt, &pred, &corners).unwrap();
    let base_dice = dice_overlap(&gt, &pred, &geom, 1.0).unwrap();

    let q = random_rigid(&mut rng, 1.0, 100.0);
    let apply_q = |traj: &Trajectory| Trajectory {
        transforms: traj.transforms.iter().map(|t| compose(&q, t)).collect(),
        placements: traj.placements.clone(),
        calib: traj.calib,
        geom: traj.geom,
    };
    let gt_q = apply_q(&gt);
    let pred_q = apply_q(&pred);
    let acc_q = accumulated_error(&gt_q, &pred_q, &geom, 1).unwrap();
    let drift_q = final_drift(&gt_q, &pred_q, &corners).unwrap();
    let dice_q = dice_overlap(&gt_q, &pred_q, &geom, 1.0).unwrap();
    assert!((base_acc - acc_q).abs() < 1e-9);
    assert!((base_drift - drift_q).abs() < 1e-9);
    assert!((base_dice - dice_q).abs() < 1.0 / 11.0, "dice moved {base_dice} -> {dice_q}");
}

#[test]
fn evaluate_scan_with_oracle_is_exact() {
    let scan = common::posed_scan("s", 30, 6, 0.8, true);
    let tasks = sample_tasks_seeded(6, 8, TaskPair::new(3, 4), 4).unwrap();
    let predictor = OraclePredictor::new(tasks);
    let metrics = evaluate_scan(
        &scan,
        &predictor,
        TaskPair::new(3, 4),
        &EvalOptions { acc_stride: 1, voxel_mm: 1.0 },
    )
    .unwrap();
    assert!(metrics.eps_frame < 1e-9);
    assert!(metrics.eps_acc < 1e-8);
    assert!(metrics.eps_drift < 1e-8);
    assert!((metrics.eps_dice - 1.0).abs() < 1e-12);
}
