use nalgebra::{Rotation3, SVector, Vector3};
use proptest::prelude::*;
use quadric_map_core::backend::{build_graph, optimize, residual_2d, residual_3d, GraphConfig, SlamInput};
use quadric_map_core::eval::{evaluate, metric_rot, metric_shape, metric_trans, observation_counts, EvalFilter};
use quadric_map_core::fitting::EstimationParams;
use quadric_map_core::geometry::{BBox, EllipsoidState, Plane, Pose};
use quadric_map_core::sim::{default_camera, default_orbit_scene, simulate_run, NoiseSpec, TrajectorySpec};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vector3<f64>> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn ellipsoid() -> impl Strategy<Value = EllipsoidState> {
    (vec3(-2.0, 2.0), vec3(-3.1, 3.1), vec3(0.05, 1.0)).prop_map(|(c, rpy, a)| EllipsoidState::new(c, rpy, a))
}

fn upright() -> impl Strategy<Value = EllipsoidState> {
    (vec3(-2.0, 2.0), -3.1..3.1f64, vec3(0.05, 1.0)).prop_map(|(c, yaw, a)| EllipsoidState::new(c, Vector3::new(0.0, 0.0, yaw), a))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(-2.0, 2.0), vec3(-1.5, 1.5)).prop_map(|(t, w)| Pose::from_rotation_matrix(t, Rotation3::new(w).matrix()))
}

fn ground() -> Plane {
    Plane::new(Vector3::z(), 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn residual_3d_angles_are_wrapped(p in pose(), observed in ellipsoid(), landmark in ellipsoid()) {
        let sigma = SVector::<f64, 9>::repeat(1.0);
        let r = residual_3d(&p, &observed, 1.0, &landmark, &sigma);
        for k in 3..6 {
            prop_assert!(r[k] > -std::f64::consts::PI && r[k] <= std::f64::consts::PI);
        }
    }

    #[test]
    fn box_residual_scales_with_detection_probability(e in upright(), k in 0.1..10.0f64, p_det in 0.05..1.0f64) {
        let cam = default_camera();
        let pose = quadric_map_core::sim::look_at(&(e.center + Vector3::new(0.0, -6.0, 2.0)), &e.center);
        let bbox = BBox::new(100.0, 80.0, 200.0, 170.0);
        let a = residual_2d(&pose, &bbox, p_det, &e, &cam, 5.0).unwrap().norm_squared();
        let b = residual_2d(&pose, &bbox, k * p_det, &e, &cam, 5.0).unwrap().norm_squared();
        prop_assert!((b - k * a).abs() <= 1e-12 * (k * a).max(1e-300));
    }

    #[test]
    fn metric_ranges_and_identity(a in upright(), b in upright()) {
        let g = ground();
        prop_assert_eq!(metric_trans(&a, &a), 0.0);
        prop_assert!(metric_shape(&a, &a).abs() < 1e-12);
        prop_assert!(metric_rot(&a, &a, &g).map_or(true, |r| r < 1e-6));
        prop_assert!(metric_trans(&a, &b) >= 0.0);
        let s = metric_shape(&a, &b);
        prop_assert!((0.0..1.0).contains(&s));
        if let Ok(r) = metric_rot(&a, &b, &g) {
            prop_assert!((0.0..=90.0).contains(&r));
        }
    }

    #[test]
    fn metric_invariances(a in upright(), b in upright(), shift in vec3(-3.0, 3.0), yaw in -3.1..3.1f64) {
        let moved = |e: &EllipsoidState| EllipsoidState { center: e.center + shift, ..*e };
        prop_assert!((metric_shape(&moved(&a), &moved(&b)) - metric_shape(&a, &b)).abs() < 1e-9);
        let turn = Pose::from_rotation_matrix(Vector3::zeros(), Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix());
        let g = ground();
        if let (Ok(r0), Ok(r1)) = (metric_rot(&a, &b, &g), metric_rot(&a.transformed(&turn), &b.transformed(&turn), &g)) {
            prop_assert!((r0 - r1).abs() < 1e-6);
        }
    }
}

#[test]
fn noiseless_pipeline_from_ground_truth() {
    let scene = default_orbit_scene();
    let run = simulate_run(&scene, &TrajectorySpec::orbit(24, 3.0), &default_camera(), &NoiseSpec::noiseless(), &EstimationParams::default(), 3);
    // exact single-frame ellipsoids: the estimation stage itself is biased
    // (partial views), which is not what this checks
    let observations: Vec<_> = run
        .observations
        .iter()
        .map(|o| {
            let gt = scene.objects[o.object_id as usize].ellipsoid;
            let mut o = o.clone();
            o.ellipsoid = gt.transformed(&run.trajectory.poses[o.frame_id as usize].inverse());
            o
        })
        .collect();
    let input = SlamInput {
        camera: run.camera,
        poses: &run.trajectory.poses,
        odometry: Some(&run.trajectory.odometry),
        detections: &run.detections,
        observations: &observations,
    };
    let cfg = GraphConfig::default();
    let (mut graph, _) = build_graph(&input, &cfg, None);
    for l in &mut graph.landmarks {
        l.state = scene.objects[l.object_id as usize].ellipsoid;
    }
    let report = optimize(&graph, &cfg);
    let filter = EvalFilter::default();
    let summary = evaluate(&report.landmarks, &scene.objects, &scene.support_plane, &observation_counts(&run.detections, &filter), &filter);
    assert_eq!(summary.rows.len(), scene.objects.len());
    for row in &summary.rows {
        assert!(row.trans_m < 1e-3, "{row:?}");
        assert!(row.rot_deg.is_none_or(|r| r < 0.5), "{row:?}");
        assert!(row.shape_jaccard < 0.01, "{row:?}");
    }
}
