use nalgebra::Vector3;
use proptest::prelude::*;
use quadric_map_core::geometry::{project_ellipsoid, EllipsoidState, Plane};
use quadric_map_core::segmentation::{euclidean_cluster, segment_object, select_supporting_plane, PointCloud, SegmentationParams};
use quadric_map_core::sim::{camera_gravity, default_camera, look_at, render_depth, Scene, SceneObject, WORLD_UP};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn points() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..0.3f64).prop_map(|(x, y, z)| Vector3::new(x, y, z)), 0..300)
}

fn key(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    a.iter().partial_cmp(b.iter()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clusters_partition_the_input(pts in points(), tol in 0.02..0.3f64) {
        let clusters = euclidean_cluster(&PointCloud::new(pts.clone()), tol);
        let mut joined: Vec<Vector3<f64>> = clusters.iter().flat_map(|c| c.points.iter().copied()).collect();
        let mut input = pts;
        joined.sort_by(key);
        input.sort_by(key);
        prop_assert_eq!(joined, input);
        prop_assert!(clusters.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn chosen_support_lies_below_the_object(heights in prop::collection::vec(-1.0..1.0f64, 1..6), z in -0.5..1.5f64) {
        let planes: Vec<Plane> = heights.iter().map(|h| Plane::new(Vector3::z(), -h).unwrap()).collect();
        let centre = Vector3::new(0.1, 0.2, z);
        if let Ok(p) = select_supporting_plane(&planes, &centre) {
            prop_assert!(p.distance(&centre) > 0.0);
        }
    }
}

#[test]
fn segmented_points_clear_the_plane_and_repeat() {
    let cam = default_camera();
    let object = EllipsoidState::new(Vector3::new(0.0, 0.0, 0.2), Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.25, 0.15, 0.2));
    let scene = Scene {
        objects: vec![SceneObject { object_id: 0, label: "cup".into(), ellipsoid: object }],
        support_plane: Plane::new(WORLD_UP, 0.0).unwrap(),
        support_radius: 4.0,
        seed: 0,
    };
    let pose = look_at(&Vector3::new(1.2, -0.8, 1.0), &object.center);
    let (depth, _) = render_depth(&scene, &pose, &cam, 0.002, &mut ChaCha8Rng::seed_from_u64(1));
    let bbox = project_ellipsoid(&object, &pose, &cam).unwrap().bbox().unwrap();
    let params = SegmentationParams { gravity: camera_gravity(&pose), ..Default::default() };
    let run = |seed| segment_object(&depth, &cam, &bbox, "cup", 0.9, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let a = run(7);
    assert!(a.cloud.len() > params.eps3_min_cluster);
    assert!(a.cloud.points.iter().all(|p| a.support_plane.distance(p) > params.eps2_min_height));
    assert_eq!(a, run(7));
}
