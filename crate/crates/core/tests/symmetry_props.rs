use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use quadric_map_core::geometry::{EllipsoidState, Plane};
use quadric_map_core::segmentation::PointCloud;
use quadric_map_core::symmetry::{
    complete_cloud, estimate_symmetry, mirror_cloud, refine_symmetry, symmetry_score, visibility_aware_score, SymmetryKind,
    SymmetryParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn floor() -> Plane {
    Plane::new(Vector3::z(), 0.0).unwrap()
}

/// Surface points of an upright ellipsoid resting on the floor at `(x, y)`,
/// restricted to `keep`.
fn surface(e: &EllipsoidState, n: usize, seed: u64, keep: impl Fn(&Vector3<f64>) -> bool) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = e.rotation();
    let mut pts = Vec::new();
    while pts.len() < n {
        let u = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let Some(u) = u.try_normalize(1e-6) else { continue };
        if keep(&u) {
            pts.push(rot * u.component_mul(&e.axes) + e.center);
        }
    }
    pts
}

fn upright(yaw: f64) -> EllipsoidState {
    EllipsoidState::new(Vector3::new(0.4, 2.0, 0.25), Vector3::new(0.0, 0.0, yaw), Vector3::new(0.35, 0.15, 0.25))
}

fn angle_deg(a: &Plane, b: &Plane) -> f64 {
    a.normal.dot(&b.normal).abs().min(1.0).acos().to_degrees()
}

#[test]
fn refine_recovers_plane_from_five_degree_offset() {
    let e = upright(0.3);
    let truth = Plane::through_point(e.rotation().column(0).into_owned(), &e.center).unwrap();
    let cloud = PointCloud::new(surface(&e, 2000, 1, |_| true));
    let tilted = Rotation3::from_axis_angle(&Vector3::z_axis(), 5f64.to_radians()) * truth.normal;
    let init = Plane::through_point(tilted, &e.center).unwrap();
    let r = refine_symmetry(&cloud, &init, &floor(), SymmetryKind::PlaneReflection, &SymmetryParams::default());
    assert!(angle_deg(&r.planes[0], &truth) <= 3.0, "angle {}", angle_deg(&r.planes[0], &truth));
    assert!(r.p_sym > symmetry_score(&cloud, &init, &SymmetryParams::default()));
}

#[test]
fn asymmetric_cloud_scores_low() {
    // an L of two perpendicular bars: no vertical mirror plane fits
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pts = Vec::new();
    for _ in 0..400 {
        pts.push(Vector3::new(rng.random_range(0.0..0.6), rng.random_range(0.0..0.05), rng.random_range(0.0..0.3)));
        pts.push(Vector3::new(rng.random_range(0.0..0.05), rng.random_range(0.0..0.25), rng.random_range(0.0..0.1)));
    }
    let cloud = PointCloud::new(pts);
    let r = estimate_symmetry(&cloud, &floor(), SymmetryKind::PlaneReflection, &SymmetryParams::default()).unwrap();
    assert!(r.p_sym < 0.05, "p_sym {}", r.p_sym);
}

#[test]
fn quarter_surface_completes_to_full_extent() {
    let e = upright(0.0);
    let quarter = surface(&e, 3000, 3, |u| u.x >= 0.0 && u.y >= 0.0);
    let planes = [
        Plane::through_point(Vector3::x(), &e.center).unwrap(),
        Plane::through_point(Vector3::y(), &e.center).unwrap(),
    ];
    let full = complete_cloud(&PointCloud::new(quarter), &planes);
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for p in &full.points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let want_lo = e.center - e.axes;
    let want_hi = e.center + e.axes;
    assert!((lo - want_lo).amax() < 0.02 && (hi - want_hi).amax() < 0.02, "{lo} {hi}");
}

fn symmetric_cloud() -> impl Strategy<Value = (PointCloud, Plane)> {
    (0u64..1000, -3.0..3.0f64).prop_map(|(seed, yaw)| {
        let e = upright(yaw);
        let plane = Plane::through_point(e.rotation().column(0).into_owned(), &e.center).unwrap();
        let half = PointCloud::new(surface(&e, 150, seed, |u| u.x > 0.0));
        let mut pts = half.points.clone();
        pts.extend(mirror_cloud(&half, &plane).points);
        (PointCloud::new(pts), plane)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mirror_is_involution(seed in 0u64..1000, nx in -1.0..1.0f64, ny in -1.0..1.0f64, d in -2.0..2.0f64) {
        let Some(plane) = Plane::new(Vector3::new(nx, ny, 0.3).normalize(), d) else { return Ok(()) };
        let cloud = PointCloud::new(surface(&upright(0.0), 100, seed, |_| true));
        let back = mirror_cloud(&mirror_cloud(&cloud, &plane), &plane);
        for (a, b) in back.points.iter().zip(&cloud.points) {
            prop_assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn score_symmetric_under_reflection((cloud, plane) in symmetric_cloud()) {
        let params = SymmetryParams::default();
        let a = symmetry_score(&cloud, &plane, &params);
        let b = symmetry_score(&mirror_cloud(&cloud, &plane), &plane, &params);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn refine_never_lowers_score(seed in 0u64..1000, yaw in -3.0..3.0f64, tilt in -20.0..20.0f64, shift in -0.05..0.05f64) {
        let e = upright(yaw);
        let cloud = PointCloud::new(surface(&e, 400, seed, |u| u.y < 0.3));
        let n = Rotation3::from_axis_angle(&Vector3::z_axis(), tilt.to_radians()) * e.rotation().column(0);
        let init = Plane::through_point(n, &(e.center + n * shift)).unwrap();
        let params = SymmetryParams::default();
        for kind in [SymmetryKind::PlaneReflection, SymmetryKind::DualPlaneReflection] {
            let r = refine_symmetry(&cloud, &init, &floor(), kind, &params);
            prop_assert!(visibility_aware_score(&cloud, &r.planes[0], &params) >= visibility_aware_score(&cloud, &init, &params));
            for p in &r.planes {
                prop_assert!(p.normal.dot(&floor().normal).abs() < 1e-6);
            }
        }
    }
}
