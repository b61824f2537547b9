//! Synthetic scenes, trajectories and noisy sensor data.
//!
//! The world is z-up with the supporting plane at `z = 0`. Cameras follow the
//! usual optical convention (x right, y down, z forward), so a level camera
//! sees gravity along its +y axis.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix3, Vector3, Vector6};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::fitting::{estimate_object, Detection, Diagnostic, EstimationParams, Observation, SkipReason};
use crate::geometry::{project_ellipsoid, Camera, EllipsoidState, Plane, Pose};
use crate::segmentation::{filter_above_plane, DepthImage, PointCloud, SegmentationError, SegmentedObject};

/// World up direction.
pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub object_id: u32,
    pub label: String,
    pub ellipsoid: EllipsoidState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub support_plane: Plane,
    /// Radius of the rendered support disc around the origin (m).
    pub support_radius: f64,
    pub seed: u64,
}

impl Scene {
    /// Objects rest on or above the supporting plane.
    pub fn is_valid(&self) -> bool {
        let n = self.support_plane.normal;
        self.objects.iter().all(|o| {
            let e = &o.ellipsoid;
            let r = e.rotation();
            let vertical = (0..3).map(|i| (e.axes[i] * n.dot(&r.column(i))).powi(2)).sum::<f64>().sqrt();
            e.is_valid() && self.support_plane.distance(&e.center) >= vertical - 1e-9
        })
    }
}

fn upright(id: u32, label: &str, x: f64, y: f64, yaw: f64, axes: [f64; 3]) -> SceneObject {
    SceneObject {
        object_id: id,
        label: label.to_string(),
        ellipsoid: EllipsoidState::new(Vector3::new(x, y, axes[2]), Vector3::new(0.0, 0.0, yaw), Vector3::from(axes)),
    }
}

fn ground() -> Plane {
    Plane::new(WORLD_UP, 0.0).expect("unit normal")
}

/// Six objects around the origin, seen from an orbit.
pub fn default_orbit_scene() -> Scene {
    Scene {
        objects: alloc::vec![
            upright(0, "chair", 1.0, 0.6, 0.4, [0.28, 0.22, 0.45]),
            upright(1, "table", -0.3, -0.9, 0.1, [0.6, 0.4, 0.37]),
            upright(2, "tv", -1.1, 0.5, 1.2, [0.45, 0.1, 0.3]),
            upright(3, "laptop", 0.2, 0.2, -0.5, [0.2, 0.14, 0.12]),
            upright(4, "keyboard", 1.0, -0.7, 0.8, [0.26, 0.1, 0.09]),
            upright(5, "pottedplant", -0.4, 1.2, 0.3, [0.17, 0.13, 0.3]),
        ],
        support_plane: ground(),
        support_radius: 6.0,
        seed: 0,
    }
}

/// Six objects spread ahead of a camera moving along +x from the origin.
pub fn default_forward_scene() -> Scene {
    Scene {
        objects: alloc::vec![
            upright(0, "chair", 4.0, 0.9, 0.4, [0.28, 0.22, 0.45]),
            upright(1, "table", 5.5, -1.0, 0.1, [0.6, 0.4, 0.37]),
            upright(2, "tv", 6.5, 0.8, 1.2, [0.45, 0.1, 0.3]),
            upright(3, "laptop", 4.5, -0.4, -0.5, [0.2, 0.14, 0.12]),
            upright(4, "keyboard", 5.0, 0.3, 0.8, [0.26, 0.1, 0.09]),
            upright(5, "pottedplant", 7.0, -0.3, 0.3, [0.17, 0.13, 0.3]),
        ],
        support_plane: ground(),
        support_radius: 12.0,
        seed: 0,
    }
}

/// 320x240 pinhole with a Kinect-like field of view.
pub fn default_camera() -> Camera {
    Camera::new(262.5, 262.5, 159.5, 119.5, 320, 240)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Orbit,
    Forward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub n_frames: usize,
    /// Orbit radius or forward path length (m).
    pub extent: f64,
    /// Camera height above the support plane (m).
    pub height: f64,
    /// Height of the orbit's aim point; for forward motion the height of
    /// the point aimed at `look_ahead` metres in front of the camera.
    pub look_height: f64,
    pub look_ahead: f64,
    /// Fixed yaw offset of the viewing direction from the motion direction
    /// (forward only, deg).
    pub off_axis_deg: f64,
    pub odom_sigma_trans: f64,
    pub odom_sigma_rot: f64,
}

impl TrajectorySpec {
    pub fn orbit(n_frames: usize, radius: f64) -> Self {
        Self {
            kind: TrajectoryKind::Orbit,
            n_frames,
            extent: radius,
            height: 1.4,
            look_height: 0.2,
            look_ahead: 0.0,
            off_axis_deg: 0.0,
            odom_sigma_trans: 0.0,
            odom_sigma_rot: 0.0,
        }
    }

    pub fn forward(n_frames: usize, length: f64) -> Self {
        Self {
            kind: TrajectoryKind::Forward,
            n_frames,
            extent: length,
            height: 1.0,
            look_height: 0.2,
            look_ahead: 5.0,
            off_axis_deg: 3.0,
            odom_sigma_trans: 0.0,
            odom_sigma_rot: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.n_frames >= 2
            && self.extent > 0.0
            && self.height > 0.0
            && self.odom_sigma_trans >= 0.0
            && self.odom_sigma_rot >= 0.0
            && (self.kind == TrajectoryKind::Orbit || self.look_ahead > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    /// Measured motion from frame `j` to `j + 1`.
    pub odometry: Vec<Pose>,
}

/// Camera-in-world pose at `eye` looking at `target` with the image y axis
/// pointing down.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let mut x = z.cross(&WORLD_UP);
    if x.norm() < 1e-9 {
        x = Vector3::x();
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Pose::from_rotation_matrix(*eye, &Matrix3::from_columns(&[x, y, z]))
}

pub fn generate_trajectory<R: Rng + ?Sized>(spec: &TrajectorySpec, rng: &mut R) -> Trajectory {
    let n = spec.n_frames;
    let poses: Vec<Pose> = (0..n)
        .map(|i| match spec.kind {
            TrajectoryKind::Orbit => {
                let a = 2.0 * PI * i as f64 / n as f64;
                let eye = Vector3::new(spec.extent * a.cos(), spec.extent * a.sin(), spec.height);
                look_at(&eye, &Vector3::new(0.0, 0.0, spec.look_height))
            }
            TrajectoryKind::Forward => {
                let x = spec.extent * i as f64 / (n - 1) as f64;
                let eye = Vector3::new(x, 0.0, spec.height);
                let off = spec.off_axis_deg.to_radians();
                let target = eye + Vector3::new(spec.look_ahead * off.cos(), spec.look_ahead * off.sin(), spec.look_height - spec.height);
                look_at(&eye, &target)
            }
        })
        .collect();
    let odometry = poses
        .windows(2)
        .map(|w| {
            let exact = w[0].inverse().compose(&w[1]);
            let mut xi = Vector6::zeros();
            for k in 0..3 {
                xi[k] = spec.odom_sigma_trans * rng.sample::<f64, _>(StandardNormal);
                xi[3 + k] = spec.odom_sigma_rot * rng.sample::<f64, _>(StandardNormal);
            }
            exact.retract(&xi)
        })
        .collect();
    Trajectory { poses, odometry }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Bounding-box edge noise (px).
    pub bbox_sigma: f64,
    /// Depth noise along the viewing ray (m).
    pub depth_sigma: f64,
    pub p_det_min: f64,
    pub p_det_max: f64,
    /// Surface samples drawn per object before the visibility test.
    pub surface_samples: usize,
    /// Support-plane samples around each object.
    pub plane_samples: usize,
    /// Boxes within this many pixels of the image border are dropped.
    pub edge_margin: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            bbox_sigma: 5.0,
            depth_sigma: 0.005,
            p_det_min: 0.96,
            p_det_max: 1.0,
            surface_samples: 1500,
            plane_samples: 300,
            edge_margin: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self { bbox_sigma: 0.0, depth_sigma: 0.0, p_det_min: 1.0, p_det_max: 1.0, ..Self::default() }
    }

    pub fn is_valid(&self) -> bool {
        self.bbox_sigma >= 0.0
            && self.depth_sigma >= 0.0
            && (0.0..=1.0).contains(&self.p_det_min)
            && (0.0..=1.0).contains(&self.p_det_max)
            && self.p_det_min <= self.p_det_max
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|d| d.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Area-uniform sample on the ellipsoid surface with its outward normal, both
/// in the ellipsoid's local frame.
fn sample_surface<R: Rng + ?Sized>(axes: &Vector3<f64>, rng: &mut R) -> (Vector3<f64>, Vector3<f64>) {
    let min_axis = axes.min();
    loop {
        let u = Vector3::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
        let norm = u.norm();
        if norm < 1e-12 {
            continue;
        }
        let u = u / norm;
        let grad = u.component_div(axes);
        if rng.random::<f64>() <= min_axis * grad.norm() {
            return (u.component_mul(axes), grad.normalize());
        }
    }
}

/// Pushes `p` (camera frame) along its viewing ray by Gaussian depth noise.
fn perturb_depth<R: Rng + ?Sized>(p: &Vector3<f64>, sigma: f64, rng: &mut R) -> Vector3<f64> {
    let eps = gaussian(rng, sigma);
    p * ((p.z + eps) / p.z)
}

/// Surface points of `e` (world frame) facing the camera and inside the
/// image, in the camera frame, with depth noise along the ray.
pub fn sample_visible_cloud<R: Rng + ?Sized>(
    e: &EllipsoidState,
    pose: &Pose,
    cam: &Camera,
    samples: usize,
    depth_sigma: f64,
    rng: &mut R,
) -> PointCloud {
    let rot = e.rotation();
    let eye = pose.translation;
    let to_cam = pose.inverse();
    let mut points = Vec::new();
    for _ in 0..samples {
        let (local, normal) = sample_surface(&e.axes, rng);
        let p = rot * local + e.center;
        let n = rot * normal;
        if n.dot(&(p - eye)) >= 0.0 {
            continue;
        }
        let pc = to_cam.transform_point(&p);
        if !in_image(cam, &pc) {
            continue;
        }
        points.push(perturb_depth(&pc, depth_sigma, rng));
    }
    PointCloud::new(points)
}

fn in_image(cam: &Camera, pc: &Vector3<f64>) -> bool {
    match cam.project(pc) {
        Some((u, v)) => u >= 0.0 && v >= 0.0 && u <= cam.width as f64 - 1.0 && v <= cam.height as f64 - 1.0,
        None => false,
    }
}

/// Ray parameter of the first hit of `origin + t dir` with `e`, if any.
fn ray_ellipsoid(origin: &Vector3<f64>, dir: &Vector3<f64>, e: &EllipsoidState) -> Option<f64> {
    let rt = e.rotation().transpose();
    let o = (rt * (origin - e.center)).component_div(&e.axes);
    let d = (rt * dir).component_div(&e.axes);
    let a = d.norm_squared();
    let b = 2.0 * o.dot(&d);
    let c = o.norm_squared() - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / (2.0 * a);
    let t1 = (-b + sq) / (2.0 * a);
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}

/// Support-plane points in a disc around the footprint of `e` that are
/// visible from the camera (not hidden behind `e`), in the camera frame.
pub fn sample_support_disc<R: Rng + ?Sized>(
    e: &EllipsoidState,
    plane: &Plane,
    pose: &Pose,
    cam: &Camera,
    samples: usize,
    depth_sigma: f64,
    rng: &mut R,
) -> PointCloud {
    let eye = pose.translation;
    if plane.distance(&eye) <= 0.0 {
        return PointCloud::default();
    }
    let n = plane.normal;
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let centre = plane.project_point(&e.center);
    let radius = 1.5 * e.axes.max();
    let to_cam = pose.inverse();
    let mut points = Vec::new();
    for _ in 0..samples {
        let r = radius * rng.random::<f64>().sqrt();
        let a = 2.0 * PI * rng.random::<f64>();
        let p = centre + u * (r * a.cos()) + v * (r * a.sin());
        let to_point = p - eye;
        let dist = to_point.norm();
        if let Some(t) = ray_ellipsoid(&eye, &(to_point / dist), e) {
            if t < dist {
                continue;
            }
        }
        let pc = to_cam.transform_point(&p);
        if !in_image(cam, &pc) {
            continue;
        }
        points.push(perturb_depth(&pc, depth_sigma, rng));
    }
    PointCloud::new(points)
}

/// Detection box of `e` with pixel noise, or `None` when the object is
/// behind the camera, does not image to a bounded ellipse, or the box
/// touches the image border.
pub fn synthesize_bbox<R: Rng + ?Sized>(
    e: &EllipsoidState,
    pose: &Pose,
    cam: &Camera,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Option<crate::geometry::BBox> {
    let exact = project_ellipsoid(e, pose, cam).ok()?.bbox().ok()?;
    if exact.touches_border(cam, noise.edge_margin) {
        return None;
    }
    let mut b = exact;
    b.x_min += gaussian(rng, noise.bbox_sigma);
    b.y_min += gaussian(rng, noise.bbox_sigma);
    b.x_max += gaussian(rng, noise.bbox_sigma);
    b.y_max += gaussian(rng, noise.bbox_sigma);
    if !b.is_valid() || b.touches_border(cam, noise.edge_margin) {
        return None;
    }
    Some(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSample {
    pub object_id: u32,
    /// Object surface plus nearby support-plane points, camera frame.
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame_id: u32,
    pub detections: Vec<Detection>,
    pub clouds: Vec<ObjectSample>,
    /// Supporting plane in the camera frame.
    pub support_plane: Plane,
    /// Unit gravity direction in the camera frame.
    pub gravity: Vector3<f64>,
}

/// Gravity direction seen from a camera-in-world pose.
pub fn camera_gravity(pose: &Pose) -> Vector3<f64> {
    pose.rotation_matrix().transpose() * -WORLD_UP
}

/// Per-frame detections and direct point clouds for every object whose box
/// lies inside the image.
pub fn synthesize_observations<R: Rng + ?Sized>(
    scene: &Scene,
    poses: &[Pose],
    cam: &Camera,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Vec<SimFrame> {
    poses
        .iter()
        .enumerate()
        .map(|(j, pose)| {
            let mut frame = SimFrame {
                frame_id: j as u32,
                detections: Vec::new(),
                clouds: Vec::new(),
                support_plane: scene.support_plane.transformed(&pose.inverse()),
                gravity: camera_gravity(pose),
            };
            for obj in &scene.objects {
                let bbox = match synthesize_bbox(&obj.ellipsoid, pose, cam, noise, rng) {
                    Some(b) => b,
                    None => continue,
                };
                let p_det = if noise.p_det_max > noise.p_det_min {
                    rng.random_range(noise.p_det_min..=noise.p_det_max)
                } else {
                    noise.p_det_min
                };
                frame.detections.push(Detection { frame_id: j as u32, object_id: obj.object_id, label: obj.label.clone(), bbox, p_det });
                let mut cloud = sample_visible_cloud(&obj.ellipsoid, pose, cam, noise.surface_samples, noise.depth_sigma, rng);
                let disc = sample_support_disc(&obj.ellipsoid, &scene.support_plane, pose, cam, noise.plane_samples, noise.depth_sigma, rng);
                cloud.points.extend(disc.points);
                frame.clouds.push(ObjectSample { object_id: obj.object_id, cloud });
            }
            frame
        })
        .collect()
}

/// Single-frame estimates from direct clouds: points within `eps2` of the
/// known supporting plane are dropped, the rest go through symmetry
/// completion and fitting.
pub fn estimate_from_clouds(frames: &[SimFrame], params: &EstimationParams) -> (Vec<Observation>, Vec<Diagnostic>) {
    let mut observations = Vec::new();
    let mut diagnostics = Vec::new();
    for frame in frames {
        for det in &frame.detections {
            let cloud = match frame.clouds.iter().find(|c| c.object_id == det.object_id) {
                Some(c) => filter_above_plane(&c.cloud, &frame.support_plane, params.segmentation.eps2_min_height),
                None => continue,
            };
            if cloud.is_empty() {
                diagnostics.push(Diagnostic {
                    frame_id: frame.frame_id,
                    object_id: det.object_id,
                    reason: SkipReason::Segmentation(SegmentationError::NothingAbovePlane),
                });
                continue;
            }
            let seg = SegmentedObject { bbox: det.bbox, label: det.label.clone(), p_det: det.p_det, cloud, support_plane: frame.support_plane };
            match estimate_object(&seg, frame.frame_id, det.object_id, params) {
                Ok(o) => observations.push(o),
                Err(reason) => diagnostics.push(Diagnostic { frame_id: frame.frame_id, object_id: det.object_id, reason }),
            }
        }
    }
    (observations, diagnostics)
}

/// Label value for pixels that hit nothing.
pub const NO_HIT: i32 = -1;
/// Label value for pixels on the supporting plane.
pub const SUPPORT_HIT: i32 = -2;

/// Ray-cast depth image (16-bit, `depth.depth_scale` counts per metre) and a
/// per-pixel label map holding the index of the object hit.
pub fn render_depth<R: Rng + ?Sized>(
    scene: &Scene,
    pose: &Pose,
    cam: &Camera,
    depth_sigma: f64,
    rng: &mut R,
) -> (DepthImage, Vec<i32>) {
    let mut depth = DepthImage::zeros(cam.width, cam.height);
    let mut labels = alloc::vec![NO_HIT; (cam.width * cam.height) as usize];
    let rot = pose.rotation_matrix();
    let eye = pose.translation;
    let plane = &scene.support_plane;
    for v in 0..cam.height {
        for u in 0..cam.width {
            let ray_cam = Vector3::new((u as f64 - cam.cx) / cam.fx, (v as f64 - cam.cy) / cam.fy, 1.0);
            let dir = rot * ray_cam;
            let mut best = f64::INFINITY;
            let mut label = NO_HIT;
            let denom = plane.normal.dot(&dir);
            if denom.abs() > 1e-12 {
                let t = -(plane.normal.dot(&eye) + plane.offset) / denom;
                if t > 0.0 && (plane.project_point(&(eye + dir * t))).norm() <= scene.support_radius {
                    best = t;
                    label = SUPPORT_HIT;
                }
            }
            for (k, obj) in scene.objects.iter().enumerate() {
                if let Some(t) = ray_ellipsoid(&eye, &dir, &obj.ellipsoid) {
                    if t < best {
                        best = t;
                        label = k as i32;
                    }
                }
            }
            if best.is_finite() {
                // the camera ray has unit z, so the ray parameter is the depth
                let z = best + gaussian(rng, depth_sigma);
                let counts = (z * depth.depth_scale).round();
                if counts >= 1.0 && counts <= u16::MAX as f64 {
                    let idx = (v * cam.width + u) as usize;
                    depth.samples[idx] = counts as u16;
                    labels[idx] = label;
                }
            }
        }
    }
    (depth, labels)
}

/// Everything one synthetic run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub scene: Scene,
    pub camera: Camera,
    pub trajectory: Trajectory,
    pub frames: Vec<SimFrame>,
    pub detections: Vec<Detection>,
    pub observations: Vec<Observation>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Trajectory, synthetic sensing and single-frame estimation from one seed.
pub fn simulate_run(scene: &Scene, spec: &TrajectorySpec, cam: &Camera, noise: &NoiseSpec, params: &EstimationParams, seed: u64) -> SyntheticRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectory = generate_trajectory(spec, &mut rng);
    let frames = synthesize_observations(scene, &trajectory.poses, cam, noise, &mut rng);
    let (observations, diagnostics) = estimate_from_clouds(&frames, params);
    let detections = frames.iter().flat_map(|f| f.detections.iter().cloned()).collect();
    SyntheticRun { scene: scene.clone(), camera: *cam, trajectory, frames, detections, observations, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn orbit_positions_on_circle() {
        let t = generate_trajectory(&TrajectorySpec::orbit(36, 2.0), &mut rng());
        assert_eq!(t.poses.len(), 36);
        for (i, p) in t.poses.iter().enumerate() {
            let r = (p.translation.x.powi(2) + p.translation.y.powi(2)).sqrt();
            assert!((r - 2.0).abs() < 1e-12);
            let a = p.translation.y.atan2(p.translation.x);
            assert!(crate::geometry::wrap_angle(a - (i as f64 * 10.0).to_radians()).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_spacing() {
        let t = generate_trajectory(&TrajectorySpec::forward(30, 3.0), &mut rng());
        for w in t.poses.windows(2) {
            assert!(((w[1].translation - w[0].translation).norm() - 3.0 / 29.0).abs() < 1e-12);
        }
        assert!((3.0f64 / 29.0 - 0.1034).abs() < 1e-4);
    }

    #[test]
    fn noiseless_odometry_composes_to_truth() {
        let t = generate_trajectory(&TrajectorySpec::orbit(12, 3.0), &mut rng());
        let mut x = t.poses[0];
        for (j, u) in t.odometry.iter().enumerate() {
            x = x.compose(u);
            assert!((x.translation - t.poses[j + 1].translation).amax() < 1e-9);
            assert!(x.rotation.angle_to(&t.poses[j + 1].rotation) < 1e-9);
        }
    }

    #[test]
    fn look_at_keeps_image_y_down() {
        let p = look_at(&Vector3::new(-3.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, 1.0));
        let r = p.rotation_matrix();
        assert!((r.column(2) - Vector3::x()).norm() < 1e-12);
        assert!((r.column(1) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!((camera_gravity(&p) - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn noiseless_sphere_bbox() {
        let cam = Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480);
        let sphere = EllipsoidState::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0);
        let b = synthesize_bbox(&sphere, &Pose::identity(), &cam, &NoiseSpec::noiseless(), &mut rng()).unwrap();
        let half = 500.0 / 24f64.sqrt();
        let want = BBox::new(320.0 - half, 240.0 - half, 320.0 + half, 240.0 + half);
        assert!((b.to_vector() - want.to_vector()).amax() < 1e-6);
        let behind = EllipsoidState::sphere(Vector3::new(0.0, 0.0, -5.0), 1.0);
        assert!(synthesize_bbox(&behind, &Pose::identity(), &cam, &NoiseSpec::noiseless(), &mut rng()).is_none());
    }

    #[test]
    fn visible_samples_face_camera() {
        let cam = default_camera();
        let e = EllipsoidState::new(Vector3::new(0.2, 0.1, 3.0), Vector3::new(0.3, 0.2, 0.1), Vector3::new(0.4, 0.3, 0.2));
        let cloud = sample_visible_cloud(&e, &Pose::identity(), &cam, 2000, 0.0, &mut rng());
        assert!(cloud.len() > 500 && cloud.len() < 1500);
        let rot = e.rotation();
        for p in &cloud.points {
            let local = (rot.transpose() * (p - e.center)).component_div(&e.axes);
            assert!((local.norm() - 1.0).abs() < 1e-9);
            let normal = rot * local.component_div(&e.axes);
            assert!(normal.dot(p) < 0.0);
        }
    }

    #[test]
    fn default_scenes_rest_on_plane() {
        assert!(default_orbit_scene().is_valid());
        assert!(default_forward_scene().is_valid());
        let mut s = default_orbit_scene();
        s.objects[0].ellipsoid.center.z = 0.1;
        assert!(!s.is_valid());
    }

    #[test]
    fn rendered_depth_matches_ray_geometry() {
        let scene = Scene {
            objects: alloc::vec![upright(0, "cup", 0.0, 0.0, 0.0, [0.3, 0.3, 0.3])],
            support_plane: ground(),
            support_radius: 10.0,
            seed: 0,
        };
        let cam = Camera::new(100.0, 100.0, 20.0, 15.0, 41, 31);
        let pose = look_at(&Vector3::new(-3.0, 0.0, 0.3), &Vector3::new(0.0, 0.0, 0.3));
        let (depth, labels) = render_depth(&scene, &pose, &cam, 0.0, &mut rng());
        let centre = (15 * 41 + 20) as usize;
        assert_eq!(labels[centre], 0);
        assert!((depth.depth(20, 15).unwrap() - 2.7).abs() < 1e-3);
        assert_eq!(labels[(30 * 41 + 20) as usize], SUPPORT_HIT);
    }

    #[test]
    fn simulation_is_deterministic() {
        let scene = default_orbit_scene();
        let spec = TrajectorySpec { odom_sigma_trans: 0.01, odom_sigma_rot: 0.002, ..TrajectorySpec::orbit(4, 3.0) };
        let params = EstimationParams::default();
        let a = simulate_run(&scene, &spec, &default_camera(), &NoiseSpec::default(), &params, 9);
        let b = simulate_run(&scene, &spec, &default_camera(), &NoiseSpec::default(), &params, 9);
        assert_eq!(a, b);
        assert!(!a.detections.is_empty());
    }
}
