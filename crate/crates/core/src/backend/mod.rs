//! Factor graph over camera poses and ellipsoid landmarks.
//!
//! Three factor types connect the nodes:
//!
//! * odometry between consecutive poses, `log((x_j ∘ u_j)^-1 ∘ x_j+1)`;
//! * 2-D bounding-box factors comparing a detection with the circumscribed
//!   rectangle of the projected landmark;
//! * 3-D factors comparing a single-frame ellipsoid, moved to the world by
//!   its camera pose, with the landmark's nine parameters.
//!
//! Every factor enters the objective through a Huber kernel of its
//! whitened residual norm; 3-D factors are additionally scaled by
//! `epsilon_z`. Detection and ellipsoid probabilities weight the residuals
//! by `sqrt(p)`, so squared norms carry `p`.

mod build;
mod init;
mod optimize;

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{SVector, Vector4, Vector6};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::geometry::{self, equivalent_frames, rpy_from_matrix, wrap_angle, BBox, Camera, EllipsoidState, GeometryError, Pose};

pub use build::{build_graph, BuildLog, InitFailure, SlamInput};
pub use init::{initialize_landmark_2d, initialize_landmark_3d, InitError};
pub use optimize::optimize;

pub type Vector9 = SVector<f64, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Bounding-box factors only.
    TwoDOnly,
    /// Single-frame ellipsoid factors only.
    DepthOnly,
    /// Both factor types.
    DwB,
}

impl Mode {
    pub fn uses_boxes(self) -> bool {
        matches!(self, Mode::TwoDOnly | Mode::DwB)
    }

    pub fn uses_ellipsoids(self) -> bool {
        matches!(self, Mode::DepthOnly | Mode::DwB)
    }

    /// Command-line spelling: `2d`, `do`, `dwb`.
    pub fn name(self) -> &'static str {
        match self {
            Mode::TwoDOnly => "2d",
            Mode::DepthOnly => "do",
            Mode::DwB => "dwb",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "2d" | "twodonly" => Some(Mode::TwoDOnly),
            "do" | "depthonly" => Some(Mode::DepthOnly),
            "dwb" => Some(Mode::DwB),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    /// Weight of 3-D factors relative to 2-D factors.
    pub epsilon_z: f64,
    pub huber_delta_2d: f64,
    pub huber_delta_3d: f64,
    pub huber_delta_odom: f64,
    /// Bounding-box edge noise (px).
    pub sigma_2d: f64,
    /// Per-component noise of `[x y z roll pitch yaw s1 s2 s3]`.
    pub sigma_3d: Vector9,
    /// Per-component noise of the odometry twist `(rho, omega)`.
    pub sigma_odom: Vector6<f64>,
    pub max_iterations: usize,
    pub mode: Mode,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            epsilon_z: 1e3,
            huber_delta_2d: 10.0,
            huber_delta_3d: 0.1,
            huber_delta_odom: 3.0,
            sigma_2d: 5.0,
            sigma_3d: Vector9::from_column_slice(&[0.05, 0.05, 0.05, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05]),
            sigma_odom: Vector6::new(0.01, 0.01, 0.01, 0.005, 0.005, 0.005),
            max_iterations: 100,
            mode: Mode::DwB,
        }
    }
}

impl GraphConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.epsilon_z >= 0.0
            && self.huber_delta_2d > 0.0
            && self.huber_delta_3d > 0.0
            && self.huber_delta_odom > 0.0
            && self.sigma_2d > 0.0
            && self.sigma_3d.iter().all(|s| *s > 0.0)
            && self.sigma_odom.iter().all(|s| *s > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub object_id: u32,
    pub label: String,
    pub state: EllipsoidState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryFactor {
    pub from: usize,
    pub to: usize,
    pub motion: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxFactor {
    pub pose: usize,
    pub landmark: usize,
    pub bbox: BBox,
    pub p_det: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidFactor {
    pub pose: usize,
    pub landmark: usize,
    /// Single-frame estimate in the camera frame.
    pub ellipsoid: EllipsoidState,
    pub p_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    pub camera: Camera,
    /// Camera-in-world poses; index 0 is held fixed.
    pub poses: Vec<Pose>,
    pub frame_ids: Vec<u32>,
    pub landmarks: Vec<Landmark>,
    pub odometry: Vec<OdometryFactor>,
    pub box_factors: Vec<BoxFactor>,
    pub ellipsoid_factors: Vec<EllipsoidFactor>,
}

impl FactorGraph {
    pub fn new(camera: Camera, poses: Vec<Pose>) -> Self {
        let frame_ids = (0..poses.len() as u32).collect();
        Self {
            camera,
            poses,
            frame_ids,
            landmarks: Vec::new(),
            odometry: Vec::new(),
            box_factors: Vec::new(),
            ellipsoid_factors: Vec::new(),
        }
    }

    /// Every factor references existing nodes and every landmark has a factor.
    pub fn is_consistent(&self) -> bool {
        let np = self.poses.len();
        let nl = self.landmarks.len();
        let odo = self.odometry.iter().all(|f| f.from < np && f.to < np);
        let boxes = self.box_factors.iter().all(|f| f.pose < np && f.landmark < nl);
        let ell = self.ellipsoid_factors.iter().all(|f| f.pose < np && f.landmark < nl);
        let covered = (0..nl).all(|l| {
            self.box_factors.iter().any(|f| f.landmark == l) || self.ellipsoid_factors.iter().any(|f| f.landmark == l)
        });
        odo && boxes && ell && covered
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Box factors left out because the landmark did not project at the start.
    pub skipped_box_factors: usize,
    pub landmarks: Vec<Landmark>,
    pub poses: Vec<Pose>,
}

/// `r^2 / 2` inside `delta`, `delta (r - delta / 2)` outside.
pub fn huber_cost(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// IRLS weight `rho'(r) / r`.
pub(crate) fn huber_weight(r: f64, delta: f64) -> f64 {
    if r <= delta {
        1.0
    } else {
        delta / r
    }
}

/// Whitened odometry residual `log((x_j ∘ u_j)^-1 ∘ x_j+1) / sigma`.
pub fn residual_odometry(x_j: &Pose, motion: &Pose, x_next: &Pose, sigma: &Vector6<f64>) -> Vector6<f64> {
    let predicted = x_j.compose(motion);
    predicted.inverse().compose(x_next).log().component_div(sigma)
}

/// Whitened 3-D residual between an observed camera-frame ellipsoid moved to
/// the world and a landmark. The observed ellipsoid's axis ordering and sign
/// (all describe the same quadric) is the one closest to the landmark; the
/// angle components are wrapped.
pub fn residual_3d(pose: &Pose, observed: &EllipsoidState, p_e: f64, landmark: &EllipsoidState, sigma: &Vector9) -> Vector9 {
    let world_center = pose.transform_point(&observed.center);
    let world_rot = pose.rotation_matrix() * observed.rotation();
    let target = landmark.to_vector();
    let mut best = Vector9::zeros();
    let mut best_norm = f64::INFINITY;
    for (rot, axes) in equivalent_frames(&world_rot, &observed.axes).iter() {
        let rpy = rpy_from_matrix(rot);
        let mut d = Vector9::zeros();
        for k in 0..3 {
            d[k] = world_center[k] - target[k];
            d[3 + k] = wrap_angle(rpy[k] - target[3 + k]);
            d[6 + k] = axes[k] - target[6 + k];
        }
        let d = d.component_div(sigma);
        let n = d.norm_squared();
        if n < best_norm {
            best_norm = n;
            best = d;
        }
    }
    best * p_e.max(0.0).sqrt()
}

/// Whitened 2-D residual `sqrt(p_det) (b - beta(C*)) / sigma`.
pub fn residual_2d(
    pose: &Pose,
    bbox: &BBox,
    p_det: f64,
    landmark: &EllipsoidState,
    cam: &Camera,
    sigma: f64,
) -> Result<Vector4<f64>, GeometryError> {
    let predicted = geometry::project_ellipsoid(landmark, pose, cam)?.bbox()?;
    Ok((bbox.to_vector() - predicted.to_vector()) * (p_det.max(0.0).sqrt() / sigma))
}

/// Robust objective of the graph under `config.mode`. Box factors whose
/// landmark does not project are skipped.
pub fn total_cost(graph: &FactorGraph, config: &GraphConfig) -> f64 {
    let mut cost = 0.0;
    for f in &graph.odometry {
        let r = residual_odometry(&graph.poses[f.from], &f.motion, &graph.poses[f.to], &config.sigma_odom);
        cost += huber_cost(r.norm(), config.huber_delta_odom);
    }
    if config.mode.uses_ellipsoids() {
        for f in &graph.ellipsoid_factors {
            let r = residual_3d(&graph.poses[f.pose], &f.ellipsoid, f.p_e, &graph.landmarks[f.landmark].state, &config.sigma_3d);
            cost += config.epsilon_z * huber_cost(r.norm(), config.huber_delta_3d);
        }
    }
    if config.mode.uses_boxes() {
        for f in &graph.box_factors {
            if let Ok(r) = residual_2d(&graph.poses[f.pose], &f.bbox, f.p_det, &graph.landmarks[f.landmark].state, &graph.camera, config.sigma_2d)
            {
                cost += huber_cost(r.norm(), config.huber_delta_2d);
            }
        }
    }
    cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use nalgebra::{UnitQuaternion, Vector3};

    fn sigma3() -> Vector9 {
        GraphConfig::default().sigma_3d
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber_cost(0.5, 1.0), 0.125);
        assert_eq!(huber_cost(3.0, 1.0), 2.5);
        assert_eq!(huber_cost(1.0, 1.0), 0.5);
        assert_eq!(huber_cost(1.0 + 1e-12, 1.0), 1.0 * (1.0 + 1e-12 - 0.5));
    }

    #[test]
    fn odometry_residual_values() {
        let sigma = GraphConfig::default().sigma_odom;
        let x = Pose::new(Vector3::new(1.0, 2.0, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, 0.3));
        let u = Pose::new(Vector3::new(0.5, 0.0, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, 0.1));
        let next = x.compose(&u);
        assert!(residual_odometry(&x, &u, &next, &sigma).amax() < 1e-12);
        let off = next.compose(&Pose::new(Vector3::new(0.1, 0.0, 0.0), UnitQuaternion::identity()));
        let r = residual_odometry(&x, &u, &off, &sigma);
        assert!((r - Vector6::new(0.1 / sigma[0], 0.0, 0.0, 0.0, 0.0, 0.0)).amax() < 1e-9);
    }

    #[test]
    fn residual_3d_zero_and_wrapping() {
        let pose = Pose::new(Vector3::new(0.5, -1.0, 1.2), UnitQuaternion::from_euler_angles(-1.2, 0.1, 0.7));
        let obs = EllipsoidState::new(Vector3::new(0.1, 0.2, 3.0), Vector3::new(0.2, -0.1, 0.3), Vector3::new(0.4, 0.3, 0.2));
        let lm = obs.transformed(&pose);
        assert!(residual_3d(&pose, &obs, 0.8, &lm, &sigma3()).amax() < 1e-9);
        let mut wrapped = lm;
        wrapped.rpy.z += 2.0 * PI;
        assert!(residual_3d(&pose, &obs, 0.8, &wrapped, &sigma3()).amax() < 1e-9);
    }

    #[test]
    fn residual_3d_probability_scaling() {
        let obs = EllipsoidState::new(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), Vector3::new(0.4, 0.3, 0.2));
        let mut lm = obs;
        lm.center.x += 0.1;
        let full = residual_3d(&Pose::identity(), &obs, 1.0, &lm, &sigma3());
        let quarter = residual_3d(&Pose::identity(), &obs, 0.25, &lm, &sigma3());
        assert!((quarter - full * 0.5).amax() < 1e-12);
        assert!(quarter.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn residual_2d_shifted_sphere_box() {
        let cam = Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480);
        let sphere = EllipsoidState::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0);
        let exact = geometry::project_ellipsoid(&sphere, &Pose::identity(), &cam).unwrap().bbox().unwrap();
        assert!(residual_2d(&Pose::identity(), &exact, 0.9, &sphere, &cam, 5.0).unwrap().amax() < 1e-9);
        let mut shifted = exact;
        shifted.x_min += 2.0;
        let r = residual_2d(&Pose::identity(), &shifted, 0.81, &sphere, &cam, 5.0).unwrap();
        assert!((r - Vector4::new(2.0 * 0.9 / 5.0, 0.0, 0.0, 0.0)).amax() < 1e-9);
        let behind = EllipsoidState::sphere(Vector3::new(0.0, 0.0, -5.0), 1.0);
        assert_eq!(residual_2d(&Pose::identity(), &exact, 0.9, &behind, &cam, 5.0), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn mode_names() {
        for m in [Mode::TwoDOnly, Mode::DepthOnly, Mode::DwB] {
            assert_eq!(Mode::from_name(m.name()), Some(m));
        }
        assert_eq!(Mode::from_name("mono"), None);
    }
}
