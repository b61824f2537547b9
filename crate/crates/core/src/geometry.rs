//! Projective geometry of ellipsoids: poses, cameras, dual quadrics and the
//! circumscribed rectangle of their image.
//!
//! A dual quadric `Q*` is a symmetric 4x4 matrix defined up to scale whose
//! tangent planes satisfy `pi^T Q* pi = 0`. For an ellipsoid with centre `t`,
//! rotation `R` and semi-axes `s`, `Q* = Z diag(s1^2, s2^2, s3^2, -1) Z^T`
//! with `Z = [R t; 0 1]`. Under a pinhole camera `P = K [R|t]` it images to
//! the dual conic `C* = P Q* P^T`.

use core::cmp::Ordering;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Rotation3, SVector, UnitQuaternion, Vector3, Vector4, Vector6};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

pub use crate::linalg::wrap_angle;
use crate::linalg::{skew, sym_eigen_sorted};

/// Relative tolerance used to decide that two semi-axes are equal.
const AXIS_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("matrix does not describe an ellipsoid (eigenvalue signature is not (+,+,+,-))")]
    NotAnEllipsoid,
    #[error("matrix is singular")]
    Singular,
    #[error("object centre is behind the camera")]
    BehindCamera,
    #[error("projected conic is not a bounded ellipse")]
    Unbounded,
}

/// Rigid transform in SE(3). For camera poses the convention is
/// camera-in-world: `transform_point` maps camera coordinates to world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn from_rotation_matrix(translation: Vector3<f64>, rotation: &Matrix3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self { translation, rotation: UnitQuaternion::from_rotation_matrix(&rot) }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose { translation: -(inv * self.translation), rotation: inv }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Homogeneous 4x4 matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// SE(3) exponential of a twist `(rho, omega)`.
    pub fn exp(xi: &Vector6<f64>) -> Pose {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let omega = Vector3::new(xi[3], xi[4], xi[5]);
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        Pose { translation: left_jacobian(&omega) * rho, rotation }
    }

    /// SE(3) logarithm as a twist `(rho, omega)`, inverse of [`Pose::exp`].
    pub fn log(&self) -> Vector6<f64> {
        let omega = self.rotation.scaled_axis();
        let rho = inverse_left_jacobian(&omega) * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z)
    }

    /// Right perturbation `self ∘ exp(xi)`.
    pub fn retract(&self, xi: &Vector6<f64>) -> Pose {
        self.compose(&Pose::exp(xi))
    }

    pub fn is_normalized(&self) -> bool {
        (self.rotation.quaternion().norm() - 1.0).abs() < 1e-9
    }
}

fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let w2 = w * w;
    if theta < 1e-6 {
        Matrix3::identity() + w * 0.5 + w2 * (1.0 / 6.0)
    } else {
        let t2 = theta * theta;
        Matrix3::identity() + w * ((1.0 - theta.cos()) / t2) + w2 * ((theta - theta.sin()) / (t2 * theta))
    }
}

fn inverse_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let w2 = w * w;
    if theta < 1e-6 {
        Matrix3::identity() - w * 0.5 + w2 * (1.0 / 12.0)
    } else {
        let t2 = theta * theta;
        let coeff = (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / t2;
        Matrix3::identity() - w * 0.5 + w2 * coeff
    }
}

/// Pinhole intrinsics. Image coordinates follow the usual convention:
/// x right, y down, z along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self { fx, fy, cx, cy, width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width > 0 && self.height > 0
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `P = K [R|t]` for a camera-in-world pose.
    pub fn projection(&self, pose: &Pose) -> Matrix3x4<f64> {
        let world_to_cam = pose.inverse();
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&world_to_cam.rotation_matrix());
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&world_to_cam.translation);
        self.k() * rt
    }

    /// Projects a camera-frame point to pixels; `None` when `z <= 0`.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame point at depth `z` through pixel `(u, v)`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(z * (u - self.cx) / self.fx, z * (v - self.cy) / self.fy, z)
    }
}

/// Nine-parameter ellipsoid: centre, intrinsic Z-Y-X Euler angles
/// (`R = Rz(yaw) Ry(pitch) Rx(roll)`) and semi-axis lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidState {
    pub center: Vector3<f64>,
    /// `(roll, pitch, yaw)` in radians.
    pub rpy: Vector3<f64>,
    pub axes: Vector3<f64>,
}

impl EllipsoidState {
    pub fn new(center: Vector3<f64>, rpy: Vector3<f64>, axes: Vector3<f64>) -> Self {
        Self { center, rpy, axes }
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Self { center, rpy: Vector3::zeros(), axes: Vector3::repeat(radius) }
    }

    pub fn from_rotation(center: Vector3<f64>, rotation: &Matrix3<f64>, axes: Vector3<f64>) -> Self {
        Self { center, rpy: rpy_from_matrix(rotation), axes }
    }

    pub fn is_valid(&self) -> bool {
        self.axes.iter().all(|&s| s > 0.0 && s.is_finite())
            && self.center.iter().all(|c| c.is_finite())
            && self.rpy.iter().all(|a| a.is_finite())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_rpy(&self.rpy)
    }

    /// Pose `Z` of the ellipsoid frame in its parent frame.
    pub fn pose(&self) -> Pose {
        Pose::from_rotation_matrix(self.center, &self.rotation())
    }

    pub fn volume_product(&self) -> f64 {
        self.axes.x * self.axes.y * self.axes.z
    }

    /// `Q* = Z diag(s1^2, s2^2, s3^2, -1) Z^T`.
    pub fn to_dual(&self) -> DualQuadric {
        let z = self.pose().matrix();
        let d = Matrix4::from_diagonal(&Vector4::new(
            self.axes.x * self.axes.x,
            self.axes.y * self.axes.y,
            self.axes.z * self.axes.z,
            -1.0,
        ));
        DualQuadric(z * d * z.transpose())
    }

    /// `[x, y, z, roll, pitch, yaw, s1, s2, s3]`.
    pub fn to_vector(&self) -> SVector<f64, 9> {
        SVector::<f64, 9>::from_column_slice(&[
            self.center.x,
            self.center.y,
            self.center.z,
            self.rpy.x,
            self.rpy.y,
            self.rpy.z,
            self.axes.x,
            self.axes.y,
            self.axes.z,
        ])
    }

    pub fn from_vector(v: &SVector<f64, 9>) -> Self {
        Self {
            center: Vector3::new(v[0], v[1], v[2]),
            rpy: Vector3::new(v[3], v[4], v[5]),
            axes: Vector3::new(v[6], v[7], v[8]),
        }
    }

    /// Same ellipsoid expressed in the parent frame of `pose`.
    pub fn transformed(&self, pose: &Pose) -> EllipsoidState {
        let rotation = pose.rotation_matrix() * self.rotation();
        EllipsoidState::from_rotation(pose.transform_point(&self.center), &rotation, self.axes)
    }

    /// Canonical representative: semi-axes sorted descending, right-handed
    /// frame, axis signs chosen for the smallest rotation angle.
    pub fn canonical(&self) -> EllipsoidState {
        let (rot, axes) = canonical_frame(&self.rotation(), &self.axes);
        EllipsoidState::from_rotation(self.center, &rot, axes)
    }

    /// Evaluates `X^T Q X` for the primal quadric normalized to `-1` at the
    /// centre and `0` on the surface.
    pub fn algebraic_distance(&self, x: &Vector3<f64>) -> f64 {
        let local = self.rotation().transpose() * (x - self.center);
        (local.x / self.axes.x).powi(2) + (local.y / self.axes.y).powi(2) + (local.z / self.axes.z).powi(2) - 1.0
    }

    /// Half-extents of the axis-aligned box enclosing the ellipsoid in its
    /// parent frame.
    pub fn aabb_half_extents(&self) -> Vector3<f64> {
        let r = self.rotation();
        Vector3::from_fn(|i, _| {
            ((r[(i, 0)] * self.axes.x).powi(2) + (r[(i, 1)] * self.axes.y).powi(2) + (r[(i, 2)] * self.axes.z).powi(2)).sqrt()
        })
    }
}

pub fn rotation_from_rpy(rpy: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z).into_inner()
}

/// Inverse of [`rotation_from_rpy`] with roll and yaw in `(-pi, pi]` and
/// pitch in `[-pi/2, pi/2]`.
pub fn rpy_from_matrix(r: &Matrix3<f64>) -> Vector3<f64> {
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(*r).euler_angles();
    Vector3::new(wrap_angle(roll), pitch, wrap_angle(yaw))
}

/// Sorts axes descending (stable within a relative tie tolerance), fixes
/// handedness and picks the axis signs that minimise the rotation angle.
pub(crate) fn canonical_frame(rot: &Matrix3<f64>, axes: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let scale = axes.amax().max(f64::MIN_POSITIVE);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        if (axes[a] - axes[b]).abs() <= AXIS_TIE_EPS * scale {
            Ordering::Equal
        } else {
            axes[b].partial_cmp(&axes[a]).unwrap_or(Ordering::Equal)
        }
    });
    let sorted_axes = Vector3::new(axes[order[0]], axes[order[1]], axes[order[2]]);
    let mut r = Matrix3::from_columns(&[
        rot.column(order[0]).into_owned(),
        rot.column(order[1]).into_owned(),
        rot.column(order[2]).into_owned(),
    ]);
    if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
    }
    const SIGNS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    let mut best = r;
    let mut best_trace = r.trace();
    for signs in &SIGNS[1..] {
        let mut cand = r;
        for (c, s) in signs.iter().enumerate() {
            cand.column_mut(c).scale_mut(*s);
        }
        let tr = cand.trace();
        if tr > best_trace + 1e-12 {
            best_trace = tr;
            best = cand;
        }
    }
    (best, sorted_axes)
}

/// The 24 proper rotations describing the same ellipsoid frame (axis
/// permutations times sign flips), paired with the permuted semi-axes.
pub(crate) fn equivalent_frames(rot: &Matrix3<f64>, axes: &Vector3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 24] {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    const SIGNS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    let mut out = [(Matrix3::identity(), Vector3::zeros()); 24];
    let mut k = 0;
    for perm in &PERMS {
        let mut r = Matrix3::from_columns(&[
            rot.column(perm[0]).into_owned(),
            rot.column(perm[1]).into_owned(),
            rot.column(perm[2]).into_owned(),
        ]);
        if r.determinant() < 0.0 {
            r.column_mut(2).neg_mut();
        }
        let a = Vector3::new(axes[perm[0]], axes[perm[1]], axes[perm[2]]);
        for signs in &SIGNS {
            let mut cand = r;
            for (c, s) in signs.iter().enumerate() {
                cand.column_mut(c).scale_mut(*s);
            }
            out[k] = (cand, a);
            k += 1;
        }
    }
    out
}

/// Equivalent frame whose rotation is closest to `reference`.
pub(crate) fn nearest_frame(rot: &Matrix3<f64>, axes: &Vector3<f64>, reference: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let mut best = (*rot, *axes);
    let mut best_score = f64::NEG_INFINITY;
    for (r, a) in equivalent_frames(rot, axes).iter() {
        let score = (reference.transpose() * r).trace();
        if score > best_score + 1e-12 {
            best_score = score;
            best = (*r, *a);
        }
    }
    best
}

fn max_abs(m: &Matrix4<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Dual quadric `Q*` (homogeneous, symmetric 4x4).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuadric(pub Matrix4<f64>);

impl DualQuadric {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    /// `Q* = |Q| Q^-1` from a primal quadric, computed on the
    /// scale-normalized matrix.
    pub fn from_primal(primal: &Matrix4<f64>) -> Result<DualQuadric, GeometryError> {
        let scale = max_abs(primal);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::Singular);
        }
        let q = primal / scale;
        let det = q.determinant();
        if det.abs() < 1e-12 {
            return Err(GeometryError::Singular);
        }
        let inv = q.try_inverse().ok_or(GeometryError::Singular)?;
        Ok(DualQuadric(inv * det))
    }

    /// Scale-normalized copy with the `[3,3]` entry equal to `-1`.
    fn normalized(&self) -> Result<Matrix4<f64>, GeometryError> {
        let m = (self.0 + self.0.transpose()) * 0.5;
        let scale = max_abs(&m);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::NotAnEllipsoid);
        }
        let m = m / scale;
        let w = m[(3, 3)];
        if w.abs() < 1e-12 {
            return Err(GeometryError::NotAnEllipsoid);
        }
        Ok(m / -w)
    }

    /// Centre of the quadric, `None` for a vanishing `[3,3]` entry.
    pub fn center(&self) -> Option<Vector3<f64>> {
        let m = self.normalized().ok()?;
        Some(-Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]))
    }

    /// Eigen-decomposition `Q* = Z Q~* Z^T` into a canonical ellipsoid state.
    pub fn decompose(&self) -> Result<EllipsoidState, GeometryError> {
        let m = self.normalized()?;
        let t = -Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        let shape: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned() + t * t.transpose();
        let (values, vectors) = sym_eigen_sorted(&shape);
        let largest = values[2];
        if !(largest > 0.0) || values[0] <= 1e-12 * largest {
            return Err(GeometryError::NotAnEllipsoid);
        }
        let axes = values.map(|v| v.sqrt());
        let (rot, axes) = canonical_frame(&vectors, &axes);
        Ok(EllipsoidState::from_rotation(t, &rot, axes))
    }

    /// `H Q* H^T` for the homogeneous matrix `H` of `pose`.
    pub fn transform(&self, pose: &Pose) -> DualQuadric {
        let h = pose.matrix();
        DualQuadric(h * self.0 * h.transpose())
    }

    /// `C* = P Q* P^T` for a camera-in-world `pose`.
    pub fn project(&self, pose: &Pose, cam: &Camera) -> Result<DualConic, GeometryError> {
        let center = self.center().ok_or(GeometryError::NotAnEllipsoid)?;
        let in_cam = pose.inverse().transform_point(&center);
        if !(in_cam.z > 0.0) {
            return Err(GeometryError::BehindCamera);
        }
        let p = cam.projection(pose);
        Ok(DualConic(p * self.0 * p.transpose()))
    }

    /// Tangency test `pi^T Q* pi`.
    pub fn plane_tangency(&self, plane: &Vector4<f64>) -> f64 {
        (plane.transpose() * self.0 * plane)[(0, 0)]
    }
}

/// Projects an ellipsoid state directly (same result as going through
/// [`EllipsoidState::to_dual`] and [`DualQuadric::project`]).
pub fn project_ellipsoid(e: &EllipsoidState, pose: &Pose, cam: &Camera) -> Result<DualConic, GeometryError> {
    let in_cam = pose.inverse().transform_point(&e.center);
    if !(in_cam.z > 0.0) {
        return Err(GeometryError::BehindCamera);
    }
    let p = cam.projection(pose);
    Ok(DualConic(p * e.to_dual().0 * p.transpose()))
}

/// Dual conic `C*` (homogeneous, symmetric 3x3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConic(pub Matrix3<f64>);

impl DualConic {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Circumscribed axis-aligned rectangle: the vertical and horizontal
    /// lines `l` with `l^T C* l = 0`.
    pub fn bbox(&self) -> Result<BBox, GeometryError> {
        let c = (self.0 + self.0.transpose()) * 0.5;
        let scale = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::Unbounded);
        }
        let c = c / scale;
        let w = c[(2, 2)];
        if w.abs() < 1e-14 {
            return Err(GeometryError::Unbounded);
        }
        // A real ellipse has a definite primal upper block, which for the
        // adjugate reads det(C*) * C*[2,2] > 0.
        if c.determinant() * w <= 0.0 {
            return Err(GeometryError::Unbounded);
        }
        let disc_x = c[(0, 2)] * c[(0, 2)] - c[(0, 0)] * w;
        let disc_y = c[(1, 2)] * c[(1, 2)] - c[(1, 1)] * w;
        if !(disc_x > 0.0) || !(disc_y > 0.0) {
            return Err(GeometryError::Unbounded);
        }
        let (sx, sy) = (disc_x.sqrt(), disc_y.sqrt());
        let x1 = (c[(0, 2)] + sx) / w;
        let x2 = (c[(0, 2)] - sx) / w;
        let y1 = (c[(1, 2)] + sy) / w;
        let y2 = (c[(1, 2)] - sy) / w;
        Ok(BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)))
    }
}

/// Pixel rectangle `(x_min, y_min, x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// True when any edge lies within `margin` pixels of the image border.
    pub fn touches_border(&self, cam: &Camera, margin: f64) -> bool {
        self.x_min <= margin
            || self.y_min <= margin
            || self.x_max >= cam.width as f64 - 1.0 - margin
            || self.y_max >= cam.height as f64 - 1.0 - margin
    }

    /// Image lines of the four edges, `l = (1, 0, -x)` and `l = (0, 1, -y)`.
    pub fn edge_lines(&self) -> [nalgebra::Vector3<f64>; 4] {
        [
            Vector3::new(1.0, 0.0, -self.x_min),
            Vector3::new(0.0, 1.0, -self.y_min),
            Vector3::new(1.0, 0.0, -self.x_max),
            Vector3::new(0.0, 1.0, -self.y_max),
        ]
    }
}

/// Plane `n . p + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Normalizes `(n, d)` so that `|n| = 1`. Returns `None` for a zero normal.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Option<Plane> {
        let norm = normal.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        Some(Plane { normal: normal / norm, offset: offset / norm })
    }

    pub fn through_point(normal: Vector3<f64>, point: &Vector3<f64>) -> Option<Plane> {
        let n = normal.try_normalize(0.0)?;
        Some(Plane { normal: n, offset: -n.dot(point) })
    }

    /// Signed distance, positive on the side the normal points to.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn flipped(&self) -> Plane {
        Plane { normal: -self.normal, offset: -self.offset }
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.distance(p)
    }

    pub fn reflect_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * (2.0 * self.distance(p))
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.normal.x, self.normal.y, self.normal.z, self.offset)
    }

    /// The plane expressed in the parent frame of `pose`.
    pub fn transformed(&self, pose: &Pose) -> Plane {
        let n = pose.rotation * self.normal;
        Plane { normal: n, offset: self.offset - n.dot(&pose.translation) }
    }
}

/// Signed point-plane distance `n . p + d`.
pub fn point_plane_distance(p: &Vector3<f64>, plane: &Plane) -> f64 {
    plane.distance(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn unit_sphere_dual_is_diagonal() {
        let q = EllipsoidState::sphere(Vector3::zeros(), 1.0).to_dual();
        assert!((q.0 - Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1.0))).amax() < 1e-15);
    }

    #[test]
    fn axis_aligned_dual() {
        let e = EllipsoidState::new(Vector3::zeros(), Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0));
        let q = e.to_dual();
        assert!((q.0 - Matrix4::from_diagonal(&Vector4::new(1.0, 4.0, 9.0, -1.0))).amax() < 1e-15);
    }

    #[test]
    fn translated_sphere_dual() {
        let q = EllipsoidState::sphere(Vector3::new(1.0, 0.0, 0.0), 1.0).to_dual();
        #[rustfmt::skip]
        let expected = Matrix4::new(
            0.0, 0.0, 0.0, -1.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            -1.0, 0.0, 0.0, -1.0,
        );
        assert!((q.0 - expected).amax() < 1e-15);
    }

    #[test]
    fn decompose_axis_aligned_sorts_axes() {
        let q = DualQuadric(Matrix4::from_diagonal(&Vector4::new(1.0, 4.0, 9.0, -1.0)));
        let e = q.decompose().unwrap();
        assert!(e.center.norm() < 1e-12);
        assert!((e.axes - Vector3::new(3.0, 2.0, 1.0)).amax() < 1e-12);
        // first canonical axis is world z, second world y
        let r = e.rotation();
        assert!(close(r.column(0).dot(&Vector3::z()).abs(), 1.0, 1e-12));
        assert!(close(r.column(1).dot(&Vector3::y()).abs(), 1.0, 1e-12));
        assert!(close(r.determinant(), 1.0, 1e-12));
    }

    #[test]
    fn decompose_rejects_wrong_signature() {
        let q = DualQuadric(Matrix4::identity());
        assert_eq!(q.decompose(), Err(GeometryError::NotAnEllipsoid));
        let q = DualQuadric(Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, 1.0, -1.0)));
        assert_eq!(q.decompose(), Err(GeometryError::NotAnEllipsoid));
        assert_eq!(DualQuadric(Matrix4::zeros()).decompose(), Err(GeometryError::NotAnEllipsoid));
    }

    #[test]
    fn primal_to_dual() {
        let q = DualQuadric::from_primal(&Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1.0))).unwrap();
        let ratio = q.0[(0, 0)];
        assert!((q.0 / ratio - Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1.0))).amax() < 1e-12);

        let q = DualQuadric::from_primal(&Matrix4::from_diagonal(&Vector4::new(0.25, 1.0, 1.0 / 9.0, -1.0))).unwrap();
        let e = q.decompose().unwrap();
        assert!((e.axes - Vector3::new(3.0, 2.0, 1.0)).amax() < 1e-12);
        let n = q.0 / -q.0[(3, 3)];
        assert!((n - Matrix4::from_diagonal(&Vector4::new(4.0, 1.0, 9.0, -1.0))).amax() < 1e-12);

        let mut singular = Matrix4::identity();
        singular[(2, 2)] = 0.0;
        assert_eq!(DualQuadric::from_primal(&singular), Err(GeometryError::Singular));
    }

    #[test]
    fn sphere_projection_bbox() {
        let cam = Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480);
        let q = EllipsoidState::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0).to_dual();
        let b = q.project(&Pose::identity(), &cam).unwrap().bbox().unwrap();
        let half = 500.0 / 24f64.sqrt();
        assert!(close(b.x_min, 320.0 - half, 1e-9));
        assert!(close(b.x_max, 320.0 + half, 1e-9));
        assert!(close(b.y_min, 240.0 - half, 1e-9));
        assert!(close(b.y_max, 240.0 + half, 1e-9));
        assert!(close(b.x_min, 217.94, 0.01) && close(b.y_max, 342.06, 0.01));
    }

    #[test]
    fn behind_camera_rejected() {
        let cam = Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480);
        let q = EllipsoidState::sphere(Vector3::new(0.0, 0.0, -1.0), 0.5).to_dual();
        assert_eq!(q.project(&Pose::identity(), &cam), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn projection_commutes_with_transform() {
        let cam = Camera::new(500.0, 520.0, 320.0, 240.0, 640, 480);
        let e = EllipsoidState::new(Vector3::new(0.2, -0.1, 4.0), Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.5, 0.3, 0.2));
        let shift = Pose::new(Vector3::new(1.0, 2.0, -0.5), UnitQuaternion::from_euler_angles(0.1, -0.2, 0.4));
        let direct = e.to_dual().project(&Pose::identity(), &cam).unwrap().bbox().unwrap();
        let moved = e.to_dual().transform(&shift).project(&shift, &cam).unwrap().bbox().unwrap();
        assert!((direct.to_vector() - moved.to_vector()).amax() < 1e-7);
    }

    #[test]
    fn unit_circle_bbox() {
        let c = DualConic(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0)));
        let b = c.bbox().unwrap();
        assert!((b.to_vector() - Vector4::new(-1.0, -1.0, 1.0, 1.0)).amax() < 1e-15);
        let mut degenerate = c.0;
        degenerate[(2, 2)] = 0.0;
        assert_eq!(DualConic(degenerate).bbox(), Err(GeometryError::Unbounded));
        // hyperbola
        assert_eq!(DualConic(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).bbox(), Err(GeometryError::Unbounded));
    }

    #[test]
    fn transform_identity_and_yaw() {
        let q = DualQuadric(Matrix4::from_diagonal(&Vector4::new(1.0, 4.0, 9.0, -1.0)));
        assert_eq!(q.transform(&Pose::identity()).0, q.0);
        let yaw = Pose::new(Vector3::zeros(), UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_2));
        let r = q.transform(&yaw).0;
        assert!((r - Matrix4::from_diagonal(&Vector4::new(4.0, 1.0, 9.0, -1.0))).amax() < 1e-12);
    }

    #[test]
    fn transform_moves_center() {
        let e = EllipsoidState::new(Vector3::new(0.3, -0.2, 1.0), Vector3::new(0.2, 0.0, 1.0), Vector3::new(0.4, 0.3, 0.1));
        let h = Pose::new(Vector3::new(1.0, 2.0, 3.0), UnitQuaternion::from_euler_angles(0.3, 0.1, -0.7));
        let moved = e.to_dual().transform(&h).decompose().unwrap();
        assert!((moved.center - h.transform_point(&e.center)).amax() < 1e-12);
        let direct = e.transformed(&h).canonical();
        assert!((moved.to_vector() - direct.to_vector()).amax() < 1e-9);
    }

    #[test]
    fn plane_distance_sign() {
        let plane = Plane::new(Vector3::z(), 0.0).unwrap();
        assert_eq!(point_plane_distance(&Vector3::new(0.0, 0.0, 1.0), &plane), 1.0);
        assert_eq!(point_plane_distance(&Vector3::new(3.0, -2.0, 0.0), &plane), 0.0);
        assert_eq!(point_plane_distance(&Vector3::new(0.0, 0.0, -0.5), &plane), -0.5);
    }

    #[test]
    fn se3_log_exp_roundtrip() {
        let xi = Vector6::new(0.3, -0.1, 0.5, 0.2, -0.4, 0.9);
        let back = Pose::exp(&xi).log();
        assert!((back - xi).amax() < 1e-12);
        let small = Vector6::new(1e-3, 0.0, 0.0, 1e-8, 0.0, 0.0);
        assert!((Pose::exp(&small).log() - small).amax() < 1e-14);
    }

    #[test]
    fn algebraic_distance_anchors() {
        let e = EllipsoidState::sphere(Vector3::zeros(), 1.0);
        assert!(e.algebraic_distance(&Vector3::new(0.0, 1.0, 0.0)).abs() < 1e-15);
        assert_eq!(e.algebraic_distance(&Vector3::zeros()), -1.0);
        assert_eq!(e.algebraic_distance(&Vector3::new(2.0, 0.0, 0.0)), 3.0);
    }
}
