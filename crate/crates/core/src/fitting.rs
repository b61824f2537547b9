//! Volume-weighted ellipsoid fitting and single-frame object estimation.
//!
//! The fit minimises `sum_i (sqrt(s1 s2 s3) F(X_i))^2` where `F` is the
//! primal quadric normalised to `-1` at the centre and `0` on the surface.
//! The volume weight keeps partial clouds from inflating the ellipsoid.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::geometry::{BBox, Camera, EllipsoidState, Plane};
use crate::linalg::{centroid, damped_step, sym_eigen_sorted};
use crate::segmentation::{self, DepthImage, PointCloud, SegmentationError, SegmentationParams, SegmentedObject};
use crate::symmetry::{self, SymmetryError, SymmetryParams, SymmetryTable};

const MIN_INIT_AXIS: f64 = 0.01;
const MAX_LAMBDA: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FitError {
    #[error("{got} points, at least {need} required")]
    TooFewPoints { got: usize, need: usize },
    #[error("solver diverged (non-finite cost)")]
    SolverDiverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub max_iterations: usize,
    pub lm_initial_lambda: f64,
    /// Relative cost decrease below which the solver stops.
    pub convergence_tol: f64,
    pub min_points: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        Self { max_iterations: 50, lm_initial_lambda: 1e-3, convergence_tol: 1e-8, min_points: 30 }
    }
}

impl FitParams {
    pub fn is_valid(&self) -> bool {
        self.max_iterations > 0 && self.lm_initial_lambda > 0.0 && self.convergence_tol > 0.0 && self.min_points > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub ellipsoid: EllipsoidState,
    /// Mean weighted squared residual per point.
    pub residual_t: f64,
    pub p_fit: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Object detection in one frame; `object_id` carries the data association.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: u32,
    pub object_id: u32,
    pub label: String,
    pub bbox: BBox,
    pub p_det: f64,
}

/// Single-frame estimate of one object, ellipsoid in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame_id: u32,
    pub object_id: u32,
    pub label: String,
    pub bbox: BBox,
    pub p_det: f64,
    pub ellipsoid: EllipsoidState,
    pub p_sym: f64,
    pub p_fit: f64,
    pub p_e: f64,
}

/// `F(X) = X^T Q X` for the centre-normalised primal quadric of `e`.
pub fn algebraic_distance(x: &Vector3<f64>, e: &EllipsoidState) -> f64 {
    e.algebraic_distance(x)
}

/// `sum_i (sqrt(s1 s2 s3) F(X_i))^2`.
pub fn fit_cost(cloud: &PointCloud, e: &EllipsoidState) -> f64 {
    let vol = e.volume_product();
    cloud.points.iter().map(|p| vol * e.algebraic_distance(p).powi(2)).sum()
}

/// `(2 pi)^(-1/2) exp(-T / 2)`.
pub fn fit_probability(residual_t: f64) -> f64 {
    (2.0 * PI).powf(-0.5) * (-0.5 * residual_t).exp()
}

/// `P_e = P_det P_sym P_fit`.
pub fn combine_probability(p_det: f64, p_sym: f64, p_fit: f64) -> f64 {
    p_det * p_sym * p_fit
}

#[derive(Debug, Clone, Copy)]
struct FitState {
    center: Vector3<f64>,
    rotation: Matrix3<f64>,
    log_axes: Vector3<f64>,
}

impl FitState {
    fn retract(&self, delta: &[f64; 9]) -> FitState {
        let dr = Rotation3::new(Vector3::new(delta[3], delta[4], delta[5])).into_inner();
        FitState {
            center: self.center + Vector3::new(delta[0], delta[1], delta[2]),
            rotation: self.rotation * dr,
            log_axes: self.log_axes + Vector3::new(delta[6], delta[7], delta[8]),
        }
    }

    fn residuals(&self, points: &[Vector3<f64>], out: &mut [f64]) {
        let axes = self.log_axes.map(|v| v.exp());
        let weight = (axes.x * axes.y * axes.z).sqrt();
        let inv2 = axes.map(|a| 1.0 / (a * a));
        let rt = self.rotation.transpose();
        for (o, p) in out.iter_mut().zip(points) {
            let y = rt * (p - self.center);
            *o = weight * (y.x * y.x * inv2.x + y.y * y.y * inv2.y + y.z * y.z * inv2.z - 1.0);
        }
    }

    fn to_state(self) -> EllipsoidState {
        EllipsoidState::from_rotation(self.center, &self.rotation, self.log_axes.map(|v| v.exp())).canonical()
    }
}

fn initial_state(points: &[Vector3<f64>], support: &Plane, yaw_hint: Option<&Vector3<f64>>) -> FitState {
    let c = centroid(points);
    let up = support.normal;
    let in_plane = |v: Vector3<f64>| (v - up * up.dot(&v)).try_normalize(1e-9);
    let x_axis = yaw_hint.and_then(|h| in_plane(*h)).or_else(|| {
        // planar PCA
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - c;
            let d = d - up * up.dot(&d);
            cov += d * d.transpose();
        }
        let (_, vectors) = sym_eigen_sorted(&cov);
        in_plane(vectors.column(2).into_owned())
    });
    let x_axis = x_axis.unwrap_or_else(|| {
        let helper = if up.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        in_plane(helper).unwrap_or(Vector3::x())
    });
    let y_axis = up.cross(&x_axis);
    let rotation = Matrix3::from_columns(&[x_axis, y_axis, up]);
    let mut var = Vector3::zeros();
    for p in points {
        let local = rotation.transpose() * (p - c);
        var += local.component_mul(&local);
    }
    var /= points.len().max(1) as f64;
    let axes = var.map(|v| (2.0 * v.sqrt()).max(MIN_INIT_AXIS));
    FitState { center: c, rotation, log_axes: axes.map(|a| a.ln()) }
}

/// Levenberg-Marquardt fit over centre, local rotation increment and
/// log semi-axes, starting from the centroid with the z axis on the support
/// normal.
pub fn fit_ellipsoid(
    cloud: &PointCloud,
    support: &Plane,
    yaw_hint: Option<&Vector3<f64>>,
    params: &FitParams,
) -> Result<FitResult, FitError> {
    let n = cloud.len();
    if n < params.min_points {
        return Err(FitError::TooFewPoints { got: n, need: params.min_points });
    }
    let points = &cloud.points;
    let mut state = initial_state(points, support, yaw_hint);
    let mut r = alloc::vec![0.0; n];
    let mut r_plus = alloc::vec![0.0; n];
    let mut r_minus = alloc::vec![0.0; n];
    state.residuals(points, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    if !cost.is_finite() {
        return Err(FitError::SolverDiverged);
    }
    let initial_cost = cost;
    let mut lambda = params.lm_initial_lambda;
    let mut converged = cost == 0.0;
    let mut iterations = 0;
    let mut jac = DMatrix::<f64>::zeros(n, 9);

    while !converged && iterations < params.max_iterations {
        iterations += 1;
        for k in 0..9 {
            let scale = if k < 3 { state.center[k].abs().max(1.0) } else { 1.0 };
            let h = 1e-6 * scale;
            let mut d = [0.0; 9];
            d[k] = h;
            state.retract(&d).residuals(points, &mut r_plus);
            d[k] = -h;
            state.retract(&d).residuals(points, &mut r_minus);
            for i in 0..n {
                jac[(i, k)] = (r_plus[i] - r_minus[i]) / (2.0 * h);
            }
        }
        let h = jac.tr_mul(&jac);
        let g = jac.tr_mul(&DVector::from_column_slice(&r));
        let mut accepted = false;
        while lambda <= MAX_LAMBDA {
            let Some(step) = damped_step(&h, &g, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let delta: [f64; 9] = core::array::from_fn(|k| step[k]);
            let cand = state.retract(&delta);
            cand.residuals(points, &mut r_plus);
            let new_cost: f64 = r_plus.iter().map(|v| v * v).sum();
            if new_cost.is_finite() && new_cost < cost {
                let rel = (cost - new_cost) / cost;
                state = cand;
                core::mem::swap(&mut r, &mut r_plus);
                cost = new_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if rel < params.convergence_tol || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at any damping: local minimum
            converged = true;
        }
    }

    let residual_t = cost / n as f64;
    Ok(FitResult {
        ellipsoid: state.to_state(),
        residual_t,
        p_fit: fit_probability(residual_t),
        iterations,
        converged,
        initial_cost,
        final_cost: cost,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimationParams {
    pub segmentation: SegmentationParams,
    pub symmetry: SymmetryParams,
    pub fit: FitParams,
    pub table: SymmetryTable,
}

/// Why a detection produced no observation.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SkipReason {
    #[error("segmentation: {0}")]
    Segmentation(#[from] SegmentationError),
    #[error("symmetry: {0}")]
    Symmetry(#[from] SymmetryError),
    #[error("fit: {0}")]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub frame_id: u32,
    pub object_id: u32,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameEstimate {
    pub observations: Vec<Observation>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Symmetry completion, fit and probabilities for an already segmented object.
pub fn estimate_object(
    seg: &SegmentedObject,
    frame_id: u32,
    object_id: u32,
    params: &EstimationParams,
) -> Result<Observation, SkipReason> {
    if seg.cloud.len() < params.fit.min_points {
        return Err(FitError::TooFewPoints { got: seg.cloud.len(), need: params.fit.min_points }.into());
    }
    let kind = params.table.prior(&seg.label);
    let sym = symmetry::estimate_symmetry(&seg.cloud, &seg.support_plane, kind, &params.symmetry)?;
    let hint = sym.planes.first().map(|p| p.normal);
    let fit = fit_ellipsoid(&sym.completed, &seg.support_plane, hint.as_ref(), &params.fit)?;
    Ok(Observation {
        frame_id,
        object_id,
        label: seg.label.clone(),
        bbox: seg.bbox,
        p_det: seg.p_det,
        ellipsoid: fit.ellipsoid,
        p_sym: sym.p_sym,
        p_fit: fit.p_fit,
        p_e: combine_probability(seg.p_det, sym.p_sym, fit.p_fit),
    })
}

/// Segmentation, symmetry completion and fitting for every detection of one
/// frame. Detections failing any stage are reported in `diagnostics`.
pub fn estimate_single_frame<R: Rng + ?Sized>(
    depth: &DepthImage,
    cam: &Camera,
    detections: &[Detection],
    params: &EstimationParams,
    rng: &mut R,
) -> FrameEstimate {
    let mut out = FrameEstimate::default();
    if detections.is_empty() {
        return out;
    }
    let planes = segmentation::frame_support_planes(depth, cam, &params.segmentation, rng);
    for det in detections {
        let result = segmentation::segment_with_planes(depth, cam, &det.bbox, &det.label, det.p_det, &planes, &params.segmentation)
            .map_err(SkipReason::from)
            .and_then(|seg| estimate_object(&seg, det.frame_id, det.object_id, params));
        match result {
            Ok(obs) => out.observations.push(obs),
            Err(reason) => out.diagnostics.push(Diagnostic { frame_id: det.frame_id, object_id: det.object_id, reason }),
        }
    }
    out
}
