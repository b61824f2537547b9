//! Levenberg-Marquardt over the factor graph with IRLS Huber weights.
//!
//! Poses are updated by right perturbation `x ∘ exp(xi)`; landmarks by
//! `(c + dc, R exp([w]x), exp(log s + dl))`. Jacobians are central finite
//! differences per factor, the normal equations are dense. The first pose
//! is the gauge and never moves.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, DVectorView, UnitQuaternion, Vector3, Vector6};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use super::{huber_cost, huber_weight, residual_2d, residual_3d, residual_odometry, FactorGraph, GraphConfig, Landmark, OptimizeReport};
use crate::geometry::{EllipsoidState, Pose};
use crate::linalg::damped_step;

const FD_STEP: f64 = 1e-6;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e12;
const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct LandmarkVar {
    center: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
    log_axes: Vector3<f64>,
}

impl LandmarkVar {
    fn from_state(s: &EllipsoidState) -> Self {
        let q = UnitQuaternion::from_matrix(&s.rotation());
        Self { center: s.center, rotation: q, log_axes: s.axes.map(|a| a.ln()) }
    }

    fn state(&self) -> EllipsoidState {
        EllipsoidState::from_rotation(self.center, self.rotation.to_rotation_matrix().matrix(), self.log_axes.map(|l| l.exp()))
    }

    fn retract(&self, d: &[f64]) -> Self {
        let dc = Vector3::new(d[0], d[1], d[2]);
        let dw = Vector3::new(d[3], d[4], d[5]);
        let dl = Vector3::new(d[6], d[7], d[8]);
        Self { center: self.center + dc, rotation: self.rotation * UnitQuaternion::new(dw), log_axes: self.log_axes + dl }
    }
}

struct Problem<'a> {
    graph: &'a FactorGraph,
    config: &'a GraphConfig,
    /// Indices of box factors that project at the initial estimate.
    active_boxes: Vec<usize>,
    n_pose_vars: usize,
}

#[derive(Clone)]
struct Estimate {
    poses: Vec<Pose>,
    landmarks: Vec<LandmarkVar>,
    states: Vec<EllipsoidState>,
}

impl Estimate {
    fn new(poses: Vec<Pose>, landmarks: Vec<LandmarkVar>) -> Self {
        let states = landmarks.iter().map(|l| l.state()).collect();
        Self { poses, landmarks, states }
    }
}

impl Problem<'_> {
    fn pose_offset(&self, j: usize) -> Option<usize> {
        if j == 0 {
            None
        } else {
            Some(6 * (j - 1))
        }
    }

    fn landmark_offset(&self, l: usize) -> usize {
        self.n_pose_vars + 9 * l
    }

    fn dim(&self) -> usize {
        self.n_pose_vars + 9 * self.graph.landmarks.len()
    }

    /// Robust cost; infinite if an active box factor stops projecting.
    fn cost(&self, est: &Estimate) -> f64 {
        let g = self.graph;
        let c = self.config;
        let mut cost = 0.0;
        for f in &g.odometry {
            let r = residual_odometry(&est.poses[f.from], &f.motion, &est.poses[f.to], &c.sigma_odom);
            cost += huber_cost(r.norm(), c.huber_delta_odom);
        }
        if c.mode.uses_ellipsoids() {
            for f in &g.ellipsoid_factors {
                let r = residual_3d(&est.poses[f.pose], &f.ellipsoid, f.p_e, &est.states[f.landmark], &c.sigma_3d);
                cost += c.epsilon_z * huber_cost(r.norm(), c.huber_delta_3d);
            }
        }
        for &i in &self.active_boxes {
            let f = &g.box_factors[i];
            match residual_2d(&est.poses[f.pose], &f.bbox, f.p_det, &est.states[f.landmark], &g.camera, c.sigma_2d) {
                Ok(r) => cost += huber_cost(r.norm(), c.huber_delta_2d),
                Err(_) => return f64::INFINITY,
            }
        }
        cost
    }

    fn apply(&self, est: &Estimate, dx: &DVector<f64>) -> Estimate {
        let mut poses = est.poses.clone();
        for (j, pose) in poses.iter_mut().enumerate().skip(1) {
            let o = 6 * (j - 1);
            let xi = Vector6::from_column_slice(&dx.as_slice()[o..o + 6]);
            *pose = pose.retract(&xi);
        }
        let landmarks = est
            .landmarks
            .iter()
            .enumerate()
            .map(|(l, v)| {
                let o = self.landmark_offset(l);
                v.retract(&dx.as_slice()[o..o + 9])
            })
            .collect();
        Estimate::new(poses, landmarks)
    }

    /// Accumulates `w J^T J` and `w J^T r` of one factor. `blocks` pairs a
    /// variable offset with the Jacobian columns of that variable.
    fn accumulate(h: &mut DMatrix<f64>, g: &mut DVector<f64>, r: DVectorView<'_, f64>, blocks: &[(usize, DMatrix<f64>)], w: f64) {
        for (oa, ja) in blocks {
            let jtr = ja.transpose() * r;
            for k in 0..jtr.len() {
                g[oa + k] += w * jtr[k];
            }
            for (ob, jb) in blocks {
                let jtj = ja.transpose() * jb;
                for a in 0..jtj.nrows() {
                    for b in 0..jtj.ncols() {
                        h[(oa + a, ob + b)] += w * jtj[(a, b)];
                    }
                }
            }
        }
    }

    fn normal_equations(&self, est: &Estimate) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        let mut grad = DVector::zeros(n);
        let g = self.graph;
        let c = self.config;

        for f in &g.odometry {
            let eval = |a: &Pose, b: &Pose| DVector::from_column_slice(residual_odometry(a, &f.motion, b, &c.sigma_odom).as_slice());
            let r = eval(&est.poses[f.from], &est.poses[f.to]);
            let mut blocks = Vec::new();
            if let Some(o) = self.pose_offset(f.from) {
                blocks.push((o, pose_jacobian(&est.poses[f.from], 6, |p| Some(eval(p, &est.poses[f.to])))));
            }
            if let Some(o) = self.pose_offset(f.to) {
                blocks.push((o, pose_jacobian(&est.poses[f.to], 6, |p| Some(eval(&est.poses[f.from], p)))));
            }
            let w = huber_weight(r.norm(), c.huber_delta_odom);
            Self::accumulate(&mut h, &mut grad, r.as_view(), &blocks, w);
        }

        if c.mode.uses_ellipsoids() {
            for f in &g.ellipsoid_factors {
                let eval = |p: &Pose, s: &EllipsoidState| DVector::from_column_slice(residual_3d(p, &f.ellipsoid, f.p_e, s, &c.sigma_3d).as_slice());
                let pose = &est.poses[f.pose];
                let state = &est.states[f.landmark];
                let r = eval(pose, state);
                let mut blocks = Vec::new();
                if let Some(o) = self.pose_offset(f.pose) {
                    blocks.push((o, pose_jacobian(pose, 9, |p| Some(eval(p, state)))));
                }
                let lm = &est.landmarks[f.landmark];
                blocks.push((self.landmark_offset(f.landmark), landmark_jacobian(lm, 9, |s| Some(eval(pose, s)))));
                let w = c.epsilon_z * huber_weight(r.norm(), c.huber_delta_3d);
                Self::accumulate(&mut h, &mut grad, r.as_view(), &blocks, w);
            }
        }

        for &i in &self.active_boxes {
            let f = &g.box_factors[i];
            let eval = |p: &Pose, s: &EllipsoidState| {
                residual_2d(p, &f.bbox, f.p_det, s, &g.camera, c.sigma_2d).ok().map(|r| DVector::from_column_slice(r.as_slice()))
            };
            let pose = &est.poses[f.pose];
            let state = &est.states[f.landmark];
            let r = match eval(pose, state) {
                Some(r) => r,
                None => continue,
            };
            let mut blocks = Vec::new();
            if let Some(o) = self.pose_offset(f.pose) {
                blocks.push((o, pose_jacobian(pose, 4, |p| eval(p, state))));
            }
            let lm = &est.landmarks[f.landmark];
            blocks.push((self.landmark_offset(f.landmark), landmark_jacobian(lm, 4, |s| eval(pose, s))));
            let w = huber_weight(r.norm(), c.huber_delta_2d);
            Self::accumulate(&mut h, &mut grad, r.as_view(), &blocks, w);
        }
        (h, grad)
    }
}

/// Central differences; a column whose perturbation fails is left at zero.
fn central_columns<F: FnMut(usize, f64) -> Option<DVector<f64>>>(rows: usize, cols: usize, mut eval: F) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(rows, cols);
    for k in 0..cols {
        if let (Some(plus), Some(minus)) = (eval(k, FD_STEP), eval(k, -FD_STEP)) {
            j.set_column(k, &((plus - minus) / (2.0 * FD_STEP)));
        }
    }
    j
}

fn pose_jacobian<F: Fn(&Pose) -> Option<DVector<f64>>>(pose: &Pose, rows: usize, eval: F) -> DMatrix<f64> {
    central_columns(rows, 6, |k, h| {
        let mut xi = Vector6::zeros();
        xi[k] = h;
        eval(&pose.retract(&xi))
    })
}

fn landmark_jacobian<F: Fn(&EllipsoidState) -> Option<DVector<f64>>>(lm: &LandmarkVar, rows: usize, eval: F) -> DMatrix<f64> {
    central_columns(rows, 9, |k, h| {
        let mut d = [0.0; 9];
        d[k] = h;
        eval(&lm.retract(&d).state())
    })
}

/// Runs Levenberg-Marquardt until the relative cost decrease falls below
/// `1e-9`, no damping up to `1e12` yields a decrease, or
/// `config.max_iterations` is reached. Only steps that lower the cost are
/// accepted. Box factors whose landmark does not project at the start are
/// left out for the whole run and counted in the report.
pub fn optimize(graph: &FactorGraph, config: &GraphConfig) -> OptimizeReport {
    let active_boxes: Vec<usize> = if config.mode.uses_boxes() {
        (0..graph.box_factors.len())
            .filter(|&i| {
                let f = &graph.box_factors[i];
                residual_2d(&graph.poses[f.pose], &f.bbox, f.p_det, &graph.landmarks[f.landmark].state, &graph.camera, config.sigma_2d).is_ok()
            })
            .collect()
    } else {
        Vec::new()
    };
    let skipped = if config.mode.uses_boxes() { graph.box_factors.len() - active_boxes.len() } else { 0 };
    let problem = Problem { graph, config, active_boxes, n_pose_vars: 6 * graph.poses.len().saturating_sub(1) };

    let mut est = Estimate::new(graph.poses.clone(), graph.landmarks.iter().map(|l| LandmarkVar::from_state(&l.state)).collect());
    let mut cost = problem.cost(&est);
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut converged = problem.dim() == 0 || !cost.is_finite();

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let (h, g) = problem.normal_equations(&est);
        let mut accepted = None;
        while lambda <= LAMBDA_MAX {
            if let Some(dx) = damped_step(&h, &g, lambda) {
                let trial = problem.apply(&est, &dx);
                let c = problem.cost(&trial);
                if c < cost {
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = Some((trial, c));
                    break;
                }
            }
            lambda *= 10.0;
        }
        match accepted {
            Some((trial, c)) => {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                est = trial;
                cost = c;
                history.push(cost);
                if rel < REL_TOL {
                    converged = true;
                }
            }
            None => converged = true,
        }
    }

    let landmarks = graph
        .landmarks
        .iter()
        .zip(est.states.iter())
        .map(|(l, s)| Landmark { object_id: l.object_id, label: l.label.clone(), state: s.canonical() })
        .collect();
    OptimizeReport {
        initial_cost,
        final_cost: cost,
        iterations,
        converged,
        cost_history: history,
        skipped_box_factors: skipped,
        landmarks,
        poses: est.poses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{EllipsoidFactor, Mode, OdometryFactor};
    use crate::geometry::Camera;
    use alloc::string::ToString;

    fn single_landmark_graph(truth: &EllipsoidState, start: &EllipsoidState, n_obs: usize) -> FactorGraph {
        let poses: Vec<Pose> =
            (0..n_obs).map(|i| Pose::new(Vector3::new(0.2 * i as f64, 0.0, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.05 * i as f64, 0.0))).collect();
        let mut g = FactorGraph::new(Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480), poses.clone());
        for j in 0..n_obs - 1 {
            g.odometry.push(OdometryFactor { from: j, to: j + 1, motion: poses[j].inverse().compose(&poses[j + 1]) });
        }
        g.landmarks.push(Landmark { object_id: 1, label: "cup".to_string(), state: *start });
        for (j, p) in poses.iter().enumerate() {
            let obs = truth.transformed(&p.inverse());
            g.ellipsoid_factors.push(EllipsoidFactor { pose: j, landmark: 0, ellipsoid: obs, p_e: 0.3 });
        }
        g
    }

    #[test]
    fn recovers_landmark_from_consistent_observations() {
        let truth = EllipsoidState::new(Vector3::new(0.5, 0.2, 3.0), Vector3::new(0.0, 0.0, 0.3), Vector3::new(0.4, 0.3, 0.2));
        let start = EllipsoidState::new(Vector3::new(0.7, 0.1, 3.2), Vector3::new(0.05, 0.0, 0.2), Vector3::new(0.5, 0.25, 0.25));
        let g = single_landmark_graph(&truth, &start, 5);
        let config = GraphConfig::default().with_mode(Mode::DepthOnly);
        let report = optimize(&g, &config);
        assert!(report.final_cost < report.initial_cost);
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(report.poses[0], g.poses[0]);
        let est = &report.landmarks[0].state;
        let want = truth.canonical();
        assert!((est.center - want.center).norm() < 1e-3, "{:?}", est);
        assert!((est.axes - want.axes).amax() < 1e-3);
    }

    #[test]
    fn odometry_only_graph_stays_put() {
        let truth = EllipsoidState::sphere(Vector3::new(0.0, 0.0, 3.0), 0.3);
        let mut g = single_landmark_graph(&truth, &truth, 3);
        g.landmarks.clear();
        g.ellipsoid_factors.clear();
        let report = optimize(&g, &GraphConfig::default());
        assert!(report.final_cost < 1e-12);
        for (a, b) in report.poses.iter().zip(g.poses.iter()) {
            assert!((a.translation - b.translation).amax() < 1e-9);
        }
    }
}
