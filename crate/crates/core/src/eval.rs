//! Accuracy metrics against ground-truth objects, convergence curves over
//! the number of observations, and weight sweeps.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Vector3;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

use crate::backend::{build_graph, optimize, GraphConfig, InitFailure, Landmark, Mode, SlamInput};
use crate::fitting::Detection;
use crate::geometry::{EllipsoidState, Plane};
use crate::sim::SceneObject;

pub use crate::linalg::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("main axis is undefined (perpendicular to the support plane or not unique)")]
    DegenerateAxis,
}

/// Relative tolerance under which two footprint lengths count as equal.
const FOOTPRINT_TIE: f64 = 1e-3;

/// Distance between centres (m).
pub fn metric_trans(est: &EllipsoidState, gt: &EllipsoidState) -> f64 {
    (est.center - gt.center).norm()
}

/// Semi-axis with the longest projection onto the plane, as a unit vector in
/// the plane, plus whether the runner-up projection ties with it.
fn main_axis(e: &EllipsoidState, support: &Plane) -> Result<(Vector3<f64>, bool), EvalError> {
    let c = e.canonical();
    let r = c.rotation();
    let n = support.normal;
    let mut lengths = [(0.0, Vector3::zeros()); 3];
    for (i, slot) in lengths.iter_mut().enumerate() {
        let a = r.column(i) * c.axes[i];
        let p = a - n * n.dot(&a);
        *slot = (p.norm(), p);
    }
    // stable: canonical order breaks ties
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| lengths[b].0.partial_cmp(&lengths[a].0).unwrap_or(core::cmp::Ordering::Equal));
    let (best, v) = lengths[order[0]];
    if best <= 1e-9 * c.axes.max() {
        return Err(EvalError::DegenerateAxis);
    }
    let tie = lengths[order[1]].0 >= best * (1.0 - FOOTPRINT_TIE);
    Ok((v / best, tie))
}

/// Angle between the main axes projected onto `support`, folded to
/// `[0, 90]` degrees. The ground truth must have a unique main axis.
pub fn metric_rot(est: &EllipsoidState, gt: &EllipsoidState, support: &Plane) -> Result<f64, EvalError> {
    let (g, gt_tie) = main_axis(gt, support)?;
    if gt_tie {
        return Err(EvalError::DegenerateAxis);
    }
    let (e, _) = main_axis(est, support)?;
    Ok(e.cross(&g).norm().atan2(e.dot(&g).abs()).to_degrees())
}

/// Jaccard distance of the world-axis-aligned boxes after centring both at
/// the origin.
pub fn metric_shape(est: &EllipsoidState, gt: &EllipsoidState) -> f64 {
    let a = est.aabb_half_extents();
    let b = gt.aabb_half_extents();
    let inter: f64 = (0..3).map(|k| a[k].min(b[k])).product();
    let va: f64 = a.iter().product();
    let vb: f64 = b.iter().product();
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (1.0 - inter / union).max(0.0)
}

/// Which objects count toward the averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalFilter {
    pub min_observations: usize,
    /// Detections at or below this probability are not counted.
    pub min_p_det: f64,
}

impl Default for EvalFilter {
    fn default() -> Self {
        Self { min_observations: 5, min_p_det: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub object_id: u32,
    pub label: String,
    pub trans_m: f64,
    /// `None` when the ground truth has no unique main axis.
    pub rot_deg: Option<f64>,
    pub shape_jaccard: f64,
    pub n_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    /// Valid ground-truth objects without an estimate.
    pub missing: Vec<u32>,
    pub mean_trans: Option<f64>,
    pub mean_rot: Option<f64>,
    pub mean_shape: Option<f64>,
    pub degenerate_rot: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

/// Distinct frames per object with a confident detection.
pub fn observation_counts(detections: &[Detection], filter: &EvalFilter) -> BTreeMap<u32, usize> {
    let mut frames: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for d in detections.iter().filter(|d| d.p_det > filter.min_p_det) {
        frames.entry(d.object_id).or_default().push(d.frame_id);
    }
    frames
        .into_iter()
        .map(|(id, mut f)| {
            f.sort_unstable();
            f.dedup();
            (id, f.len())
        })
        .collect()
}

/// Per-object metrics for every valid ground-truth object; averages are
/// taken per object.
pub fn evaluate(landmarks: &[Landmark], gt: &[SceneObject], support: &Plane, counts: &BTreeMap<u32, usize>, filter: &EvalFilter) -> EvalSummary {
    let mut summary = EvalSummary::default();
    for obj in gt {
        let n = counts.get(&obj.object_id).copied().unwrap_or(0);
        if n < filter.min_observations {
            continue;
        }
        let lm = match landmarks.iter().find(|l| l.object_id == obj.object_id) {
            Some(l) => l,
            None => {
                summary.missing.push(obj.object_id);
                continue;
            }
        };
        let rot = metric_rot(&lm.state, &obj.ellipsoid, support).ok();
        if rot.is_none() {
            summary.degenerate_rot += 1;
        }
        summary.rows.push(EvalRow {
            object_id: obj.object_id,
            label: obj.label.clone(),
            trans_m: metric_trans(&lm.state, &obj.ellipsoid),
            rot_deg: rot,
            shape_jaccard: metric_shape(&lm.state, &obj.ellipsoid),
            n_observations: n,
        });
    }
    summary.mean_trans = mean(summary.rows.iter().map(|r| r.trans_m));
    summary.mean_rot = mean(summary.rows.iter().filter_map(|r| r.rot_deg));
    summary.mean_shape = mean(summary.rows.iter().map(|r| r.shape_jaccard));
    summary
}

/// Result of building, optimizing and evaluating one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRun {
    pub landmarks: Vec<Landmark>,
    pub init_failures: Vec<InitFailure>,
    pub summary: EvalSummary,
    pub cost_history: Vec<f64>,
}

pub fn run_and_evaluate(
    input: &SlamInput<'_>,
    config: &GraphConfig,
    max_observations: Option<usize>,
    gt: &[SceneObject],
    support: &Plane,
    filter: &EvalFilter,
) -> MapRun {
    let (graph, log) = build_graph(input, config, max_observations);
    let report = optimize(&graph, config);
    let counts = observation_counts(input.detections, filter);
    let summary = evaluate(&report.landmarks, gt, support, &counts, filter);
    MapRun { landmarks: report.landmarks, init_failures: log.init_failures, summary, cost_history: report.cost_history }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub observations: usize,
    pub landmarks: usize,
    pub mean_trans: Option<f64>,
    pub mean_rot: Option<f64>,
    pub mean_shape: Option<f64>,
}

/// Re-optimizes the graph with each object truncated to its first
/// `1..=max_count` observations.
pub fn convergence_curve(
    input: &SlamInput<'_>,
    config: &GraphConfig,
    max_count: usize,
    gt: &[SceneObject],
    support: &Plane,
    filter: &EvalFilter,
) -> Vec<CurveRow> {
    (1..=max_count)
        .map(|k| {
            let run = run_and_evaluate(input, config, Some(k), gt, support, filter);
            CurveRow {
                observations: k,
                landmarks: run.summary.rows.len(),
                mean_trans: run.summary.mean_trans,
                mean_rot: run.summary.mean_rot,
                mean_shape: run.summary.mean_shape,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon_z: f64,
    pub landmarks: usize,
    pub mean_trans: Option<f64>,
    pub mean_rot: Option<f64>,
    pub mean_shape: Option<f64>,
}

/// `10^lo ..= 10^hi` with `per_decade` points per decade.
pub fn log_grid(lo: i32, hi: i32, per_decade: usize) -> Vec<f64> {
    let steps = ((hi - lo) as usize) * per_decade.max(1);
    (0..=steps).map(|i| 10f64.powf(lo as f64 + i as f64 / per_decade.max(1) as f64)).collect()
}

/// One `DwB` optimization per grid value.
pub fn sweep_epsilon_z(
    input: &SlamInput<'_>,
    config: &GraphConfig,
    grid: &[f64],
    gt: &[SceneObject],
    support: &Plane,
    filter: &EvalFilter,
) -> Vec<SweepRow> {
    grid.iter()
        .map(|&eps| {
            let cfg = GraphConfig { epsilon_z: eps, mode: Mode::DwB, ..config.clone() };
            let run = run_and_evaluate(input, &cfg, None, gt, support, filter);
            SweepRow {
                epsilon_z: eps,
                landmarks: run.summary.rows.len(),
                mean_trans: run.summary.mean_trans,
                mean_rot: run.summary.mean_rot,
                mean_shape: run.summary.mean_shape,
            }
        })
        .collect()
}
