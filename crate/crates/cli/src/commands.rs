//! The pipeline stages behind each subcommand.
//!
//! A dataset directory holds `camera.txt`, `trajectory.txt` (frame `i` is
//! the `i`-th pose), optionally `odometry.txt` (record `i` is the motion
//! from frame `i` to `i + 1`), `detections.txt`, `observations.txt`,
//! `objects_gt.txt` and `depth/NNNNNN.pgm`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use quadric_map_core::backend::{build_graph, optimize, Landmark, SlamInput};
use quadric_map_core::eval::{self, convergence_curve, log_grid, observation_counts, sweep_epsilon_z, EvalSummary};
use quadric_map_core::fitting::{estimate_single_frame, EstimationParams};
use quadric_map_core::sim::{self, default_camera, default_forward_scene, default_orbit_scene, SceneObject, TrajectoryKind};
use quadric_map_core::{Camera, Detection, Observation, Plane, Pose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::Config;
use crate::formats::{self, FormatError, ObjectRecord};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Invalid(String),
}

pub const CAMERA: &str = "camera.txt";
pub const TRAJECTORY: &str = "trajectory.txt";
pub const ODOMETRY: &str = "odometry.txt";
pub const DETECTIONS: &str = "detections.txt";
pub const OBSERVATIONS: &str = "observations.txt";
pub const OBJECTS_GT: &str = "objects_gt.txt";
pub const OBJECTS: &str = "objects.txt";
pub const DEPTH_DIR: &str = "depth";

pub fn depth_path(dir: &Path, frame_id: u32) -> PathBuf {
    dir.join(DEPTH_DIR).join(format!("{frame_id:06}.pgm"))
}

fn create_dir(dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| FormatError::Io { path: dir.to_path_buf(), source }.into())
}

fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    Ok(formats::write(path, text.as_bytes())?)
}

/// Supporting plane through the world origin, facing against gravity.
pub fn world_support(cfg: &Config) -> Plane {
    Plane::new(-cfg.world_gravity, 0.0).expect("gravity is a unit vector")
}

// ---------------------------------------------------------------- simulate

pub fn simulate(cfg: &Config, out: &Path) -> Result<(), DataError> {
    let scene = match cfg.sim.trajectory.kind {
        TrajectoryKind::Orbit => default_orbit_scene(),
        TrajectoryKind::Forward => default_forward_scene(),
    };
    let cam = default_camera();
    let run = sim::simulate_run(&scene, &cfg.sim.trajectory, &cam, &cfg.noise, &cfg.estimation, cfg.seed);
    create_dir(out)?;
    write_text(&out.join(CAMERA), &formats::format_camera(&cam))?;
    write_text(&out.join(TRAJECTORY), &formats::format_trajectory(&formats::indexed(&run.trajectory.poses)))?;
    write_text(&out.join(ODOMETRY), &formats::format_trajectory(&formats::indexed(&run.trajectory.odometry)))?;
    write_text(&out.join(DETECTIONS), &formats::format_detections(&run.detections))?;
    write_text(&out.join(OBSERVATIONS), &formats::format_observations(&run.observations))?;
    let gt: Vec<ObjectRecord> = scene
        .objects
        .iter()
        .map(|o| ObjectRecord { object_id: o.object_id, label: o.label.clone(), ellipsoid: o.ellipsoid })
        .collect();
    write_text(&out.join(OBJECTS_GT), &formats::format_objects(&gt))?;
    if cfg.sim.render_depth {
        create_dir(&out.join(DEPTH_DIR))?;
        for (j, pose) in run.trajectory.poses.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(j as u64 + 1);
            let (mut depth, _) = sim::render_depth(&scene, pose, &cam, cfg.noise.depth_sigma, &mut rng);
            depth.depth_scale = cfg.depth_scale;
            formats::write(&depth_path(out, j as u32), &formats::format_depth(&depth))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- estimate

/// Single-frame pipeline over every frame with detections. Returns the
/// observations and one diagnostic line per dropped detection.
pub fn estimate(cfg: &Config, data: &Path) -> Result<(Vec<Observation>, Vec<String>), DataError> {
    let cam = formats::load_camera(&data.join(CAMERA))?;
    let detections = formats::load_detections(&data.join(DETECTIONS))?;
    let traj_path = data.join(TRAJECTORY);
    let poses = if traj_path.exists() { Some(poses_of(&formats::load_trajectory(&traj_path)?)) } else { None };
    let mut by_frame: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_frame.entry(d.frame_id).or_default().push(d);
    }
    let mut observations = Vec::new();
    let mut notes = Vec::new();
    for (frame, dets) in by_frame {
        let depth = formats::load_depth(&depth_path(data, frame), cfg.depth_scale)?;
        if depth.width != cam.width || depth.height != cam.height {
            return Err(DataError::Invalid(format!(
                "{}: image is {}x{}, camera is {}x{}",
                depth_path(data, frame).display(),
                depth.width,
                depth.height,
                cam.width,
                cam.height
            )));
        }
        let mut params: EstimationParams = cfg.estimation.clone();
        if let Some(poses) = &poses {
            let pose = poses.get(frame as usize).ok_or_else(|| DataError::Invalid(format!("frame {frame} has no trajectory pose")))?;
            params.segmentation.gravity = pose.rotation_matrix().transpose() * cfg.world_gravity;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(frame as u64 + 1);
        let est = estimate_single_frame(&depth, &cam, &dets, &params, &mut rng);
        observations.extend(est.observations);
        notes.extend(est.diagnostics.iter().map(|d| format!("frame {} object {}: {}", d.frame_id, d.object_id, d.reason)));
    }
    Ok((observations, notes))
}

// ---------------------------------------------------------------- slam

fn poses_of(stamped: &[formats::StampedPose]) -> Vec<Pose> {
    stamped.iter().map(|s| s.pose).collect()
}

/// Everything the back end reads from a dataset directory.
pub struct SlamData {
    pub camera: Camera,
    pub poses: Vec<Pose>,
    pub odometry: Option<Vec<Pose>>,
    pub detections: Vec<Detection>,
    pub observations: Vec<Observation>,
}

impl SlamData {
    pub fn load(data: &Path, observations: Option<&Path>) -> Result<Self, DataError> {
        let camera = formats::load_camera(&data.join(CAMERA))?;
        let poses = poses_of(&formats::load_trajectory(&data.join(TRAJECTORY))?);
        let odo_path = data.join(ODOMETRY);
        let odometry = if odo_path.exists() { Some(poses_of(&formats::load_trajectory(&odo_path)?)) } else { None };
        if let Some(o) = &odometry {
            if o.len() + 1 != poses.len() {
                return Err(DataError::Invalid(format!("{}: {} motions for {} poses", odo_path.display(), o.len(), poses.len())));
            }
        }
        let detections = formats::load_detections(&data.join(DETECTIONS))?;
        let obs_path = observations.map(Path::to_path_buf).unwrap_or_else(|| data.join(OBSERVATIONS));
        let observations = if obs_path.exists() || observations.is_some() { formats::load_observations(&obs_path)? } else { Vec::new() };
        for (frame, what) in detections.iter().map(|d| (d.frame_id, "detection")).chain(observations.iter().map(|o| (o.frame_id, "observation"))) {
            if frame as usize >= poses.len() {
                return Err(DataError::Invalid(format!("{what} refers to frame {frame}, trajectory has {} poses", poses.len())));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &detections {
            if !seen.insert((d.frame_id, d.object_id)) {
                return Err(DataError::Invalid(format!("object {} detected twice in frame {}", d.object_id, d.frame_id)));
            }
        }
        Ok(Self { camera, poses, odometry, detections, observations })
    }

    pub fn input(&self) -> SlamInput<'_> {
        SlamInput {
            camera: self.camera,
            poses: &self.poses,
            odometry: self.odometry.as_deref(),
            detections: &self.detections,
            observations: &self.observations,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct InitFailureReport {
    pub object_id: u32,
    pub label: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct SlamReport {
    pub mode: String,
    pub epsilon_z: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub landmarks: usize,
    pub skipped_box_factors: usize,
    pub init_failures: Vec<InitFailureReport>,
    pub cost_history: Vec<f64>,
}

pub fn slam(cfg: &Config, data: &SlamData) -> (Vec<ObjectRecord>, Vec<Pose>, SlamReport) {
    let (graph, log) = build_graph(&data.input(), &cfg.graph, None);
    let report = optimize(&graph, &cfg.graph);
    let objects = report
        .landmarks
        .iter()
        .map(|l| ObjectRecord { object_id: l.object_id, label: l.label.clone(), ellipsoid: l.state })
        .collect();
    let summary = SlamReport {
        mode: cfg.graph.mode.name().to_string(),
        epsilon_z: cfg.graph.epsilon_z,
        initial_cost: report.initial_cost,
        final_cost: report.final_cost,
        iterations: report.iterations,
        converged: report.converged,
        landmarks: report.landmarks.len(),
        skipped_box_factors: report.skipped_box_factors,
        init_failures: log
            .init_failures
            .iter()
            .map(|f| InitFailureReport { object_id: f.object_id, label: f.label.clone(), error: f.error.to_string() })
            .collect(),
        cost_history: report.cost_history,
    };
    (objects, report.poses, summary)
}

pub fn write_slam(out: &Path, objects: &[ObjectRecord], poses: &[Pose], report: &SlamReport) -> Result<(), DataError> {
    create_dir(out)?;
    write_text(&out.join(OBJECTS), &formats::format_objects(objects))?;
    write_text(&out.join(TRAJECTORY), &formats::format_trajectory(&formats::indexed(poses)))?;
    write_text(&out.join("report.json"), &(to_json(report) + "\n"))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

// ---------------------------------------------------------------- evaluate

fn ground_truth(data: &Path) -> Result<Vec<SceneObject>, DataError> {
    Ok(formats::load_objects(&data.join(OBJECTS_GT))?
        .into_iter()
        .map(|o| SceneObject { object_id: o.object_id, label: o.label, ellipsoid: o.ellipsoid })
        .collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub evaluated: usize,
    pub missing: Vec<u32>,
    pub degenerate_rot: usize,
    pub mean_trans_m: Option<f64>,
    pub mean_rot_deg: Option<f64>,
    pub mean_shape: Option<f64>,
}

pub fn evaluate(cfg: &Config, data: &Path, map: &Path) -> Result<(EvalSummary, String, String), DataError> {
    let gt = ground_truth(data)?;
    let detections = formats::load_detections(&data.join(DETECTIONS))?;
    let landmarks: Vec<Landmark> = formats::load_objects(map)?
        .into_iter()
        .map(|o| Landmark { object_id: o.object_id, label: o.label, state: o.ellipsoid })
        .collect();
    let counts = observation_counts(&detections, &cfg.eval);
    let summary = eval::evaluate(&landmarks, &gt, &world_support(cfg), &counts, &cfg.eval);
    let mut csv = String::from("object_id,label,trans_m,rot_deg,shape_jaccard,n_observations\n");
    for r in &summary.rows {
        writeln!(csv, "{},{},{:.9},{},{:.9},{}", r.object_id, r.label, r.trans_m, cell(r.rot_deg), r.shape_jaccard, r.n_observations).unwrap();
    }
    let report = EvalReport {
        evaluated: summary.rows.len(),
        missing: summary.missing.clone(),
        degenerate_rot: summary.degenerate_rot,
        mean_trans_m: summary.mean_trans,
        mean_rot_deg: summary.mean_rot,
        mean_shape: summary.mean_shape,
    };
    Ok((summary, csv, to_json(&report) + "\n"))
}

// ---------------------------------------------------------------- curve, sweep

pub fn curve(cfg: &Config, data: &Path) -> Result<String, DataError> {
    let gt = ground_truth(data)?;
    let slam_data = SlamData::load(data, None)?;
    let rows = convergence_curve(&slam_data.input(), &cfg.graph, cfg.curve_max_count, &gt, &world_support(cfg), &cfg.eval);
    let mut csv = String::from("observations,landmarks,mean_trans_m,mean_rot_deg,mean_shape\n");
    for r in rows {
        writeln!(csv, "{},{},{},{},{}", r.observations, r.landmarks, cell(r.mean_trans), cell(r.mean_rot), cell(r.mean_shape)).unwrap();
    }
    Ok(csv)
}

pub fn sweep(cfg: &Config, data: &Path) -> Result<String, DataError> {
    let gt = ground_truth(data)?;
    let slam_data = SlamData::load(data, None)?;
    let grid = log_grid(cfg.sweep_lo, cfg.sweep_hi, cfg.sweep_per_decade);
    let rows = sweep_epsilon_z(&slam_data.input(), &cfg.graph, &grid, &gt, &world_support(cfg), &cfg.eval);
    let mut csv = String::from("epsilon_z,landmarks,mean_trans_m,mean_rot_deg,mean_shape\n");
    for r in rows {
        writeln!(csv, "{:e},{},{},{},{}", r.epsilon_z, r.landmarks, cell(r.mean_trans), cell(r.mean_rot), cell(r.mean_shape)).unwrap();
    }
    Ok(csv)
}

pub fn write_outputs(out: &Path, files: &[(&str, &str)]) -> Result<(), DataError> {
    create_dir(out)?;
    for (name, text) in files {
        write_text(&out.join(name), text)?;
    }
    Ok(())
}
