//! Flat `key = value` configuration.
//!
//! Every tunable of the pipeline has one key; unknown keys are rejected.
//! `symmetry.label.<name> = plane|dual` extends or overrides the label table.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{SVector, Vector3};
use quadric_map_core::eval::EvalFilter;
use quadric_map_core::fitting::EstimationParams;
use quadric_map_core::sim::{NoiseSpec, TrajectoryKind, TrajectorySpec};
use quadric_map_core::{GraphConfig, Mode, SymmetryKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}:{line}: {message}")]
    Invalid { origin: String, line: usize, message: String },
}

/// Camera path used by `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub trajectory: TrajectorySpec,
    /// Also render 16-bit depth images for the segmentation path.
    pub render_depth: bool,
}

impl SimConfig {
    pub fn preset(kind: TrajectoryKind) -> Self {
        let trajectory = match kind {
            TrajectoryKind::Orbit => TrajectorySpec::orbit(36, 3.0),
            TrajectoryKind::Forward => TrajectorySpec::forward(30, 3.0),
        };
        Self { trajectory, render_depth: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub estimation: EstimationParams,
    pub graph: GraphConfig,
    pub noise: NoiseSpec,
    pub eval: EvalFilter,
    pub sim: SimConfig,
    /// Unit gravity direction in the world frame; the supporting plane's
    /// normal is its opposite.
    pub world_gravity: Vector3<f64>,
    /// Depth counts per metre.
    pub depth_scale: f64,
    pub sweep_lo: i32,
    pub sweep_hi: i32,
    pub sweep_per_decade: usize,
    pub curve_max_count: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            estimation: EstimationParams::default(),
            graph: GraphConfig::default(),
            noise: NoiseSpec::default(),
            eval: EvalFilter::default(),
            sim: SimConfig::preset(TrajectoryKind::Orbit),
            world_gravity: Vector3::new(0.0, 0.0, -1.0),
            depth_scale: 5000.0,
            sweep_lo: 0,
            sweep_hi: 7,
            sweep_per_decade: 2,
            curve_max_count: 30,
            seed: 0,
        }
    }
}

fn trajectory_name(kind: TrajectoryKind) -> &'static str {
    match kind {
        TrajectoryKind::Orbit => "orbit",
        TrajectoryKind::Forward => "forward",
    }
}

pub fn parse_trajectory_kind(s: &str) -> Option<TrajectoryKind> {
    match s {
        "orbit" => Some(TrajectoryKind::Orbit),
        "forward" => Some(TrajectoryKind::Forward),
        _ => None,
    }
}

fn join<const N: usize>(v: &SVector<f64, N>) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

fn float(value: &str) -> Result<f64, String> {
    let v: f64 = num(value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{value:?} is not finite"))
    }
}

fn floats<const N: usize>(value: &str) -> Result<SVector<f64, N>, String> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(format!("expected {N} numbers, found {}", parts.len()));
    }
    let mut v = SVector::<f64, N>::zeros();
    for (slot, p) in v.iter_mut().zip(parts) {
        *slot = float(p)?;
    }
    Ok(v)
}

fn flag(value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, found {value:?}")),
    }
}

fn unit(value: &str) -> Result<Vector3<f64>, String> {
    floats::<3>(value)?.try_normalize(1e-12).ok_or_else(|| "direction must be non-zero".to_string())
}

impl Config {
    /// Parses `text`; `origin` names the source in error messages.
    pub fn parse(origin: &str, text: &str) -> Result<Config, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Invalid {
                origin: origin.to_string(),
                line: i + 1,
                message: format!("expected key = value, found {line:?}"),
            })?;
            pairs.push((i + 1, key.trim().to_string(), value.trim().to_string()));
        }
        // the trajectory preset resets the path parameters, so it goes first
        pairs.sort_by_key(|(_, k, _)| k != "sim.trajectory");
        let mut cfg = Config::default();
        for (line, key, value) in pairs {
            cfg.set(&key, &value).map_err(|message| ConfigError::Invalid { origin: origin.to_string(), line, message })?;
        }
        cfg.validate().map_err(|message| ConfigError::Invalid { origin: origin.to_string(), line: 0, message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Config::parse(&path.display().to_string(), &text)
    }

    /// Cross-field checks after all keys are applied.
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.estimation.segmentation.is_valid(), "segmentation"),
            (self.estimation.symmetry.is_valid(), "symmetry"),
            (self.estimation.fit.is_valid(), "fit"),
            (self.graph.is_valid(), "graph"),
            (self.noise.is_valid(), "noise"),
            (self.sim.trajectory.is_valid(), "sim"),
            (self.depth_scale > 0.0, "depth"),
            (self.sweep_lo < self.sweep_hi && self.sweep_per_decade > 0, "sweep"),
            (self.curve_max_count > 0, "curve"),
            ((0.0..=1.0).contains(&self.eval.min_p_det), "eval"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, group)) => Err(format!("invalid value among the {group}.* keys")),
            None => Ok(()),
        }
    }

    /// Applies one key. Values are checked for syntax here and for range in
    /// [`Config::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if let Some(label) = key.strip_prefix("symmetry.label.") {
            if label.is_empty() || label.contains(char::is_whitespace) {
                return Err(format!("invalid label {label:?}"));
            }
            let kind = SymmetryKind::from_name(value).ok_or_else(|| format!("expected plane or dual, found {value:?}"))?;
            self.estimation.table.insert(label, kind);
            return Ok(());
        }
        let seg = &mut self.estimation.segmentation;
        let sym = &mut self.estimation.symmetry;
        let fit = &mut self.estimation.fit;
        let g = &mut self.graph;
        let n = &mut self.noise;
        let t = &mut self.sim.trajectory;
        match key {
            "segmentation.eps0_deg" => seg.eps0_deg = float(value)?,
            "segmentation.eps1_min_plane_inliers" => seg.eps1_min_plane_inliers = num(value)?,
            "segmentation.eps2_min_height" => seg.eps2_min_height = float(value)?,
            "segmentation.eps3_min_cluster" => seg.eps3_min_cluster = num(value)?,
            "segmentation.ransac_iters" => seg.ransac_iters = num(value)?,
            "segmentation.ransac_inlier_dist" => seg.ransac_inlier_dist = float(value)?,
            "segmentation.cluster_tolerance" => seg.cluster_tolerance = float(value)?,
            "segmentation.gravity" => seg.gravity = unit(value)?,
            "symmetry.sigma_sym" => sym.sigma_sym = float(value)?,
            "symmetry.angle_search_deg" => sym.angle_search_deg = float(value)?,
            "symmetry.offset_search" => sym.offset_search = float(value)?,
            "symmetry.grid_steps" => sym.grid_steps = num(value)?,
            "symmetry.occlusion_angle" => sym.occlusion_angle = float(value)?,
            "fit.max_iterations" => fit.max_iterations = num(value)?,
            "fit.lm_initial_lambda" => fit.lm_initial_lambda = float(value)?,
            "fit.convergence_tol" => fit.convergence_tol = float(value)?,
            "fit.min_points" => fit.min_points = num(value)?,
            "graph.epsilon_z" => g.epsilon_z = float(value)?,
            "graph.huber_delta_2d" => g.huber_delta_2d = float(value)?,
            "graph.huber_delta_3d" => g.huber_delta_3d = float(value)?,
            "graph.huber_delta_odom" => g.huber_delta_odom = float(value)?,
            "graph.sigma_2d" => g.sigma_2d = float(value)?,
            "graph.sigma_3d" => g.sigma_3d = floats(value)?,
            "graph.sigma_odom" => g.sigma_odom = floats(value)?,
            "graph.max_iterations" => g.max_iterations = num(value)?,
            "graph.mode" => g.mode = Mode::from_name(value).ok_or_else(|| format!("expected 2d, do or dwb, found {value:?}"))?,
            "noise.bbox_sigma" => n.bbox_sigma = float(value)?,
            "noise.depth_sigma" => n.depth_sigma = float(value)?,
            "noise.p_det_min" => n.p_det_min = float(value)?,
            "noise.p_det_max" => n.p_det_max = float(value)?,
            "noise.surface_samples" => n.surface_samples = num(value)?,
            "noise.plane_samples" => n.plane_samples = num(value)?,
            "noise.edge_margin" => n.edge_margin = float(value)?,
            "eval.min_observations" => self.eval.min_observations = num(value)?,
            "eval.min_p_det" => self.eval.min_p_det = float(value)?,
            "sim.trajectory" => {
                let kind = parse_trajectory_kind(value).ok_or_else(|| format!("expected orbit or forward, found {value:?}"))?;
                let render = self.sim.render_depth;
                self.sim = SimConfig { render_depth: render, ..SimConfig::preset(kind) };
            }
            "sim.frames" => t.n_frames = num(value)?,
            "sim.extent" => t.extent = float(value)?,
            "sim.height" => t.height = float(value)?,
            "sim.look_height" => t.look_height = float(value)?,
            "sim.look_ahead" => t.look_ahead = float(value)?,
            "sim.off_axis_deg" => t.off_axis_deg = float(value)?,
            "sim.odom_sigma_trans" => t.odom_sigma_trans = float(value)?,
            "sim.odom_sigma_rot" => t.odom_sigma_rot = float(value)?,
            "sim.render_depth" => self.sim.render_depth = flag(value)?,
            "world.gravity" => self.world_gravity = unit(value)?,
            "depth.scale" => self.depth_scale = float(value)?,
            "sweep.lo" => self.sweep_lo = num(value)?,
            "sweep.hi" => self.sweep_hi = num(value)?,
            "sweep.per_decade" => self.sweep_per_decade = num(value)?,
            "curve.max_count" => self.curve_max_count = num(value)?,
            "seed" => self.seed = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every effective setting, in the order and syntax `parse` accepts.
    pub fn entries(&self) -> Vec<(String, String)> {
        let seg = &self.estimation.segmentation;
        let sym = &self.estimation.symmetry;
        let fit = &self.estimation.fit;
        let g = &self.graph;
        let n = &self.noise;
        let t = &self.sim.trajectory;
        let fixed: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("segmentation.eps0_deg", seg.eps0_deg.to_string()),
            ("segmentation.eps1_min_plane_inliers", seg.eps1_min_plane_inliers.to_string()),
            ("segmentation.eps2_min_height", seg.eps2_min_height.to_string()),
            ("segmentation.eps3_min_cluster", seg.eps3_min_cluster.to_string()),
            ("segmentation.ransac_iters", seg.ransac_iters.to_string()),
            ("segmentation.ransac_inlier_dist", seg.ransac_inlier_dist.to_string()),
            ("segmentation.cluster_tolerance", seg.cluster_tolerance.to_string()),
            ("segmentation.gravity", join(&seg.gravity)),
            ("symmetry.sigma_sym", sym.sigma_sym.to_string()),
            ("symmetry.angle_search_deg", sym.angle_search_deg.to_string()),
            ("symmetry.offset_search", sym.offset_search.to_string()),
            ("symmetry.grid_steps", sym.grid_steps.to_string()),
            ("symmetry.occlusion_angle", sym.occlusion_angle.to_string()),
            ("fit.max_iterations", fit.max_iterations.to_string()),
            ("fit.lm_initial_lambda", fit.lm_initial_lambda.to_string()),
            ("fit.convergence_tol", fit.convergence_tol.to_string()),
            ("fit.min_points", fit.min_points.to_string()),
            ("graph.epsilon_z", g.epsilon_z.to_string()),
            ("graph.huber_delta_2d", g.huber_delta_2d.to_string()),
            ("graph.huber_delta_3d", g.huber_delta_3d.to_string()),
            ("graph.huber_delta_odom", g.huber_delta_odom.to_string()),
            ("graph.sigma_2d", g.sigma_2d.to_string()),
            ("graph.sigma_3d", join(&g.sigma_3d)),
            ("graph.sigma_odom", join(&g.sigma_odom)),
            ("graph.max_iterations", g.max_iterations.to_string()),
            ("graph.mode", g.mode.name().to_string()),
            ("noise.bbox_sigma", n.bbox_sigma.to_string()),
            ("noise.depth_sigma", n.depth_sigma.to_string()),
            ("noise.p_det_min", n.p_det_min.to_string()),
            ("noise.p_det_max", n.p_det_max.to_string()),
            ("noise.surface_samples", n.surface_samples.to_string()),
            ("noise.plane_samples", n.plane_samples.to_string()),
            ("noise.edge_margin", n.edge_margin.to_string()),
            ("eval.min_observations", self.eval.min_observations.to_string()),
            ("eval.min_p_det", self.eval.min_p_det.to_string()),
            ("sim.trajectory", trajectory_name(t.kind).to_string()),
            ("sim.frames", t.n_frames.to_string()),
            ("sim.extent", t.extent.to_string()),
            ("sim.height", t.height.to_string()),
            ("sim.look_height", t.look_height.to_string()),
            ("sim.look_ahead", t.look_ahead.to_string()),
            ("sim.off_axis_deg", t.off_axis_deg.to_string()),
            ("sim.odom_sigma_trans", t.odom_sigma_trans.to_string()),
            ("sim.odom_sigma_rot", t.odom_sigma_rot.to_string()),
            ("sim.render_depth", self.sim.render_depth.to_string()),
            ("world.gravity", join(&self.world_gravity)),
            ("depth.scale", self.depth_scale.to_string()),
            ("sweep.lo", self.sweep_lo.to_string()),
            ("sweep.hi", self.sweep_hi.to_string()),
            ("sweep.per_decade", self.sweep_per_decade.to_string()),
            ("curve.max_count", self.curve_max_count.to_string()),
        ];
        let labels = self.estimation.table.entries().iter().map(|(label, kind)| (format!("symmetry.label.{label}"), kind.name().to_string()));
        fixed.into_iter().map(|(k, v)| (k.to_string(), v)).chain(labels).collect()
    }

    pub fn echo(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_roundtrips() {
        let mut cfg = Config::default();
        cfg.set("graph.epsilon_z", "12345.5").unwrap();
        cfg.set("symmetry.label.bottle", "plane").unwrap();
        cfg.set("sim.trajectory", "forward").unwrap();
        let back = Config::parse("echo", &cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_echoed_key_is_settable() {
        let cfg = Config::default();
        for (k, v) in cfg.entries() {
            let mut c = Config::default();
            c.set(&k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let e = Config::parse("cfg", "# c\ngraph.epsilon_z = 10\ngraph.epsilonz = 3\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { line: 3, .. }), "{e}");
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(Config::parse("cfg", "noise.depth_sigma = -1").is_err());
        assert!(Config::parse("cfg", "graph.mode = 3d").is_err());
        assert!(Config::parse("cfg", "graph.sigma_3d = 1 2 3").is_err());
    }

    #[test]
    fn trajectory_preset_applies_before_overrides() {
        let cfg = Config::parse("cfg", "sim.frames = 12\nsim.trajectory = forward\n").unwrap();
        assert_eq!(cfg.sim.trajectory.kind, TrajectoryKind::Forward);
        assert_eq!(cfg.sim.trajectory.n_frames, 12);
    }

    #[test]
    fn label_table_override() {
        let cfg = Config::parse("cfg", "symmetry.label.chair = dual\n").unwrap();
        assert_eq!(cfg.estimation.table.prior("chair"), SymmetryKind::DualPlaneReflection);
    }
}
