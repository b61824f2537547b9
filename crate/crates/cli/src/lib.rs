//! File formats, configuration and the `quadric-map` command line.

pub mod commands;
pub mod config;
pub mod formats;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use quadric_map_core::Mode;

use crate::commands::{DataError, SlamData};
use crate::config::{parse_trajectory_kind, Config, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "quadric-map", version, about = "Ellipsoid object maps from RGB-D detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Back-end mode: 2d, do or dwb.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Weight of single-frame ellipsoid factors against box factors.
    #[arg(long = "epsilon-z", value_name = "E")]
    epsilon_z: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WithData {
    #[command(flatten)]
    common: Common,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a scene, trajectory, detections, depth images and observations.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Camera path: orbit or forward (overrides `sim.trajectory`).
        #[arg(long, value_parser = ["orbit", "forward"])]
        trajectory: Option<String>,
    },
    /// Single-frame ellipsoid estimation from depth images and detections.
    Estimate(WithData),
    /// Build and optimize the object map.
    Slam {
        #[command(flatten)]
        args: WithData,
        /// Observations file (default: DATA/observations.txt).
        #[arg(long, value_name = "PATH")]
        observations: Option<PathBuf>,
    },
    /// Trans/Rot/Shape metrics of a map against ground truth.
    Evaluate {
        #[command(flatten)]
        args: WithData,
        /// Estimated objects file (default: OUT/objects.txt).
        #[arg(long, value_name = "PATH")]
        map: Option<PathBuf>,
    },
    /// Mean errors against the number of observations per object.
    Curve(WithData),
    /// Mean errors over a log-spaced grid of epsilon-z values.
    Sweep(WithData),
    /// Print every effective configuration value.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::from_name(s).ok_or_else(|| format!("expected 2d, do or dwb, found {s:?}"))
}

enum Failure {
    Usage(String),
    Data(DataError),
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e)
    }
}

impl From<formats::FormatError> for Failure {
    fn from(e: formats::FormatError) -> Self {
        Failure::Data(e.into())
    }
}

fn effective_config(common: &Common) -> Result<Config, Failure> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.graph.mode = mode;
    }
    if let Some(eps) = common.epsilon_z {
        cfg.graph.epsilon_z = eps;
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { common, trajectory } => {
            let mut cfg = effective_config(&common)?;
            if let Some(kind) = trajectory.as_deref().and_then(parse_trajectory_kind) {
                if kind != cfg.sim.trajectory.kind {
                    cfg.sim = SimConfig { render_depth: cfg.sim.render_depth, ..SimConfig::preset(kind) };
                }
            }
            commands::simulate(&cfg, &common.out)?;
        }
        Command::Estimate(args) => {
            let cfg = effective_config(&args.common)?;
            let (observations, notes) = commands::estimate(&cfg, &args.data)?;
            for n in notes {
                eprintln!("dropped: {n}");
            }
            commands::write_outputs(&args.common.out, &[(commands::OBSERVATIONS, &formats::format_observations(&observations))])?;
        }
        Command::Slam { args, observations } => {
            let cfg = effective_config(&args.common)?;
            let data = SlamData::load(&args.data, observations.as_deref())?;
            let (objects, poses, report) = commands::slam(&cfg, &data);
            for f in &report.init_failures {
                eprintln!("object {} ({}) not initialized: {}", f.object_id, f.label, f.error);
            }
            commands::write_slam(&args.common.out, &objects, &poses, &report)?;
        }
        Command::Evaluate { args, map } => {
            let cfg = effective_config(&args.common)?;
            let map = map.unwrap_or_else(|| args.common.out.join(commands::OBJECTS));
            let (_, csv, json) = commands::evaluate(&cfg, &args.data, &map)?;
            commands::write_outputs(&args.common.out, &[("eval.csv", &csv), ("summary.json", &json)])?;
        }
        Command::Curve(args) => {
            let cfg = effective_config(&args.common)?;
            let csv = commands::curve(&cfg, &args.data)?;
            commands::write_outputs(&args.common.out, &[("curve.csv", &csv)])?;
        }
        Command::Sweep(args) => {
            let cfg = effective_config(&args.common)?;
            let csv = commands::sweep(&cfg, &args.data)?;
            commands::write_outputs(&args.common.out, &[("sweep.csv", &csv)])?;
        }
        Command::Config { common } => {
            print!("{}", effective_config(&common)?.echo());
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on usage errors, 2 on data errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
