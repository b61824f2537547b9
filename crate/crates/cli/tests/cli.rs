use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadric-map")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bin(&["slam", "--no-such-flag"])), 1);
    assert_eq!(code(&bin(&["frobnicate"])), 1);
    assert_eq!(code(&bin(&["config", "--mode", "3d"])), 1);
    assert_eq!(code(&bin(&["config", "--epsilon-z", "-1"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "# comment\nseed = 3\ngraph.no_such_key = 1\n").unwrap();
    let out = bin(&["config", "--config", s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:3:"));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&bin(&["--help"])), 0);
    assert_eq!(code(&bin(&["--version"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    assert_eq!(code(&bin(&["slam", "--data", s(&missing), "--out", s(&dir.path().join("o"))])), 2);

    // a malformed trajectory is reported with its line
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    fs::write(data.join("camera.txt"), "300 300 160 120 320 240\n").unwrap();
    fs::write(data.join("trajectory.txt"), "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n").unwrap();
    fs::write(data.join("detections.txt"), "").unwrap();
    fs::write(data.join("observations.txt"), "").unwrap();
    let out = bin(&["slam", "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_echo_lists_every_value_and_reloads() {
    let out = bin(&["config", "--seed", "42", "--mode", "2d", "--epsilon-z", "250"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for line in ["seed = 42", "graph.mode = 2d", "graph.epsilon_z = 250", "symmetry.label.tv = dual", "sim.trajectory = orbit"] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("echo.cfg");
    fs::write(&cfg, &text).unwrap();
    let again = bin(&["config", "--config", s(&cfg)]);
    assert_eq!(code(&again), 0);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn simulate_slam_evaluate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, "sim.frames = 12\nsim.render_depth = false\n").unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    assert_eq!(code(&bin(&["simulate", "--config", s(&cfg), "--out", s(&data)])), 0);
    for f in ["camera.txt", "trajectory.txt", "odometry.txt", "detections.txt", "observations.txt", "objects_gt.txt"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    assert!(!data.join("depth").exists());
    assert_eq!(code(&bin(&["slam", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)])), 0);
    assert!(out.join("objects.txt").is_file() && out.join("report.json").is_file());
    assert_eq!(code(&bin(&["evaluate", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)])), 0);
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(csv.starts_with("object_id,label,trans_m,rot_deg,shape_jaccard,n_observations\n"));
    assert!(csv.lines().count() > 1);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("mean_trans"));
}
