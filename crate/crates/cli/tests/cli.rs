use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use twmlp::datagen::{derive_sparse_stream, synth_motion, MotionKind, MotionSpec};
use twmlp::kinematics::default_skeleton;
use twmlp::runtime::{format_frame_csv, POSE_CSV_FIELDS};

fn twmlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twmlp")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = twmlp(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(twmlp(&["flops", "--bogus"]).status.code(), Some(1));
    assert_eq!(twmlp(&["synth", "--kind", "swim"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = twmlp(&["eval", "--data", path(&dir.path().join("nope.txt")), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flops_prints_base_row() {
    let out = twmlp(&["flops", "--T", "196", "--K", "0", "--L", "12", "--D", "512"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("| MLP")).expect("row");
    let gflops: f64 = row.split('|').map(str::trim).filter(|s| !s.is_empty()).last().unwrap().parse().unwrap();
    assert!((gflops - 0.88).abs() <= 0.088, "{row}");
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = twmlp(&["synth", "--kind", "walk", "--seed", "7", "--out", path(&dir.path().join(sub))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["walk_000.motn", "manifest.txt"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn effective_config_reloads_to_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = twmlp(&["synth", "--kind", "idle", "--T", "12", "--K", "3", "--steps", "40", "--seed", "9", "--out", path(&first)]);
    assert!(out.status.success());
    let written = std::fs::read_to_string(first.join("effective_config.json")).unwrap();
    let second = dir.path().join("second");
    let cfg = path(&first.join("effective_config.json")).to_string();
    let out = twmlp(&["synth", "--config", &cfg, "--out", path(&second)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let again = std::fs::read_to_string(second.join("effective_config.json")).unwrap();
    assert_eq!(written.replace(path(&first), ""), again.replace(path(&second), ""));
    assert_eq!(std::fs::read(first.join("idle_000.motn")).unwrap(), std::fs::read(second.join("idle_000.motn")).unwrap());
}

#[test]
fn train_then_eval_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let model = ["--T", "8", "--K", "1", "--L", "2", "--D", "16"];
    assert!(twmlp(&["synth", "--kind", "walk,idle", "--count", "2", "--duration", "3", "--out", path(&data)]).status.success());
    let manifest = data.join("manifest.txt");
    let mut args = vec!["train", "--data", path(&manifest), "--steps", "5", "--batch", "4", "--out", path(&run)];
    args.extend(model);
    let out = twmlp(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["train.log", "final.twm", "effective_config.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("final.twm");
    let mut args = vec!["eval", "--data", path(&manifest), "--checkpoint", path(&ckpt), "--out", path(&run)];
    args.extend(model);
    let out = twmlp(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(run.join("metrics.txt")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("mpjpe ")));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert!(json["mpjre"].as_f64().unwrap().is_finite());
}

#[test]
fn stream_echoes_one_pose_per_frame_after_warmup() {
    let tree = default_skeleton();
    let clip = synth_motion(&MotionSpec { kind: MotionKind::Walk, duration_s: 1.0, fps: 60 }, 4).unwrap();
    let frames = derive_sparse_stream(&clip, &tree).unwrap();
    let input: String = frames.iter().map(|f| format_frame_csv(f) + "\n").collect();

    let mut child = Command::new(env!("CARGO_BIN_EXE_twmlp"))
        .args(["stream", "--T", "8", "--K", "2", "--L", "2", "--D", "16"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), frames.len() - (3 * 8 - 1));
    for l in &lines {
        assert_eq!(l.split(',').count(), POSE_CSV_FIELDS);
    }
}

#[test]
fn stream_rejects_malformed_input() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_twmlp"))
        .args(["stream", "--T", "4", "--K", "0", "--L", "1", "--D", "8"])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"0,1,2\n").unwrap();
    assert_eq!(child.wait().unwrap().code(), Some(2));
}
