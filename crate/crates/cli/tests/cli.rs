use std::path::Path;
use std::process::{Command, Output};

use udasr::data::SynthSpec;
use udasr::training::{DataSource, RunConfig};

fn udasr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udasr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_run(dir: &Path, name: &str) -> std::path::PathBuf {
    let cfg = RunConfig {
        seed: 1,
        tile_size: 32,
        width_multiplier: 1.0 / 64.0,
        block_module_counts: [1, 1, 1, 1],
        batch_size: 2,
        epochs: 2,
        steps_per_epoch: 3,
        data: DataSource::Synth(SynthSpec::for_tile(32)),
        out_dir: dir.join(name),
        ..RunConfig::default()
    };
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(udasr(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(udasr(&["train"], dir.path()).status.code(), Some(1));
    assert_eq!(udasr(&["inspect", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(udasr(&["--scale", "huge", "inspect"], dir.path()).status.code(), Some(1));
    let both = udasr(&["evaluate", "--checkpoint", "c", "--data", "d", "--synth", "s", "--out", "r.json"], dir.path());
    assert_eq!(both.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = udasr(&["train", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("udasr: ") && err.contains("missing.json"));

    std::fs::write(dir.path().join("bad.json"), r#"{"seed": 1, "learning_rate": 3}"#).unwrap();
    let o = udasr(&["train", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn synth_data_writes_layout() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { source_scenes: 2, target_scenes: 3, ..SynthSpec::for_tile(32) };
    std::fs::write(dir.path().join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let o = udasr(&["--seed", "4", "synth-data", "--spec", "spec.json", "--out", "ds"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let count = |sub: &str| std::fs::read_dir(dir.path().join("ds").join(sub)).unwrap().count();
    assert_eq!(count("source/images"), 2);
    assert_eq!(count("source/labels"), 2);
    assert_eq!(count("target/images"), 3);
    assert_eq!(count("target/masks"), 3);
    assert_eq!(count("target/hr"), 3);
}

#[test]
fn train_evaluate_super_resolve_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let a = tiny_run(root, "a");
    let b = tiny_run(root, "b");
    for cfg in [&a, &b] {
        let o = udasr(&["--seed", "7", "train", "--config", cfg.to_str().unwrap()], root);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let log_a = std::fs::read(root.join("a/loss.csv")).unwrap();
    assert_eq!(log_a, std::fs::read(root.join("b/loss.csv")).unwrap());
    assert_eq!(String::from_utf8(log_a).unwrap().lines().count(), 7);

    let ckpt = "a/checkpoints/epoch-0002";
    std::fs::write(root.join("synth.json"), serde_json::to_string(&SynthSpec::for_tile(32)).unwrap()).unwrap();
    let o = udasr(&["evaluate", "--checkpoint", ckpt, "--synth", "synth.json", "--out", "report.json", "--tiles", "2"], root);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("report.json")).unwrap()).unwrap();
    assert!(report["psnr_target_db"].is_number());
    assert!(report["checkpoint_checksum"].is_string());

    std::fs::create_dir(root.join("lr")).unwrap();
    for name in ["north", "south"] {
        image::RgbImage::from_pixel(4, 4, image::Rgb([10, 120, 200])).save(root.join("lr").join(format!("{name}.png"))).unwrap();
    }
    let o = udasr(&["super-resolve", "--checkpoint", ckpt, "--input", "lr", "--output", "sr"], root);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(root.join("sr"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, vec!["north.png", "south.png"]);
    let img = image::open(root.join("sr/north.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));

    std::fs::create_dir(root.join("empty")).unwrap();
    let o = udasr(&["super-resolve", "--checkpoint", ckpt, "--input", "empty", "--output", "none"], root);
    assert_eq!(o.status.code(), Some(2));

    let o = udasr(&["plot-loss", "--log", "a/loss.csv", "--out", "curve.csv", "--window", "2"], root);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let curve = std::fs::read_to_string(root.join("curve.csv")).unwrap();
    assert!(curve.starts_with("step,l_pix_smoothed\n"));
    assert_eq!(curve.lines().count(), 7);
    let o = udasr(&["plot-loss", "--log", "a/loss.csv", "--out", "curve.png"], root);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(image::open(root.join("curve.png")).is_ok());
    let o = udasr(&["plot-loss", "--log", "a/loss.csv", "--out", "curve.txt"], root);
    assert_eq!(o.status.code(), Some(2));
    assert!(!root.join("curve.txt").exists());
}

#[test]
fn inspect_prints_counts_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path(), "i");
    let o = udasr(&["inspect", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for needle in ["backbone", "seg_head", "sr_head", "discriminator", "total", "37.7M", "features: 36x2x2", "sr_output: 3x32x32"] {
        assert!(out.contains(needle), "missing {needle}:\n{out}");
    }
    let o = udasr(&["--scale", "desk", "inspect"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("features: 288x8x8"));
}
