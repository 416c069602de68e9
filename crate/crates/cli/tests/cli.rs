use std::path::Path;
use std::process::{Command, Output};

fn grasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_ok(args: &[&str]) -> String {
    let out = grasp(args);
    assert!(
        out.status.success(),
        "grasp {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn iou_of_identical_and_rotated_grasps() {
    let s = stdout_ok(&["iou", "--a", "50,50,20,10,0", "--b", "50,50,20,10,0"]);
    assert!(s.contains("iou 1.000000") && s.contains("success true"), "{s}");
    let s = stdout_ok(&["iou", "--a", "50,50,20,10,0", "--b", "50,50,20,10,90"]);
    assert!(s.contains("angle_diff 90.000000") && s.contains("success false"), "{s}");
    assert!(!grasp(&["iou", "--a", "1,2,3", "--b", "1,2,3,4,5"]).status.success());
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    std::fs::write(
        &p,
        "iterations = 3\nbatch_size = 2\neval_period = 0\nimage_size = 32\nfe_channels = [4, 8]\n\
         fe_stride_total = 4\nk = 3\nscorer_conv_filters = 4\nscorer_fc_width = 8\nt = 8\np_max = 8\n",
    )
    .unwrap();
    p.display().to_string()
}

fn small_synth(dir: &Path) -> String {
    let p = dir.join("synth.toml");
    std::fs::write(
        &p,
        "image_size = 32\nlength = [10.0, 16.0]\nthickness = [3.0, 5.0]\nradius = [5.0, 7.0]\n\
         distractor_radius = [1.5, 2.5]\nopening_margin = 3.0\nnum_objects = 6\n",
    )
    .unwrap();
    p.display().to_string()
}

#[test]
fn synth_train_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display().to_string();
    let synth = small_synth(dir.path());
    let s = stdout_ok(&["synth", "--config", &synth, "--count", "12", "--out", &d, "--seed", "3"]);
    assert!(s.contains("wrote 12 scenes"));
    let manifest = dir.path().join("train.jsonl").display().to_string();
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 12);

    let s = stdout_ok(&["mean-anchor", "--data", &manifest]);
    assert!(s.starts_with("mean box"), "{s}");

    let cfg = small_config(dir.path());
    let ckpt = dir.path().join("m.ckpt").display().to_string();
    let metrics = dir.path().join("m.jsonl").display().to_string();
    stdout_ok(&[
        "train",
        "--data",
        &manifest,
        "--config",
        &cfg,
        "--out",
        &ckpt,
        "--eval",
        &manifest,
        "--metrics",
        &metrics,
    ]);
    assert_eq!(std::fs::read_to_string(&metrics).unwrap().lines().count(), 1);
    for mode in ["primary", "scorer"] {
        let s = stdout_ok(&["eval", "--ckpt", &ckpt, "--data", &manifest, "--mode", mode]);
        assert!(s.starts_with("accuracy "), "{s}");
    }
    assert!(
        !grasp(&["eval", "--ckpt", &ckpt, "--data", &manifest, "--mode", "best"])
            .status
            .success()
    );

    let s = stdout_ok(&["cv", "--data", &manifest, "--folds", "2", "--config", &cfg]);
    assert_eq!(s.lines().count(), 4, "{s}");
    let s = stdout_ok(&[
        "ablate",
        "--name",
        "anchor-size",
        "--data",
        &manifest,
        "--eval",
        &manifest,
        "--config",
        &cfg,
        "--sizes",
        "6x3",
    ]);
    assert!(s.contains("6x3") && s.contains("mean box"), "{s}");
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = grasp(&[
        "train",
        "--data",
        "missing.jsonl",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "x.ckpt",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}
