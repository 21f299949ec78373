use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quiz::eval::read_report;
use quiz::landmarks::load_landmarks;
use quiz::qvol::load_volume;

fn quiz(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quiz")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TINY: &str = r#"{"dataset_dir":"ds","stage1_iters":3,"stage2_iters":2,"checkpoint_every":2,"probe_size":2,
"model":{"input_size":24,"channels":8,"tf_dim":12,"tf_heads":2,"tf_layers":1,"mlp_hidden":8}}"#;

fn synth(dir: &Path) {
    let o = quiz(dir, &["synth", "--n", "3", "--seed", "2", "--out", "ds", "--side", "24", "--crop_side", "16", "--max_shift", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&quiz(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&quiz(dir.path(), &["synth"])), 2);
    assert_eq!(code(&quiz(dir.path(), &["warp", "--input", "a", "--t", "1,2", "--out", "b"])), 2);
    assert_eq!(code(&quiz(dir.path(), &["train", "--out", "r", "--stage", "2"])), 2);
    assert_eq!(code(&quiz(dir.path(), &["--help"])), 0);
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = quiz(dir.path(), &["eval", "--dataset", "missing", "--predictor", "zero"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no dataset"));
    assert_eq!(code(&quiz(dir.path(), &["warp", "--input", "nothing.qvol", "--t", "0,0,0", "--out", "o"])), 1);
    fs::write(dir.path().join("bad.json"), "{\"lr\": -1}").unwrap();
    assert_eq!(code(&quiz(dir.path(), &["train", "--config", "bad.json", "--out", "r"])), 1);
}

#[test]
fn synth_eval_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = quiz(d, &["eval", "--dataset", "ds", "--predictor", "oracle", "--oracle_range", "3", "--input_size", "24", "--out", "r.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_report(&d.join("r.json")).unwrap();
    assert_eq!(r.summary.n_pairs, 3);
    assert!(r.summary.mean_tre_mm < 1e-6);
    assert_eq!(code(&quiz(d, &["plot-offsets", "--report", "r.json", "--out", "offsets"])), 0);
    assert_eq!(fs::read_to_string(d.join("offsets.csv")).unwrap().lines().count(), 10);
    assert!(d.join("offsets.svg").is_file());
}

#[test]
fn train_then_match_and_resume_stage_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(d.join("cfg.json"), TINY).unwrap();
    let o = quiz(d, &["train", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "stage1_loss.csv", "stage2_loss.csv", "probe.csv", "ckpt_000002.qzck", "stage1.qzck", "final.qzck"] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }
    let s1 = fs::read_to_string(d.join("run/stage1_loss.csv")).unwrap();
    assert_eq!(s1.lines().next(), Some("iter,l_pair"));
    assert_eq!(s1.lines().count(), 4);
    let s2 = fs::read_to_string(d.join("run/stage2_loss.csv")).unwrap();
    assert_eq!(s2.lines().next(), Some("iter,l_pair,l_trans,total"));
    assert_eq!(s2.lines().count(), 3);

    let pair = "ds/pairs/pair_0000";
    let o = quiz(d, &[
        "match", "--checkpoint", "run/final.qzck", "--reference", &format!("{pair}/ref.qvol"),
        "--search", &format!("{pair}/search.qvol"), "--queries", &format!("{pair}/q.csv"), "--out", "m.csv",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let q = load_landmarks(&d.join(pair).join("q.csv"), None).unwrap();
    let m = load_landmarks(&d.join("m.csv"), None).unwrap();
    assert_eq!(m.len(), q.len());
    assert_eq!(m.names(), q.names());

    let o = quiz(d, &["train", "--config", "cfg.json", "--out", "run2", "--stage", "2", "--init", "run/stage1.qzck", "--stage2_iters", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(d.join("run2/stage2_loss.csv")).unwrap().lines().count(), 2);
    assert!(!d.join("run2/stage1_loss.csv").exists());
}

#[test]
fn warp_by_integer_shift_moves_voxels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = quiz(d, &["warp", "--input", "ds/pairs/pair_0000/search.qvol", "--t", "-1,2,0", "--out", "w.qvol"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let src = load_volume(&d.join("ds/pairs/pair_0000/search.qvol")).unwrap();
    let out = load_volume(&d.join("w.qvol")).unwrap();
    assert_eq!(out.get(3, 5, 4), src.get(4, 3, 4));
}
