use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use u2seg_core::data::{read_mask, read_volume, write_volume};
use u2seg_core::{Dims, Volume};

fn u2seg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_u2seg")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = u2seg(dir, args);
    assert!(o.status.success(), "u2seg {}: {}", args.join(" "), stderr(&o));
    stdout(&o)
}

/// A temp dir with a toy-network config and a small phantom.
fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.cfg"), "preset = toy\ndims = 6 32 32\nepochs = 1\n").unwrap();
    ok(tmp.path(), &["--config", "run.cfg", "phantom", "ct.rvol", "gt.rvol"]);
    tmp
}

#[test]
fn refine_of_ground_truth_reports_one_component() {
    let tmp = workspace();
    let dir = tmp.path();
    let out = ok(dir, &["--config", "run.cfg", "refine", "gt.rvol", "gt_refined.rvol", "--report", "r.txt"]);
    assert!(out.starts_with("thresholded components: 1\noutput components: 1\n"), "{out}");
    assert_eq!(fs::read_to_string(dir.join("r.txt")).unwrap(), out);
    assert_eq!(read_mask(dir.join("gt_refined.rvol")).unwrap(), read_mask(dir.join("gt.rvol")).unwrap());
}

#[test]
fn toy_gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("toy.cfg"), "preset = toy\n").unwrap();
    let out = ok(tmp.path(), &["--config", "toy.cfg", "gradcheck"]);
    assert!(out.contains("samples 100"), "{out}");
    assert!(out.contains("ok: below tolerance 1.0e-3"), "{out}");
}

#[test]
fn gradcheck_over_tolerance_is_a_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("toy.cfg"), "preset = toy\ngradcheck_kinks = include\n").unwrap();
    let o = u2seg(tmp.path(), &["--config", "toy.cfg", "gradcheck"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stderr(&o).contains("tolerance"));
}

#[test]
fn predict_below_minimal_extent_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("toy.cfg"), "preset = toy\n").unwrap();
    write_volume(&Volume::filled(Dims::new(2, 16, 16), [1.0; 3], 0.5), dir.join("small.rvol")).unwrap();
    let o = u2seg(dir, &["--config", "toy.cfg", "predict", "small.rvol", "p.rvol"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("17×17"), "{}", stderr(&o));
    assert!(!dir.join("p.rvol").exists());
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.cfg"), "preset = toy\nlearning_rate = 0.1\n").unwrap();
    let o = u2seg(dir, &["--config", "bad.cfg", "describe"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"));
    let o = u2seg(dir, &["--threshold", "1.5", "describe"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("threshold"));
    let o = u2seg(dir, &["--connectivity", "8", "describe"]);
    assert_eq!(o.status.code(), Some(1));
    let o = u2seg(dir, &["predict", "missing.rvol", "out.rvol"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.rvol"));
    assert_eq!(u2seg(dir, &["no-such-command"]).status.code(), Some(1));
    let o = u2seg(dir, &["--set", "preset=toy", "describe"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("preset"));
}

#[test]
fn describe_reports_extent_and_count() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("toy.cfg"), "preset = toy\n").unwrap();
    let out = ok(tmp.path(), &["--config", "toy.cfg", "describe"]);
    assert!(out.trim_end().ends_with("minimal input extent 17, 59461 parameters"), "{out}");
    let wide = ok(tmp.path(), &["--config", "toy.cfg", "--side-channels", "3", "describe"]);
    assert_ne!(out, wide);
}

#[test]
fn every_subcommand_is_reproducible_and_leaves_inputs_alone() {
    let tmp = workspace();
    let dir = tmp.path();
    let cfg = ["--config", "run.cfg"];
    let input_bytes = |names: &[&str]| names.iter().map(|n| fs::read(dir.join(n)).unwrap()).collect::<Vec<_>>();

    let run_all = |tag: &str| {
        let f = |s: &str| format!("{tag}_{s}");
        ok(dir, &[&cfg[..], &["phantom", &f("ct.rvol"), &f("gt.rvol")]].concat());
        ok(dir, &[&cfg[..], &["preprocess", "ct.rvol", &f("norm.rvol")]].concat());
        ok(dir, &[&cfg[..], &["predict", &f("norm.rvol"), &f("prob.rvol")]].concat());
        ok(dir, &[&cfg[..], &["refine", &f("prob.rvol"), &f("seg.rvol"), "--report", &f("report.txt")]].concat());
        ok(dir, &[&cfg[..], &["train", &f("model.ckpt"), &f("loss.csv"), "ct.rvol", "gt.rvol"]].concat());
        ok(dir, &[&cfg[..], &["predict", &f("norm.rvol"), &f("trained.rvol"), "--checkpoint", &f("model.ckpt")]].concat());
        ok(dir, &[&cfg[..], &["eval", &f("model.ckpt"), &f("eval.csv"), "ct.rvol", "gt.rvol"]].concat());
        ok(dir, &[&cfg[..], &["montage", "gt.rvol", &f("pgm"), "--kind", "labels"]].concat());
    };

    let before = input_bytes(&["ct.rvol", "gt.rvol", "run.cfg"]);
    run_all("a");
    run_all("b");
    assert_eq!(input_bytes(&["ct.rvol", "gt.rvol", "run.cfg"]), before);

    for name in ["ct.rvol", "gt.rvol", "norm.rvol", "prob.rvol", "seg.rvol", "report.txt", "model.ckpt", "loss.csv", "trained.rvol", "eval.csv"] {
        let a = fs::read(dir.join(format!("a_{name}"))).unwrap();
        let b = fs::read(dir.join(format!("b_{name}"))).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    assert_eq!(fs::read(dir.join("a_ct.rvol")).unwrap(), before[0]);
    for entry in fs::read_dir(dir.join("a_pgm")).unwrap() {
        let p = entry.unwrap().path();
        assert_eq!(fs::read(&p).unwrap(), fs::read(dir.join("b_pgm").join(p.file_name().unwrap())).unwrap());
    }
    assert_eq!(fs::read_dir(dir.join("a_pgm")).unwrap().count(), 6);

    let csv = fs::read_to_string(dir.join("a_loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,step,train_loss,val_loss\n"));
    // one case, six slices at batch 2
    assert_eq!(csv.lines().count(), 1 + 3);
    let eval = fs::read_to_string(dir.join("a_eval.csv")).unwrap();
    assert!(eval.starts_with("case,dsc,error\n0,"));
    let prob = read_volume(dir.join("a_prob.rvol")).unwrap();
    assert!(prob.data.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn outputs_may_not_overwrite_inputs() {
    let tmp = workspace();
    let dir = tmp.path();
    let before = fs::read(dir.join("ct.rvol")).unwrap();
    let o = u2seg(dir, &["--config", "run.cfg", "preprocess", "ct.rvol", "ct.rvol"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("overwrite"));
    let o = u2seg(dir, &["--config", "run.cfg", "refine", "gt.rvol", "./gt.rvol"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fs::read(dir.join("ct.rvol")).unwrap(), before);
}

#[test]
fn raw_predict_matches_preprocess_then_predict() {
    let tmp = workspace();
    let dir = tmp.path();
    ok(dir, &["--config", "run.cfg", "preprocess", "ct.rvol", "norm.rvol"]);
    ok(dir, &["--config", "run.cfg", "predict", "norm.rvol", "p1.rvol"]);
    ok(dir, &["--config", "run.cfg", "predict", "ct.rvol", "p2.rvol", "--raw"]);
    assert_eq!(fs::read(dir.join("p1.rvol")).unwrap(), fs::read(dir.join("p2.rvol")).unwrap());
}

#[test]
fn diverging_training_exits_two_with_the_step() {
    let tmp = workspace();
    let dir = tmp.path();
    let o = u2seg(
        dir,
        &["--config", "run.cfg", "--set", "optimizer=sgd", "--set", "lr=1e300", "--set", "numeric_width=f64", "--set", "epochs=20", "train", "m.ckpt", "l.csv", "ct.rvol", "gt.rvol"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite loss at step"), "{}", stderr(&o));
    assert!(!dir.join("m.ckpt").exists());
}
