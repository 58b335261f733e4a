use std::path::Path;
use std::process::{Command, Output};

use tightbox::evalexp::read_report_csv;
use tightbox::volumes::load_mask;
use tightbox::BoxSeries;

fn tightbox(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tightbox"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[track_caller]
fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tightbox(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn records(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("run_record.jsonl")).map(|t| t.lines().count()).unwrap_or(0)
}

const SMALL: [&str; 4] = ["--set", "synth.count=4", "--set", "synth.shape=[16,32,32]"];

#[test]
fn every_stage_runs_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut synth = vec!["synth", "--out", "raw"];
    synth.extend(SMALL);
    ok(d, &synth);
    ok(d, &["normalize", "--data", "raw", "--out", "norm"]);
    assert!(d.join("norm/norm_stats.json").exists());

    let mask = "norm/labels/synth_000.vol";
    let vol = "norm/images/synth_000.vol";
    ok(d, &["boxes", "derive", "--mask", mask, "--mode", "nontight3d", "--out", "boxes/synth_000.jsonl"]);
    ok(d, &["boxes", "derive", "--mask", mask, "--mode", "tight2d", "--out", "tight/synth_000.jsonl"]);
    let sliced = BoxSeries::load(d.join("boxes/synth_000.jsonl")).unwrap();
    let tight = BoxSeries::load(d.join("tight/synth_000.jsonl")).unwrap();
    assert_eq!(sliced.present(), tight.present());

    ok(d, &["boxes", "slice", "--box", "2,3,4,10,20,21", "--depth", "16", "--id", "synth_000", "--out", "s.jsonl"]);
    assert_eq!(BoxSeries::load(d.join("s.jsonl")).unwrap().present(), 8);
    ok(d, &["boxes", "inflate", "--boxes", "s.jsonl", "--margin", "40", "--volume", vol, "--out", "wide.jsonl"]);
    let wide = BoxSeries::load(d.join("wide.jsonl")).unwrap();
    assert_eq!(wide.entries[2].unwrap().to_array(), [0, 0, 32, 32]);

    ok(d, &["patches", "build", "--data", "norm", "--p", "8", "--out", "patches"]);
    let quick = ["--preset", "desk", "--set", "clf.epochs=2", "--set", "seg.epochs=1", "--set", "seg.batch_size=8"];
    let mut train = vec!["clf", "train", "--patches", "patches", "--out", "models/clf.ckpt"];
    train.extend(["--norm-stats", "norm/norm_stats.json"]);
    train.extend(quick);
    ok(d, &train);
    ok(d, &["clf", "infer", "--model", "models/clf.ckpt", "--volume", vol, "--boxes", "boxes/synth_000.jsonl", "--out", "grids.jsonl"]);
    let grids = std::fs::read_to_string(d.join("grids.jsonl")).unwrap();
    assert_eq!(grids.lines().count(), sliced.present());
    ok(d, &["boxes", "correct", "--model", "models/clf.ckpt", "--volume", vol, "--boxes", "boxes/synth_000.jsonl", "--out", "corrected/synth_000.jsonl"]);
    let corrected = BoxSeries::load(d.join("corrected/synth_000.jsonl")).unwrap();
    for (c, s) in corrected.entries.iter().zip(&sliced.entries) {
        if let (Some(c), Some(s)) = (c, s) {
            assert!(s.contains(c));
        }
    }

    let mut seg = vec!["seg", "train", "--data", "norm", "--mode", "tight2d", "--out", "models/seg.ckpt", "--log", "seg.csv"];
    seg.extend(quick);
    ok(d, &seg);
    ok(d, &["seg", "predict", "--model", "models/seg.ckpt", "--volume", vol, "--out", "pred"]);
    assert_eq!(load_mask(d.join("pred/synth_000.vol")).unwrap().shape(), [16, 32, 32]);

    let dice: f64 = ok(d, &["eval", "dice", "--pred", mask, "--truth", mask]).trim().parse().unwrap();
    assert_eq!(dice, 1.0);
    let iou = ok(d, &["eval", "iou", "--pred", "boxes/synth_000.jsonl", "--truth", "tight/synth_000.jsonl"]);
    let iou: serde_json::Value = serde_json::from_str(&iou).unwrap();
    assert!(iou["mean"].as_f64().unwrap() <= 1.0);

    assert_eq!(records(&d.join("raw")), 1);
    assert_eq!(records(&d.join("models")), 2);
    // slice, inflate and infer write into the working directory
    assert_eq!(records(d), 3);
}

#[test]
fn experiment_run_writes_report_and_record() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("exp.toml"),
        "[synth]\ncount = 6\nshape = [16, 32, 32]\n\n[matrix]\nsupervision = [\"tight2d\", \"corrected\"]\npatch_sizes = [8]\ncorrection_sizes = [2]\nfolds = 2\n\n[clf]\nepochs = 1\n\n[seg]\nepochs = 1\nbatch_size = 8\n",
    )
    .unwrap();
    let out = ok(d, &["experiment", "run", "--config", "exp.toml", "--preset", "desk", "--out", "reports", "--jobs", "2"]);
    assert!(out.contains("corrected p=8 n=2"), "{out}");
    let rows = read_report_csv(d.join("reports/report.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    for f in ["summary.json", "dice.svg", "box_iou.svg", "run_record.jsonl"] {
        assert!(d.join("reports").join(f).exists(), "{f}");
    }
}

#[test]
fn usage_errors_exit_2_and_validation_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for args in [&["--bogus"][..], &["synth"], &["boxes", "shrink"], &["synth", "--out", "x", "--preset", "huge"]] {
        let out = tightbox(d, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--help"), "{args:?}");
    }
    for args in [
        &["synth", "--out", "x", "--set", "clf.epochs=0"][..],
        &["synth", "--out", "x", "--set", "clf.epoch=3"],
        &["boxes", "derive", "--mask", "missing.vol", "--mode", "tight2d", "--out", "b.jsonl"],
        &["eval", "dice", "--pred", "a.vol", "--truth", "b.vol"],
    ] {
        let out = tightbox(d, args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(err.trim().lines().count(), 1, "{err}");
    }
}
