mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gpc::checkpoint::load_checkpoint;
use gpc::tensor_file::{TensorData, TensorFile};

fn gpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gpc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = "frames = 3\nn_boxes = 2\npoints_per_box = 20\nground_points = 60\ncolor_mode = variant\nseed = 4\n";
const CONFIG: &str = "feature_dim = 8\nencoder_widths = 8,16\nglobal_width = 16\ndecoder_widths = 16\ndecoder_neighbors = 4\ntarget_points = 64\n";

#[test]
fn synth_train_eval_colorize_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.txt"), SPEC).unwrap();
    fs::write(d.join("run.txt"), CONFIG).unwrap();
    let data = d.join("data");
    ok(&["synth", "--spec", s(&d.join("spec.txt")), "--out", s(&data)]);
    let labels = fs::read(data.join("000000.lbl")).unwrap();
    assert_eq!(labels.len(), 100 * 4);
    assert_eq!(fs::read(data.join("000000.bin")).unwrap().len(), 100 * 16);

    let palette = data.join("palette.gpcp");
    let ckpt = d.join("model.ckpt");
    let metrics = d.join("metrics.tsv");
    let run_cfg = d.join("run.txt");
    let train = |ckpt: &Path, epochs: &str, extra: &[&str]| {
        let mut args = vec!["pretrain", "--data", s(&data), "--palette", s(&palette), "--config", s(&run_cfg)];
        args.extend(["--epochs", epochs, "--batch", "2", "--lr", "0.01", "--seed", "3", "--out", s(ckpt)]);
        args.extend(extra);
        ok(&args)
    };
    train(&ckpt, "3", &["--metrics", s(&metrics)]);
    let log = fs::read_to_string(&metrics).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.split('\t').count() == 5));

    // Same seed, same bytes; two epochs then a resumed third matches three straight.
    let again = d.join("again.ckpt");
    train(&again, "3", &[]);
    assert!(fs::read(&ckpt).unwrap() == fs::read(&again).unwrap());
    let partial = d.join("partial.ckpt");
    train(&partial, "3", &["--stop-after", "2"]);
    assert_eq!(load_checkpoint(&partial).unwrap().epochs_done, 2);
    ok(&["pretrain", "--data", s(&data), "--palette", s(&palette), "--resume", s(&partial), "--out", s(&partial)]);
    assert!(fs::read(&ckpt).unwrap() == fs::read(&partial).unwrap());

    let report = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--palette", s(&palette), "--seed-ratio", "0"]);
    assert!(report.contains("acc_unknown\t"), "{report}");

    let frame = data.join("000001.gpcf");
    let ply = d.join("out.ply");
    ok(&["colorize", "--checkpoint", s(&ckpt), "--frame", s(&frame), "--palette", s(&palette), "--out", s(&ply)]);
    let text = fs::read_to_string(&ply).unwrap();
    let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
    assert_eq!(body.len(), 100);

    fs::write(d.join("seeds.txt"), "0 1\n1 bad\n").unwrap();
    let out = gpc(&["colorize", "--checkpoint", s(&ckpt), "--frame", s(&frame), "--palette", s(&palette), "--seeds", s(&d.join("seeds.txt")), "--out", s(&d.join("bad.ply"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!d.join("bad.ply").exists());

    let feats = d.join("features.bin");
    ok(&["export-features", "--checkpoint", s(&ckpt), "--frame", s(&frame), "--out", s(&feats)]);
    let file = TensorFile::decode(&fs::read(&feats).unwrap()).unwrap();
    let t = file.tensor("features").unwrap();
    assert_eq!(t.shape, vec![100, 3 + 8]);
    assert!(matches!(t.data, TensorData::F32(_)));
}

#[test]
fn exit_codes() {
    assert_eq!(gpc(&["pretrain"]).status.code(), Some(1));
    assert_eq!(gpc(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(gpc(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    assert_eq!(gpc(&["synth", "--spec", s(&missing), "--out", s(dir.path())]).status.code(), Some(2));

    fs::write(dir.path().join("spec.txt"), SPEC).unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--spec", s(&dir.path().join("spec.txt")), "--out", s(&data)]);
    let palette = data.join("palette.gpcp");
    let bad_ratio = gpc(&["pretrain", "--data", s(&data), "--palette", s(&palette), "--seed-ratio", "1.5", "--out", s(&dir.path().join("m"))]);
    assert_eq!(bad_ratio.status.code(), Some(1));
    let bad_loss = gpc(&["pretrain", "--data", s(&data), "--palette", s(&palette), "--loss", "l2", "--out", s(&dir.path().join("m"))]);
    assert_eq!(bad_loss.status.code(), Some(1));
}

#[test]
fn prepare_and_fit_palette_on_fixtures() {
    let fx = common::fixtures();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prepared");
    let run = gpc(&["prepare", "--velodyne", s(&fx.join("velodyne")), "--calib", s(&fx.join("calib")), "--images", s(&fx.join("image_2")), "--out", s(&out)]);
    assert!(run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("warning: frame 000001"));
    assert!(out.join("manifest.tsv").exists());

    let pal = dir.path().join("p.gpcp");
    ok(&["fit-palette", "--images", s(&fx.join("image_2")), "--out", s(&pal), "--k", "4", "--pixels-per-image", "200", "--seed", "1"]);
    let p = gpc::palette_file::load_palette(&pal).unwrap();
    assert_eq!(p.k(), 4);
    let again = dir.path().join("q.gpcp");
    ok(&["fit-palette", "--images", s(&fx.join("image_2")), "--out", s(&again), "--k", "4", "--pixels-per-image", "200", "--seed", "1"]);
    assert_eq!(fs::read(&pal).unwrap(), fs::read(&again).unwrap());
}
