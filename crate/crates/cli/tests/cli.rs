use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn headdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headdet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn synth(dir: &Path, name: &str, count: &str, seed: &str) -> String {
    let out = dir.to_str().unwrap();
    ok(headdet(&["make-synth", "--out-dir", out, "--name", name, "--count", count, "--seed", seed]));
    dir.join(name).join("annotations.txt").to_str().unwrap().to_string()
}

#[test]
fn design_anchors_from_receptive_field() {
    let o = ok(headdet(&["design-anchors", "--rf", "228", "--stride", "16", "--shrink", "3.5", "--n", "2"]));
    let s = stdout(&o);
    assert!(s.lines().any(|l| l == "scales 2 4"), "{s}");
    assert!(s.lines().any(|l| l == "sizes 32 64"), "{s}");
}

#[test]
fn oracle_detections_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let test = synth(dir.path(), "test", "10", "3");
    // ground truth with a score appended to every box
    let dets: String = fs::read_to_string(&test).unwrap().replace(')', ", 1)");
    let det_path = dir.path().join("oracle.txt");
    fs::write(&det_path, dets).unwrap();
    let out = dir.path().join("eval");
    let o = ok(headdet(&[
        "eval",
        "--test",
        &test,
        "--detections",
        det_path.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]));
    assert_eq!(stdout(&o).trim(), "AP 1.0000");
    let csv = fs::read_to_string(out.join("pr.csv")).unwrap();
    assert!(csv.starts_with("recall,precision\n"));
    assert!(csv.trim_end().ends_with("1,1"));
}

const SMALL_RUN: &str = "image_w = 128\nimage_h = 128\nnormalization = dataset\nlr = 0.01\nepochs = 2\ndecay_after_epochs = 1\n";

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train", "12", "1");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(headdet(&["train", "--config", cfg.to_str().unwrap(), "--train", &train, "--out-dir", out.to_str().unwrap(), "--seed", "5"]));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["model.ckpt", "epoch_001.ckpt", "epoch_002.ckpt", "loss.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(a.join("epoch_002.ckpt")).unwrap(), fs::read(a.join("model.ckpt")).unwrap());

    let c = dir.path().join("c");
    ok(headdet(&["train", "--config", cfg.to_str().unwrap(), "--train", &train, "--out-dir", c.to_str().unwrap(), "--seed", "6"]));
    assert_ne!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(c.join("model.ckpt")).unwrap());

    // detect and eval run off the checkpoint
    let ckpt = a.join("model.ckpt");
    ok(headdet(&["detect", "--config", cfg.to_str().unwrap(), "--test", &train, "--checkpoint", ckpt.to_str().unwrap(), "--out-dir", a.to_str().unwrap()]));
    assert!(fs::read_to_string(a.join("detections.txt")).unwrap().lines().count() == 12);
    let o = ok(headdet(&["eval", "--config", cfg.to_str().unwrap(), "--test", &train, "--checkpoint", ckpt.to_str().unwrap(), "--out-dir", a.to_str().unwrap()]));
    assert!(stdout(&o).starts_with("AP "));
}

#[test]
fn flag_beats_file_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train", "3", "1");
    let cfg = dir.path().join("run.cfg");
    // lr comes from the flag, epochs from the file, lr_decay from the defaults
    fs::write(&cfg, format!("{SMALL_RUN}lr = 0.02\n")).unwrap();
    let out = dir.path().join("run");
    ok(headdet(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--train",
        &train,
        "--out-dir",
        out.to_str().unwrap(),
        "--lr",
        "0.05",
    ]));
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    let lrs: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(lrs, vec![0.05, 0.05, 0.05, 0.05 * 0.1, 0.05 * 0.1, 0.05 * 0.1]);
}

#[test]
fn exit_codes() {
    assert_eq!(headdet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(headdet(&["eval", "--no-such-flag"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 3\nlr = fast\n").unwrap();
    let o = headdet(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");

    let o = headdet(&["eval", "--test", dir.path().join("missing.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
