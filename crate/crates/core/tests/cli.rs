use std::fs;
use std::process::{Command, Output};

use drowsy_core::image::GrayImage;

fn drowsy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drowsy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn synth_then_run_writes_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = drowsy(&["synth", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let cfg = tmp.path().join("experiment.toml");
    let out = drowsy(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "1",
        "--hidden",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(text(&out).contains("AUC"));
    let report = fs::read_to_string(tmp.path().join("run/report.txt")).unwrap();
    assert!(report.contains("anomaly 1/2"));
}

#[test]
fn synth_rejects_videos_too_short_for_segments() {
    let tmp = tempfile::tempdir().unwrap();
    let out = drowsy(&[
        "synth",
        "--out",
        tmp.path().to_str().unwrap(),
        "--frames",
        "300",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn stage_commands_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    // Long enough for the default segment lengths.
    let out = drowsy(&["synth", "--out", data.to_str().unwrap(), "--dim", "6"]);
    assert_eq!(code(&out), 0);
    let cfg = data.join("experiment.toml");
    let cfg = cfg.to_str().unwrap();
    let common = ["--epochs", "1", "--hidden", "3"];

    for rate in ["1/2", "2/3", "1"] {
        let mut args = vec!["train", "--config", cfg, "--normal-rate", rate];
        args.extend(common);
        assert_eq!(code(&drowsy(&args)), 0);
        args[0] = "score";
        assert_eq!(code(&drowsy(&args)), 0);
    }
    let mut args = vec!["evaluate", "--config", cfg, "--threshold-on-test"];
    args.extend(common);
    let out = drowsy(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(text(&out).contains("Accuracy (%)"));

    let grid = data.join("run/grid.tsv");
    let out = drowsy(&[
        "report",
        "--grid",
        grid.to_str().unwrap(),
        "--label",
        "synthetic",
        "--external",
        "reference=0.8740",
    ]);
    assert_eq!(code(&out), 0);
    let table = text(&out);
    assert!(table.contains("synthetic") && table.contains("0.8740"));

    let splits = tmp.path().join("splits.txt");
    let manifest = data.join("manifest.txt");
    let out = drowsy(&[
        "split",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        splits.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(&splits).unwrap().lines().count(), 12);

    let feat = data.join("features/s00_a0.feat");
    let out = drowsy(&["window", "--features", feat.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(text(&out).lines().count(), (720 - 95) / 23 + 1);
}

#[test]
fn score_without_a_model_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path();
    assert_eq!(
        code(&drowsy(&[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--dim",
            "4"
        ])),
        0
    );
    let cfg = data.join("experiment.toml");
    let out = drowsy(&[
        "score",
        "--config",
        cfg.to_str().unwrap(),
        "--normal-rate",
        "1/2",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path();
    assert_eq!(
        code(&drowsy(&[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--dim",
            "4"
        ])),
        0
    );
    let cfg = data.join("experiment.toml");
    let cfg = cfg.to_str().unwrap();

    let bad = data.join("bad.toml");
    fs::write(
        &bad,
        "manifest = \"manifest.txt\"\noutput_dir = \"o\"\n[train]\nhiden = 3\n",
    )
    .unwrap();
    assert_eq!(
        code(&drowsy(&["run", "--config", bad.to_str().unwrap()])),
        2
    );
    assert_eq!(code(&drowsy(&["run", "--config", cfg, "--clahe", "on"])), 2);

    let empty = data.join("empty.txt");
    fs::write(&empty, "").unwrap();
    let empty_cfg = data.join("empty.toml");
    fs::write(&empty_cfg, "manifest = \"empty.txt\"\noutput_dir = \"o\"\n").unwrap();
    let out = drowsy(&["run", "--config", empty_cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset stage"));

    let out = drowsy(&[
        "run", "--config", cfg, "--lr", "1e300", "--epochs", "2", "--hidden", "2",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn enhance_and_featurize_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    fs::create_dir_all(&frames).unwrap();
    for t in 0..5u8 {
        let img = GrayImage::from_fn(16, 16, |x, y| (x * 8 + y + t as usize) as u8).unwrap();
        img.save(&frames.join(format!("{t:03}.png"))).unwrap();
    }
    fs::write(frames.join("labels.txt"), "00110").unwrap();

    let enhanced = tmp.path().join("enhanced");
    let out = drowsy(&[
        "enhance",
        "--input",
        frames.to_str().unwrap(),
        "--output",
        enhanced.to_str().unwrap(),
        "--clahe-limit",
        "2",
        "--clahe-grid",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(&enhanced).unwrap().count(), 6);

    let feat = tmp.path().join("v.feat");
    let out = drowsy(&[
        "featurize",
        "--frames",
        frames.to_str().unwrap(),
        "--video-id",
        "v",
        "--out",
        feat.to_str().unwrap(),
        "--grid",
        "2",
        "--clahe",
        "on",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records = drowsy_core::features::read_feature_file(&feat).unwrap();
    assert_eq!(records[0].features.len(), 5);
    assert_eq!(records[0].features.dim(), 8);
    assert_eq!(records[0].labels, vec![false, false, true, true, false]);

    let missing = drowsy(&[
        "enhance",
        "--input",
        "/no/such.png",
        "--output",
        "/tmp/x.png",
    ]);
    assert_eq!(code(&missing), 3);
}
