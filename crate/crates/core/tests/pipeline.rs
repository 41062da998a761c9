use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drowsy_core::dataset::{ClipLabel, Rate, RateConfig, Split, WindowSpec};
use drowsy_core::image::GrayImage;
use drowsy_core::pipeline::{run_pipeline, ExperimentConfig, FeaturizerConfig, Stage};
use drowsy_core::synth::{write_synthetic, SyntheticSpec};
use drowsy_core::train::TrainConfig;
use drowsy_core::Error;

/// Writes `2 * subjects` frame directories of smooth gradients with a bright noisy
/// burst in the anomalous ones, plus a manifest with two videos per subject.
fn write_frame_dataset(root: &Path, subjects: usize, frames: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut manifest = String::new();
    for s in 0..subjects {
        for v in 0..2 {
            let id = format!("s{s}v{v}");
            let dir = root.join(&id);
            fs::create_dir_all(&dir).unwrap();
            let burst = if v == 1 {
                frames / 3..frames / 3 + frames / 4
            } else {
                0..0
            };
            let mut labels = String::new();
            for t in 0..frames {
                let anomalous = burst.contains(&t);
                let noise: Vec<u8> = (0..120).map(|_| rng.random_range(150..=255)).collect();
                let img = GrayImage::from_fn(12, 10, |x, y| {
                    if anomalous {
                        noise[y * 12 + x]
                    } else {
                        (40 + 4 * x + 3 * y + t % 7) as u8
                    }
                })
                .unwrap();
                img.save(&dir.join(format!("frame_{t:04}.png"))).unwrap();
                labels.push(if anomalous { '1' } else { '0' });
            }
            fs::write(dir.join("labels.txt"), labels).unwrap();
            manifest.push_str(&format!("{id} subj{s} {id}\n"));
        }
    }
    let path = root.join("manifest.txt");
    fs::write(&path, manifest).unwrap();
    path
}

fn small_train() -> TrainConfig {
    TrainConfig {
        hidden: 4,
        epochs: 3,
        ..TrainConfig::default()
    }
}

fn image_config(root: &Path) -> ExperimentConfig {
    let manifest = write_frame_dataset(&root.join("frames"), 4, 40);
    let mut cfg = ExperimentConfig::new(manifest, root.join("out"));
    cfg.window = WindowSpec {
        clip_len: 6,
        sample_rate: 1,
        stride: 3,
    };
    cfg.featurizer = FeaturizerConfig::PatchStats { grid: 2 };
    cfg.clahe.enabled = true;
    cfg.clahe.clip_limit = 2.0;
    cfg.clahe.grid = 2;
    cfg.rates.normal = vec![Rate::HALF];
    cfg.rates.anomaly = vec![Rate::HALF, Rate::ONE];
    cfg.train = small_train();
    cfg
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn image_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = image_config(tmp.path());
    let run = run_pipeline(&cfg).unwrap();
    assert_eq!(run.dataset.videos.len(), 8);
    assert!(run
        .dataset
        .videos
        .iter()
        .all(|v| v.features.dim() == 8 && v.features.len() == 40));
    let out = &cfg.output_dir;
    for f in ["splits.txt", "report.txt", "grid.tsv", "histogram.tsv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(read_tree(&out.join("features")).len(), 8);
    assert_eq!(run.grid.cells.len(), 2);
}

#[test]
fn clahe_settings_get_their_own_feature_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = image_config(tmp.path());
    cfg.rates.normal = vec![Rate::HALF];
    let with = run_pipeline(&cfg).unwrap().dataset;
    assert_eq!(run_pipeline(&cfg).unwrap().dataset.data_key, with.data_key);
    cfg.clahe.enabled = false;
    let without = run_pipeline(&cfg).unwrap().dataset;
    assert_eq!(read_tree(&cfg.output_dir.join("features")).len(), 16);
    assert_ne!(with.data_key, without.data_key);
}

#[test]
fn rerun_after_deleting_downstream_artifacts_reuses_models() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_synthetic(
        &SyntheticSpec {
            frames: 300,
            dim: 6,
            min_segment: 60,
            max_segment: 100,
            ..SyntheticSpec::default()
        },
        5,
        &tmp.path().join("data"),
    )
    .unwrap();
    let mut cfg = ExperimentConfig::new(manifest, tmp.path().join("out"));
    cfg.train = small_train();
    let first = run_pipeline(&cfg).unwrap();
    assert!(first.models.iter().all(|m| m.report.is_some()));
    let before = read_tree(&cfg.output_dir);

    fs::remove_dir_all(cfg.output_dir.join("scores")).unwrap();
    for f in ["report.txt", "grid.tsv", "histogram.tsv"] {
        fs::remove_file(cfg.output_dir.join(f)).unwrap();
    }
    let second = run_pipeline(&cfg).unwrap();
    assert!(
        second.models.iter().all(|m| m.report.is_none()),
        "models should come from the cache"
    );
    assert_eq!(read_tree(&cfg.output_dir), before);

    // A different epoch count is a different model but the same split.
    let splits = fs::read(cfg.output_dir.join("splits.txt")).unwrap();
    cfg.train.epochs = 4;
    let third = run_pipeline(&cfg).unwrap();
    assert!(third.models.iter().all(|m| m.report.is_some()));
    assert_eq!(fs::read(cfg.output_dir.join("splits.txt")).unwrap(), splits);
}

#[test]
fn trainer_only_reads_normal_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_synthetic(
        &SyntheticSpec {
            frames: 300,
            dim: 6,
            min_segment: 60,
            max_segment: 100,
            ..SyntheticSpec::default()
        },
        8,
        &tmp.path().join("data"),
    )
    .unwrap();
    let mut cfg = ExperimentConfig::new(manifest, tmp.path().join("out"));
    cfg.train = small_train();
    let run = run_pipeline(&cfg).unwrap();
    let mut clips = run.dataset.clips(Split::Train, &cfg.window);
    clips.extend(run.dataset.clips(Split::Val, &cfg.window));
    for model in &run.models {
        let rates = RateConfig::new(model.normal_rate, cfg.rates.train_anomaly);
        let listing = fs::read_to_string(model.dir.join("train_clips.txt")).unwrap();
        assert!(!listing.is_empty());
        for line in listing.lines() {
            let id = line.split_whitespace().next().unwrap();
            let clip = clips
                .iter()
                .find(|c| c.id() == id)
                .expect("listed clip exists");
            assert_eq!(
                clip.label(&rates),
                ClipLabel::Normal,
                "{id} under {rates:?}"
            );
        }
        let expected = clips
            .iter()
            .filter(|c| c.label(&rates) == ClipLabel::Normal)
            .count();
        assert_eq!(listing.lines().count(), expected);
    }
}

#[test]
fn empty_manifest_fails_at_dataset_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("manifest.txt");
    fs::write(&manifest, "# nothing here\n").unwrap();
    let err = run_pipeline(&ExperimentConfig::new(manifest, tmp.path().join("out"))).unwrap_err();
    assert_eq!(err.stage, Stage::Dataset);
    assert!(matches!(err.source, Error::EmptyManifest(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn frame_label_length_mismatch_is_a_featurize_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = image_config(tmp.path());
    fs::write(tmp.path().join("frames/s0v0/labels.txt"), "0101").unwrap();
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Featurize);
    assert!(matches!(err.source, Error::LabelLengthMismatch { .. }));
}
