//! Config-driven experiment runner.
//!
//! Stages run in order: featurize (with optional CLAHE), window and split,
//! train one model per normal rate, score, evaluate. Every artifact lands under
//! `output_dir`:
//!
//! ```text
//! features/<key>/<video>.feat      frame-directory inputs only
//! splits.txt                       `video_id split`
//! models/<key>/model.ckpt          one directory per normal rate
//! models/<key>/loss.tsv
//! models/<key>/train_clips.txt     every clip the trainer read
//! scores/<split>_n<rate>.tsv       `clip_id score true_label`
//! report.txt  grid.tsv  histogram.tsv
//! ```
//!
//! Cache keys hash the config sections a stage depends on, so a rerun reuses
//! features and models whose inputs did not change. Stage seeds are hashed
//! from the master seed and a fixed label, so changing say the epoch count
//! never moves the split.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{anomaly_score, AutoencoderParams};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::clahe::{clahe_enhance, ClaheConfig};
use crate::dataset::{
    assign_clip_label, build_splits, extract_clips, parse_splits, read_manifest, subject_map, Clip,
    ClipLabel, ManifestEntry, Rate, RateConfig, Split, SplitFractions, Splits, WindowSpec,
};
use crate::error::Error;
use crate::eval::{rate_grid_report, FrameScoredClip, GridColumn, RateGrid};
use crate::features::{
    featurize_sequence, format_feature_records, parse_labels, read_feature_file,
    write_feature_file, PatchStats, VideoFeatures,
};
use crate::image::GrayImage;
use crate::train::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Featurize,
    Dataset,
    Train,
    Score,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Featurize => "featurize",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    /// 2 for configuration problems, 4 for training divergence, 3 for
    /// everything else (bad or missing data).
    pub fn exit_code(&self) -> i32 {
        match (&self.stage, &self.source) {
            (Stage::Config, _) | (_, Error::Config(_)) => 2,
            (_, Error::DivergenceDetected { .. }) => 4,
            _ => 3,
        }
    }
}

pub type StageResult<T> = std::result::Result<T, PipelineError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSweep {
    /// One model is trained per normal rate.
    pub normal: Vec<Rate>,
    /// Every model is evaluated at every anomaly rate.
    pub anomaly: Vec<Rate>,
    /// Anomaly rate used when picking Normal training clips.
    pub train_anomaly: Rate,
}

impl Default for RateSweep {
    fn default() -> Self {
        let all = vec![Rate::HALF, Rate::TWO_THIRDS, Rate::ONE];
        Self {
            normal: all.clone(),
            anomaly: all,
            train_anomaly: Rate::HALF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeaturizerConfig {
    /// Manifest paths are feature files.
    #[default]
    Precomputed,
    /// Manifest paths are frame directories; see [`load_frame_dir`].
    PatchStats { grid: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheSection {
    pub enabled: bool,
    pub clip_limit: f64,
    pub grid: usize,
}

impl Default for ClaheSection {
    fn default() -> Self {
        Self {
            enabled: false,
            clip_limit: 5.0,
            grid: 8,
        }
    }
}

impl ClaheSection {
    pub fn config(&self) -> crate::Result<Option<ClaheConfig>> {
        self.enabled
            .then(|| ClaheConfig::new(self.clip_limit, self.grid))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pick the threshold on the test clips instead of the validation clips.
    pub threshold_on_test: bool,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold_on_test: false,
            histogram_bins: 20,
        }
    }
}

/// Whole-experiment configuration, stored as TOML. Relative paths are taken
/// relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub rates: RateSweep,
    #[serde(default)]
    pub featurizer: FeaturizerConfig,
    #[serde(default)]
    pub clahe: ClaheSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            seed: 0,
            window: WindowSpec::default(),
            split: SplitFractions::default(),
            rates: RateSweep::default(),
            featurizer: FeaturizerConfig::default(),
            clahe: ClaheSection::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> StageResult<Self> {
        let mut cfg: Self = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string()))
            .at(Stage::Config)?;
        cfg.manifest = base.join(&cfg.manifest);
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> StageResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))
            .at(Stage::Config)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> StageResult<()> {
        let check = || -> crate::Result<()> {
            if !self.manifest.is_file() {
                return Err(Error::Config(format!(
                    "manifest {} does not exist",
                    self.manifest.display()
                )));
            }
            if self.rates.normal.is_empty() || self.rates.anomaly.is_empty() {
                return Err(Error::Config(
                    "the rate grid needs at least one normal and one anomaly rate".into(),
                ));
            }
            self.window.validate()?;
            self.train.validate()?;
            let clahe = self.clahe.config()?;
            match self.featurizer {
                FeaturizerConfig::Precomputed if clahe.is_some() => {
                    return Err(Error::Config(
                        "CLAHE needs the patch-stats featurizer".into(),
                    ));
                }
                FeaturizerConfig::PatchStats { grid } => {
                    PatchStats::new(grid)?;
                }
                FeaturizerConfig::Precomputed => {}
            }
            if self.eval.histogram_bins == 0 {
                return Err(Error::Config("histogram_bins must be at least 1".into()));
            }
            Ok(())
        };
        check().at(Stage::Config)
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    /// Training config with the derived training seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed("train"),
            ..self.train.clone()
        }
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(master.to_le_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn short_key(parts: &[&[u8]]) -> String {
    sha256_hex(parts)[..16].to_string()
}

fn toml_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    toml::to_string(value).expect("serializable").into_bytes()
}

fn write_text(path: &Path, text: &str) -> crate::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const FRAME_EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "ppm"];

/// Loads a frame directory: image files in file-name order plus a
/// `labels.txt` holding one `0`/`1` character per frame.
pub fn load_frame_dir(dir: &Path) -> crate::Result<(Vec<GrayImage>, Vec<bool>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<crate::Result<_>>()?;
    files.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
    });
    files.sort();
    let frames = files
        .iter()
        .map(|p| GrayImage::open(p))
        .collect::<crate::Result<Vec<_>>>()?;
    let labels_path = dir.join("labels.txt");
    let text = fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let labels = parse_labels(text.trim())
        .ok_or_else(|| Error::parse(&labels_path, 1, "labels must be 0/1 characters"))?;
    Ok((frames, labels))
}

/// Featurizes one frame directory, enhancing each frame first when `clahe` is set.
pub fn featurize_frame_dir(
    video_id: &str,
    dir: &Path,
    grid: usize,
    clahe: Option<&ClaheConfig>,
) -> crate::Result<VideoFeatures> {
    let (mut frames, labels) = load_frame_dir(dir)?;
    if frames.is_empty() {
        return Err(Error::InvalidImage(format!(
            "no frames in {}",
            dir.display()
        )));
    }
    if let Some(c) = clahe {
        frames = frames
            .iter()
            .map(|f| clahe_enhance(f, c))
            .collect::<crate::Result<_>>()?;
    }
    let features = featurize_sequence(&frames, &PatchStats::new(grid)?)?;
    VideoFeatures::new(video_id, features, labels)
}

/// Loads every manifest video's features, running (or reusing) featurization
/// for frame-directory inputs.
pub fn load_videos(
    cfg: &ExperimentConfig,
    entries: &[ManifestEntry],
) -> StageResult<Vec<VideoFeatures>> {
    let clahe = cfg.clahe.config().at(Stage::Config)?;
    let mut videos = Vec::with_capacity(entries.len());
    for e in entries {
        let video = match cfg.featurizer {
            FeaturizerConfig::Precomputed => {
                let mut records = read_feature_file(&e.path).at(Stage::Featurize)?;
                let pos = records
                    .iter()
                    .position(|r| r.video_id == e.video_id)
                    .ok_or_else(|| PipelineError {
                        stage: Stage::Featurize,
                        source: Error::parse(
                            &e.path,
                            0,
                            format!("no record for video {:?}", e.video_id),
                        ),
                    })?;
                records.swap_remove(pos)
            }
            FeaturizerConfig::PatchStats { grid } => {
                let key = short_key(&[
                    &toml_bytes(&cfg.featurizer),
                    &toml_bytes(&cfg.clahe),
                    e.path.to_string_lossy().as_bytes(),
                ]);
                let cached = cfg
                    .output_dir
                    .join("features")
                    .join(key)
                    .join(format!("{}.feat", e.video_id));
                if cached.is_file() {
                    read_feature_file(&cached)
                        .at(Stage::Featurize)?
                        .swap_remove(0)
                } else {
                    let v = featurize_frame_dir(&e.video_id, &e.path, grid, clahe.as_ref())
                        .at(Stage::Featurize)?;
                    let dir = cached.parent().expect("cache path has a parent");
                    fs::create_dir_all(dir)
                        .map_err(|err| Error::io(dir, err))
                        .at(Stage::Featurize)?;
                    write_feature_file(&cached, std::slice::from_ref(&v)).at(Stage::Featurize)?;
                    v
                }
            }
        };
        videos.push(video);
    }
    Ok(videos)
}

/// Features, splits and clips of one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub videos: Vec<VideoFeatures>,
    pub splits: Splits,
    /// Content hash of the features, labels and subject assignment.
    pub data_key: String,
}

impl Dataset {
    /// Clips of every video in `split`, in split order.
    pub fn clips(&self, split: Split, window: &WindowSpec) -> Vec<Clip> {
        let by_id: BTreeMap<&str, &VideoFeatures> = self
            .videos
            .iter()
            .map(|v| (v.video_id.as_str(), v))
            .collect();
        self.splits
            .get(split)
            .iter()
            .flat_map(|id| extract_clips(by_id[id.as_str()], window))
            .collect()
    }
}

/// Reads the manifest, featurizes, splits by subject and writes `splits.txt`.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> StageResult<Dataset> {
    cfg.validate()?;
    let entries = read_manifest(&cfg.manifest).at(Stage::Dataset)?;
    if entries.is_empty() {
        return Err(PipelineError {
            stage: Stage::Dataset,
            source: Error::EmptyManifest(cfg.manifest.clone()),
        });
    }
    let videos = load_videos(cfg, &entries)?;
    let ids: Vec<String> = entries.iter().map(|e| e.video_id.clone()).collect();
    let splits = build_splits(
        &ids,
        &subject_map(&entries),
        &cfg.split,
        cfg.stage_seed("split"),
    )
    .at(Stage::Dataset)?;
    write_text(&cfg.output_dir.join("splits.txt"), &splits.to_text()).at(Stage::Dataset)?;

    let subjects: String = entries
        .iter()
        .map(|e| format!("{} {}\n", e.video_id, e.subject_id))
        .collect();
    let data_key = sha256_hex(&[
        format_feature_records(&videos).as_bytes(),
        subjects.as_bytes(),
    ]);
    Ok(Dataset {
        entries,
        videos,
        splits,
        data_key,
    })
}

/// Reads a previously written split file instead of recomputing it.
pub fn read_split_file(path: &Path) -> crate::Result<Splits> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_splits(&text, path)
}

/// A trained (or cache-loaded) model for one normal rate.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub normal_rate: Rate,
    pub dir: PathBuf,
    pub params: AutoencoderParams,
    /// `None` when the checkpoint came from the cache.
    pub report: Option<TrainReport>,
}

pub fn model_dir(cfg: &ExperimentConfig, ds: &Dataset, normal_rate: Rate) -> PathBuf {
    let train_cfg = cfg.train_config();
    let key = short_key(&[
        ds.data_key.as_bytes(),
        &toml_bytes(&cfg.window),
        &toml_bytes(&cfg.split),
        ds.splits.to_text().as_bytes(),
        normal_rate.to_string().as_bytes(),
        cfg.rates.train_anomaly.to_string().as_bytes(),
        &toml_bytes(&train_cfg),
        &train_cfg.seed.to_le_bytes(),
    ]);
    cfg.output_dir
        .join("models")
        .join(format!("n{}-{key}", normal_rate.slug()))
}

fn training_clips(clips: &[Clip], rates: &RateConfig) -> Vec<Clip> {
    clips
        .iter()
        .filter(|c| c.label(rates) == ClipLabel::Normal)
        .cloned()
        .collect()
}

/// Trains on the Normal training clips under `(normal_rate, train_anomaly)`,
/// early-stopping on the matching validation clips when patience is set.
/// A checkpoint already present for the same inputs is loaded instead.
pub fn train_model(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    normal_rate: Rate,
) -> StageResult<TrainedModel> {
    let dir = model_dir(cfg, ds, normal_rate);
    let ckpt = dir.join("model.ckpt");
    if ckpt.is_file() {
        log::info!("reusing {}", ckpt.display());
        return Ok(TrainedModel {
            normal_rate,
            params: load_checkpoint(&ckpt).at(Stage::Train)?,
            dir,
            report: None,
        });
    }
    let rates = RateConfig::new(normal_rate, cfg.rates.train_anomaly);
    let train_clips = training_clips(&ds.clips(Split::Train, &cfg.window), &rates);
    let val_clips = training_clips(&ds.clips(Split::Val, &cfg.window), &rates);
    if train_clips.is_empty() {
        return Err(PipelineError {
            stage: Stage::Train,
            source: Error::NoNormalClips,
        });
    }
    let mut listing = String::new();
    for (name, clips) in [("train", &train_clips), ("val", &val_clips)] {
        for c in clips.iter() {
            writeln!(listing, "{} {name}", c.id()).unwrap();
        }
    }
    write_text(&dir.join("train_clips.txt"), &listing).at(Stage::Train)?;

    log::info!(
        "training normal rate {normal_rate} on {} clips",
        train_clips.len()
    );
    let seqs: Vec<_> = train_clips.into_iter().map(|c| c.features).collect();
    let val: Vec<_> = val_clips.into_iter().map(|c| c.features).collect();
    let (params, report) = train(&seqs, &val, &cfg.train_config()).at(Stage::Train)?;

    let mut trace = String::from("epoch\ttrain_loss\tval_loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        let v = report
            .val_losses
            .get(i)
            .map_or("NA".to_string(), |v| format!("{v:.17e}"));
        writeln!(trace, "{}\t{l:.17e}\t{v}", i + 1).unwrap();
    }
    write_text(&dir.join("loss.tsv"), &trace).at(Stage::Train)?;
    save_checkpoint(&ckpt, &params).at(Stage::Train)?;
    Ok(TrainedModel {
        normal_rate,
        dir,
        params,
        report: Some(report),
    })
}

pub fn score_clips(
    params: &AutoencoderParams,
    clips: &[Clip],
) -> crate::Result<Vec<FrameScoredClip>> {
    clips
        .iter()
        .map(|c| {
            Ok(FrameScoredClip {
                clip_id: c.id(),
                score: anomaly_score(&c.features, params)?,
                frame_labels: c.frame_labels.clone(),
            })
        })
        .collect()
}

/// The label written to score files: the clip's majority label, i.e. its label
/// at rates (1/2, 1/2). Ties count as anomalous.
pub fn majority_label(frame_labels: &[bool]) -> bool {
    assign_clip_label(frame_labels, &RateConfig::new(Rate::HALF, Rate::HALF))
        == ClipLabel::Anomalous
}

pub fn format_scores(scored: &[FrameScoredClip]) -> String {
    scored
        .iter()
        .map(|s| {
            format!(
                "{} {:.17e} {}\n",
                s.clip_id,
                s.score,
                u8::from(majority_label(&s.frame_labels))
            )
        })
        .collect()
}

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLine {
    pub clip_id: String,
    pub score: f64,
    pub anomalous: bool,
}

pub fn read_scores(path: &Path) -> crate::Result<Vec<ScoreLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let bad = || Error::parse(path, i + 1, "expected `clip_id score true_label`");
            let [id, score, label] = f[..] else {
                return Err(bad());
            };
            Ok(ScoreLine {
                clip_id: id.to_string(),
                score: score.parse().map_err(|_| bad())?,
                anomalous: match label {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}

pub fn scores_path(cfg: &ExperimentConfig, split: Split, normal_rate: Rate) -> PathBuf {
    cfg.output_dir
        .join("scores")
        .join(format!("{}_n{}.tsv", split.name(), normal_rate.slug()))
}

/// Scores the test and validation clips with `model` and writes both files.
pub fn score_model(cfg: &ExperimentConfig, ds: &Dataset, model: &TrainedModel) -> StageResult<()> {
    for split in [Split::Test, Split::Val] {
        let scored = score_clips(&model.params, &ds.clips(split, &cfg.window)).at(Stage::Score)?;
        write_text(
            &scores_path(cfg, split, model.normal_rate),
            &format_scores(&scored),
        )
        .at(Stage::Score)?;
    }
    Ok(())
}

/// Reattaches per-frame labels to a scores file by clip id.
fn scored_from_file(path: &Path, clips: &[Clip]) -> crate::Result<Vec<FrameScoredClip>> {
    let labels: BTreeMap<String, &Vec<bool>> =
        clips.iter().map(|c| (c.id(), &c.frame_labels)).collect();
    read_scores(path)?
        .into_iter()
        .map(|s| {
            let frame_labels = labels
                .get(&s.clip_id)
                .ok_or_else(|| Error::parse(path, 0, format!("unknown clip {:?}", s.clip_id)))?;
            Ok(FrameScoredClip {
                clip_id: s.clip_id,
                score: s.score,
                frame_labels: (*frame_labels).clone(),
            })
        })
        .collect()
}

/// Builds the rate grid from the score files on disk.
pub fn evaluate_scores(cfg: &ExperimentConfig, ds: &Dataset) -> StageResult<RateGrid> {
    let test_clips = ds.clips(Split::Test, &cfg.window);
    let val_clips = ds.clips(Split::Val, &cfg.window);
    let mut columns = Vec::with_capacity(cfg.rates.normal.len());
    for &normal_rate in &cfg.rates.normal {
        let test = scored_from_file(&scores_path(cfg, Split::Test, normal_rate), &test_clips)
            .at(Stage::Evaluate)?;
        let val = scored_from_file(&scores_path(cfg, Split::Val, normal_rate), &val_clips)
            .at(Stage::Evaluate)?;
        let calibration = if cfg.eval.threshold_on_test {
            None
        } else if val.is_empty() {
            log::warn!("no validation clips; picking thresholds on test clips");
            None
        } else {
            Some(val)
        };
        columns.push(GridColumn {
            normal_rate,
            test,
            calibration,
        });
    }
    Ok(rate_grid_report(
        &columns,
        &cfg.rates.anomaly,
        cfg.eval.histogram_bins,
    ))
}

/// `report.txt`: the grid table plus per-cell clip counts and thresholds.
pub fn format_report(cfg: &ExperimentConfig, grid: &RateGrid) -> String {
    let mut out = String::new();
    let calibration = if cfg.eval.threshold_on_test {
        "test"
    } else {
        "validation"
    };
    writeln!(
        out,
        "threshold chosen on {calibration} clips (max tpr - fpr)\n"
    )
    .unwrap();
    out.push_str(&grid.to_table());
    out.push('\n');
    for cell in &grid.cells {
        let (n, a) = (cell.rates.normal, cell.rates.anomaly);
        match &cell.report {
            Ok(r) => writeln!(
                out,
                "normal {n} anomaly {a}: {} clips ({} anomalous), threshold {:.6e}, tp {} fp {} tn {} fn {}{}",
                cell.n_clips,
                cell.n_anomalous,
                r.threshold,
                r.confusion.tp,
                r.confusion.fp,
                r.confusion.tn,
                r.confusion.fn_,
                if r.metrics.undefined { " (some ratios undefined, shown as 0)" } else { "" }
            ),
            Err(e) => writeln!(out, "normal {n} anomaly {a}: {} clips, not evaluated: {e}", cell.n_clips),
        }
        .unwrap();
    }
    out
}

pub fn write_reports(cfg: &ExperimentConfig, grid: &RateGrid) -> StageResult<()> {
    let dir = &cfg.output_dir;
    write_text(&dir.join("report.txt"), &format_report(cfg, grid)).at(Stage::Report)?;
    write_text(&dir.join("grid.tsv"), &grid.to_tsv()).at(Stage::Report)?;
    write_text(&dir.join("histogram.tsv"), &grid.histogram_tsv()).at(Stage::Report)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dataset: Dataset,
    pub models: Vec<TrainedModel>,
    pub grid: RateGrid,
}

/// Runs every stage and writes all artifacts.
pub fn run_pipeline(cfg: &ExperimentConfig) -> StageResult<RunOutcome> {
    let dataset = prepare_dataset(cfg)?;
    let mut models = Vec::with_capacity(cfg.rates.normal.len());
    for &rate in &cfg.rates.normal {
        let model = train_model(cfg, &dataset, rate)?;
        score_model(cfg, &dataset, &model)?;
        models.push(model);
    }
    let grid = evaluate_scores(cfg, &dataset)?;
    write_reports(cfg, &grid)?;
    Ok(RunOutcome {
        dataset,
        models,
        grid,
    })
}
