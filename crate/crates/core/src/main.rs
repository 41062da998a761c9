use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use drowsy_core::checkpoint::load_checkpoint;
use drowsy_core::clahe::{clahe_enhance, global_hist_equalize, ClaheConfig};
use drowsy_core::dataset::{
    build_splits, extract_clips, read_manifest, subject_map, Rate, RateConfig, SplitFractions,
    WindowSpec,
};
use drowsy_core::eval::{compare_table, parse_grid_tsv, MetricSummary};
use drowsy_core::features::{read_feature_file, write_feature_file};
use drowsy_core::image::GrayImage;
use drowsy_core::pipeline::{
    evaluate_scores, featurize_frame_dir, model_dir, prepare_dataset, run_pipeline, score_model,
    train_model, write_reports, ExperimentConfig, PipelineError, Stage, TrainedModel,
};
use drowsy_core::synth::{write_synthetic, SyntheticSpec};
use drowsy_core::Error;

/// Drowsiness anomaly detection with an LSTM autoencoder.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature dataset and a matching experiment config.
    Synth(SynthArgs),
    /// Contrast-enhance one image or every image in a directory.
    Enhance(EnhanceArgs),
    /// Turn a frame directory into a feature file.
    Featurize(FeaturizeArgs),
    /// List the clips of a feature file with their labels.
    Window(WindowArgs),
    /// Assign the videos of a manifest to train/val/test by subject.
    Split(SplitArgs),
    /// Train the model for one normal rate.
    Train(ModelArgs),
    /// Score validation and test clips with a trained model.
    Score(ModelArgs),
    /// Build the rate-grid report from existing score files.
    Evaluate(EvaluateArgs),
    /// Compare grid files side by side at one rate cell.
    Report(ReportArgs),
    /// Run every stage from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    subjects: usize,
    #[arg(long, default_value_t = 720)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Default)]
struct ClaheArgs {
    /// Turn frame enhancement on or off.
    #[arg(long, value_enum)]
    clahe: Option<Toggle>,
    #[arg(long)]
    clahe_limit: Option<f64>,
    #[arg(long)]
    clahe_grid: Option<usize>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Plain global histogram equalization instead of CLAHE.
    #[arg(long)]
    global: bool,
    #[arg(long, default_value_t = 5.0)]
    clahe_limit: f64,
    #[arg(long, default_value_t = 8)]
    clahe_grid: usize,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Directory of frames plus `labels.txt`.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    video_id: String,
    #[arg(long)]
    out: PathBuf,
    /// Patch grid per axis.
    #[arg(long, default_value_t = 4)]
    grid: usize,
    #[command(flatten)]
    clahe: ClaheArgs,
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 48)]
    clip_len: usize,
    #[arg(long, default_value_t = 2)]
    sample_rate: usize,
    #[arg(long, default_value_t = 23)]
    stride: usize,
    #[arg(long, default_value = "1/2")]
    normal_rate: Rate,
    #[arg(long, default_value = "1/2")]
    anomaly_rate: Rate,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    train: f64,
    #[arg(long, default_value_t = 0.25)]
    val: f64,
    #[arg(long, default_value_t = 0.25)]
    test: f64,
}

#[derive(Args, Default)]
struct TrainOverrides {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Early-stopping patience in epochs (needs validation clips).
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    normal_rate: Rate,
    #[command(flatten)]
    train: TrainOverrides,
    #[command(flatten)]
    clahe: ClaheArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    threshold_on_test: bool,
    #[command(flatten)]
    train: TrainOverrides,
    #[command(flatten)]
    clahe: ClaheArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// `grid.tsv` files to compare.
    #[arg(long = "grid")]
    grids: Vec<PathBuf>,
    /// Column labels, one per grid (defaults to the file's parent directory).
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Extra columns given as `LABEL=AUC`.
    #[arg(long = "external")]
    external: Vec<String>,
    #[arg(long, default_value = "1/2")]
    normal_rate: Rate,
    #[arg(long, default_value = "1/2")]
    anomaly_rate: Rate,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    threshold_on_test: bool,
    #[command(flatten)]
    train: TrainOverrides,
    #[command(flatten)]
    clahe: ClaheArgs,
}

fn fail(stage: Stage, source: Error) -> PipelineError {
    PipelineError { stage, source }
}

fn load_config(
    path: &Path,
    train: &TrainOverrides,
    clahe: &ClaheArgs,
) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = ExperimentConfig::load(path)?;
    let t = &mut cfg.train;
    if let Some(v) = train.hidden {
        t.hidden = v;
    }
    if let Some(v) = train.lr {
        t.learning_rate = v;
    }
    if let Some(v) = train.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = train.epochs {
        t.epochs = v;
    }
    if let Some(v) = train.grad_clip {
        t.grad_clip = Some(v);
    }
    if let Some(v) = train.patience {
        t.patience = Some(v);
    }
    if let Some(v) = train.seed {
        cfg.seed = v;
    }
    match clahe.clahe {
        Some(Toggle::On) => cfg.clahe.enabled = true,
        Some(Toggle::Off) => cfg.clahe.enabled = false,
        None => {}
    }
    if let Some(v) = clahe.clahe_limit {
        cfg.clahe.clip_limit = v;
    }
    if let Some(v) = clahe.clahe_grid {
        cfg.clahe.grid = v;
    }
    Ok(cfg)
}

fn synthetic_config_text() -> String {
    "# Experiment over the generated dataset. Paths are relative to this file.
manifest = \"manifest.txt\"
output_dir = \"run\"
seed = 0

[window]
clip_len = 48
sample_rate = 2
stride = 23

[split]
train = 0.5
val = 0.25
test = 0.25

[rates]
normal = [\"1/2\", \"2/3\", \"1\"]
anomaly = [\"1/2\", \"2/3\", \"1\"]
train_anomaly = \"1/2\"

[featurizer]
kind = \"precomputed\"

[train]
hidden = 16
learning_rate = 0.01
batch_size = 4
epochs = 15
grad_clip = 5.0

[eval]
threshold_on_test = false
histogram_bins = 20
"
    .to_string()
}

fn cmd_synth(a: &SynthArgs) -> Result<(), PipelineError> {
    let spec = SyntheticSpec {
        subjects: a.subjects,
        frames: a.frames,
        dim: a.dim,
        ..SyntheticSpec::default()
    };
    let manifest = write_synthetic(&spec, a.seed, &a.out).map_err(|e| fail(Stage::Dataset, e))?;
    let config = a.out.join("experiment.toml");
    fs::write(&config, synthetic_config_text())
        .map_err(|e| fail(Stage::Dataset, Error::io(&config, e)))?;
    println!("{}", manifest.display());
    println!("{}", config.display());
    Ok(())
}

fn enhance_one(input: &Path, output: &Path, a: &EnhanceArgs) -> drowsy_core::Result<()> {
    let img = GrayImage::open(input)?;
    let out = if a.global {
        global_hist_equalize(&img)
    } else {
        clahe_enhance(&img, &ClaheConfig::new(a.clahe_limit, a.clahe_grid)?)?
    };
    out.save(output)
}

fn cmd_enhance(a: &EnhanceArgs) -> Result<(), PipelineError> {
    let run = || -> drowsy_core::Result<()> {
        if !a.input.is_dir() {
            return enhance_one(&a.input, &a.output, a);
        }
        fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| Error::io(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png" || e == "pgm"))
            .collect();
        files.sort();
        for f in files {
            enhance_one(&f, &a.output.join(f.file_name().expect("file entry")), a)?;
        }
        let labels = a.input.join("labels.txt");
        if labels.is_file() {
            let to = a.output.join("labels.txt");
            fs::copy(&labels, &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(())
    };
    run().map_err(|e| fail(Stage::Featurize, e))
}

fn cmd_featurize(a: &FeaturizeArgs) -> Result<(), PipelineError> {
    let clahe = match a.clahe.clahe {
        Some(Toggle::On) => Some(
            ClaheConfig::new(
                a.clahe.clahe_limit.unwrap_or(5.0),
                a.clahe.clahe_grid.unwrap_or(8),
            )
            .map_err(|e| fail(Stage::Config, e))?,
        ),
        _ => None,
    };
    let video = featurize_frame_dir(&a.video_id, &a.frames, a.grid, clahe.as_ref())
        .map_err(|e| fail(Stage::Featurize, e))?;
    write_feature_file(&a.out, &[video]).map_err(|e| fail(Stage::Featurize, e))
}

fn cmd_window(a: &WindowArgs) -> Result<(), PipelineError> {
    let spec = WindowSpec {
        clip_len: a.clip_len,
        sample_rate: a.sample_rate,
        stride: a.stride,
    };
    spec.validate().map_err(|e| fail(Stage::Config, e))?;
    let rates = RateConfig::new(a.normal_rate, a.anomaly_rate);
    for video in read_feature_file(&a.features).map_err(|e| fail(Stage::Dataset, e))? {
        for clip in extract_clips(&video, &spec) {
            let anomalous = clip.frame_labels.iter().filter(|&&l| l).count();
            println!(
                "{} {:?} {anomalous}/{}",
                clip.id(),
                clip.label(&rates),
                clip.frame_labels.len()
            );
        }
    }
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<(), PipelineError> {
    let entries = read_manifest(&a.manifest).map_err(|e| fail(Stage::Dataset, e))?;
    let ids: Vec<String> = entries.iter().map(|e| e.video_id.clone()).collect();
    let fractions = SplitFractions {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let splits = build_splits(&ids, &subject_map(&entries), &fractions, a.seed)
        .map_err(|e| fail(Stage::Dataset, e))?;
    fs::write(&a.out, splits.to_text()).map_err(|e| fail(Stage::Dataset, Error::io(&a.out, e)))
}

fn cmd_train(a: &ModelArgs) -> Result<(), PipelineError> {
    let cfg = load_config(&a.config, &a.train, &a.clahe)?;
    let ds = prepare_dataset(&cfg)?;
    let model = train_model(&cfg, &ds, a.normal_rate)?;
    if let Some(r) = &model.report {
        if let (Some(first), Some(last)) = (r.epoch_losses.first(), r.epoch_losses.last()) {
            println!(
                "epochs {} loss {first:.6} -> {last:.6}",
                r.epoch_losses.len()
            );
        }
    }
    println!("{}", model.dir.join("model.ckpt").display());
    Ok(())
}

fn cmd_score(a: &ModelArgs) -> Result<(), PipelineError> {
    let cfg = load_config(&a.config, &a.train, &a.clahe)?;
    let ds = prepare_dataset(&cfg)?;
    let dir = model_dir(&cfg, &ds, a.normal_rate);
    let params = load_checkpoint(&dir.join("model.ckpt")).map_err(|e| fail(Stage::Score, e))?;
    let model = TrainedModel {
        normal_rate: a.normal_rate,
        dir,
        params,
        report: None,
    };
    score_model(&cfg, &ds, &model)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(&a.config, &a.train, &a.clahe)?;
    cfg.eval.threshold_on_test |= a.threshold_on_test;
    let ds = prepare_dataset(&cfg)?;
    let grid = evaluate_scores(&cfg, &ds)?;
    write_reports(&cfg, &grid)?;
    print!("{}", grid.to_table());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<(), PipelineError> {
    let mut columns = Vec::new();
    for (i, path) in a.grids.iter().enumerate() {
        let text = fs::read_to_string(path).map_err(|e| fail(Stage::Report, Error::io(path, e)))?;
        let rows = parse_grid_tsv(&text).map_err(|e| fail(Stage::Report, e))?;
        let row = rows
            .iter()
            .find(|r| r.rates.normal == a.normal_rate && r.rates.anomaly == a.anomaly_rate)
            .ok_or_else(|| {
                fail(
                    Stage::Report,
                    Error::Config(format!(
                        "{} has no cell ({}, {})",
                        path.display(),
                        a.normal_rate,
                        a.anomaly_rate
                    )),
                )
            })?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| {
            path.parent().and_then(|p| p.file_name()).map_or_else(
                || path.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            )
        });
        columns.push((label, row.metrics));
    }
    for ext in &a.external {
        let (label, auc) = ext
            .split_once('=')
            .and_then(|(l, v)| v.parse::<f64>().ok().map(|v| (l.to_string(), v)))
            .ok_or_else(|| {
                fail(
                    Stage::Config,
                    Error::Config(format!("expected LABEL=AUC, got {ext:?}")),
                )
            })?;
        columns.push((
            label,
            MetricSummary {
                auc: Some(auc),
                ..MetricSummary::default()
            },
        ));
    }
    if columns.len() < 2 {
        return Err(fail(
            Stage::Config,
            Error::Config("report needs at least two columns".into()),
        ));
    }
    print!("{}", compare_table(&columns));
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(&a.config, &a.train, &a.clahe)?;
    cfg.eval.threshold_on_test |= a.threshold_on_test;
    let outcome = run_pipeline(&cfg)?;
    print!("{}", outcome.grid.to_table());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Featurize(a) => cmd_featurize(a),
        Command::Window(a) => cmd_window(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
