//! `emo-ig`: train landmark emotion classifiers, attribute them with
//! Integrated Gradients and retrain on the most important landmarks.

mod commands;
mod config;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emo_ig::data::FlipAxis;
use emo_ig::model::EmotionLabel;

#[derive(Debug, Parser)]
#[command(name = "emo-ig", version, about)]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-signal synthetic dataset.
    Synth(SynthArgs),
    /// Train one binary classifier per requested emotion.
    Train(TrainArgs),
    /// Report the accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Integrated Gradients for one (sample, baseline) pair.
    Attribute(AttributeArgs),
    /// Landmark importance averaged over the training pool and baselines.
    GlobalAttr(GlobalArgs),
    /// Rank landmarks, then retrain on each subset size of the ladder.
    Select(SelectArgs),
    /// Draw a landmark importance plot from a mask CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Split and training seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML file with a `[synth]` section; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    landmarks: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Informative landmark indices, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "planted")]
    informative: Option<Vec<usize>>,
    /// Plant this many evenly spaced informative landmarks.
    #[arg(long)]
    planted: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Positive class.
    #[arg(long)]
    emotion: Option<EmotionLabel>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// An emotion name, or `all`.
    #[arg(long)]
    emotion: String,
    #[arg(long)]
    epochs: Option<usize>,
    /// Freeze the convolution at its random initialization (R-EMO).
    #[arg(long)]
    randomized: bool,
    /// Add a flipped copy of every training sample.
    #[arg(long)]
    augment: bool,
    #[arg(long, default_value = "x")]
    flip_axis: FlipAxis,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate on the held-out test split of `--seed` instead of every sample.
    #[arg(long)]
    test_split: bool,
    #[arg(long, default_value_t = emo_ig::training::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Id of the attributed sample.
    #[arg(long)]
    sample: u64,
    /// Id of the baseline sample.
    #[arg(long)]
    baseline: u64,
    /// Interpolation steps.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Directory of per-emotion checkpoints used to pick typical baselines.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Fix the baseline of an emotion, as `EMOTION=ID`. Repeatable.
    #[arg(long = "baseline-override", value_parser = parse_override)]
    overrides: Vec<(EmotionLabel, u64)>,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    baselines: BaselineArgs,
    /// Checkpoint of the classifier being explained.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    m: Option<usize>,
    /// Average over the target emotion's samples only.
    #[arg(long)]
    target_only: bool,
    /// Landmarks circled in the plot.
    #[arg(long, default_value_t = 16)]
    top_k: usize,
    /// Reference coordinates for the plot (`landmark,x,y` CSV).
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    global: GlobalArgs,
    /// Subset sizes, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<usize>>,
    /// Grid file (TOML) with `[default]` and `[sizes.<k>]` grids.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Seeds per reported cell.
    #[arg(long)]
    seeds: Option<usize>,
    /// Seeds per grid cell.
    #[arg(long)]
    grid_seeds: Option<usize>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV with `landmark,score` columns.
    #[arg(long)]
    mask: PathBuf,
    /// Reference coordinates (`landmark,x,y` CSV).
    #[arg(long, conflicts_with = "manifest")]
    layout: Option<PathBuf>,
    /// Use the mean first frame of this dataset as the reference.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    top_k: usize,
    /// Output SVG file.
    #[arg(long)]
    out: PathBuf,
}

fn parse_override(s: &str) -> Result<(EmotionLabel, u64), String> {
    let (e, id) = s
        .split_once('=')
        .ok_or_else(|| format!("expected EMOTION=ID, got {s:?}"))?;
    let emotion = e.parse::<EmotionLabel>().map_err(|e| e.to_string())?;
    let id = id
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("bad sample id {id:?}: {e}"))?;
    Ok((emotion, id))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Attribute(a) => commands::attribute(a),
        Command::GlobalAttr(a) => commands::global_attr(a),
        Command::Select(a) => commands::select(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
