//! The `cafcn` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, perturb_dataset, recognize, visualization, Lexicon};
use crate::nn::io::{load_weights, save_weights};
use crate::nn::NetConfig;
use crate::synth::{read_dataset, synthesize, write_dataset, Perturbation, RenderStyle, RgbImage};
use crate::train::{train, RunOptions, TrainSchedule};
use crate::word::WordFormer;

/// Exit status for bad input or usage.
pub const EXIT_USER: i32 = 1;
/// Exit status for internal failures.
pub const EXIT_INTERNAL: i32 = 2;

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub net: NetConfig,
    pub train: TrainSchedule,
    pub render: RenderStyle,
    pub word: WordFormer,
    /// Probability that a synthesized word is random characters rather than
    /// a vocabulary word.
    pub random_word_prob: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            net: NetConfig::default(),
            train: TrainSchedule::default(),
            render: RenderStyle::default(),
            word: WordFormer::default(),
            random_word_prob: 0.3,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cafcn",
    version,
    about = "Character-attention FCN scene text recognizer"
)]
struct Cli {
    /// Random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with `net`, `train`, `render` and `word` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Recognize one image and print the result as JSON.
    Predict(PredictArgs),
    /// Measure word accuracy, optionally under crop perturbations.
    Eval(EvalArgs),
    /// Write a perturbed copy of a dataset.
    Perturb(PerturbArgs),
    /// Save the input beside its predicted class map.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Override the fraction of curved words.
    #[arg(long)]
    curved_prob: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory for checkpoints, metrics and the final `model.cafw`.
    #[arg(long)]
    out: PathBuf,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train the ablation without attention and deformable stages.
    #[arg(long)]
    baseline: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `pad10`, `rpad20`, `ex10`, `rex20` or `all`; repeat or separate by
    /// commas.
    #[arg(long, value_delimiter = ',')]
    perturb: Vec<String>,
    /// Word list (one per line) to snap predictions to.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Print a text table instead of JSON.
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kind: Perturbation,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_perturbations(items: &[String]) -> Result<Vec<Perturbation>> {
    let mut out = Vec::new();
    for item in items {
        if item == "all" {
            out.extend(Perturbation::ALL);
        } else {
            out.push(item.parse()?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string(value)?;
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Synth(a) => {
            let mut style = config.render.clone();
            if let Some(p) = a.curved_prob {
                style.curved_prob = p;
            }
            let records = synthesize(a.count, &style, config.random_word_prob, cli.seed)?;
            write_dataset(&a.out, &records)
        }
        Command::Train(a) => {
            let mut schedule = config.train.clone();
            if let Some(e) = a.epochs {
                schedule.epochs = e;
            }
            let net = if a.baseline {
                NetConfig {
                    attention_stages: vec![],
                    deformable_stages: vec![],
                    ..config.net.clone()
                }
            } else {
                config.net.clone()
            };
            let opts = RunOptions {
                jobs: cli.jobs,
                out_dir: Some(a.out.clone()),
                stop_after: None,
            };
            let model = train(&a.data, net, schedule, cli.seed, a.resume.as_deref(), &opts)?;
            save_weights(&model, &a.out.join("model.cafw"))
        }
        Command::Predict(a) => {
            let model = load_weights(&a.model, None)?;
            let img = RgbImage::load_png(&a.image)?;
            let rec = recognize(&model, &img, &config.word)?;
            print_json(out, &rec.prediction)
        }
        Command::Eval(a) => {
            let model = load_weights(&a.model, None)?;
            let perturbations = parse_perturbations(&a.perturb)?;
            let lexicon = a.lexicon.as_deref().map(Lexicon::from_file).transpose()?;
            let records = read_dataset(&a.data)?;
            if records.is_empty() {
                return Err(Error::invalid(format!(
                    "no samples in {}",
                    a.data.display()
                )));
            }
            let name = a.data.file_name().map_or_else(
                || a.data.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
            let report = evaluate(
                &model,
                &name,
                &records,
                &perturbations,
                lexicon.as_ref(),
                &config.word,
                cli.seed,
                cli.jobs,
            )?;
            if a.table {
                write!(out, "{}", report.table()).map_err(|e| Error::io("<stdout>", e))
            } else {
                print_json(out, &report)
            }
        }
        Command::Perturb(a) => perturb_dataset(&a.data, &a.out, a.kind, cli.seed),
        Command::Visualize(a) => {
            let model = load_weights(&a.model, None)?;
            let img = RgbImage::load_png(&a.image)?;
            let rec = recognize(&model, &img, &config.word)?;
            visualization(&rec).save_png(&a.out)?;
            print_json(out, &rec.prediction)
        }
    }
}

/// Run the command line with explicit arguments (including the program
/// name) and return the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USER
                }
            };
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::new()
            .filter_level(log::LevelFilter::Info)
            .try_init();
    }
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_user_error() {
                EXIT_USER
            } else {
                EXIT_INTERNAL
            }
        }
    }
}
