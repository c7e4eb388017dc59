//! `am3`: generate synthetic data, train, evaluate and plot adaptive
//! cross-modal few-shot models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use am3::{ConditioningMode, Distance};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "am3", version, about = "Adaptive cross-modal few-shot experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Dataset root holding `manifest` and the feature CSVs.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Word-vector text file (default: <dataset>/embeddings.txt).
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    n_way: Option<usize>,
    #[arg(long, global = true)]
    k_shot: Option<usize>,
    #[arg(long, global = true)]
    k_query: Option<usize>,
    /// Input of the mixing network: w, e, p or wq.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<ConditioningMode>,
    /// Fix the mixing coefficient instead of learning it; 1.0 is the visual-only control.
    #[arg(long, global = true)]
    lambda_fixed: Option<f64>,
    /// Use the non-adaptive alignment prototype.
    #[arg(long, global = true)]
    alignment: bool,
    /// sq-euclid or euclid.
    #[arg(long, global = true, value_parser = parse_distance)]
    distance: Option<Distance>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

fn parse_mode(s: &str) -> Result<ConditioningMode, String> {
    s.parse().map_err(|e: am3::Error| e.to_string())
}

fn parse_distance(s: &str) -> Result<Distance, String> {
    s.parse().map_err(|e: am3::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its word-vector file.
    SynthGen(SynthArgs),
    /// Train a model and write a checkpoint plus the loss trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint on seeded episodes.
    Eval(EvalArgs),
    /// Mixing-coefficient statistics per shot count.
    LambdaStats(LambdaArgs),
    /// Train and evaluate one model per conditioning mode.
    Ablate(AblateArgs),
    /// Render a CSV as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    visual_dim: Option<usize>,
    #[arg(long)]
    semantic_dim: Option<usize>,
    #[arg(long)]
    visual_spread: Option<f64>,
    #[arg(long)]
    visual_separation: Option<f64>,
    #[arg(long)]
    semantic_separation: Option<f64>,
    #[arg(long)]
    semantic_noise: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated 1-based iterations at which the learning rate drops.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    anneal_steps: Option<Vec<usize>>,
    #[arg(long)]
    tasks_per_batch: Option<usize>,
    /// Output checkpoint (default: <out-dir>/model.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Queries per episode, spread evenly over the classes.
    #[arg(long)]
    queries: Option<usize>,
    /// train, val or test.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args, Debug)]
struct LambdaArgs {
    /// One checkpoint for every shot count, or one per shot count in order.
    #[arg(long, value_delimiter = ',')]
    checkpoint: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Comma-separated conditioning modes (w, e, p, wq).
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Option<Vec<ConditioningMode>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    /// Append a row for the visual-only control.
    #[arg(long)]
    with_control: bool,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Input CSV.
    #[arg(long)]
    csv: PathBuf,
    /// accuracy-vs-shots or lambda-vs-shots.
    #[arg(long)]
    kind: String,
    /// Output SVG (default: <out-dir>/<kind>.svg).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn resolve(common: &CommonArgs, command: &Command) -> anyhow::Result<RunConfig> {
    let mut c = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.seed, common.seed);
    set!(c.out_dir, common.out_dir);
    set!(c.dataset, common.dataset);
    set!(c.episode.n_way, common.n_way);
    set!(c.episode.k_shot, common.k_shot);
    set!(c.episode.k_query, common.k_query);
    set!(c.mode, common.mode);
    set!(c.distance, common.distance);
    if common.embeddings.is_some() {
        c.embeddings = common.embeddings.clone();
    }
    if common.lambda_fixed.is_some() {
        c.lambda_fixed = common.lambda_fixed;
    }
    c.alignment |= common.alignment;
    match command {
        Command::SynthGen(a) => {
            let s = &mut c.synthetic;
            set!(s.n_categories, a.categories);
            set!(s.visual_dim, a.visual_dim);
            set!(s.semantic_dim, a.semantic_dim);
            set!(s.visual_spread, a.visual_spread);
            set!(s.visual_separation, a.visual_separation);
            set!(s.semantic_separation, a.semantic_separation);
            set!(s.semantic_noise, a.semantic_noise);
            set!(s.samples_per_category, a.samples);
        }
        Command::Train(a) => {
            set!(c.train.iterations, a.iterations);
            set!(c.train.initial_lr, a.lr);
            set!(c.train.anneal_steps, a.anneal_steps);
            set!(c.train.tasks_per_batch, a.tasks_per_batch);
            if a.checkpoint.is_some() {
                c.checkpoint = a.checkpoint.clone();
            }
        }
        Command::Eval(a) => {
            if a.checkpoint.is_some() {
                c.checkpoint = a.checkpoint.clone();
            }
            set!(c.eval.n_episodes, a.episodes);
            set!(c.eval.queries_per_episode, a.queries);
            set!(c.eval.split, a.split);
        }
        Command::LambdaStats(a) => {
            if let [one] = a.checkpoint.as_slice() {
                c.checkpoint = Some(one.clone());
            }
            set!(c.eval.shots, a.shots);
            set!(c.eval.n_episodes, a.episodes);
            set!(c.eval.split, a.split);
        }
        Command::Ablate(a) => {
            set!(c.eval.modes, a.modes);
            set!(c.train.iterations, a.iterations);
            set!(c.eval.n_episodes, a.episodes);
            set!(c.eval.queries_per_episode, a.queries);
        }
        Command::Plot(_) => {}
    }
    // Anneal steps past the last iteration never fire; only explicit ones are an error.
    let explicit = matches!(command, Command::Train(a) if a.anneal_steps.is_some());
    if !explicit && c.train.anneal_steps.iter().any(|&s| s > c.train.iterations) {
        log::warn!(
            "dropping anneal steps beyond iteration {}: {:?}",
            c.train.iterations,
            c.train.anneal_steps
        );
        c.train.anneal_steps.retain(|&s| s <= c.train.iterations);
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = resolve(&cli.common, &cli.command)?;
    if cli.common.print_config {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    match &cli.command {
        Command::SynthGen(_) => commands::synth_gen(&config),
        Command::Train(_) => commands::train(&config),
        Command::Eval(_) => commands::eval(&config),
        Command::LambdaStats(a) => commands::lambda_stats(&config, &a.checkpoint),
        Command::Ablate(a) => commands::ablate(&config, a.with_control),
        Command::Plot(a) => commands::plot(&config, &a.csv, &a.kind, a.output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.common.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
