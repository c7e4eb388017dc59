use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use am3::checkpoint;
use am3::dataset::{load_dataset, split_categories, write_dataset, CategorySplit, LabeledDataset};
use am3::embedding::{parse_embedding_file, LabelEmbeddings};
use am3::episode::{check_split, EpisodeConfig};
use am3::eval::{evaluate, lambda_statistics, EvalReport};
use am3::experiment::{ablation_run, Experiment};
use am3::plot::{render_svg, series_from_table, PlotKind};
use am3::report::{self, Table};
use am3::synthetic::generate_synthetic_crossmodal;
use am3::train::train as run_training;
use am3::{Am3Model, PrototypeRule};
use anyhow::{bail, Context, Result};

use crate::config::RunConfig;

struct Inputs {
    dataset: LabeledDataset,
    labels: LabelEmbeddings,
    split: CategorySplit,
}

fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    let dataset = load_dataset(&config.dataset)?;
    let path = config.embeddings_path();
    let file = fs::File::open(&path).with_context(|| format!("opening embeddings {}", path.display()))?;
    let table = parse_embedding_file(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    let labels = LabelEmbeddings::resolve_dataset(&dataset, &table, config.seed, None)?;
    let s = &config.split;
    // Each command checks the part it uses against its episode shape.
    let split = split_categories(&dataset, (s.train, s.val, s.test), config.seed, 1)?;
    Ok(Inputs {
        dataset,
        labels,
        split,
    })
}

/// The named part of the split, checked against the episodes it must feed.
fn split_named<'a>(inputs: &'a Inputs, name: &str, episode: &EpisodeConfig) -> Result<&'a [String]> {
    let part = match name {
        "train" => &inputs.split.train,
        "val" => &inputs.split.val,
        _ => &inputs.split.test,
    };
    check_split(&inputs.dataset, part, episode).with_context(|| format!("{name} split"))?;
    Ok(part)
}

fn out_file(config: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    Ok(config.out_dir.join(name))
}

/// Writes `bytes` to `path` and to stdout.
fn emit(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    std::io::stdout().write_all(bytes)?;
    Ok(())
}

fn load_model(path: &Path, inputs: &Inputs) -> Result<Am3Model> {
    let model = checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let c = model.config();
    if c.visual_dim != inputs.dataset.feature_dimension() {
        bail!(
            "checkpoint {} expects visual_dim {} but the dataset has {} features",
            path.display(),
            c.visual_dim,
            inputs.dataset.feature_dimension()
        );
    }
    if c.semantic_dim != inputs.labels.dimension() {
        bail!(
            "checkpoint {} expects semantic_dim {} but the embeddings have dimension {}",
            path.display(),
            c.semantic_dim,
            inputs.labels.dimension()
        );
    }
    Ok(model)
}

pub fn synth_gen(config: &RunConfig) -> Result<()> {
    let spec = config.synthetic_spec();
    let (dataset, table) = generate_synthetic_crossmodal(&spec)?;
    write_dataset(&config.dataset, &dataset)?;
    let path = config.embeddings_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = Vec::new();
    table.write_text(&mut text)?;
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("seed {}", spec.seed);
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    let inputs = load_inputs(config)?;
    let train_split = split_named(&inputs, "train", &config.episode)?;
    let model_config = config.model_config(inputs.dataset.feature_dimension(), inputs.labels.dimension())?;
    let init = Am3Model::new(model_config, config.seed)?;
    let outcome = run_training(
        init,
        &inputs.dataset,
        &inputs.labels,
        train_split,
        &config.train_config()?,
    )?;
    let path = config.checkpoint_path();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    checkpoint::save(&outcome.model, &path)?;
    let trace_path = out_file(config, "loss_trace.csv")?;
    let mut csv = Vec::new();
    report::write_trace(&mut csv, &outcome.trace)?;
    fs::write(&trace_path, csv).with_context(|| format!("writing {}", trace_path.display()))?;
    log::info!("wrote {} and {}", path.display(), trace_path.display());
    Ok(())
}

pub fn eval(config: &RunConfig) -> Result<()> {
    let inputs = load_inputs(config)?;
    let model = load_model(&config.checkpoint_path(), &inputs)?;
    let report = evaluate(
        &model,
        &inputs.dataset,
        &inputs.labels,
        split_named(&inputs, &config.eval.split, &config.episode)?,
        &config.episode,
        config.eval.n_episodes,
        config.eval.queries_per_episode,
        config.seed,
    )?;
    if !report.ci_defined {
        log::warn!("a single episode has no confidence interval; ci95 reported as 0");
    }
    let mut episodes = Vec::new();
    report::write_episode_accuracies(&mut episodes, &report)?;
    let episodes_path = out_file(config, "eval_episodes.csv")?;
    fs::write(&episodes_path, episodes).with_context(|| format!("writing {}", episodes_path.display()))?;
    let mut summary = Vec::new();
    report::write_eval_summary(&mut summary, std::slice::from_ref(&report))?;
    emit(&out_file(config, "eval.csv")?, &summary)
}

pub fn lambda_stats(config: &RunConfig, checkpoints: &[PathBuf]) -> Result<()> {
    let inputs = load_inputs(config)?;
    let shots = &config.eval.shots;
    let paths: Vec<PathBuf> = match checkpoints.len() {
        0 | 1 => vec![config.checkpoint_path(); shots.len()],
        n if n == shots.len() => checkpoints.to_vec(),
        n => bail!("{n} checkpoints for {} shot counts; give one, or one per shot count", shots.len()),
    };
    let n_way = config.episode.n_way;
    let mut rows = Vec::with_capacity(shots.len());
    for (path, &k) in paths.iter().zip(shots) {
        let split = split_named(&inputs, &config.eval.split, &EpisodeConfig::new(n_way, k, 1)?)?;
        let model = load_model(path, &inputs)?;
        rows.extend(lambda_statistics(
            &model,
            &inputs.dataset,
            &inputs.labels,
            split,
            n_way,
            &[k],
            config.eval.n_episodes,
            config.seed,
        )?);
    }
    let mut csv = Vec::new();
    report::write_lambda_rows(&mut csv, &rows)?;
    emit(&out_file(config, "lambda_stats.csv")?, &csv)
}

pub fn ablate(config: &RunConfig, with_control: bool) -> Result<()> {
    let inputs = load_inputs(config)?;
    split_named(&inputs, "train", &config.episode)?;
    split_named(&inputs, "test", &config.episode)?;
    let model = config.model_config(inputs.dataset.feature_dimension(), inputs.labels.dimension())?;
    let train = config.train_config()?;
    let eval = config.eval_settings();
    let experiment = Experiment {
        dataset: &inputs.dataset,
        labels: &inputs.labels,
        split: &inputs.split,
        model: &model,
        train: &train,
        eval: &eval,
    };
    let mut rows: Vec<(Option<am3::ConditioningMode>, EvalReport)> = ablation_run(&experiment, &config.eval.modes)?
        .into_iter()
        .map(|(m, r)| (Some(m), r))
        .collect();
    if with_control {
        rows.push((None, experiment.run(PrototypeRule::Fixed(1.0))?.report));
    }
    let mut csv = Vec::new();
    report::write_ablation(&mut csv, &rows)?;
    emit(&out_file(config, "ablation.csv")?, &csv)
}

pub fn plot(config: &RunConfig, csv: &Path, kind: &str, output: Option<&Path>) -> Result<()> {
    let kind: PlotKind = kind.parse()?;
    let file = fs::File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    let table = Table::read(file).with_context(|| format!("reading {}", csv.display()))?;
    let series = series_from_table(&table, kind).with_context(|| format!("plotting {}", csv.display()))?;
    let svg = render_svg(kind, &series)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => out_file(config, &format!("{}.svg", kind.as_str()))?,
    };
    fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
