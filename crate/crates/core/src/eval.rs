//! Seeded episodic evaluation and summary statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::embedding::LabelEmbeddings;
use crate::episode::{check_split, indexed_rng, sample_episode, EpisodeConfig};
use crate::error::{Error, Result};
use crate::model::Am3Model;

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_episode: usize,
    pub mean_accuracy: f64,
    pub ci95_halfwidth: f64,
    /// False when fewer than two episodes make the interval meaningless; the
    /// half-width is then reported as zero.
    pub ci_defined: bool,
    pub lambda_mean: f64,
    pub lambda_std: f64,
    pub per_episode_accuracies: Vec<f64>,
}

/// `1.96 · s / √n` with the sample standard deviation `s`; `(0, false)` for n < 2.
pub fn ci95_halfwidth(values: &[f64]) -> (f64, bool) {
    let n = values.len();
    if n < 2 {
        return (0.0, false);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    (Z95 * sd / (n as f64).sqrt(), true)
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `2su / (s + u)`, zero when both are zero.
pub fn harmonic_accuracy(seen: f64, unseen: f64) -> Result<f64> {
    for (name, v) in [("seen", seen), ("unseen", unseen)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Usage(format!("{name} accuracy {v} outside [0, 1]")));
        }
    }
    if seen + unseen == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * seen * unseen / (seen + unseen))
}

/// Episode shape used for evaluation: `k_query` is replaced by
/// `queries_per_episode / n_way`, which must divide evenly.
pub fn evaluation_episode_config(base: &EpisodeConfig, queries_per_episode: usize) -> Result<EpisodeConfig> {
    base.validate()?;
    if queries_per_episode == 0 || !queries_per_episode.is_multiple_of(base.n_way) {
        return Err(Error::Config(format!(
            "{queries_per_episode} queries per episode cannot be split evenly over {} classes",
            base.n_way
        )));
    }
    EpisodeConfig::new(base.n_way, base.k_shot, queries_per_episode / base.n_way)
}

struct EpisodeResult {
    accuracy: f64,
    lambdas: Vec<f64>,
}

/// Mean query accuracy over `n_episodes` evaluation-mode episodes.
///
/// Episode `i` is drawn from its own stream of `seed`, so the result does not
/// depend on how episodes are scheduled across threads.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &Am3Model,
    dataset: &LabeledDataset,
    labels: &LabelEmbeddings,
    split: &[String],
    episode_config: &EpisodeConfig,
    n_episodes: usize,
    queries_per_episode: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let config = evaluation_episode_config(episode_config, queries_per_episode)?;
    check_split(dataset, split, &config)?;
    let results = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = indexed_rng(seed, i as u64);
            let episode = sample_episode(dataset, split, &config, &mut rng)?;
            let prediction = model.predict_episode(&episode, labels)?;
            Ok(EpisodeResult {
                accuracy: prediction.accuracy(&episode),
                lambdas: prediction.lambdas,
            })
        })
        .collect::<Result<Vec<EpisodeResult>>>()?;

    let per_episode_accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let lambdas: Vec<f64> = results.iter().flat_map(|r| r.lambdas.iter().copied()).collect();
    let mean_accuracy = per_episode_accuracies.iter().sum::<f64>() / n_episodes as f64;
    let (ci95_halfwidth, ci_defined) = ci95_halfwidth(&per_episode_accuracies);
    if !ci_defined {
        log::warn!("confidence interval undefined for a single episode; reporting 0");
    }
    let (lambda_mean, lambda_std) = mean_and_std(&lambdas);
    Ok(EvalReport {
        n_episodes,
        n_way: config.n_way,
        k_shot: config.k_shot,
        queries_per_episode,
        mean_accuracy,
        ci95_halfwidth,
        ci_defined,
        lambda_mean,
        lambda_std,
        per_episode_accuracies,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub k_shot: usize,
    pub lambda_mean: f64,
    pub lambda_std: f64,
}

/// Mixing-coefficient statistics over `episodes` evaluation episodes per shot count.
///
/// Every `(episode, category)` coefficient counts once; in mode `wq` every
/// `(episode, query, category)` one does.
#[allow(clippy::too_many_arguments)]
pub fn lambda_statistics(
    model: &Am3Model,
    dataset: &LabeledDataset,
    labels: &LabelEmbeddings,
    split: &[String],
    n_way: usize,
    shots: &[usize],
    episodes: usize,
    seed: u64,
) -> Result<Vec<LambdaRow>> {
    if shots.is_empty() {
        return Err(Error::Usage("no shot counts given".into()));
    }
    shots
        .iter()
        .map(|&k_shot| {
            let config = EpisodeConfig::new(n_way, k_shot, 1)?;
            let report = evaluate(model, dataset, labels, split, &config, episodes, n_way, seed)?;
            Ok(LambdaRow {
                k_shot,
                lambda_mean: report.lambda_mean,
                lambda_std: report.lambda_std,
            })
        })
        .collect()
}
