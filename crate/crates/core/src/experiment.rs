//! Train-then-evaluate runs that share data, seeds and protocol.

use serde::{Deserialize, Serialize};

use crate::dataset::{CategorySplit, LabeledDataset};
use crate::embedding::LabelEmbeddings;
use crate::episode::EpisodeConfig;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport};
use crate::model::{Am3Model, ConditioningMode, ModelConfig, PrototypeRule};
use crate::train::{train, TrainConfig, TraceRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub episode_config: EpisodeConfig,
    pub n_episodes: usize,
    pub queries_per_episode: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episode_config: EpisodeConfig {
                n_way: 5,
                k_shot: 1,
                k_query: 4,
            },
            n_episodes: 500,
            queries_per_episode: 20,
            seed: 0,
        }
    }
}

/// Everything a train-then-evaluate run needs besides the prototype rule.
#[derive(Clone, Copy, Debug)]
pub struct Experiment<'a> {
    pub dataset: &'a LabeledDataset,
    pub labels: &'a LabelEmbeddings,
    pub split: &'a CategorySplit,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub eval: &'a EvalSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub model: Am3Model,
    pub trace: Vec<TraceRow>,
    pub report: EvalReport,
}

impl Experiment<'_> {
    /// Initializes from `train.seed`, trains on the training split and
    /// evaluates on the test split.
    pub fn run(&self, rule: PrototypeRule) -> Result<RunResult> {
        let config = ModelConfig {
            rule,
            ..self.model.clone()
        };
        let init = Am3Model::new(config, self.train.seed)?;
        let outcome = train(init, self.dataset, self.labels, &self.split.train, self.train)?;
        let report = evaluate(
            &outcome.model,
            self.dataset,
            self.labels,
            &self.split.test,
            &self.eval.episode_config,
            self.eval.n_episodes,
            self.eval.queries_per_episode,
            self.eval.seed,
        )?;
        Ok(RunResult {
            model: outcome.model,
            trace: outcome.trace,
            report,
        })
    }
}

/// One adaptive model per mode, trained and evaluated identically.
pub fn ablation_run(experiment: &Experiment<'_>, modes: &[ConditioningMode]) -> Result<Vec<(ConditioningMode, EvalReport)>> {
    modes
        .iter()
        .map(|&mode| Ok((mode, experiment.run(PrototypeRule::Adaptive(mode))?.report)))
        .collect()
}
