//! Episodic training with SGD, momentum and step annealing.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::embedding::LabelEmbeddings;
use crate::episode::{check_split, indexed_rng, sample_episode, EpisodeConfig};
use crate::error::{Error, Result};
use crate::model::Am3Model;
use crate::optim::{sgd_momentum_step, validate_hyperparameters, StepSchedule};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub initial_lr: f64,
    pub momentum: f64,
    /// 1-based iterations at which the learning rate is divided by `anneal_factor`.
    pub anneal_steps: Vec<usize>,
    pub anneal_factor: f64,
    pub tasks_per_batch: usize,
    /// Total query terms per step. Implied by the other fields; when given it
    /// must equal `tasks_per_batch · n_way · k_query`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries_per_batch: Option<usize>,
    pub episode_config: EpisodeConfig,
    pub dropout_keep: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 600,
            initial_lr: 0.01,
            momentum: 0.9,
            anneal_steps: vec![400],
            anneal_factor: 10.0,
            tasks_per_batch: 2,
            queries_per_batch: None,
            episode_config: EpisodeConfig {
                n_way: 5,
                k_shot: 1,
                k_query: 5,
            },
            dropout_keep: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate_hyperparameters(self.initial_lr, self.momentum)?;
        self.episode_config.validate()?;
        if self.tasks_per_batch == 0 {
            return Err(Error::Config("tasks_per_batch must be positive".into()));
        }
        if let Some(&last) = self.anneal_steps.last() {
            if self.anneal_steps[0] == 0 || last > self.iterations {
                return Err(Error::Config(format!(
                    "anneal steps {:?} must lie in [1, {}]",
                    self.anneal_steps, self.iterations
                )));
            }
        }
        let implied = self.implied_queries_per_batch();
        if let Some(q) = self.queries_per_batch {
            if q != implied {
                return Err(Error::Config(format!(
                    "queries_per_batch {q} does not match {} tasks of {}-way episodes with {} queries per class ({implied})",
                    self.tasks_per_batch, self.episode_config.n_way, self.episode_config.k_query
                )));
            }
        }
        crate::autodiff::validate_keep_probability(self.dropout_keep)?;
        self.schedule().map(|_| ())
    }

    pub fn implied_queries_per_batch(&self) -> usize {
        self.tasks_per_batch * self.episode_config.n_way * self.episode_config.k_query
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.initial_lr, self.anneal_steps.clone(), self.anneal_factor)
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub learning_rate: f64,
    /// Mean episode loss of the batch, before the update.
    pub batch_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Am3Model,
    pub trace: Vec<TraceRow>,
}

/// Runs `config.iterations` SGD steps on episodes drawn from `split`.
///
/// Each step averages the loss and gradients of `tasks_per_batch` fresh
/// training-mode episodes. Episodes and dropout masks come from two
/// independent streams of `config.seed`.
pub fn train(
    mut model: Am3Model,
    dataset: &LabeledDataset,
    labels: &LabelEmbeddings,
    split: &[String],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_split(dataset, split, &config.episode_config)?;
    if dataset.feature_dimension() != model.config().visual_dim {
        return Err(Error::Config(format!(
            "model expects {} visual features, dataset has {}",
            model.config().visual_dim,
            dataset.feature_dimension()
        )));
    }
    model.set_dropout_keep(config.dropout_keep)?;
    let schedule = config.schedule()?;
    let mut episodes = indexed_rng(config.seed, 0);
    let mut dropout = indexed_rng(config.seed, 1);
    let mut trace = Vec::with_capacity(config.iterations);

    for iteration in 1..=config.iterations {
        let learning_rate = schedule.at(iteration);
        let mut total_loss = 0.0;
        let mut total_grads: Option<Vec<Tensor>> = None;
        for _ in 0..config.tasks_per_batch {
            let episode = sample_episode(dataset, split, &config.episode_config, &mut episodes)?;
            let (loss, grads) = model.loss_and_gradients(&episode, labels, true, &mut dropout)?;
            total_loss += loss;
            match total_grads.as_mut() {
                None => total_grads = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_assign(g);
                    }
                }
            }
        }
        let scale = 1.0 / config.tasks_per_batch as f64;
        let batch_loss = total_loss * scale;
        let grads: Vec<Tensor> = total_grads
            .expect("at least one task")
            .into_iter()
            .map(|g| g.map(|v| v * scale))
            .collect();
        if !batch_loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Diverged {
                iteration,
                learning_rate,
                loss: batch_loss,
            });
        }
        sgd_momentum_step(model.parameters_mut(), &grads, learning_rate, config.momentum)?;
        trace.push(TraceRow {
            iteration,
            learning_rate,
            batch_loss,
        });
        log::debug!("iteration {iteration} lr {learning_rate} loss {batch_loss}");
    }
    Ok(TrainOutcome { model, trace })
}
