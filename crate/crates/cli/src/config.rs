//! Run configuration: a TOML file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use am3::episode::EpisodeConfig;
use am3::experiment::EvalSettings;
use am3::synthetic::SyntheticTaskSpec;
use am3::train::TrainConfig;
use am3::{ConditioningMode, Distance, ModelConfig, PrototypeRule};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: PathBuf,
    /// Defaults to `<dataset>/embeddings.txt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/model.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub mode: ConditioningMode,
    /// Fixed mixing coefficient; `1.0` is the visual-only control.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_fixed: Option<f64>,
    /// Non-adaptive prototype `(Σ r + w) / (K + 1)`.
    pub alignment: bool,
    pub distance: Distance,
    pub episode: EpisodeConfig,
    pub train: TrainSection,
    pub network: NetworkSection,
    pub eval: EvalSection,
    pub split: SplitSection,
    pub synthetic: SyntheticSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub initial_lr: f64,
    pub momentum: f64,
    pub anneal_steps: Vec<usize>,
    pub anneal_factor: f64,
    pub tasks_per_batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries_per_batch: Option<usize>,
    pub dropout_keep: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub prototype_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub transform_hidden: usize,
    pub mixer_hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_episodes: usize,
    pub queries_per_episode: usize,
    /// Which category split to evaluate on: `train`, `val` or `test`.
    pub split: String,
    pub shots: Vec<usize>,
    pub modes: Vec<ConditioningMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_categories: usize,
    pub visual_dim: usize,
    pub semantic_dim: usize,
    pub visual_spread: f64,
    pub visual_separation: f64,
    pub semantic_separation: f64,
    pub semantic_noise: f64,
    pub samples_per_category: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            dataset: PathBuf::from("data"),
            embeddings: None,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            mode: ConditioningMode::W,
            lambda_fixed: None,
            alignment: false,
            distance: Distance::SquaredEuclidean,
            episode: train.episode_config,
            train: TrainSection::default(),
            network: NetworkSection::default(),
            eval: EvalSection::default(),
            split: SplitSection::default(),
            synthetic: SyntheticSection::default(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            initial_lr: t.initial_lr,
            momentum: t.momentum,
            anneal_steps: t.anneal_steps,
            anneal_factor: t.anneal_factor,
            tasks_per_batch: t.tasks_per_batch,
            queries_per_batch: t.queries_per_batch,
            dropout_keep: t.dropout_keep,
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            prototype_dim: m.prototype_dim,
            encoder_hidden: m.encoder_hidden,
            transform_hidden: m.transform_hidden,
            mixer_hidden: m.mixer_hidden,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalSettings::default();
        Self {
            n_episodes: e.n_episodes,
            queries_per_episode: e.queries_per_episode,
            split: "test".into(),
            shots: vec![1, 5, 10],
            modes: ConditioningMode::ALL.to_vec(),
        }
    }
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.15,
            test: 0.25,
        }
    }
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticTaskSpec::default();
        Self {
            n_categories: s.n_categories,
            visual_dim: s.visual_dim,
            semantic_dim: s.semantic_dim,
            visual_spread: s.visual_spread,
            visual_separation: s.visual_separation,
            semantic_separation: s.semantic_separation,
            semantic_noise: s.semantic_noise,
            samples_per_category: s.samples_per_category,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.embeddings
            .clone()
            .unwrap_or_else(|| self.dataset.join("embeddings.txt"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn rule(&self) -> Result<PrototypeRule> {
        let rule = match (self.lambda_fixed, self.alignment) {
            (Some(_), true) => bail!("--lambda-fixed and --alignment are mutually exclusive"),
            (Some(l), false) => PrototypeRule::Fixed(l),
            (None, true) => PrototypeRule::Alignment,
            (None, false) => PrototypeRule::Adaptive(self.mode),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn synthetic_spec(&self) -> SyntheticTaskSpec {
        let s = &self.synthetic;
        SyntheticTaskSpec {
            n_categories: s.n_categories,
            visual_dim: s.visual_dim,
            semantic_dim: s.semantic_dim,
            visual_spread: s.visual_spread,
            visual_separation: s.visual_separation,
            semantic_separation: s.semantic_separation,
            semantic_noise: s.semantic_noise,
            samples_per_category: s.samples_per_category,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, visual_dim: usize, semantic_dim: usize) -> Result<ModelConfig> {
        let n = &self.network;
        let config = ModelConfig {
            visual_dim,
            semantic_dim,
            prototype_dim: n.prototype_dim,
            encoder_hidden: n.encoder_hidden.clone(),
            transform_hidden: n.transform_hidden,
            mixer_hidden: n.mixer_hidden,
            keep_probability: self.train.dropout_keep,
            rule: self.rule()?,
            distance: self.distance,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let config = TrainConfig {
            iterations: t.iterations,
            initial_lr: t.initial_lr,
            momentum: t.momentum,
            anneal_steps: t.anneal_steps.clone(),
            anneal_factor: t.anneal_factor,
            tasks_per_batch: t.tasks_per_batch,
            queries_per_batch: t.queries_per_batch,
            episode_config: self.episode,
            dropout_keep: t.dropout_keep,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            episode_config: self.episode,
            n_episodes: self.eval.n_episodes,
            queries_per_episode: self.eval.queries_per_episode,
            seed: self.seed,
        }
    }

    /// Parse-time checks of everything downstream modules will enforce.
    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.rule()?;
        self.train_config()?;
        self.synthetic_spec().validate()?;
        if !["train", "val", "test"].contains(&self.eval.split.as_str()) {
            bail!("eval split must be train, val or test, got {:?}", self.eval.split);
        }
        if self.eval.shots.contains(&0) {
            bail!("shot counts must be positive");
        }
        Ok(())
    }
}
