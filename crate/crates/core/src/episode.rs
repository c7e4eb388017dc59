//! N-way K-shot episode sampling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub k_query: usize,
}

impl EpisodeConfig {
    pub fn new(n_way: usize, k_shot: usize, k_query: usize) -> Result<Self> {
        let c = Self {
            n_way,
            k_shot,
            k_query,
        };
        c.validate()?;
        Ok(c)
    }

    /// `n_way = 1` is accepted as a degenerate task.
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.k_query == 0 {
            return Err(Error::Config(format!(
                "n_way, k_shot and k_query must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn samples_per_category(&self) -> usize {
        self.k_shot + self.k_query
    }
}

/// One labeled sample inside an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSample {
    pub features: Vec<f64>,
    /// Episode-local class in `0..n_way`.
    pub class: usize,
    /// Position of the sample within its category in the dataset.
    pub position: usize,
}

/// Support and query sets over `n_way` categories.
///
/// Class `i` is the `i`-th smallest sampled category id. Both sets are
/// grouped by class in increasing order.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub category_ids: Vec<String>,
    pub support: Vec<EpisodeSample>,
    pub query: Vec<EpisodeSample>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.category_ids.len()
    }

    /// Support row indices of each class, in class order.
    pub fn support_segments(&self) -> Vec<Vec<usize>> {
        let mut segments = vec![Vec::new(); self.n_way()];
        for (i, s) in self.support.iter().enumerate() {
            segments[s.class].push(i);
        }
        segments
    }

    pub fn query_targets(&self) -> Vec<usize> {
        self.query.iter().map(|q| q.class).collect()
    }
}

/// Checks that `split` can feed episodes of shape `config`.
pub fn check_split(dataset: &LabeledDataset, split: &[String], config: &EpisodeConfig) -> Result<()> {
    config.validate()?;
    if split.len() < config.n_way {
        return Err(Error::Config(format!(
            "{}-way episodes need {} categories, split has {} (short by {})",
            config.n_way,
            config.n_way,
            split.len(),
            config.n_way - split.len()
        )));
    }
    let need = config.samples_per_category();
    for id in split {
        let category = dataset
            .category(id)
            .ok_or_else(|| Error::Config(format!("split names unknown category {id}")))?;
        let have = category.samples.len();
        if have < need {
            return Err(Error::Config(format!(
                "category {id} has {have} samples, episodes need {need} (short by {})",
                need - have
            )));
        }
    }
    Ok(())
}

/// Samples one episode; does not re-validate the split.
fn draw<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    split: &[String],
    config: &EpisodeConfig,
    rng: &mut R,
) -> Episode {
    let mut category_ids: Vec<String> = index::sample(rng, split.len(), config.n_way)
        .into_iter()
        .map(|i| split[i].clone())
        .collect();
    category_ids.sort();

    let mut support = Vec::with_capacity(config.n_way * config.k_shot);
    let mut query = Vec::with_capacity(config.n_way * config.k_query);
    for (class, id) in category_ids.iter().enumerate() {
        let samples = &dataset.category(id).expect("validated split").samples;
        let picks = index::sample(rng, samples.len(), config.samples_per_category()).into_vec();
        for (j, &position) in picks.iter().enumerate() {
            let sample = EpisodeSample {
                features: samples[position].clone(),
                class,
                position,
            };
            if j < config.k_shot {
                support.push(sample);
            } else {
                query.push(sample);
            }
        }
    }
    Episode {
        category_ids,
        support,
        query,
    }
}

/// Draws `n_way` categories and, for each, `k_shot + k_query` distinct samples.
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    split: &[String],
    config: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode> {
    check_split(dataset, split, config)?;
    Ok(draw(dataset, split, config, rng))
}

/// A reproducible sequence of episodes driven by one seeded generator.
pub struct EpisodeStream<'a> {
    dataset: &'a LabeledDataset,
    split: &'a [String],
    config: EpisodeConfig,
    rng: ChaCha8Rng,
    remaining: usize,
}

impl Iterator for EpisodeStream<'_> {
    type Item = Episode;

    fn next(&mut self) -> Option<Episode> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(draw(self.dataset, self.split, &self.config, &mut self.rng))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn episode_stream<'a>(
    dataset: &'a LabeledDataset,
    split: &'a [String],
    config: EpisodeConfig,
    seed: u64,
    count: usize,
) -> Result<EpisodeStream<'a>> {
    check_split(dataset, split, &config)?;
    Ok(EpisodeStream {
        dataset,
        split,
        config,
        rng: ChaCha8Rng::seed_from_u64(seed),
        remaining: count,
    })
}

/// Generator for the `index`-th episode of a seeded evaluation run.
///
/// Each index gets its own stream, so episodes can be drawn in any order.
pub fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
