//! Independent reference implementations used as test oracles.
//!
//! Everything here works on plain `Vec<f64>` and reads only parameter values
//! from the model; no tape, tensor op or library math is reused.
#![allow(dead_code)]

use am3::dataset::LabeledDataset;
use am3::embedding::LabelEmbeddings;
use am3::episode::Episode;
use am3::nn::Mlp;
use am3::synthetic::{generate_synthetic_crossmodal, SyntheticTaskSpec};
use am3::{Am3Model, ConditioningMode, Distance, PrototypeRule};

/// `(weight[in][out], bias[out])` per layer.
pub struct PlainMlp {
    layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl PlainMlp {
    pub fn from_model(mlp: &Mlp) -> Self {
        let layers = mlp
            .layers()
            .iter()
            .map(|l| {
                let w = l.weight.value();
                let (rows, cols) = (w.shape()[0], w.shape()[1]);
                let weight = (0..rows)
                    .map(|r| w.data()[r * cols..(r + 1) * cols].to_vec())
                    .collect();
                (weight, l.bias.value().data().to_vec())
            })
            .collect();
        Self { layers }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut out = b.clone();
            for (xi, row) in h.iter().zip(w) {
                for (o, wij) in out.iter_mut().zip(row) {
                    *o += xi * wij;
                }
            }
            if i + 1 < self.layers.len() {
                for o in &mut out {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            h = out;
        }
        h
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Softmax of `scores`, computed term by term.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn class_means(embedded: &[(usize, Vec<f64>)], n_way: usize) -> Vec<Vec<f64>> {
    let dim = embedded[0].1.len();
    let mut sums = vec![vec![0.0; dim]; n_way];
    let mut counts = vec![0usize; n_way];
    for (c, v) in embedded {
        counts[*c] += 1;
        for (s, x) in sums[*c].iter_mut().zip(v) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|x| x / n as f64).collect())
        .collect()
}

pub struct BruteForce {
    pub probabilities: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Mean query negative log-likelihood of the model's prototype rule,
/// evaluated query by query.
pub fn brute_force_episode(model: &Am3Model, episode: &Episode, labels: &LabelEmbeddings) -> BruteForce {
    let config = model.config();
    let f = PlainMlp::from_model(model.encoder());
    let g = PlainMlp::from_model(model.transform());
    let h = PlainMlp::from_model(model.mixer());
    let n = episode.n_way();

    let supports: Vec<(usize, Vec<f64>)> = episode
        .support
        .iter()
        .map(|s| (s.class, f.apply(&s.features)))
        .collect();
    let p = class_means(&supports, n);
    let e: Vec<Vec<f64>> = episode
        .category_ids
        .iter()
        .map(|id| labels.get(id).expect("label").to_vec())
        .collect();
    let w: Vec<Vec<f64>> = e.iter().map(|v| g.apply(v)).collect();
    let shots = episode.support.len() as f64 / n as f64;

    let mut probabilities = Vec::new();
    let mut total = 0.0;
    for q in &episode.query {
        let fq = f.apply(&q.features);
        let scores: Vec<f64> = (0..n)
            .map(|c| {
                let lambda = match config.rule {
                    PrototypeRule::Fixed(l) => l,
                    PrototypeRule::Alignment => shots / (shots + 1.0),
                    PrototypeRule::Adaptive(mode) => {
                        let input = match mode {
                            ConditioningMode::W => w[c].clone(),
                            ConditioningMode::E => e[c].clone(),
                            ConditioningMode::P => p[c].clone(),
                            ConditioningMode::WQ => w[c].iter().chain(&fq).cloned().collect(),
                        };
                        logistic(h.apply(&input)[0])
                    }
                };
                let proto: Vec<f64> = p[c]
                    .iter()
                    .zip(&w[c])
                    .map(|(pv, wv)| lambda * pv + (1.0 - lambda) * wv)
                    .collect();
                let d = sq_dist(&fq, &proto);
                match config.distance {
                    Distance::SquaredEuclidean => -d,
                    Distance::Euclidean => -d.sqrt(),
                }
            })
            .collect();
        let probs = softmax(&scores);
        total -= probs[q.class].ln();
        probabilities.push(probs);
    }
    BruteForce {
        probabilities,
        loss: total / episode.query.len() as f64,
    }
}

/// Class probabilities of a plain prototypical network using only the encoder.
pub fn protonet_probabilities(encoder: &Mlp, episode: &Episode) -> Vec<Vec<f64>> {
    let f = PlainMlp::from_model(encoder);
    let supports: Vec<(usize, Vec<f64>)> = episode
        .support
        .iter()
        .map(|s| (s.class, f.apply(&s.features)))
        .collect();
    let p = class_means(&supports, episode.n_way());
    episode
        .query
        .iter()
        .map(|q| {
            let fq = f.apply(&q.features);
            let scores: Vec<f64> = p.iter().map(|pc| -sq_dist(&fq, pc)).collect();
            softmax(&scores)
        })
        .collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Half-width of a normal 95% interval from the unbiased variance, using
/// the one-pass sum-of-squares formula.
pub fn oracle_ci95(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let s1: f64 = values.iter().sum();
    let s2: f64 = values.iter().map(|v| v * v).sum();
    let var = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
    1.96 * (var / n).sqrt()
}

/// `1 / mean(1/s, 1/u)`, the reciprocal form of the harmonic mean.
pub fn oracle_harmonic(s: f64, u: f64) -> f64 {
    if s == 0.0 || u == 0.0 {
        return 0.0;
    }
    1.0 / ((1.0 / s + 1.0 / u) / 2.0)
}

pub fn synthetic(spec: SyntheticTaskSpec) -> (LabeledDataset, LabelEmbeddings) {
    let (d, t) = generate_synthetic_crossmodal(&spec).expect("synthetic data");
    let labels = LabelEmbeddings::resolve_dataset(&d, &t, spec.seed, None).expect("labels");
    (d, labels)
}

/// Data for the toy gradient episodes: 4-dimensional features and labels.
pub fn toy_task(seed: u64) -> (LabeledDataset, LabelEmbeddings) {
    synthetic(SyntheticTaskSpec {
        n_categories: 6,
        visual_dim: 4,
        semantic_dim: 4,
        samples_per_category: 4,
        seed,
        ..Default::default()
    })
}

pub fn toy_model_config(rule: PrototypeRule) -> am3::ModelConfig {
    am3::ModelConfig {
        visual_dim: 4,
        semantic_dim: 4,
        prototype_dim: 3,
        encoder_hidden: vec![8],
        transform_hidden: 16,
        mixer_hidden: 16,
        rule,
        ..Default::default()
    }
}

fn sample(features: &[f64], class: usize, position: usize) -> am3::episode::EpisodeSample {
    am3::episode::EpisodeSample {
        features: features.to_vec(),
        class,
        position,
    }
}

/// Ten small episodes written out coordinate by coordinate, each paired
/// with a model and the label vectors of its categories.
pub fn micro_cases() -> Vec<(String, Am3Model, Episode, LabelEmbeddings)> {
    let mut labels = LabelEmbeddings::new(2);
    labels.insert("a", vec![1.0, 0.0]).unwrap();
    labels.insert("b", vec![0.0, 1.0]).unwrap();
    labels.insert("c", vec![-0.5, -0.5]).unwrap();

    let two_way = Episode {
        category_ids: vec!["a".into(), "b".into()],
        support: vec![sample(&[0.0, 0.0], 0, 0), sample(&[2.0, 1.0], 1, 0)],
        query: vec![sample(&[0.5, 0.0], 0, 1), sample(&[1.5, 1.5], 1, 1)],
    };
    let two_shot = Episode {
        category_ids: vec!["a".into(), "b".into()],
        support: vec![
            sample(&[0.0, 0.0], 0, 0),
            sample(&[0.4, -0.2], 0, 1),
            sample(&[2.0, 1.0], 1, 0),
            sample(&[1.0, 2.0], 1, 1),
        ],
        query: vec![
            sample(&[0.3, 0.1], 0, 2),
            sample(&[1.2, 0.9], 0, 3),
            sample(&[1.6, 1.4], 1, 2),
        ],
    };
    let three_way = Episode {
        category_ids: vec!["a".into(), "b".into(), "c".into()],
        support: vec![
            sample(&[1.0, 0.0], 0, 0),
            sample(&[0.0, 1.0], 1, 0),
            sample(&[-1.0, -1.0], 2, 0),
        ],
        query: vec![
            sample(&[0.8, 0.1], 0, 1),
            sample(&[0.2, 0.9], 1, 1),
            sample(&[-0.7, -0.4], 2, 1),
            sample(&[0.0, 0.0], 2, 2),
        ],
    };
    let one_way = Episode {
        category_ids: vec!["c".into()],
        support: vec![sample(&[1.0, 1.0], 0, 0)],
        query: vec![sample(&[3.0, -2.0], 0, 1)],
    };

    let identity = |rule: PrototypeRule, distance: Distance| {
        let config = am3::ModelConfig {
            visual_dim: 2,
            semantic_dim: 2,
            prototype_dim: 2,
            encoder_hidden: vec![],
            transform_hidden: 3,
            mixer_hidden: 3,
            rule,
            distance,
            ..Default::default()
        };
        let seeded = Am3Model::new(config.clone(), 11).unwrap();
        Am3Model::from_parts(
            config,
            11,
            Mlp::identity(2),
            seeded.transform().clone(),
            seeded.mixer().clone(),
        )
        .unwrap()
    };
    let seeded = |rule: PrototypeRule, distance: Distance, seed: u64| {
        Am3Model::new(
            am3::ModelConfig {
                visual_dim: 2,
                semantic_dim: 2,
                prototype_dim: 3,
                encoder_hidden: vec![4],
                transform_hidden: 5,
                mixer_hidden: 5,
                rule,
                distance,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    };
    let sq = Distance::SquaredEuclidean;
    let adaptive = PrototypeRule::Adaptive;
    vec![
        ("identity encoder, control".into(), identity(PrototypeRule::Fixed(1.0), sq), two_way.clone()),
        ("identity encoder, mode w".into(), identity(adaptive(ConditioningMode::W), sq), two_way.clone()),
        ("identity encoder, fixed 0.25".into(), identity(PrototypeRule::Fixed(0.25), sq), two_way.clone()),
        ("identity encoder, euclid".into(), identity(adaptive(ConditioningMode::E), Distance::Euclidean), two_way),
        ("two shots, mode p".into(), seeded(adaptive(ConditioningMode::P), sq, 1), two_shot.clone()),
        ("two shots, alignment".into(), seeded(PrototypeRule::Alignment, sq, 2), two_shot.clone()),
        ("two shots, mode wq".into(), seeded(adaptive(ConditioningMode::WQ), sq, 3), two_shot),
        ("three way, mode e".into(), seeded(adaptive(ConditioningMode::E), sq, 4), three_way.clone()),
        ("three way, wq euclid".into(), seeded(adaptive(ConditioningMode::WQ), Distance::Euclidean, 5), three_way),
        ("one way, mode w".into(), seeded(adaptive(ConditioningMode::W), sq, 6), one_way),
    ]
    .into_iter()
    .map(|(name, model, episode)| (name, model, episode, labels.clone()))
    .collect()
}

/// Synthetic benchmark data: 40 categories whose 1-shot visual prototypes
/// are noisy and whose label vectors are informative.
pub struct Benchmark {
    pub dataset: LabeledDataset,
    pub labels: LabelEmbeddings,
    pub split: am3::dataset::CategorySplit,
    pub model: am3::ModelConfig,
    pub seed: u64,
}

impl Benchmark {
    pub fn new(seed: u64) -> Self {
        let spec = SyntheticTaskSpec {
            seed,
            ..Default::default()
        };
        let (dataset, labels) = synthetic(spec.clone());
        let split = am3::dataset::split_categories(&dataset, (0.6, 0.15, 0.25), seed, 5).unwrap();
        let model = am3::ModelConfig {
            visual_dim: spec.visual_dim,
            semantic_dim: spec.semantic_dim,
            ..Default::default()
        };
        Self {
            dataset,
            labels,
            split,
            model,
            seed,
        }
    }

    pub fn train_config(&self, k_shot: usize) -> am3::train::TrainConfig {
        am3::train::TrainConfig {
            episode_config: am3::episode::EpisodeConfig::new(5, k_shot, 5).unwrap(),
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn eval_settings(&self, k_shot: usize) -> am3::experiment::EvalSettings {
        am3::experiment::EvalSettings {
            episode_config: am3::episode::EpisodeConfig::new(5, k_shot, 4).unwrap(),
            n_episodes: 500,
            queries_per_episode: 20,
            seed: self.seed + 1000,
        }
    }

    /// Trains on the training split with `k_shot` episodes and evaluates
    /// on the test split at the same shot count.
    pub fn run(&self, rule: PrototypeRule, k_shot: usize) -> am3::experiment::RunResult {
        let train = self.train_config(k_shot);
        let eval = self.eval_settings(k_shot);
        am3::experiment::Experiment {
            dataset: &self.dataset,
            labels: &self.labels,
            split: &self.split,
            model: &self.model,
            train: &train,
            eval: &eval,
        }
        .run(rule)
        .expect("benchmark run")
    }
}
