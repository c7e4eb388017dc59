//! The adaptive cross-modal prototype classifier.
//!
//! An episode flows through three networks:
//!
//! * the visual encoder `f` embeds support and query features;
//! * the semantic transform `g` maps each category's label vector into the
//!   same space;
//! * the mixing network `h` produces a logit whose sigmoid weights the
//!   visual prototype against the transformed label vector.
//!
//! Queries are scored by negative distance to the mixed prototypes and the
//! loss is the mean negative log-likelihood of the true class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::embedding::LabelEmbeddings;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::nn::{Mlp, NoRng};
use crate::ops;
use crate::optim::Parameter;
use crate::prototype::{self, Distance};
use crate::tensor::Tensor;

/// Input fed to the mixing network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditioningMode {
    /// Transformed label embedding `w_c`.
    #[default]
    #[serde(rename = "w")]
    W,
    /// Raw label embedding `e_c`.
    #[serde(rename = "e")]
    E,
    /// Visual prototype `p_c`.
    #[serde(rename = "p")]
    P,
    /// `w_c` concatenated with the query embedding; one coefficient per
    /// (query, category) pair.
    #[serde(rename = "wq")]
    WQ,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 4] = [Self::W, Self::E, Self::P, Self::WQ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::W => "w",
            Self::E => "e",
            Self::P => "p",
            Self::WQ => "wq",
        }
    }
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(Self::W),
            "e" => Ok(Self::E),
            "p" => Ok(Self::P),
            "wq" => Ok(Self::WQ),
            other => Err(Error::Usage(format!(
                "unknown conditioning mode {other:?} (valid modes: w, e, p, wq)"
            ))),
        }
    }
}

/// How category prototypes are formed from the two modalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeRule {
    /// Learned per-category coefficient from the mixing network.
    Adaptive(ConditioningMode),
    /// Constant coefficient; `1.0` is the visual-only prototypical network.
    Fixed(f64),
    /// `(Σ r_i + w_c) / (K + 1)`: supports and label vector weighted equally.
    Alignment,
}

impl Default for PrototypeRule {
    fn default() -> Self {
        PrototypeRule::Adaptive(ConditioningMode::W)
    }
}

impl PrototypeRule {
    /// Mode that fixes the mixing network's input width.
    pub fn conditioning(&self) -> ConditioningMode {
        match self {
            PrototypeRule::Adaptive(m) => *m,
            _ => ConditioningMode::W,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PrototypeRule::Fixed(l) = self {
            if !(0.0..=1.0).contains(l) {
                return Err(Error::Config(format!("fixed lambda must be in [0, 1], got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub semantic_dim: usize,
    pub prototype_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub transform_hidden: usize,
    pub mixer_hidden: usize,
    /// Dropout keep probability for the hidden layers of `g` and `h`.
    pub keep_probability: f64,
    pub rule: PrototypeRule,
    pub distance: Distance,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_dim: 32,
            semantic_dim: 32,
            prototype_dim: 32,
            encoder_hidden: vec![64],
            transform_hidden: 300,
            mixer_hidden: 300,
            keep_probability: 0.7,
            rule: PrototypeRule::default(),
            distance: Distance::SquaredEuclidean,
        }
    }
}

impl ModelConfig {
    pub fn mixer_input_dim(&self) -> usize {
        match self.rule.conditioning() {
            ConditioningMode::W | ConditioningMode::P => self.prototype_dim,
            ConditioningMode::E => self.semantic_dim,
            ConditioningMode::WQ => 2 * self.prototype_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        crate::autodiff::validate_keep_probability(self.keep_probability)
    }
}

/// Leaves for every model parameter on one tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    encoder: Vec<Var>,
    transform: Vec<Var>,
    mixer: Vec<Var>,
}

impl BoundParams {
    /// In [`Am3Model::parameters`] order.
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.encoder
            .iter()
            .chain(&self.transform)
            .chain(&self.mixer)
            .copied()
    }
}

/// Handles produced by recording one episode.
#[derive(Clone, Debug)]
pub struct EpisodeGraph {
    /// Negative distances, `[queries, n_way]`.
    pub scores: Var,
    /// Mixing coefficients: `[n_way]`, or `[queries · n_way]` in mode `wq`.
    pub lambdas: Var,
    pub loss: Var,
}

/// Evaluation-mode outputs for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodePrediction {
    /// Class probabilities per query.
    pub probabilities: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub loss: f64,
}

impl EpisodePrediction {
    pub fn predicted_classes(&self) -> Vec<usize> {
        self.probabilities.iter().map(|p| ops::argmax(p)).collect()
    }

    pub fn accuracy(&self, episode: &Episode) -> f64 {
        let hits = self
            .predicted_classes()
            .iter()
            .zip(&episode.query)
            .filter(|(p, q)| **p == q.class)
            .count();
        hits as f64 / episode.query.len() as f64
    }
}

/// Parameters `θ = {θ_f, θ_g, θ_h}` with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Am3Model {
    config: ModelConfig,
    seed: u64,
    #[serde(rename = "f")]
    encoder: Mlp,
    #[serde(rename = "g")]
    transform: Mlp,
    #[serde(rename = "h")]
    mixer: Mlp,
}

impl Am3Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::new(
            config.visual_dim,
            &config.encoder_hidden,
            config.prototype_dim,
            1.0,
            &mut rng,
        )?;
        let transform = Mlp::new(
            config.semantic_dim,
            &[config.transform_hidden],
            config.prototype_dim,
            config.keep_probability,
            &mut rng,
        )?;
        let mixer = Mlp::new(
            config.mixer_input_dim(),
            &[config.mixer_hidden],
            1,
            config.keep_probability,
            &mut rng,
        )?;
        Ok(Self {
            config,
            seed,
            encoder,
            transform,
            mixer,
        })
    }

    /// Assembles a model from explicit networks, checking their widths.
    pub fn from_parts(config: ModelConfig, seed: u64, encoder: Mlp, transform: Mlp, mixer: Mlp) -> Result<Self> {
        config.validate()?;
        let model = Self {
            config,
            seed,
            encoder,
            transform,
            mixer,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        for mlp in [&self.encoder, &self.transform, &self.mixer] {
            mlp.check()?;
        }
        let c = &self.config;
        let checks = [
            ("encoder input", self.encoder.input_dim(), c.visual_dim),
            ("encoder output", self.encoder.output_dim(), c.prototype_dim),
            ("transform input", self.transform.input_dim(), c.semantic_dim),
            ("transform output", self.transform.output_dim(), c.prototype_dim),
            ("mixer input", self.mixer.input_dim(), c.mixer_input_dim()),
            ("mixer output", self.mixer.output_dim(), 1),
        ];
        for (what, have, want) in checks {
            if have != want {
                return Err(Error::Data(format!("{what} width is {have}, configuration says {want}")));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn transform(&self) -> &Mlp {
        &self.transform
    }

    pub fn mixer(&self) -> &Mlp {
        &self.mixer
    }

    pub fn transform_mut(&mut self) -> &mut Mlp {
        &mut self.transform
    }

    pub fn mixer_mut(&mut self) -> &mut Mlp {
        &mut self.mixer
    }

    /// Switches how prototypes are formed. The mixing network must already
    /// have the input width the new rule needs.
    pub fn set_rule(&mut self, rule: PrototypeRule) -> Result<()> {
        let mut config = self.config.clone();
        config.rule = rule;
        config.validate()?;
        if config.mixer_input_dim() != self.mixer.input_dim() {
            return Err(Error::Config(format!(
                "mixing network takes {} inputs, rule {rule:?} needs {}",
                self.mixer.input_dim(),
                config.mixer_input_dim()
            )));
        }
        self.config = config;
        Ok(())
    }

    /// Dropout keep probability of the hidden layers of `g` and `h`.
    pub fn set_dropout_keep(&mut self, keep_probability: f64) -> Result<()> {
        self.transform.set_keep_probability(keep_probability)?;
        self.mixer.set_keep_probability(keep_probability)?;
        self.config.keep_probability = keep_probability;
        Ok(())
    }

    /// Makes `h` output `value` for every input: zero final weights, bias `value`.
    pub fn set_mixer_output(&mut self, value: f64) {
        let last = self.mixer.last_layer_mut();
        let w = Tensor::zeros(last.weight.value().shape());
        last.weight.set_value(w).expect("same shape");
        last.bias.set_value(Tensor::scalar(value)).expect("same shape");
    }

    /// Parameters of `f`, then `g`, then `h`.
    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.encoder
            .parameters()
            .chain(self.transform.parameters())
            .chain(self.mixer.parameters())
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.encoder
            .parameters_mut()
            .chain(self.transform.parameters_mut())
            .chain(self.mixer.parameters_mut())
    }

    /// `("f.0.weight", …)`-style names in [`parameters`](Self::parameters) order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, mlp) in [("f", &self.encoder), ("g", &self.transform), ("h", &self.mixer)] {
            for i in 0..mlp.layers().len() {
                names.push(format!("{prefix}.{i}.weight"));
                names.push(format!("{prefix}.{i}.bias"));
            }
        }
        names
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            encoder: self.encoder.bind(tape),
            transform: self.transform.bind(tape),
            mixer: self.mixer.bind(tape),
        }
    }

    /// Records the forward pass and loss of `episode` on `tape`.
    pub fn record_episode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        episode: &Episode,
        labels: &LabelEmbeddings,
        training: bool,
        rng: &mut R,
    ) -> Result<EpisodeGraph> {
        let n_way = episode.n_way();
        if episode.support.is_empty() || episode.query.is_empty() {
            return Err(Error::Usage("episode needs support and query samples".into()));
        }
        let support_rows: Vec<&[f64]> = episode.support.iter().map(|s| s.features.as_slice()).collect();
        let query_rows: Vec<&[f64]> = episode.query.iter().map(|s| s.features.as_slice()).collect();
        let support = tape.leaf(Tensor::from_rows(&support_rows)?);
        let queries = tape.leaf(Tensor::from_rows(&query_rows)?);

        let support_emb = self.encoder.forward(tape, &params.encoder, support, training, rng)?;
        let query_emb = self.encoder.forward(tape, &params.encoder, queries, training, rng)?;
        let visual = tape.segment_mean(support_emb, episode.support_segments())?;

        let semantic_raw = self.label_matrix(tape, episode, labels)?;
        let n_queries = episode.query.len();

        let distances = match self.config.rule {
            PrototypeRule::Fixed(1.0) => {
                let lambdas = tape.leaf(Tensor::filled(&[n_way], 1.0));
                let d = tape.pairwise_sq_dist(query_emb, visual)?;
                (d, lambdas)
            }
            PrototypeRule::Fixed(_) | PrototypeRule::Alignment => {
                let lambda = match self.config.rule {
                    PrototypeRule::Fixed(l) => l,
                    _ => {
                        let shots = episode.support.len() as f64 / n_way as f64;
                        shots / (shots + 1.0)
                    }
                };
                let semantic = self.transform.forward(tape, &params.transform, semantic_raw, training, rng)?;
                let lambdas = tape.leaf(Tensor::filled(&[n_way], lambda));
                let mixed = tape.convex_mix(lambdas, visual, semantic)?;
                (tape.pairwise_sq_dist(query_emb, mixed)?, lambdas)
            }
            PrototypeRule::Adaptive(mode) => {
                let semantic = self.transform.forward(tape, &params.transform, semantic_raw, training, rng)?;
                if mode == ConditioningMode::WQ {
                    let class_of: Vec<usize> = (0..n_queries).flat_map(|_| 0..n_way).collect();
                    let query_of: Vec<usize> = (0..n_queries).flat_map(|t| std::iter::repeat_n(t, n_way)).collect();
                    let w_pairs = tape.gather_rows(semantic, class_of.clone())?;
                    let q_pairs = tape.gather_rows(query_emb, query_of)?;
                    let p_pairs = tape.gather_rows(visual, class_of)?;
                    let input = tape.concat_cols(w_pairs, q_pairs)?;
                    let logits = self.mixer.forward(tape, &params.mixer, input, training, rng)?;
                    let lambdas = tape.sigmoid(logits);
                    let mixed = tape.convex_mix(lambdas, p_pairs, w_pairs)?;
                    let d = tape.row_sq_dist(q_pairs, mixed)?;
                    let d = tape.reshape(d, &[n_queries, n_way])?;
                    let lambdas = tape.reshape(lambdas, &[n_queries * n_way])?;
                    (d, lambdas)
                } else {
                    let input = match mode {
                        ConditioningMode::W => semantic,
                        ConditioningMode::E => semantic_raw,
                        _ => visual,
                    };
                    let logits = self.mixer.forward(tape, &params.mixer, input, training, rng)?;
                    let lambdas = tape.sigmoid(logits);
                    let lambdas = tape.reshape(lambdas, &[n_way])?;
                    let mixed = tape.convex_mix(lambdas, visual, semantic)?;
                    (tape.pairwise_sq_dist(query_emb, mixed)?, lambdas)
                }
            }
        };
        let (sq, lambdas) = distances;
        let d = match self.config.distance {
            Distance::SquaredEuclidean => sq,
            Distance::Euclidean => tape.sqrt(sq),
        };
        let scores = tape.neg(d);
        let loss = tape.cross_entropy(scores, episode.query_targets())?;
        Ok(EpisodeGraph {
            scores,
            lambdas,
            loss,
        })
    }

    fn label_matrix(&self, tape: &mut Tape, episode: &Episode, labels: &LabelEmbeddings) -> Result<Var> {
        let rows = episode
            .category_ids
            .iter()
            .map(|id| {
                labels
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("no label embedding for category {id}")))
            })
            .collect::<Result<Vec<&[f64]>>>()?;
        let m = Tensor::from_rows(&rows)?;
        if m.cols() != self.config.semantic_dim {
            return Err(Error::dim("label embeddings", m.shape(), &[self.config.semantic_dim]));
        }
        Ok(tape.leaf(m))
    }

    /// Evaluation-mode probabilities, coefficients and loss for one episode.
    pub fn predict_episode(&self, episode: &Episode, labels: &LabelEmbeddings) -> Result<EpisodePrediction> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let graph = self.record_episode(&mut tape, &params, episode, labels, false, &mut NoRng)?;
        let scores = tape.value(graph.scores);
        let probabilities = (0..scores.rows())
            .map(|i| ops::softmax_from_scores(scores.row(i)))
            .collect();
        Ok(EpisodePrediction {
            probabilities,
            lambdas: tape.value(graph.lambdas).data().to_vec(),
            loss: tape.value(graph.loss).item(),
        })
    }

    /// Evaluation-mode loss together with the sign of every ReLU input.
    pub fn loss_and_relu_signs(&self, episode: &Episode, labels: &LabelEmbeddings) -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let graph = self.record_episode(&mut tape, &params, episode, labels, false, &mut NoRng)?;
        Ok((tape.value(graph.loss).item(), tape.relu_signs()))
    }

    /// Mean query negative log-likelihood in evaluation mode.
    pub fn episode_loss(&self, episode: &Episode, labels: &LabelEmbeddings) -> Result<f64> {
        Ok(self.predict_episode(episode, labels)?.loss)
    }

    /// Loss and per-parameter gradients, in [`parameters`](Self::parameters) order.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        episode: &Episode,
        labels: &LabelEmbeddings,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let graph = self.record_episode(&mut tape, &params, episode, labels, training, rng)?;
        let grads: Gradients = tape.backward(graph.loss)?;
        Ok((
            tape.value(graph.loss).item(),
            params.all().map(|v| grads.wrt(v)).collect(),
        ))
    }

    pub fn encode_visual(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_visual_batch(&Tensor::from_rows(&[x])?)?.into_data())
    }

    /// Embeds each row of `x: [batch, visual_dim]`.
    pub fn encode_visual_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.apply(x)
    }

    /// `w_c = g(e_c)` in evaluation mode.
    pub fn transform_semantic(&self, label_vector: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transform.apply(&Tensor::from_rows(&[label_vector])?)?.into_data())
    }

    /// Prototype for a category with no visual support: the transformed label vector.
    pub fn zero_shot_prototype(&self, label_vector: &[f64]) -> Result<Vec<f64>> {
        self.transform_semantic(label_vector)
    }

    /// `sigmoid(h(input))` where `input` is laid out as the conditioning mode requires.
    pub fn mixing_coefficient(&self, input: &[f64]) -> Result<f64> {
        let want = self.config.mixer_input_dim();
        if input.len() != want {
            return Err(Error::Usage(format!(
                "mode {} expects a conditioning input of length {want}, got {}",
                self.config.rule.conditioning(),
                input.len()
            )));
        }
        let out = self.mixer.apply(&Tensor::from_rows(&[input])?)?;
        Ok(ops::sigmoid(out.item()))
    }

    /// Softmax over negative distances using the model's distance.
    pub fn classify<R: AsRef<[f64]>>(&self, query_embedding: &[f64], prototypes: &[R]) -> Result<Vec<f64>> {
        prototype::classify(query_embedding, prototypes, self.config.distance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::EpisodeSample;
    use approx::assert_abs_diff_eq;

    fn config(rule: PrototypeRule) -> ModelConfig {
        ModelConfig {
            visual_dim: 3,
            semantic_dim: 2,
            prototype_dim: 3,
            encoder_hidden: vec![4],
            transform_hidden: 5,
            mixer_hidden: 4,
            keep_probability: 0.7,
            rule,
            distance: Distance::SquaredEuclidean,
        }
    }

    fn sample(features: &[f64], class: usize, position: usize) -> EpisodeSample {
        EpisodeSample {
            features: features.to_vec(),
            class,
            position,
        }
    }

    fn episode() -> (Episode, LabelEmbeddings) {
        let e = Episode {
            category_ids: vec!["a".into(), "b".into()],
            support: vec![sample(&[1.0, 0.0, 0.5], 0, 0), sample(&[-1.0, 0.2, 0.0], 1, 0)],
            query: vec![
                sample(&[0.8, 0.1, 0.4], 0, 1),
                sample(&[-0.7, 0.3, 0.1], 1, 1),
                sample(&[0.1, 0.1, 0.1], 1, 2),
            ],
        };
        let mut labels = LabelEmbeddings::new(2);
        labels.insert("a", vec![0.3, -0.4]).unwrap();
        labels.insert("b", vec![-0.5, 0.9]).unwrap();
        (e, labels)
    }

    #[test]
    fn parses_modes() {
        for m in ConditioningMode::ALL {
            assert_eq!(m.as_str().parse::<ConditioningMode>().unwrap(), m);
        }
        let err = "x".parse::<ConditioningMode>().unwrap_err().to_string();
        assert!(err.contains("w, e, p, wq"));
    }

    #[test]
    fn frozen_mixer_gives_known_lambdas() {
        let mut m = Am3Model::new(config(PrototypeRule::default()), 1).unwrap();
        m.set_mixer_output(0.0);
        assert_eq!(m.mixing_coefficient(&[0.1, 0.2, 0.3]).unwrap(), 0.5);
        m.set_mixer_output(20.0);
        assert!(m.mixing_coefficient(&[5.0, -2.0, 0.0]).unwrap() > 0.9999);
        assert!(matches!(m.mixing_coefficient(&[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_transform_outputs_zero() {
        let mut m = Am3Model::new(config(PrototypeRule::default()), 1).unwrap();
        for p in m.transform_mut().parameters_mut() {
            let z = Tensor::zeros(p.value().shape());
            p.set_value(z).unwrap();
        }
        assert_eq!(m.transform_semantic(&[3.0, -7.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(m.zero_shot_prototype(&[3.0, -7.0]).unwrap(), vec![0.0; 3]);
        assert!(m.transform_semantic(&[1.0]).is_err());
    }

    #[test]
    fn single_class_episode_has_zero_loss() {
        let m = Am3Model::new(config(PrototypeRule::default()), 2).unwrap();
        let (mut e, labels) = episode();
        e.category_ids.truncate(1);
        e.support.truncate(1);
        e.query.truncate(1);
        assert_eq!(m.episode_loss(&e, &labels).unwrap(), 0.0);
    }

    #[test]
    fn equidistant_query_costs_ln2() {
        let mut m = Am3Model::from_parts(
            ModelConfig {
                visual_dim: 2,
                prototype_dim: 2,
                encoder_hidden: vec![],
                ..config(PrototypeRule::Fixed(1.0))
            },
            0,
            Mlp::identity(2),
            Mlp::new(2, &[5], 2, 0.7, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
            Mlp::new(2, &[4], 1, 0.7, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
        )
        .unwrap();
        let e = Episode {
            category_ids: vec!["a".into(), "b".into()],
            support: vec![sample(&[1.0, 0.0], 0, 0), sample(&[-1.0, 0.0], 1, 0)],
            query: vec![sample(&[0.0, 3.0], 0, 1), sample(&[0.0, -2.0], 1, 1)],
        };
        let (_, labels) = episode();
        assert_abs_diff_eq!(m.episode_loss(&e, &labels).unwrap(), 2f64.ln(), epsilon = 1e-15);
        m.set_rule(PrototypeRule::Adaptive(ConditioningMode::W)).unwrap();
        assert!(m.set_rule(PrototypeRule::Adaptive(ConditioningMode::WQ)).is_err());
    }

    #[test]
    fn missing_label_is_a_data_error() {
        let m = Am3Model::new(config(PrototypeRule::default()), 3).unwrap();
        let (e, _) = episode();
        let mut labels = LabelEmbeddings::new(2);
        labels.insert("a", vec![0.0, 0.0]).unwrap();
        assert!(matches!(m.episode_loss(&e, &labels), Err(Error::Data(_))));
    }

    #[test]
    fn visual_only_control_leaves_g_and_h_without_gradient() {
        let m = Am3Model::new(config(PrototypeRule::Fixed(1.0)), 4).unwrap();
        let (e, labels) = episode();
        let (_, grads) = m.loss_and_gradients(&e, &labels, false, &mut NoRng).unwrap();
        let n_f = m.encoder().parameters().count();
        assert!(grads[..n_f].iter().any(|g| g.data().iter().any(|v| *v != 0.0)));
        assert!(grads[n_f..].iter().all(|g| g.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn every_group_gets_gradient_in_every_mode() {
        let (e, labels) = episode();
        for mode in ConditioningMode::ALL {
            let m = Am3Model::new(config(PrototypeRule::Adaptive(mode)), 5).unwrap();
            let (_, grads) = m.loss_and_gradients(&e, &labels, false, &mut NoRng).unwrap();
            let n_f = m.encoder().parameters().count();
            let n_g = m.transform().parameters().count();
            let nonzero = |gs: &[Tensor]| gs.iter().any(|g| g.data().iter().any(|v| *v != 0.0));
            assert!(nonzero(&grads[..n_f]), "{mode}");
            assert!(nonzero(&grads[n_f..n_f + n_g]), "{mode}");
            assert!(nonzero(&grads[n_f + n_g..]), "{mode}");
            let pred = m.predict_episode(&e, &labels).unwrap();
            let expected = if mode == ConditioningMode::WQ { 6 } else { 2 };
            assert_eq!(pred.lambdas.len(), expected);
            assert!(pred.lambdas.iter().all(|l| *l > 0.0 && *l < 1.0));
        }
    }

    #[test]
    fn evaluation_is_repeatable() {
        let m = Am3Model::new(config(PrototypeRule::default()), 6).unwrap();
        let (e, labels) = episode();
        assert_eq!(m.predict_episode(&e, &labels).unwrap(), m.predict_episode(&e, &labels).unwrap());
        let x = [0.2, -0.1, 0.9];
        assert_eq!(m.encode_visual(&x).unwrap(), m.encode_visual(&x).unwrap());
    }

    #[test]
    fn training_mode_applies_dropout() {
        let m = Am3Model::new(config(PrototypeRule::default()), 7).unwrap();
        let (e, labels) = episode();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eval = m.episode_loss(&e, &labels).unwrap();
        let differs = (0..10).any(|_| {
            let (l, _) = m.loss_and_gradients(&e, &labels, true, &mut rng).unwrap();
            l != eval
        });
        assert!(differs);
    }
}
