//! Fully connected layers and ReLU perceptrons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{validate_keep_probability, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::Parameter;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Parameter::new(Tensor::new(vec![input, output], data).expect("shape")),
            bias: Parameter::new(Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value().shape()[1]
    }
}

/// A perceptron: affine layers with ReLU between them and a linear output.
///
/// In training mode, inverted dropout follows every hidden activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
    keep_probability: f64,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        keep_probability: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_keep_probability(keep_probability)?;
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {input} -> {hidden:?} -> {output}"
            )));
        }
        let widths: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            keep_probability,
        })
    }

    /// A single square layer with identity weight and zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self {
            layers: vec![Linear {
                weight: Parameter::new(Tensor::new(vec![dim, dim], data).expect("shape")),
                bias: Parameter::new(Tensor::zeros(&[dim])),
            }],
            keep_probability: 1.0,
        }
    }

    /// Structural checks for perceptrons that did not come from [`Mlp::new`].
    pub fn check(&self) -> Result<()> {
        validate_keep_probability(self.keep_probability)?;
        if self.layers.is_empty() {
            return Err(Error::Data("perceptron without layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let w = layer.weight.value().shape();
            let b = layer.bias.value().shape();
            if w.len() != 2 || b != [w[1]] {
                return Err(Error::Data(format!(
                    "layer {i}: weight {w:?} and bias {b:?} do not fit together"
                )));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Data(format!(
                    "layer {i} emits {} values, layer {} takes {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").output_dim()
    }

    pub fn keep_probability(&self) -> f64 {
        self.keep_probability
    }

    /// Only affects hidden layers in training mode.
    pub fn set_keep_probability(&mut self, keep_probability: f64) -> Result<()> {
        validate_keep_probability(keep_probability)?;
        self.keep_probability = keep_probability;
        Ok(())
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn last_layer_mut(&mut self) -> &mut Linear {
        self.layers.last_mut().expect("at least one layer")
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Records every parameter as a leaf, in `parameters()` order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters()
            .map(|p| tape.leaf(p.value().clone()))
            .collect()
    }

    /// Forward pass over the rows of `x: [batch, input]`, using leaves from [`bind`](Self::bind).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        debug_assert_eq!(params.len(), 2 * self.layers.len());
        let width = tape.value(x).cols();
        if width != self.input_dim() {
            return Err(Error::dim(
                "mlp input",
                tape.value(x).shape(),
                &[self.input_dim()],
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, pair) in params.chunks(2).enumerate() {
            h = tape.affine(h, pair[0], pair[1])?;
            if i < last {
                h = tape.relu(h);
                h = tape.dropout(h, self.keep_probability, rng, training)?;
            }
        }
        Ok(h)
    }

    /// Evaluation-mode forward pass without keeping the tape.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let input = tape.leaf(x.clone());
        let out = self.forward(&mut tape, &params, input, false, &mut NoRng)?;
        Ok(tape.value(out).clone())
    }
}

/// Stand-in rng for evaluation passes, where dropout never draws.
pub(crate) struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation mode never samples")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation mode never samples")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("evaluation mode never samples")
    }
}
