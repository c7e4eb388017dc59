//! SGD with momentum and a step-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor together with its momentum buffer.
///
/// Serializes as its value alone; a deserialized parameter starts with zero
/// velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Tensor", into = "Tensor")]
pub struct Parameter {
    value: Tensor,
    velocity: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let velocity = Tensor::zeros(value.shape());
        Self { value, velocity }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn velocity(&self) -> &Tensor {
        &self.velocity
    }

    /// Replaces the value and clears the momentum buffer.
    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::dim("set_value", self.value.shape(), value.shape()));
        }
        self.velocity = Tensor::zeros(value.shape());
        self.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }
}

pub fn validate_hyperparameters(learning_rate: f64, momentum: f64) -> Result<()> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "momentum must be in [0, 1), got {momentum}"
        )));
    }
    Ok(())
}

impl From<Tensor> for Parameter {
    fn from(value: Tensor) -> Self {
        Self::new(value)
    }
}

impl From<Parameter> for Tensor {
    fn from(p: Parameter) -> Self {
        p.value
    }
}

/// `v ← momentum · v + g; θ ← θ − lr · v` for every parameter.
pub fn sgd_momentum_step<'a, I>(
    params: I,
    gradients: &[Tensor],
    learning_rate: f64,
    momentum: f64,
) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Parameter>,
{
    validate_hyperparameters(learning_rate, momentum)?;
    let mut count = 0;
    for (param, grad) in params.into_iter().zip(gradients) {
        count += 1;
        if grad.shape() != param.value.shape() {
            return Err(Error::dim("sgd_momentum_step", param.value.shape(), grad.shape()));
        }
        let v = param.velocity.data_mut();
        for (vi, gi) in v.iter_mut().zip(grad.data()) {
            *vi = momentum * *vi + gi;
        }
        for (p, vi) in param.value.data_mut().iter_mut().zip(param.velocity.data()) {
            *p -= learning_rate * vi;
        }
    }
    if count != gradients.len() {
        return Err(Error::Usage(format!(
            "{} gradients for {count} parameters",
            gradients.len()
        )));
    }
    Ok(())
}

/// Piecewise-constant learning rate divided by `factor` at each anneal step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    initial: f64,
    steps: Vec<usize>,
    factor: f64,
}

impl StepSchedule {
    pub fn new(initial: f64, steps: Vec<usize>, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Config(format!("anneal factor must be positive, got {factor}")));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "anneal steps must be strictly increasing, got {steps:?}"
            )));
        }
        Ok(Self {
            initial,
            steps,
            factor,
        })
    }

    /// Learning rate in effect at 1-based `iteration`.
    pub fn at(&self, iteration: usize) -> f64 {
        let drops = self.steps.iter().filter(|&&s| s <= iteration).count();
        self.initial / self.factor.powi(drops as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Parameter {
        Parameter::new(Tensor::vector(values))
    }

    #[test]
    fn plain_gradient_descent_without_momentum() {
        let mut p = param(&[1.0]);
        sgd_momentum_step([&mut p], &[Tensor::vector(&[0.5])], 0.1, 0.0).unwrap();
        assert_eq!(p.value().data(), &[0.95]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = param(&[1.0, -2.0]);
        sgd_momentum_step([&mut p], &[Tensor::zeros(&[2])], 0.1, 0.9).unwrap();
        assert_eq!(p.value().data(), &[1.0, -2.0]);
    }

    #[test]
    fn two_momentum_steps_expand_by_hand() {
        let (g, lr) = (0.3, 0.05);
        let mut p = param(&[0.0]);
        for _ in 0..2 {
            sgd_momentum_step([&mut p], &[Tensor::vector(&[g])], lr, 0.9).unwrap();
        }
        let expected = -lr * (g + 1.9 * g);
        assert!((p.value().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut p = param(&[1.0]);
        let g = [Tensor::vector(&[1.0])];
        assert!(sgd_momentum_step([&mut p], &g, 0.0, 0.5).is_err());
        assert!(sgd_momentum_step([&mut p], &g, 0.1, 1.0).is_err());
        assert!(sgd_momentum_step([&mut p], &[Tensor::zeros(&[2])], 0.1, 0.5).is_err());
    }

    #[test]
    fn schedule_drops_by_factor() {
        let s = StepSchedule::new(0.1, vec![10], 10.0).unwrap();
        for it in 1..10 {
            assert_eq!(s.at(it), 0.1);
        }
        assert!((s.at(10) - 0.01).abs() < 1e-18);
        assert!((s.at(500) - 0.01).abs() < 1e-18);
        assert!(StepSchedule::new(0.1, vec![5, 5], 10.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn zero_momentum_is_vanilla_descent(
            values in proptest::collection::vec(-5.0f64..5.0, 1..8),
            lr in 1e-4f64..1.0,
        ) {
            let grads: Vec<f64> = values.iter().map(|v| v * 0.37 - 0.1).collect();
            let mut p = param(&values);
            sgd_momentum_step([&mut p], &[Tensor::vector(&grads)], lr, 0.0).unwrap();
            for ((out, v), g) in p.value().data().iter().zip(&values).zip(&grads) {
                proptest::prop_assert_eq!(*out, v - lr * g);
            }
            proptest::prop_assert_eq!(p.velocity().shape(), p.value().shape());
        }
    }
}
