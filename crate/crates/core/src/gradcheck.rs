//! Central finite-difference checks for tape gradients.

use crate::autodiff::{Tape, Var};
use crate::embedding::LabelEmbeddings;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::model::Am3Model;
use crate::nn::NoRng;
use crate::tensor::Tensor;

/// Floor added to `|analytic|` in the relative-error denominator.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// Per-coordinate comparison between a finite-difference estimate and an
/// analytic gradient.
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (analytic.abs() + RELATIVE_FLOOR)
}

/// Central difference `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient<F>(mut f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Maximum relative error between backward and central differences.
///
/// `build` records a scalar function of its input on the given tape. It is
/// replayed once for the analytic gradient and twice per coordinate for the
/// numeric one, so the numeric side never touches `backward`.
pub fn finite_difference_check<F>(build: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = build(&mut tape, input)?;
    let analytic = tape.backward(out)?.wrt(input);

    let numeric = numeric_gradient(
        |probe| {
            let mut tape = Tape::new();
            let input = tape.leaf(probe.clone());
            let out = build(&mut tape, input)?;
            Ok(tape.value(out).item())
        },
        x,
        step,
    )?;

    Ok(max_relative_error(&numeric, &analytic))
}

pub fn max_relative_error(numeric: &Tensor, analytic: &Tensor) -> f64 {
    numeric
        .data()
        .iter()
        .zip(analytic.data())
        .map(|(n, a)| relative_error(*n, *a))
        .fold(0.0, f64::max)
}

/// Worst relative error of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
    /// Coordinates left out because a ±step perturbation moved some ReLU
    /// input across zero; the loss is not differentiable inside that interval.
    pub kink_crossings: usize,
    pub coordinates: usize,
}

/// Compares evaluation-mode episode-loss gradients of every model parameter
/// against central differences of the loss itself.
///
/// A coordinate whose perturbed forward passes change the sign pattern of any
/// ReLU input is excluded and counted in [`ParameterCheck::kink_crossings`].
pub fn check_model_gradients(
    model: &Am3Model,
    episode: &Episode,
    labels: &LabelEmbeddings,
    step: f64,
) -> Result<Vec<ParameterCheck>> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    let (_, analytic) = model.loss_and_gradients(episode, labels, false, &mut NoRng)?;
    let (_, base_signs) = model.loss_and_relu_signs(episode, labels)?;
    let names = model.parameter_names();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(names.len());
    for (index, (name, grad)) in names.into_iter().zip(&analytic).enumerate() {
        let mut check = ParameterCheck {
            name,
            max_relative_error: 0.0,
            max_abs_gradient: grad.data().iter().fold(0.0, |m, v| m.max(v.abs())),
            kink_crossings: 0,
            coordinates: grad.len(),
        };
        for i in 0..grad.len() {
            let mut eval = |delta: f64| -> Result<(f64, bool)> {
                let value = probe.parameters_mut().nth(index).expect("index").value_mut();
                let orig = value.data()[i];
                value.data_mut()[i] = orig + delta;
                let (loss, signs) = probe.loss_and_relu_signs(episode, labels)?;
                probe.parameters_mut().nth(index).expect("index").value_mut().data_mut()[i] = orig;
                Ok((loss, signs == base_signs))
            };
            let (plus, plus_same) = eval(step)?;
            let (minus, minus_same) = eval(-step)?;
            if !(plus_same && minus_same) {
                check.kink_crossings += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            check.max_relative_error = check.max_relative_error.max(relative_error(numeric, grad.data()[i]));
        }
        out.push(check);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 3, 4);
        let err = finite_difference_check(
            |t, x| {
                let zero = t.leaf(Tensor::zeros(&[3, 4]));
                let d = t.row_sq_dist(x, zero)?;
                Ok(t.sum(d))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 2, 3);
        let w = random_matrix(&mut rng, 3, 2);
        let err = finite_difference_check(
            |t, x| {
                let w = t.leaf(w.clone());
                let b = t.leaf(Tensor::vector(&[0.25, -0.5]));
                let y = t.affine(x, w, b)?;
                Ok(t.sum(y))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 3, 4);
        let other = random_matrix(&mut rng, 2, 4);
        let lambda = Tensor::vector(&[0.2, 0.9, 0.5]);
        let err = finite_difference_check(
            |t, x| {
                let w = t.leaf(random_matrix(&mut ChaCha8Rng::seed_from_u64(9), 4, 4));
                let b = t.leaf(Tensor::vector(&[0.1, -0.2, 0.3, 0.0]));
                let h = t.affine(x, w, b)?;
                let h = t.sigmoid(h);
                let s = t.sub(h, x)?;
                let s = t.add(s, x)?;
                let lam = t.leaf(lambda.clone());
                let mixed = t.convex_mix(lam, s, x)?;
                let proto = t.segment_mean(mixed, vec![vec![0, 1], vec![2]])?;
                let o = t.leaf(other.clone());
                let both = t.concat_cols(proto, o)?;
                let both = t.reshape(both, &[2, 8])?;
                let rows = t.gather_rows(both, vec![0, 1, 1])?;
                let half = t.gather_rows(x, vec![2, 0, 1])?;
                let halves = t.concat_cols(half, half)?;
                let rd = t.row_sq_dist(rows, halves)?;
                let rd = t.sqrt(rd);
                let pd = t.pairwise_sq_dist(x, proto)?;
                let scores = t.neg(pd);
                let ce = t.cross_entropy(scores, vec![0, 1, 1])?;
                let m = t.mean(rd);
                let total = t.add(ce, m)?;
                Ok(total)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::vector(&[1.0]);
        assert!(finite_difference_check(|t, x| Ok(t.sum(x)), &x, 0.0).is_err());
    }
}
