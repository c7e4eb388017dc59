//! Scalar and vector kernels shared by the tape and the evaluation paths.

use crate::error::{Error, Result};

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sum(exp(scores)))` with max-subtraction.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    max + sum.ln()
}

/// `log Σ_j exp(scores_j) − scores[target]`, the negative log-probability of
/// `target`. Written as `log1p` of the off-target mass when that mass is
/// small, so confident predictions keep full relative precision.
pub fn negative_log_softmax(scores: &[f64], target: usize) -> f64 {
    let st = scores[target];
    let worst = scores
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .map(|(_, s)| s - st)
        .fold(f64::NEG_INFINITY, f64::max);
    if worst == f64::NEG_INFINITY {
        return 0.0;
    }
    if worst <= 0.0 {
        let rest: f64 = scores
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .map(|(_, s)| (s - st).exp())
            .sum();
        rest.ln_1p()
    } else {
        let rest: f64 = scores
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .map(|(_, s)| (s - st - worst).exp())
            .sum();
        worst + ((-worst).exp() + rest).ln()
    }
}

/// Normalized exponentials of `scores`. Panics on an empty slice.
pub fn softmax_from_scores(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "softmax over zero scores");
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("squared_euclidean", &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
