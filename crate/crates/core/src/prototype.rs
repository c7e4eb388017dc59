//! Prototype arithmetic on plain vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;

/// Metric between query embeddings and prototypes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    #[default]
    #[serde(rename = "sq-euclid")]
    SquaredEuclidean,
    #[serde(rename = "euclid")]
    Euclidean,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> Result<f64> {
        let sq = ops::squared_euclidean(a, b)?;
        Ok(match self {
            Distance::SquaredEuclidean => sq,
            Distance::Euclidean => sq.sqrt(),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Distance::SquaredEuclidean => "sq-euclid",
            Distance::Euclidean => "euclid",
        }
    }
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sq-euclid" => Ok(Distance::SquaredEuclidean),
            "euclid" => Ok(Distance::Euclidean),
            other => Err(Error::Usage(format!(
                "unknown distance {other:?} (expected sq-euclid or euclid)"
            ))),
        }
    }
}

/// Mean of the support embeddings of one category.
pub fn visual_prototype<R: AsRef<[f64]>>(embeddings: &[R]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Usage("visual prototype of an empty support set".into()))?;
    let dim = first.as_ref().len();
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        let e = e.as_ref();
        if e.len() != dim {
            return Err(Error::dim("visual_prototype", &[dim], &[e.len()]));
        }
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    let n = embeddings.len() as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

/// Visual and semantic prototypes of one category and their mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalPrototype {
    pub visual: Vec<f64>,
    pub semantic: Vec<f64>,
    pub lambda: f64,
    pub mixed: Vec<f64>,
}

/// `lambda · visual + (1 − lambda) · semantic`, coordinatewise.
pub fn cross_modal_prototype(visual: &[f64], semantic: &[f64], lambda: f64) -> Result<CrossModalPrototype> {
    if visual.len() != semantic.len() {
        return Err(Error::dim("cross_modal_prototype", &[visual.len()], &[semantic.len()]));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Usage(format!("mixing coefficient {lambda} outside [0, 1]")));
    }
    let mixed = visual
        .iter()
        .zip(semantic)
        .map(|(p, w)| lambda * p + (1.0 - lambda) * w)
        .collect();
    Ok(CrossModalPrototype {
        visual: visual.to_vec(),
        semantic: semantic.to_vec(),
        lambda,
        mixed,
    })
}

/// Non-adaptive prototype: the unweighted mean of the supports and the
/// semantic vector, `(Σ r_i + w) / (n + 1)`. With no supports it is `w`.
pub fn alignment_prototype<R: AsRef<[f64]>>(supports: &[R], semantic: &[f64]) -> Result<Vec<f64>> {
    let mut sum = semantic.to_vec();
    for r in supports {
        let r = r.as_ref();
        if r.len() != semantic.len() {
            return Err(Error::dim("alignment_prototype", &[semantic.len()], &[r.len()]));
        }
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
    }
    let n = (supports.len() + 1) as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Softmax over negative distances from `query` to each prototype.
pub fn classify<R: AsRef<[f64]>>(query: &[f64], prototypes: &[R], distance: Distance) -> Result<Vec<f64>> {
    if prototypes.is_empty() {
        return Err(Error::Usage("classification needs at least one prototype".into()));
    }
    let scores = prototypes
        .iter()
        .map(|p| distance.between(query, p.as_ref()).map(|d| -d))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ops::softmax_from_scores(&scores))
}
