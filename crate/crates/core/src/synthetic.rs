//! Seeded synthetic cross-modal classification tasks.
//!
//! Each category owns a unit latent direction. Its visual centroid and its
//! label vector are that direction pushed through two independent random
//! isometries, scaled so that pairs of categories sit roughly
//! `visual_separation` (resp. `semantic_separation`) apart. The label side
//! sees the latent through extra noise, so semantics are informative about
//! the visual layout without being a perfect copy of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Category, LabeledDataset};
use crate::embedding::{CategoryLabel, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub n_categories: usize,
    pub visual_dim: usize,
    pub semantic_dim: usize,
    /// Per-coordinate standard deviation of samples around their centroid.
    pub visual_spread: f64,
    pub visual_separation: f64,
    pub semantic_separation: f64,
    /// Standard deviation of the latent perturbation seen by the label side,
    /// relative to the unit latent direction.
    pub semantic_noise: f64,
    pub samples_per_category: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            n_categories: 40,
            visual_dim: 32,
            semantic_dim: 32,
            visual_spread: 1.0,
            visual_separation: 3.0,
            semantic_separation: 3.0,
            semantic_noise: 0.3,
            samples_per_category: 60,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_categories", self.n_categories),
            ("visual_dim", self.visual_dim),
            ("semantic_dim", self.semantic_dim),
            ("samples_per_category", self.samples_per_category),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let reals = [
            ("visual_spread", self.visual_spread),
            ("visual_separation", self.visual_separation),
            ("semantic_separation", self.semantic_separation),
            ("semantic_noise", self.semantic_noise),
        ];
        for (name, v) in reals {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.visual_dim.min(self.semantic_dim)
    }
}

/// Category ids are `c000`, `c001`, …; each is labeled by the token `concept000`, ….
pub fn generate_synthetic_crossmodal(
    spec: &SyntheticTaskSpec,
) -> Result<(LabeledDataset, EmbeddingTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latent = spec.latent_dim();
    let visual_map = random_isometry(&mut rng, spec.visual_dim, latent);
    let semantic_map = random_isometry(&mut rng, spec.semantic_dim, latent);
    let visual_radius = spec.visual_separation / std::f64::consts::SQRT_2;
    let semantic_radius = spec.semantic_separation / std::f64::consts::SQRT_2;

    let mut dataset = LabeledDataset::new(spec.visual_dim)?;
    let mut table = EmbeddingTable::new();
    for c in 0..spec.n_categories {
        let direction = unit_gaussian(&mut rng, latent);
        let noisy: Vec<f64> = direction
            .iter()
            .map(|d| d + spec.semantic_noise * rng.sample::<f64, _>(StandardNormal) / (latent as f64).sqrt())
            .collect();
        let noisy = normalized(noisy);

        let centroid = scaled(&apply(&visual_map, &direction), visual_radius);
        let semantic = scaled(&apply(&semantic_map, &noisy), semantic_radius);

        let samples = (0..spec.samples_per_category)
            .map(|_| {
                centroid
                    .iter()
                    .map(|m| m + spec.visual_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();

        let token = format!("concept{c:03}");
        table.insert(&token, semantic)?;
        dataset.insert(
            &format!("c{c:03}"),
            Category {
                label: CategoryLabel::new([token])?,
                samples,
            },
        )?;
    }
    Ok((dataset, table))
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return normalized(v);
        }
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// `rows × cols` matrix with orthonormal columns (Gram–Schmidt on Gaussian draws).
fn random_isometry(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        for q in &columns {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= dot * b;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            columns.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    columns
}

fn apply(columns: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let rows = columns[0].len();
    let mut out = vec![0.0; rows];
    for (col, xi) in columns.iter().zip(x) {
        for (o, c) in out.iter_mut().zip(col) {
            *o += c * xi;
        }
    }
    out
}
