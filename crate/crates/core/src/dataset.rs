//! Labeled feature datasets and their on-disk layout.
//!
//! A dataset root holds a `manifest` and one feature file per category:
//!
//! ```text
//! #dim 4
//! c000<TAB>golden retriever|dog<TAB>c000.csv
//! ```
//!
//! Feature files carry one comma-separated sample per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::CategoryLabel;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest";

#[derive(Clone, Debug, PartialEq)]
pub struct Category {
    pub label: CategoryLabel,
    pub samples: Vec<Vec<f64>>,
}

/// Feature vectors grouped by category id.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    feature_dimension: usize,
    categories: BTreeMap<String, Category>,
}

impl LabeledDataset {
    pub fn new(feature_dimension: usize) -> Result<Self> {
        if feature_dimension == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(Self {
            feature_dimension,
            categories: BTreeMap::new(),
        })
    }

    pub fn feature_dimension(&self) -> usize {
        self.feature_dimension
    }

    pub fn insert(&mut self, id: &str, category: Category) -> Result<()> {
        validate_id(id)?;
        for (row, s) in category.samples.iter().enumerate() {
            if s.len() != self.feature_dimension {
                return Err(Error::Data(format!(
                    "category {id}, row {}: expected {} features, found {}",
                    row + 1,
                    self.feature_dimension,
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "category {id}, row {}: non-finite feature",
                    row + 1
                )));
            }
        }
        self.categories.insert(id.to_owned(), category);
        Ok(())
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &Category)> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn category(&self, id: &str) -> Option<&Category> {
        self.categories.get(id)
    }

    pub fn category_ids(&self) -> Vec<String> {
        self.categories.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('#')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if !ok {
        return Err(Error::Data(format!(
            "category id {id:?} must be non-empty ASCII alphanumerics, '_', '-' or '.'"
        )));
    }
    Ok(())
}

/// Reads a dataset root written in the manifest layout.
pub fn load_dataset(root: &Path) -> Result<LabeledDataset> {
    let manifest_path = root.join(MANIFEST);
    let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(&manifest_path, e))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty manifest".into(),
            })
        }
    };
    let dim = header
        .strip_prefix("#dim")
        .and_then(|rest| rest.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("expected `#dim <n>`, found {header:?}"),
        })?;
    let mut dataset = LabeledDataset::new(dim).map_err(|_| Error::Parse {
        line: 1,
        message: "dimension must be positive".into(),
    })?;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (id, labels, rel) = (fields[0], fields[1], fields[2]);
        let label = CategoryLabel::parse(labels).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if dataset.category(id).is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate category id {id}"),
            });
        }
        let samples = read_features(&root.join(rel), id)?;
        dataset.insert(id, Category { label, samples })?;
    }
    Ok(dataset)
}

fn read_features(path: &Path, id: &str) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| {
        Error::Data(format!(
            "category {id}: cannot open feature file {}: {e}",
            path.display()
        ))
    })?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| {
                Error::Data(format!("category {id}, row {}: {e}", idx + 1))
            })?;
        samples.push(row);
    }
    Ok(samples)
}

/// Writes `dataset` under `root` (created if needed), one `<id>.csv` per category.
pub fn write_dataset(root: &Path, dataset: &LabeledDataset) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest_path = root.join(MANIFEST);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest = BufWriter::new(file);
    let io = |e| Error::io(&manifest_path, e);
    writeln!(manifest, "#dim {}", dataset.feature_dimension()).map_err(io)?;
    for (id, category) in dataset.categories() {
        let rel = format!("{id}.csv");
        writeln!(manifest, "{id}\t{}\t{rel}", category.label.to_manifest_field()).map_err(io)?;
        let path = root.join(&rel);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for sample in &category.samples {
            let line: Vec<String> = sample.iter().map(f64::to_string).collect();
            writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    manifest.flush().map_err(io)?;
    Ok(())
}

/// Disjoint train/validation/test category sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategorySplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles category ids with `seed` and cuts them by `fractions`.
///
/// Validation and test sizes are rounded to the nearest integer; training
/// takes the remainder. Every part must hold at least `min_categories`.
pub fn split_categories(
    dataset: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
    min_categories: usize,
) -> Result<CategorySplit> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fs
        )));
    }
    let mut ids = dataset.category_ids();
    let total = ids.len();
    let n_val = (fv * total as f64).round() as usize;
    let n_test = (fs * total as f64).round() as usize;
    let n_train = total.saturating_sub(n_val + n_test);
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n < min_categories.max(1) {
            return Err(Error::Config(format!(
                "{name} split has {n} categories but episodes need {} ({} categories in total)",
                min_categories.max(1),
                total
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(CategorySplit {
        train: ids,
        val,
        test,
    })
}
