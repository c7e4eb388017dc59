//! Word-embedding tables and category label resolution.
//!
//! Tables are read from the GloVe text layout: one `token v1 v2 … vn` entry
//! per line. Category labels resolve to a vector by trying each synonym in
//! order, averaging the vectors of multi-word annotations, and falling back
//! to a seeded uniform(−1, 1) draw when no annotation is fully covered.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token → vector dictionary with a single shared dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dimension: Option<usize>,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// `None` until the first entry is inserted.
    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Inserts or replaces an entry, returning the previous vector.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<Option<Vec<f64>>> {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::Data(format!("invalid token {token:?}")));
        }
        if vector.is_empty() {
            return Err(Error::Data(format!("empty vector for token {token:?}")));
        }
        match self.dimension {
            Some(d) if d != vector.len() => {
                return Err(Error::dim("embedding entry", &[d], &[vector.len()]))
            }
            None => self.dimension = Some(vector.len()),
            _ => {}
        }
        Ok(self.entries.insert(token.to_owned(), vector))
    }

    /// Entries sorted by token.
    pub fn sorted_entries(&self) -> Vec<(&str, &[f64])> {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Writes the table in token order, one line per entry.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (token, vector) in self.sorted_entries() {
            write!(out, "{token}")?;
            for v in vector {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Parses GloVe-style text. The dimension is fixed by the first entry; a
/// repeated token replaces the earlier one with a warning.
pub fn parse_embedding_file<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let vector = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("non-numeric field {f:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("token {token:?} has no values"),
            });
        }
        if let Some(d) = table.dimension {
            if d != vector.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {d} values, found {}", vector.len()),
                });
            }
        }
        if table.insert(token, vector)?.is_some() {
            log::warn!("line {line_no}: duplicate token {token:?}, keeping the last occurrence");
        }
    }
    Ok(table)
}

/// Ordered synonyms naming one category; each may span several words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLabel {
    annotations: Vec<String>,
}

impl CategoryLabel {
    pub fn new<S: Into<String>>(annotations: impl IntoIterator<Item = S>) -> Result<Self> {
        let annotations: Vec<String> = annotations
            .into_iter()
            .map(|a| a.into().trim().to_owned())
            .filter(|a| !a.is_empty())
            .collect();
        if annotations.is_empty() {
            return Err(Error::Data("category label needs at least one annotation".into()));
        }
        Ok(Self { annotations })
    }

    /// Parses the `first|second|…` manifest notation.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.split('|'))
    }

    pub fn annotations(&self) -> &[String] {
        &self.annotations
    }

    pub fn to_manifest_field(&self) -> String {
        self.annotations.join("|")
    }
}

/// Where a resolved label vector came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    /// The annotation at this position in the synonym list.
    Annotation(usize),
    /// No annotation was covered by the table.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedLabel {
    pub vector: Vec<f64>,
    pub source: LabelSource,
}

/// Resolves category labels against a table, caching one vector per category.
#[derive(Debug)]
pub struct LabelResolver<'a> {
    table: &'a EmbeddingTable,
    seed: u64,
    dimension: usize,
    cache: HashMap<String, ResolvedLabel>,
}

impl<'a> LabelResolver<'a> {
    /// `fallback_dimension` is used only when the table is empty.
    pub fn new(table: &'a EmbeddingTable, seed: u64, fallback_dimension: Option<usize>) -> Result<Self> {
        let dimension = match (table.dimension(), fallback_dimension) {
            (Some(d), Some(f)) if d != f => {
                return Err(Error::dim("label resolver", &[d], &[f]));
            }
            (Some(d), _) | (None, Some(d)) => d,
            (None, None) => {
                return Err(Error::Config(
                    "embedding table is empty and no fallback dimension was given".into(),
                ))
            }
        };
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            table,
            seed,
            dimension,
            cache: HashMap::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn resolve(&mut self, category_id: &str, label: &CategoryLabel) -> ResolvedLabel {
        if let Some(hit) = self.cache.get(category_id) {
            return hit.clone();
        }
        let resolved = self.resolve_uncached(category_id, label);
        self.cache.insert(category_id.to_owned(), resolved.clone());
        resolved
    }

    fn resolve_uncached(&self, category_id: &str, label: &CategoryLabel) -> ResolvedLabel {
        for (i, annotation) in label.annotations().iter().enumerate() {
            if let Some(vector) = self.annotation_vector(annotation) {
                return ResolvedLabel {
                    vector,
                    source: LabelSource::Annotation(i),
                };
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(category_id.as_bytes()));
        let vector = (0..self.dimension)
            .map(|_| loop {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v > -1.0 {
                    break v;
                }
            })
            .collect();
        ResolvedLabel {
            vector,
            source: LabelSource::Random,
        }
    }

    /// Mean of the word vectors, or `None` if any word is missing.
    fn annotation_vector(&self, annotation: &str) -> Option<Vec<f64>> {
        let words: Vec<&[f64]> = annotation
            .split_whitespace()
            .map(|w| self.table.get(w))
            .collect::<Option<_>>()?;
        if words.is_empty() {
            return None;
        }
        let n = words.len() as f64;
        let mut mean = vec![0.0; self.dimension];
        for w in &words {
            for (m, v) in mean.iter_mut().zip(*w) {
                *m += v;
            }
        }
        Some(mean.into_iter().map(|m| m / n).collect())
    }
}

/// Resolved label vectors keyed by category id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelEmbeddings {
    dimension: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl LabelEmbeddings {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn insert(&mut self, category_id: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::dim("label embedding", &[self.dimension], &[vector.len()]));
        }
        self.vectors.insert(category_id.to_owned(), vector);
        Ok(())
    }

    pub fn get(&self, category_id: &str) -> Option<&[f64]> {
        self.vectors.get(category_id).map(Vec::as_slice)
    }

    /// Resolves every category of a dataset.
    pub fn resolve_dataset(
        dataset: &crate::dataset::LabeledDataset,
        table: &EmbeddingTable,
        seed: u64,
        fallback_dimension: Option<usize>,
    ) -> Result<Self> {
        let mut resolver = LabelResolver::new(table, seed, fallback_dimension)?;
        let mut out = Self::new(resolver.dimension());
        for (id, category) in dataset.categories() {
            let resolved = resolver.resolve(id, &category.label);
            if resolved.source == LabelSource::Random {
                log::info!("category {id}: no annotation in vocabulary, using a random vector");
            }
            out.insert(id, resolved.vector)?;
        }
        Ok(out)
    }
}

/// 64-bit FNV-1a, used to derive per-category seeds independent of call order.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hasher = fnv::FnvHasher::default();
    hasher.write(bytes);
    hasher.finish()
}
