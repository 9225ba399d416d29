//! Cosine similarity between damage-category image sets.
//!
//! Embeddings are precomputed and read from a JSON-lines store
//! (`{"uri": "...", "vector": [..]}` per line); no embedding model is
//! bundled. A category pair's score is the arithmetic mean of the cosine
//! over all cross pairs (distinct categories) or all unordered distinct
//! pairs (same category).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RawDamageCategory;

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("non-finite or empty embedding")]
    InvalidVector,
    #[error("category {0} has no images")]
    EmptyGroup(RawDamageCategory),
    #[error("missing embeddings for: {}", .0.join(", "))]
    MissingEmbedding(Vec<String>),
    #[error("embedding store line {line}: {reason}")]
    StoreParse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = SimilarityError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SimilarityError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::InvalidVector);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `dot(x, y) / (|x| |y|)`, clamped to [-1, 1] against rounding.
pub fn cosine(x: &EmbeddingVector, y: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if x.dim() != y.dim() {
        return Err(SimilarityError::DimensionMismatch(x.dim(), y.dim()));
    }
    let (nx, ny) = (x.norm(), y.norm());
    if nx == 0.0 || ny == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    let dot: f64 = x.values.iter().zip(&y.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    vectors: HashMap<String, EmbeddingVector>,
    dim: Option<usize>,
}

#[derive(Deserialize)]
struct StoreLine {
    uri: String,
    vector: EmbeddingVector,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, uri: impl Into<String>, vector: EmbeddingVector) -> Result<(), SimilarityError> {
        match self.dim {
            Some(d) if d != vector.dim() => return Err(SimilarityError::DimensionMismatch(d, vector.dim())),
            _ => self.dim = Some(vector.dim()),
        }
        self.vectors.insert(uri.into(), vector);
        Ok(())
    }

    pub fn get(&self, uri: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(uri)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, SimilarityError> {
        let parse = |line: usize, reason: String| SimilarityError::StoreParse { line, reason };
        let file = std::fs::File::open(path).map_err(|e| parse(0, e.to_string()))?;
        let mut store = EmbeddingStore::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| parse(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: StoreLine = serde_json::from_str(&line).map_err(|e| parse(i + 1, e.to_string()))?;
            store.insert(entry.uri, entry.vector).map_err(|e| parse(i + 1, e.to_string()))?;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub mean_cosine: f64,
    pub n_pairs: u64,
}

fn lookup<'a>(store: &'a EmbeddingStore, uris: &[String]) -> Result<Vec<&'a EmbeddingVector>, SimilarityError> {
    let missing: Vec<String> = uris.iter().filter(|u| store.get(u).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(SimilarityError::MissingEmbedding(missing));
    }
    Ok(uris.iter().filter_map(|u| store.get(u)).collect())
}

/// Mean cosine between two categories' images (or within one category when
/// `a == b`). Sums run in fixed index order so results are bit-stable.
pub fn category_similarity(
    store: &EmbeddingStore,
    groups: &BTreeMap<RawDamageCategory, Vec<String>>,
    a: RawDamageCategory,
    b: RawDamageCategory,
) -> Result<PairSimilarity, SimilarityError> {
    let group = |c| groups.get(&c).filter(|g| !g.is_empty()).ok_or(SimilarityError::EmptyGroup(c));
    let xs = lookup(store, group(a)?)?;
    let ys = lookup(store, group(b)?)?;

    let mut sum = 0.0;
    let mut n = 0u64;
    if a == b {
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                sum += cosine(xs[i], xs[j])?;
                n += 1;
            }
        }
        if n == 0 {
            // a single image has no distinct pair to compare
            return Err(SimilarityError::EmptyGroup(a));
        }
    } else {
        // iterate in canonical category order so (a, b) and (b, a) agree
        let (outer, inner) = if a <= b { (&xs, &ys) } else { (&ys, &xs) };
        for x in outer.iter() {
            for y in inner.iter() {
                sum += cosine(x, y)?;
                n += 1;
            }
        }
    }
    Ok(PairSimilarity { mean_cosine: (sum / n as f64).clamp(-1.0, 1.0), n_pairs: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub category_a: RawDamageCategory,
    pub category_b: RawDamageCategory,
    pub mean_cosine: f64,
    pub n_pairs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub rows: Vec<SimilarityRow>,
}

impl SimilarityReport {
    pub fn find(&self, a: RawDamageCategory, b: RawDamageCategory) -> Option<&SimilarityRow> {
        self.rows
            .iter()
            .find(|r| (r.category_a, r.category_b) == (a, b) || (r.category_a, r.category_b) == (b, a))
    }
}

/// The five comparisons reported for each study area.
pub fn default_pairs() -> Vec<(RawDamageCategory, RawDamageCategory)> {
    use RawDamageCategory::*;
    vec![(Affected, Minor), (Affected, Major), (Affected, Affected), (Destroyed, Destroyed), (NoDamage, NoDamage)]
}

pub fn similarity_report(
    store: &EmbeddingStore,
    groups: &BTreeMap<RawDamageCategory, Vec<String>>,
    pairs: &[(RawDamageCategory, RawDamageCategory)],
) -> Result<SimilarityReport, SimilarityError> {
    let rows = pairs
        .iter()
        .map(|&(a, b)| {
            let s = category_similarity(store, groups, a, b)?;
            Ok(SimilarityRow { category_a: a, category_b: b, mean_cosine: s.mean_cosine, n_pairs: s.n_pairs })
        })
        .collect::<Result<_, SimilarityError>>()?;
    Ok(SimilarityReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub from: RawDamageCategory,
    pub into: RawDamageCategory,
}

/// Advises folding minor and major into affected when both cross-category
/// means reach `threshold`. Empty when either row is missing or below it.
pub fn aggregation_recommendation(report: &SimilarityReport, threshold: f64) -> Vec<Merge> {
    use RawDamageCategory::*;
    let passes = |other| report.find(Affected, other).is_some_and(|r| r.mean_cosine >= threshold);
    if passes(Minor) && passes(Major) {
        vec![Merge { from: Minor, into: Affected }, Merge { from: Major, into: Affected }]
    } else {
        Vec::new()
    }
}
