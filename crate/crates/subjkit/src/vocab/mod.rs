//! Controlled-vocabulary index: PCA-reduced term embeddings with exact
//! nearest-neighbor lookup, used to snap generated headings onto the
//! vocabulary.
//!
//! The index quantizes everything it keeps (mean, components, reduced rows)
//! to f32 at build time, so persisting and reloading is lossless and a query
//! answers identically before and after a save/load round trip.

mod io;
mod pca;

pub use pca::{fit_pca, PcaBasis, PcaError};

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::text::{clean_text, dedup_preserving};

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("vocabulary term {0:?} appears more than once")]
    DuplicateTerm(String),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("query has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("index file does not start with the expected magic bytes")]
    BadMagic,
    #[error("index file is corrupt: {0}")]
    Corrupt(String),
}

/// Distance used by nearest-neighbor search. On unit-normalized rows the two
/// options rank candidates identically; cosine is the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(format!("unknown metric {other:?}, expected cosine or euclidean")),
        }
    }
}

/// Reads a vocabulary file: one term per line for text files, or MARC
/// authority records (150 `$a`) for `.mrc` input. Terms are cleaned and
/// deduplicated, first occurrence wins.
pub fn load_vocabulary(path: &Path) -> Result<Vec<String>, VocabError> {
    let binary = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("mrc") | Some("marc")
    );
    let raw: Vec<String> = if binary {
        let bytes = std::fs::read(path)?;
        crate::marc::parse_marc_stream(&bytes)
            .records
            .iter()
            .flat_map(|r| {
                r.fields_with_tag("150")
                    .flat_map(|f| f.subfield_values('a'))
                    .map(str::to_owned)
                    .collect::<Vec<_>>()
            })
            .collect()
    } else {
        let file = std::fs::File::open(path)?;
        std::io::BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()?
    };
    let terms = dedup_preserving(
        raw.iter()
            .map(|t| clean_text(t))
            .filter(|t| !t.is_empty()),
    );
    if terms.is_empty() {
        return Err(VocabError::EmptyVocabulary);
    }
    Ok(terms)
}

/// The result of looking up one query vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub term: String,
    pub distance: f64,
}

/// One mapped prediction: what came in, what it became, and how far it
/// traveled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedTerm {
    pub original: String,
    pub mapped: String,
    pub was_substituted: bool,
    pub distance: f64,
}

/// Mapped terms plus one note per term that could not be mapped.
#[derive(Debug, Default)]
pub struct MapOutcome {
    pub terms: Vec<MappedTerm>,
    pub diagnostics: Vec<String>,
}

/// PCA-reduced vocabulary embeddings with exact nearest-neighbor search.
pub struct VocabIndex {
    terms: Vec<String>,
    exact: HashSet<String>,
    mean: Vec<f32>,
    components: Vec<f32>, // k rows of dim_in
    reduced: Vec<f32>,    // n_terms rows of k, unit L2 norm
    k: usize,
    dim_in: usize,
    metric: Metric,
    /// Top-k eigenvalues from the fit. Informational; not persisted, so this
    /// is empty on a loaded index.
    explained_variance: Vec<f64>,
}

/// Embeds every term, fits a k-component PCA over the embeddings, and stores
/// unit-normalized reduced rows. Terms must already be distinct; feed the
/// output of [`load_vocabulary`].
pub fn build_index(
    terms: &[String],
    embedder: &Embedder,
    k: usize,
    metric: Metric,
) -> Result<VocabIndex, VocabError> {
    if terms.is_empty() {
        return Err(VocabError::EmptyVocabulary);
    }
    let mut seen = HashSet::new();
    for term in terms {
        if !seen.insert(term.as_str()) {
            return Err(VocabError::DuplicateTerm(term.clone()));
        }
    }

    let embedded = embedder.embed_batch(terms)?;
    let rows: Vec<Vec<f64>> = embedded
        .iter()
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let basis = fit_pca(&rows, k)?;

    // Quantize the basis first, then project through the quantized values:
    // what the file will hold is exactly what answers queries now.
    let mean: Vec<f32> = basis.mean.iter().map(|&v| v as f32).collect();
    let components: Vec<f32> = basis.components.iter().map(|&v| v as f32).collect();
    let mut index = VocabIndex {
        terms: terms.to_vec(),
        exact: terms.iter().cloned().collect(),
        mean,
        components,
        reduced: Vec::with_capacity(terms.len() * k),
        k,
        dim_in: basis.dim_in,
        metric,
        explained_variance: basis.explained_variance,
    };
    for vector in &embedded {
        let projected = index.project_query(vector);
        index
            .reduced
            .extend(projected.iter().map(|&v| v as f32));
    }
    Ok(index)
}

impl VocabIndex {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Per-dimension mean subtracted from queries before projection.
    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    /// Projection basis, row-major `k * dim_in`.
    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn contains(&self, term: &str) -> bool {
        self.exact.contains(term)
    }

    pub fn set_metric(&mut self, metric: Metric) {
        self.metric = metric;
    }

    fn reduced_row(&self, i: usize) -> &[f32] {
        &self.reduced[i * self.k..(i + 1) * self.k]
    }

    /// Centers, projects, and unit-normalizes a full-dimension query vector.
    /// A query that projects to zero stays zero.
    fn project_query(&self, v: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0f64; self.k];
        for (c, slot) in out.iter_mut().enumerate() {
            let row = &self.components[c * self.dim_in..(c + 1) * self.dim_in];
            *slot = row
                .iter()
                .zip(v.iter().zip(&self.mean))
                .map(|(&w, (&x, &m))| f64::from(w) * (f64::from(x) - f64::from(m)))
                .sum();
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut out {
                *x /= norm;
            }
        }
        out
    }

    /// Exact scan for the closest vocabulary term to a full-dimension query
    /// embedding. Distance ties resolve to the lower row index.
    pub fn nearest_term(&self, query: &[f32]) -> Result<Nearest, VocabError> {
        if query.len() != self.dim_in {
            return Err(VocabError::DimensionMismatch {
                expected: self.dim_in,
                got: query.len(),
            });
        }
        let q = self.project_query(query);
        let mut best = Nearest {
            index: 0,
            term: String::new(),
            distance: f64::INFINITY,
        };
        for i in 0..self.terms.len() {
            let row = self.reduced_row(i);
            let d = match self.metric {
                Metric::Cosine => {
                    1.0 - row
                        .iter()
                        .zip(&q)
                        .map(|(&r, &x)| f64::from(r) * x)
                        .sum::<f64>()
                }
                Metric::Euclidean => row
                    .iter()
                    .zip(&q)
                    .map(|(&r, &x)| (f64::from(r) - x) * (f64::from(r) - x))
                    .sum::<f64>()
                    .sqrt(),
            };
            if d < best.distance {
                best.index = i;
                best.distance = d;
            }
        }
        best.term = self.terms[best.index].clone();
        Ok(best)
    }

    /// Maps predicted headings onto the vocabulary: exact matches pass
    /// through, everything else is replaced by its nearest vocabulary term.
    /// The output is deduplicated on the mapped surface, keeping first
    /// occurrences, so it never outnumbers the input.
    pub fn map_terms(
        &self,
        predicted: &[String],
        embedder: &Embedder,
    ) -> Result<MapOutcome, VocabError> {
        self.map_terms_within(predicted, embedder, None)
    }

    /// Like [`map_terms`](Self::map_terms), but a substitution farther than
    /// `max_distance` is abandoned and the term passes through unmapped.
    pub fn map_terms_within(
        &self,
        predicted: &[String],
        embedder: &Embedder,
        max_distance: Option<f64>,
    ) -> Result<MapOutcome, VocabError> {
        let mut outcome = MapOutcome::default();
        let mut seen = HashSet::new();
        for original in predicted {
            let cleaned = clean_text(original);
            let entry = if self.exact.contains(&cleaned) {
                MappedTerm {
                    original: original.clone(),
                    mapped: cleaned,
                    was_substituted: false,
                    distance: 0.0,
                }
            } else {
                match self.substitute(original, &cleaned, embedder, max_distance)? {
                    Ok(entry) => entry,
                    Err(diagnostic) => {
                        outcome.diagnostics.push(diagnostic);
                        MappedTerm {
                            original: original.clone(),
                            mapped: if cleaned.is_empty() {
                                original.clone()
                            } else {
                                cleaned
                            },
                            was_substituted: false,
                            distance: 0.0,
                        }
                    }
                }
            };
            if seen.insert(entry.mapped.clone()) {
                outcome.terms.push(entry);
            }
        }
        Ok(outcome)
    }

    /// Inner result: `Ok(Ok)` mapped, `Ok(Err)` is a per-term diagnostic and
    /// the term passes through; a hard `Err` means the whole call is
    /// misconfigured (for example a dimension mismatch).
    fn substitute(
        &self,
        original: &str,
        cleaned: &str,
        embedder: &Embedder,
        max_distance: Option<f64>,
    ) -> Result<Result<MappedTerm, String>, VocabError> {
        if embedder.dim() != self.dim_in {
            return Err(VocabError::DimensionMismatch {
                expected: self.dim_in,
                got: embedder.dim(),
            });
        }
        let vector = match embedder.embed_text(cleaned) {
            Ok(v) => v,
            Err(EmbedError::EmptyText) => {
                return Ok(Err(format!("term {original:?}: empty after cleaning")))
            }
            Err(err) => return Ok(Err(format!("term {original:?}: {err}"))),
        };
        let nearest = self.nearest_term(&vector)?;
        if let Some(limit) = max_distance {
            if nearest.distance > limit {
                return Ok(Err(format!(
                    "term {original:?}: nearest vocabulary term {:?} at distance {:.4} exceeds the limit {limit}",
                    nearest.term, nearest.distance
                )));
            }
        }
        Ok(Ok(MappedTerm {
            original: original.to_owned(),
            mapped: nearest.term,
            was_substituted: true,
            distance: nearest.distance,
        }))
    }
}
