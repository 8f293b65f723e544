//! Word-embedding storage: vocabulary, dense row-major matrix, normalization
//! and whole-vocabulary scoring.

mod cache;
mod text;

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::math::{dot, sigmoid};

pub use cache::{is_cache_file, load_cache, open_embeddings, save_cache, CACHE_VERSION};
pub use text::{load_text_embeddings, read_text_embeddings, LoadStats, LoadedEmbeddings, DEFAULT_MAX_WORDS};

/// Rows whose norm falls below this are dropped by [`EmbeddingMatrix::normalize`].
pub const ZERO_NORM_CUTOFF: f64 = 1e-12;

const SCORE_CHUNK_ROWS: usize = 4096;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    FileUnwritable { path: PathBuf, source: io::Error },
    #[error("no valid embedding rows found")]
    EmptyFile,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is already normalized")]
    AlreadyNormalized,
    #[error("matrix must be normalized first")]
    NotNormalized,
    #[error("duplicate word {0:?}")]
    DuplicateWord(String),
    #[error("cache format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("corrupt cache: {0}")]
    CorruptCache(String),
}

/// Dense 0-based index of a word in its [`Vocab`], assigned in file order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordId(pub u32);

impl WordId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered list of unique words with a reverse index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Result<Self, EmbeddingError> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), WordId(i as u32)).is_some() {
                return Err(EmbeddingError::DuplicateWord(w.clone()));
            }
        }
        Ok(Vocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Panics if `id` is out of range.
    pub fn word(&self, id: WordId) -> &str {
        &self.words[id.index()]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// SHA-256 over the newline-joined word list, hex encoded. Two vocabularies
    /// with the same fingerprint assign identical [`WordId`]s.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Immutable `|vocab| x dim` matrix of embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocab,
    dim: usize,
    rows: Vec<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds an un-normalized matrix from a word list and flat row-major data.
    pub fn new(words: Vec<String>, dim: usize, rows: Vec<f64>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::DimensionMismatch { expected: 1, found: 0 });
        }
        if rows.len() != words.len() * dim {
            return Err(EmbeddingError::DimensionMismatch { expected: words.len() * dim, found: rows.len() });
        }
        Ok(EmbeddingMatrix { vocab: Vocab::from_words(words)?, dim, rows, normalized: false })
    }

    /// Convenience constructor from `(word, vector)` pairs.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self, EmbeddingError> {
        let mut words = Vec::new();
        let mut rows = Vec::new();
        let mut dim = None;
        for (w, v) in pairs {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(EmbeddingError::DimensionMismatch { expected: d, found: v.len() });
            }
            words.push(w.into());
            rows.extend(v);
        }
        Self::new(words, dim.ok_or(EmbeddingError::EmptyFile)?, rows)
    }

    pub(crate) fn from_parts_unchecked(vocab: Vocab, dim: usize, rows: Vec<f64>, normalized: bool) -> Self {
        debug_assert_eq!(rows.len(), vocab.len() * dim);
        EmbeddingMatrix { vocab, dim, rows, normalized }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, id: WordId) -> &[f64] {
        let start = id.index() * self.dim;
        &self.rows[start..start + self.dim]
    }

    pub fn row_of(&self, word: &str) -> Option<&[f64]> {
        self.vocab.get(word).map(|id| self.row(id))
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.rows.chunks_exact(self.dim)
    }

    /// Divides every row by its L2 norm, dropping rows (and their words) whose
    /// norm is below [`ZERO_NORM_CUTOFF`]. Surviving words keep their relative
    /// order, so ids are re-assigned densely.
    pub fn normalize(self) -> Result<Self, EmbeddingError> {
        if self.normalized {
            return Err(EmbeddingError::AlreadyNormalized);
        }
        let dim = self.dim;
        let mut words = Vec::with_capacity(self.vocab.len());
        let mut rows = Vec::with_capacity(self.rows.len());
        for (word, row) in self.vocab.words.into_iter().zip(self.rows.chunks_exact(dim)) {
            let norm = crate::math::l2_norm(row);
            if norm < ZERO_NORM_CUTOFF {
                continue;
            }
            rows.extend(row.iter().map(|x| x / norm));
            words.push(word);
        }
        let dropped = self.rows.len() / dim - words.len();
        if dropped > 0 {
            log::warn!("normalize: dropped {dropped} zero-norm rows");
        }
        let vocab = Vocab::from_words(words)?;
        Ok(EmbeddingMatrix { vocab, dim, rows, normalized: true })
    }

    fn check_scoring(&self, weights: &[f64]) -> Result<(), EmbeddingError> {
        if !self.normalized {
            return Err(EmbeddingError::NotNormalized);
        }
        if weights.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, found: weights.len() });
        }
        Ok(())
    }

    /// Raw projections `weights . row + bias` for every word.
    pub fn decision_values(&self, weights: &[f64], bias: f64) -> Result<Vec<f64>, EmbeddingError> {
        self.check_scoring(weights)?;
        let mut out = vec![0.0; self.len()];
        out.par_chunks_mut(SCORE_CHUNK_ROWS).zip(self.rows.par_chunks(SCORE_CHUNK_ROWS * self.dim)).for_each(
            |(out, rows)| {
                for (o, row) in out.iter_mut().zip(rows.chunks_exact(self.dim)) {
                    *o = dot(weights, row) + bias;
                }
            },
        );
        Ok(out)
    }

    /// `sigmoid(weights . row + bias)` for every word, each strictly in (0, 1).
    pub fn score_all(&self, weights: &[f64], bias: f64) -> Result<Vec<f64>, EmbeddingError> {
        let mut v = self.decision_values(weights, bias)?;
        v.par_iter_mut().for_each(|z| *z = sigmoid(*z));
        Ok(v)
    }
}
