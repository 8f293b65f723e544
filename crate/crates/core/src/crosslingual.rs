//! Applying dimensions to another language's embedding space.
//!
//! An [`AlignmentMap`] holds an orthogonal `Q` with `Q x_foreign ~ y_training`.
//! [`procrustes_align`] fits it from a bilingual seed lexicon as the
//! orthogonal Procrustes solution: with `M = sum_i y_i x_i^T = U S V^T`,
//! `Q = U V^T`. No determinant correction is applied, so `Q` may be a
//! reflection.
//!
//! Because `Q` is orthogonal, `w . (Q x) = (Q^T w) . x`; foreign scoring maps
//! the weight vector once instead of every foreign row.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::SupervisedDimension;
use crate::embedding::{EmbeddingError, EmbeddingMatrix};
use crate::math::dot;
use crate::ranking::{top_k, CandidateList};

pub const ALIGNMENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("need at least 2 resolvable lexicon pairs, found {0}")]
    InsufficientPairs(usize),
    #[error("cross-covariance of the lexicon has rank 0")]
    DegenerateLexicon,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("lexicon line {line}: expected \"source<TAB>target\"")]
    BadLexiconLine { line: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid alignment file: {0}")]
    InvalidMap(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// `dim x dim` orthogonal matrix taking foreign vectors into the training space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlignmentWire", into = "AlignmentWire")]
pub struct AlignmentMap {
    dim: usize,
    /// Row-major.
    q: Vec<f64>,
    /// Root-mean-square of `|Q x_i - y_i|` over the fitting lexicon.
    pub fit_residual: f64,
}

#[derive(Serialize, Deserialize)]
struct AlignmentWire {
    format_version: u32,
    dim: usize,
    q: Vec<f64>,
    fit_residual: f64,
}

impl TryFrom<AlignmentWire> for AlignmentMap {
    type Error = String;

    fn try_from(w: AlignmentWire) -> Result<Self, String> {
        if w.format_version != ALIGNMENT_FORMAT_VERSION {
            return Err(format!("unsupported alignment format_version {}", w.format_version));
        }
        if w.q.len() != w.dim * w.dim {
            return Err(format!("expected {} matrix entries, found {}", w.dim * w.dim, w.q.len()));
        }
        Ok(AlignmentMap { dim: w.dim, q: w.q, fit_residual: w.fit_residual })
    }
}

impl From<AlignmentMap> for AlignmentWire {
    fn from(m: AlignmentMap) -> Self {
        AlignmentWire { format_version: ALIGNMENT_FORMAT_VERSION, dim: m.dim, q: m.q, fit_residual: m.fit_residual }
    }
}

impl AlignmentMap {
    pub fn identity(dim: usize) -> Self {
        let mut q = vec![0.0; dim * dim];
        for i in 0..dim {
            q[i * dim + i] = 1.0;
        }
        AlignmentMap { dim, q, fit_residual: 0.0 }
    }

    /// Builds a map from a row-major matrix, checking squareness only.
    pub fn from_row_major(dim: usize, q: Vec<f64>) -> Result<Self, AlignError> {
        if q.len() != dim * dim {
            return Err(AlignError::DimensionMismatch { expected: dim * dim, found: q.len() });
        }
        Ok(AlignmentMap { dim, q, fit_residual: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.q
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.q[row * self.dim + col]
    }

    /// `Q x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.q.chunks_exact(self.dim).map(|row| dot(row, x)).collect()
    }

    /// `Q^T v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (row, vi) in self.q.chunks_exact(self.dim).zip(v) {
            for (o, qij) in out.iter_mut().zip(row) {
                *o += qij * vi;
            }
        }
        out
    }

    /// `max |(Q^T Q - I)_ij|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let s: f64 = (0..d).map(|k| self.q[k * d + i] * self.q[k * d + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// Every row of `foreign` mapped by `Q`, as a new normalized matrix with
    /// the same vocabulary.
    pub fn map_matrix(&self, foreign: &EmbeddingMatrix) -> Result<EmbeddingMatrix, AlignError> {
        self.check_dim(foreign.dim())?;
        let rows: Vec<f64> = foreign.iter_rows().flat_map(|r| self.apply(r)).collect();
        let m = EmbeddingMatrix::new(foreign.vocab().words().to_vec(), self.dim, rows)?;
        Ok(m.normalize()?)
    }

    fn check_dim(&self, found: usize) -> Result<(), AlignError> {
        if found != self.dim {
            return Err(AlignError::DimensionMismatch { expected: self.dim, found });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignError> {
        let json = serde_json::to_vec(self).expect("alignment serializes");
        crate::binfmt::atomic_write(path, &json).map_err(|source| AlignError::Io { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<Self, AlignError> {
        let text = std::fs::read_to_string(path).map_err(|source| AlignError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| AlignError::InvalidMap(e.to_string()))
    }
}

/// `(source word, target word)` pairs; the first entry for a source wins.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BilingualLexicon {
    pairs: Vec<(String, String)>,
}

impl BilingualLexicon {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Self {
        let mut seen = HashSet::new();
        let pairs =
            pairs.into_iter().map(|(s, t)| (s.into(), t.into())).filter(|(s, _)| seen.insert(s.clone())).collect();
        BilingualLexicon { pairs }
    }

    /// Parses `source<TAB>target` lines. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, AlignError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            match (it.next(), it.next(), it.next()) {
                (Some(s), Some(t), None) if !s.is_empty() && !t.is_empty() => pairs.push((s, t)),
                _ => return Err(AlignError::BadLexiconLine { line: i + 1 }),
            }
        }
        Ok(Self::new(pairs))
    }

    pub fn load(path: &Path) -> Result<Self, AlignError> {
        let text = std::fs::read_to_string(path).map_err(|source| AlignError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (a, b) in &self.pairs {
            let _ = writeln!(s, "{a}\t{b}");
        }
        s
    }
}

/// Orthogonal `Q` minimizing `sum_i |Q x_i - y_i|^2` over the lexicon pairs
/// present in both vocabularies (`x` from `source`, `y` from `target`).
pub fn procrustes_align(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    lexicon: &BilingualLexicon,
) -> Result<AlignmentMap, AlignError> {
    for m in [source, target] {
        if !m.is_normalized() {
            return Err(EmbeddingError::NotNormalized.into());
        }
    }
    let d = source.dim();
    if target.dim() != d {
        return Err(AlignError::DimensionMismatch { expected: d, found: target.dim() });
    }
    let resolved: Vec<(&[f64], &[f64])> =
        lexicon.pairs.iter().filter_map(|(s, t)| Some((source.row_of(s)?, target.row_of(t)?))).collect();
    if resolved.len() < 2 {
        return Err(AlignError::InsufficientPairs(resolved.len()));
    }
    if resolved.len() < d {
        log::warn!("procrustes: {} lexicon pairs for dimension {d}; the fit is underdetermined", resolved.len());
    }

    let mut cross = DMatrix::<f64>::zeros(d, d);
    for (x, y) in &resolved {
        for i in 0..d {
            let yi = y[i];
            for j in 0..d {
                cross[(i, j)] += yi * x[j];
            }
        }
    }
    let svd = nalgebra::linalg::SVD::new(cross, true, true);
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if largest <= f64::EPSILON {
        return Err(AlignError::DegenerateLexicon);
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let q = u * v_t;
    let mut map = AlignmentMap { dim: d, q: (0..d * d).map(|k| q[(k / d, k % d)]).collect(), fit_residual: 0.0 };

    let sq: f64 = resolved
        .iter()
        .map(|(x, y)| map.apply(x).iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    map.fit_residual = (sq / resolved.len() as f64).sqrt();
    Ok(map)
}

/// Scores every foreign word with `sigmoid(w . (Q x) + b)` and returns the top `k`.
/// With `map = None` the spaces are taken to be aligned already.
pub fn apply_dimension_foreign(
    dim: &SupervisedDimension,
    foreign: &EmbeddingMatrix,
    map: Option<&AlignmentMap>,
    k: usize,
) -> Result<CandidateList, AlignError> {
    let scores = foreign_scores(dim, foreign, map)?;
    Ok(top_k(foreign.vocab(), &scores, k, |_| true))
}

/// Whole-vocabulary foreign scores.
pub fn foreign_scores(
    dim: &SupervisedDimension,
    foreign: &EmbeddingMatrix,
    map: Option<&AlignmentMap>,
) -> Result<Vec<f64>, AlignError> {
    if dim.dim() != foreign.dim() {
        return Err(AlignError::DimensionMismatch { expected: dim.dim(), found: foreign.dim() });
    }
    let weights = match map {
        Some(m) => {
            m.check_dim(dim.dim())?;
            m.apply_transpose(&dim.weights)
        }
        None => dim.weights.clone(),
    };
    Ok(foreign.score_all(&weights, dim.bias)?)
}
