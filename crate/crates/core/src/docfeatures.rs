//! Document-level features from supervised dimensions: tokenization, mean
//! activations per document, max-activation word assignment and a scatter
//! CSV for two chosen dimensions.

use std::collections::HashSet;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{SupervisedDimension, TrainError};
use crate::embedding::{EmbeddingError, EmbeddingMatrix, WordId};

/// Default floor below which a word is left unassigned.
pub const ASSIGNMENT_FLOOR: f64 = 0.5;

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en_v1.txt");

#[derive(Debug, Error)]
pub enum DocError {
    #[error("at least one dimension is required")]
    NoDimensions,
    #[error("document has no in-vocabulary, non-stopword tokens")]
    EmptyDocument,
    #[error("scatter axes must be two distinct dimensions")]
    IdenticalAxes,
    #[error("cannot write {path}: {source}")]
    FileUnwritable { path: PathBuf, source: io::Error },
    #[error("cannot read {path}: {source}")]
    FileUnreadable { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Tokens in document order. Never contains an empty string.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl<S: Into<String>> FromIterator<S> for TokenList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenList(iter.into_iter().map(Into::into).filter(|t: &String| !t.is_empty()).collect())
    }
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '\''
}

/// Splits on Unicode whitespace and strips leading/trailing characters other
/// than letters, digits, hyphens and apostrophes. Case is preserved.
pub fn tokenize(text: &str) -> TokenList {
    TokenList(
        text.split_whitespace()
            .map(|t| t.trim_matches(|c: char| !is_token_char(c)))
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect(),
    )
}

/// Stop word set, matched case-insensitively.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopWords {
    words: HashSet<String>,
}

impl StopWords {
    pub fn none() -> Self {
        StopWords::default()
    }

    /// The bundled 179-word English list (version 1).
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    /// One word per line; blank lines and surrounding whitespace are ignored.
    pub fn parse(text: &str) -> Self {
        StopWords { words: text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_lowercase).collect() }
    }

    pub fn load(path: &Path) -> Result<Self, DocError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| DocError::FileUnreadable { path: path.into(), source })?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, token: &str) -> bool {
        !self.words.is_empty() && self.words.contains(&token.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocFeatureVector {
    pub doc_id: String,
    /// One mean activation per dimension, in dimension order.
    pub values: Vec<f64>,
    pub token_count_used: usize,
}

/// Token ids that are in the vocabulary and not stop words, optionally
/// keeping only the first occurrence of each.
pub fn eligible_ids(tokens: &TokenList, matrix: &EmbeddingMatrix, stopwords: &StopWords, dedupe: bool) -> Vec<WordId> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .filter(|t| !stopwords.contains(t))
        .filter_map(|t| matrix.vocab().get(t))
        .filter(|id| !dedupe || seen.insert(*id))
        .collect()
}

fn check_dims(dims: &[SupervisedDimension], matrix: &EmbeddingMatrix) -> Result<(), DocError> {
    if dims.is_empty() {
        return Err(DocError::NoDimensions);
    }
    if !matrix.is_normalized() {
        return Err(EmbeddingError::NotNormalized.into());
    }
    for d in dims {
        if d.dim() != matrix.dim() {
            return Err(TrainError::DimensionMismatch { expected: matrix.dim(), found: d.dim() }.into());
        }
    }
    Ok(())
}

/// Mean of `sigmoid(w_j . x + b_j)` over the document's eligible tokens, for
/// each dimension `j`.
pub fn doc_features(
    doc_id: &str,
    tokens: &TokenList,
    dims: &[SupervisedDimension],
    matrix: &EmbeddingMatrix,
    stopwords: &StopWords,
    dedupe: bool,
) -> Result<DocFeatureVector, DocError> {
    check_dims(dims, matrix)?;
    let ids = eligible_ids(tokens, matrix, stopwords, dedupe);
    if ids.is_empty() {
        return Err(DocError::EmptyDocument);
    }
    let mut sums = vec![0.0; dims.len()];
    for &id in &ids {
        let row = matrix.row(id);
        for (s, d) in sums.iter_mut().zip(dims) {
            *s += d.score(row)?;
        }
    }
    let n = ids.len() as f64;
    Ok(DocFeatureVector {
        doc_id: doc_id.to_owned(),
        values: sums.into_iter().map(|s| s / n).collect(),
        token_count_used: ids.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dimension", rename_all = "snake_case")]
pub enum Assignment {
    Dimension(String),
    Unassigned,
    UnknownWord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordAssignment {
    pub word: String,
    pub assignment: Assignment,
    /// Highest score over the dimensions; absent for unknown words.
    pub max_score: Option<f64>,
}

/// Scores of one word under each dimension, or `None` if it is not in the vocabulary.
pub fn word_scores(
    word: &str,
    dims: &[SupervisedDimension],
    matrix: &EmbeddingMatrix,
) -> Result<Option<Vec<f64>>, DocError> {
    check_dims(dims, matrix)?;
    let Some(row) = matrix.row_of(word) else {
        return Ok(None);
    };
    Ok(Some(dims.iter().map(|d| d.score(row)).collect::<Result<_, _>>()?))
}

/// Assigns each word to its highest-scoring dimension (earliest on ties), or
/// leaves it unassigned when that score is below `floor`.
pub fn assign_words<S: AsRef<str>>(
    words: &[S],
    dims: &[SupervisedDimension],
    matrix: &EmbeddingMatrix,
    floor: f64,
) -> Result<Vec<WordAssignment>, DocError> {
    check_dims(dims, matrix)?;
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        let word = w.as_ref().to_owned();
        let Some(scores) = word_scores(&word, dims, matrix)? else {
            out.push(WordAssignment { word, assignment: Assignment::UnknownWord, max_score: None });
            continue;
        };
        let (best, max) =
            scores
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, &s)| if s > bs { (i, s) } else { (bi, bs) });
        let assignment =
            if max < floor { Assignment::Unassigned } else { Assignment::Dimension(dims[best].name.clone()) };
        out.push(WordAssignment { word, assignment, max_score: Some(max) });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScatterSummary {
    pub documents: usize,
    pub empty_documents: usize,
}

/// Writes `doc_id,x,y,token_count` rows, x and y being the document features
/// under `dim_x` and `dim_y` (stop words removed, no dedupe). Documents with
/// no eligible tokens get empty x and y and a token count of 0.
pub fn scatter_export(
    docs: &[(String, String)],
    dim_x: &SupervisedDimension,
    dim_y: &SupervisedDimension,
    matrix: &EmbeddingMatrix,
    stopwords: &StopWords,
    path: &Path,
) -> Result<ScatterSummary, DocError> {
    if dim_x == dim_y {
        return Err(DocError::IdenticalAxes);
    }
    let dims = [dim_x.clone(), dim_y.clone()];
    check_dims(&dims, matrix)?;
    let unwritable = |source: io::Error| DocError::FileUnwritable { path: path.into(), source };
    let mut wtr = csv::Writer::from_path(path).map_err(|e| unwritable(e.into()))?;
    wtr.write_record(["doc_id", "x", "y", "token_count"]).map_err(|e| unwritable(e.into()))?;
    let mut summary = ScatterSummary::default();
    for (doc_id, text) in docs {
        summary.documents += 1;
        let record = match doc_features(doc_id, &tokenize(text), &dims, matrix, stopwords, false) {
            Ok(f) => [doc_id.clone(), f.values[0].to_string(), f.values[1].to_string(), f.token_count_used.to_string()],
            Err(DocError::EmptyDocument) => {
                summary.empty_documents += 1;
                [doc_id.clone(), String::new(), String::new(), "0".into()]
            }
            Err(e) => return Err(e),
        };
        wtr.write_record(&record).map_err(|e| unwritable(e.into()))?;
    }
    wtr.flush().map_err(unwritable)?;
    Ok(summary)
}
