use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::classifier::SupervisedDimension;
use crate::embedding::{EmbeddingMatrix, WordId};
use crate::ranking::rank_order;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub word: String,
    pub score: f64,
}

/// Thresholded word list exported from a dimension, score-descending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub dimension_name: String,
    pub threshold: f64,
    pub entries: Vec<DictionaryEntry>,
}

impl Dictionary {
    /// All words scoring `>= threshold`, skipping ids for which `exclude` is true.
    pub fn from_dimension(
        dim: &SupervisedDimension,
        matrix: &EmbeddingMatrix,
        threshold: f64,
        mut exclude: impl FnMut(WordId) -> bool,
    ) -> Result<Self, CurationError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(CurationError::InvalidThreshold(threshold));
        }
        let scores = dim.score_all(matrix)?;
        let mut kept: Vec<(f64, u32)> = scores
            .iter()
            .enumerate()
            .filter(|&(i, &s)| s >= threshold && !exclude(WordId(i as u32)))
            .map(|(i, &s)| (s, i as u32))
            .collect();
        kept.sort_unstable_by(|a, b| rank_order(*a, *b));
        Ok(Dictionary {
            dimension_name: dim.name.clone(),
            threshold,
            entries: kept
                .into_iter()
                .map(|(score, i)| DictionaryEntry { word: matrix.vocab().word(WordId(i)).to_owned(), score })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.iter().any(|e| e.word == word)
    }

    /// One `word<TAB>score` line per entry, score with 6 decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{:.6}", e.word, e.score);
        }
        out
    }
}
