//! Top-k selection over whole-vocabulary score vectors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{Vocab, WordId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub word: String,
    pub id: WordId,
    pub score: f64,
}

/// Candidates ordered by score descending, ties broken by ascending id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateList {
    pub entries: Vec<Candidate>,
}

impl CandidateList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.word.as_str())
    }
}

/// Score-descending, id-ascending total order.
#[inline]
pub fn rank_order(a: (f64, u32), b: (f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` best entries of `scores` whose ids pass `keep`.
pub fn top_k(vocab: &Vocab, scores: &[f64], k: usize, mut keep: impl FnMut(WordId) -> bool) -> CandidateList {
    let mut pool: Vec<(f64, u32)> =
        scores.iter().enumerate().filter(|(i, _)| keep(WordId(*i as u32))).map(|(i, &s)| (s, i as u32)).collect();
    if k < pool.len() {
        if k > 0 {
            pool.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
        }
        pool.truncate(k);
    }
    pool.sort_unstable_by(|a, b| rank_order(*a, *b));
    CandidateList {
        entries: pool
            .into_iter()
            .map(|(score, i)| Candidate { word: vocab.word(WordId(i)).to_owned(), id: WordId(i), score })
            .collect(),
    }
}
