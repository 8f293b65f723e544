//! The interactive curation loop: seed keywords, sample negatives, train,
//! rank unlabeled words, take expert labels, repeat.

mod dictionary;
mod holdout;

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::atomic_write;
use crate::classifier::{self, LabeledSet, StopCondition, SupervisedDimension, TrainConfig, TrainError};
use crate::embedding::{EmbeddingError, EmbeddingMatrix, WordId};
use crate::ranking::{top_k, Candidate, CandidateList};

pub use dictionary::{Dictionary, DictionaryEntry};
pub use holdout::{evaluate_holdout, Confusion, HoldoutOptions, HoldoutReport, HoldoutSummary};

pub const SESSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("at least one seed word is required")]
    EmptySeeds,
    #[error("no unlabeled words are left to sample negatives from")]
    VocabularyExhausted,
    #[error("words both accepted and rejected: {0:?}")]
    OverlappingLabels(Vec<String>),
    #[error("the session has not been trained yet")]
    NotTrained,
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
    #[error("candidate count must be at least 1")]
    InvalidCandidateCount,
    #[error(
        "each class needs at least 2 labels for a stratified split (positives {positives}, negatives {negatives})"
    )]
    InsufficientLabels { positives: usize, negatives: usize },
    #[error("holdout fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("session was created against a different vocabulary")]
    VocabMismatch,
    #[error("session format version {found:?} is not supported (expected {SESSION_FORMAT_VERSION})")]
    VersionMismatch { found: Option<u64> },
    #[error("corrupt session file: {0}")]
    CorruptFile(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Auto-negative sample size: `clamp(per_positive * |positives|, min, max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSampling {
    pub per_positive: usize,
    pub min: usize,
    pub max: usize,
}

impl Default for NegativeSampling {
    fn default() -> Self {
        NegativeSampling { per_positive: 10, min: 100, max: 1000 }
    }
}

impl NegativeSampling {
    /// Train on expert negatives only.
    pub fn disabled() -> Self {
        NegativeSampling { per_positive: 0, min: 0, max: 0 }
    }

    pub fn sample_size(&self, positives: usize) -> usize {
        self.per_positive.saturating_mul(positives).clamp(self.min, self.max.max(self.min))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

/// One change of a word's expert label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    /// Number of rounds completed when the label was applied.
    pub round: u32,
    pub word: WordId,
    pub label: Label,
    pub previous: Option<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: u32,
    pub positives: usize,
    pub negatives: usize,
    pub auto_negatives: usize,
    pub stop: StopCondition,
    pub iterations: u32,
    pub loss: f64,
    pub top_k: Vec<Candidate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positives: usize,
    pub negatives: usize,
    pub auto_negatives: usize,
}

/// Mutable state of one curation effort. All operations leave the session
/// untouched when they return an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationSession {
    id: String,
    dimension_name: String,
    vocab_fingerprint: String,
    labels: LabeledSet,
    auto_negatives: BTreeSet<WordId>,
    round: u32,
    rng_seed: u64,
    sampling: NegativeSampling,
    current_dimension: Option<SupervisedDimension>,
    history: Vec<RoundRecord>,
    label_log: Vec<LabelEvent>,
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    format_version: u32,
    #[serde(flatten)]
    session: CurationSession,
}

impl CurationSession {
    /// Starts a session whose positives are the given seed words.
    pub fn init<S: AsRef<str>>(
        id: impl Into<String>,
        dimension_name: impl Into<String>,
        matrix: &EmbeddingMatrix,
        seeds: &[S],
        rng_seed: u64,
    ) -> Result<Self, CurationError> {
        if seeds.is_empty() {
            return Err(CurationError::EmptySeeds);
        }
        let positives = seeds.iter().map(|s| resolve(matrix, s.as_ref())).collect::<Result<_, _>>()?;
        Ok(CurationSession {
            id: id.into(),
            dimension_name: dimension_name.into(),
            vocab_fingerprint: matrix.vocab().fingerprint(),
            labels: LabeledSet { positives, negatives: BTreeSet::new() },
            auto_negatives: BTreeSet::new(),
            round: 0,
            rng_seed,
            sampling: NegativeSampling::default(),
            current_dimension: None,
            history: Vec::new(),
            label_log: Vec::new(),
        })
    }

    pub fn with_sampling(mut self, sampling: NegativeSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dimension_name(&self) -> &str {
        &self.dimension_name
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn labels(&self) -> &LabeledSet {
        &self.labels
    }

    pub fn auto_negatives(&self) -> &BTreeSet<WordId> {
        &self.auto_negatives
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn sampling(&self) -> NegativeSampling {
        self.sampling
    }

    pub fn current_dimension(&self) -> Option<&SupervisedDimension> {
        self.current_dimension.as_ref()
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn label_log(&self) -> &[LabelEvent] {
        &self.label_log
    }

    pub fn counts(&self) -> LabelCounts {
        LabelCounts {
            positives: self.labels.positives.len(),
            negatives: self.labels.negatives.len(),
            auto_negatives: self.auto_negatives.len(),
        }
    }

    /// Fails with [`CurationError::VocabMismatch`] unless `matrix` is the
    /// vocabulary the session's word ids refer to.
    pub fn check_vocab(&self, matrix: &EmbeddingMatrix) -> Result<(), CurationError> {
        if matrix.vocab().fingerprint() == self.vocab_fingerprint {
            Ok(())
        } else {
            Err(CurationError::VocabMismatch)
        }
    }

    fn draw_negatives(&self, matrix: &EmbeddingMatrix) -> Result<BTreeSet<WordId>, CurationError> {
        let wanted = self.sampling.sample_size(self.labels.positives.len());
        if wanted == 0 {
            return Ok(BTreeSet::new());
        }
        let available: Vec<u32> = (0..matrix.len() as u32).filter(|&i| !self.labels.contains(WordId(i))).collect();
        if available.is_empty() {
            return Err(CurationError::VocabularyExhausted);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed ^ u64::from(self.round));
        let amount = wanted.min(available.len());
        Ok(rand::seq::index::sample(&mut rng, available.len(), amount)
            .into_iter()
            .map(|i| WordId(available[i]))
            .collect())
    }

    /// Replaces the auto-negatives with a fresh uniform sample drawn without
    /// replacement from the unlabeled vocabulary, seeded by
    /// `rng_seed ^ round`.
    pub fn sample_negatives(&mut self, matrix: &EmbeddingMatrix) -> Result<(), CurationError> {
        self.auto_negatives = self.draw_negatives(matrix)?;
        Ok(())
    }

    /// Resamples auto-negatives, trains on positives against expert and
    /// automatic negatives, then returns the `k` best-scoring unlabeled words.
    pub fn run_round(
        &mut self,
        matrix: &EmbeddingMatrix,
        config: &TrainConfig,
        k: usize,
    ) -> Result<CandidateList, CurationError> {
        if k == 0 {
            return Err(CurationError::InvalidCandidateCount);
        }
        self.check_vocab(matrix)?;
        let auto_negatives = self.draw_negatives(matrix)?;
        let training = LabeledSet {
            positives: self.labels.positives.clone(),
            negatives: self.labels.negatives.union(&auto_negatives).copied().collect(),
        };
        let trained = classifier::train(&self.dimension_name, matrix, &training, config)?;
        let scores = trained.dimension.score_all(matrix)?;
        let candidates =
            top_k(matrix.vocab(), &scores, k, |id| !self.labels.contains(id) && !auto_negatives.contains(&id));

        let round = self.round + 1;
        let mut dimension = trained.dimension;
        dimension.trained_rounds = round;
        self.history.push(RoundRecord {
            round,
            positives: self.labels.positives.len(),
            negatives: self.labels.negatives.len(),
            auto_negatives: auto_negatives.len(),
            stop: trained.report.stop,
            iterations: trained.report.iterations,
            loss: trained.report.loss,
            top_k: candidates.entries.clone(),
        });
        self.auto_negatives = auto_negatives;
        self.current_dimension = Some(dimension);
        self.round = round;
        Ok(candidates)
    }

    /// Adds expert labels. A word that already carries the opposite label is
    /// moved; any labeled word leaves the auto-negative sample.
    pub fn apply_labels<S: AsRef<str>>(
        &mut self,
        matrix: &EmbeddingMatrix,
        accept: &[S],
        reject: &[S],
    ) -> Result<LabelCounts, CurationError> {
        self.check_vocab(matrix)?;
        let accept: Vec<WordId> = accept.iter().map(|w| resolve(matrix, w.as_ref())).collect::<Result<_, _>>()?;
        let reject: Vec<WordId> = reject.iter().map(|w| resolve(matrix, w.as_ref())).collect::<Result<_, _>>()?;
        let accept_set: BTreeSet<WordId> = accept.iter().copied().collect();
        let overlap: BTreeSet<WordId> = reject.iter().copied().filter(|id| accept_set.contains(id)).collect();
        if !overlap.is_empty() {
            return Err(CurationError::OverlappingLabels(
                overlap.into_iter().map(|id| matrix.vocab().word(id).to_owned()).collect(),
            ));
        }
        for (ids, label) in [(accept, Label::Positive), (reject, Label::Negative)] {
            for id in ids {
                self.set_label(id, label);
            }
        }
        Ok(self.counts())
    }

    fn set_label(&mut self, id: WordId, label: Label) {
        let previous = if self.labels.positives.contains(&id) {
            Some(Label::Positive)
        } else if self.labels.negatives.contains(&id) {
            Some(Label::Negative)
        } else {
            None
        };
        self.auto_negatives.remove(&id);
        if previous == Some(label) {
            return;
        }
        match label {
            Label::Positive => {
                self.labels.negatives.remove(&id);
                self.labels.positives.insert(id);
            }
            Label::Negative => {
                self.labels.positives.remove(&id);
                self.labels.negatives.insert(id);
            }
        }
        self.label_log.push(LabelEvent { round: self.round, word: id, label, previous });
    }

    /// Every vocabulary word scoring at least `threshold` under the current
    /// dimension, labeled positives included and expert negatives excluded.
    pub fn export_dictionary(&self, matrix: &EmbeddingMatrix, threshold: f64) -> Result<Dictionary, CurationError> {
        let dim = self.current_dimension.as_ref().ok_or(CurationError::NotTrained)?;
        self.check_vocab(matrix)?;
        Dictionary::from_dimension(dim, matrix, threshold, |id| self.labels.negatives.contains(&id))
    }

    fn check_invariants(&self) -> Result<(), String> {
        let l = &self.labels;
        if l.positives.intersection(&l.negatives).next().is_some()
            || l.positives.intersection(&self.auto_negatives).next().is_some()
            || l.negatives.intersection(&self.auto_negatives).next().is_some()
        {
            return Err("label sets overlap".into());
        }
        if self.round as usize != self.history.len() {
            return Err(format!("round {} but {} history records", self.round, self.history.len()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SessionFile { format_version: SESSION_FORMAT_VERSION, session: self.clone() })
            .expect("session serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CurationError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CurationError::CorruptFile(e.to_string()))?;
        let found = value.get("format_version").and_then(|v| v.as_u64());
        if found != Some(u64::from(SESSION_FORMAT_VERSION)) {
            return Err(CurationError::VersionMismatch { found });
        }
        let file: SessionFile = serde_json::from_value(value).map_err(|e| CurationError::CorruptFile(e.to_string()))?;
        file.session.check_invariants().map_err(CurationError::CorruptFile)?;
        Ok(file.session)
    }

    /// Writes the session atomically (temp file, fsync, rename).
    pub fn save(&self, path: &Path) -> Result<(), CurationError> {
        atomic_write(path, self.to_json().as_bytes())
            .map_err(|source| CurationError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CurationError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| CurationError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }
}

pub fn save_session(session: &CurationSession, path: &Path) -> Result<(), CurationError> {
    session.save(path)
}

pub fn load_session(path: &Path) -> Result<CurationSession, CurationError> {
    CurationSession::load(path)
}

fn resolve(matrix: &EmbeddingMatrix, word: &str) -> Result<WordId, CurationError> {
    matrix.vocab().get(word).ok_or_else(|| CurationError::UnknownWord(word.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_matrix(n: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::from_pairs((0..n).map(|i| {
            let t = i as f64 * 0.01;
            (format!("w{i}"), vec![t.cos(), t.sin(), 0.1])
        }))
        .unwrap()
        .normalize()
        .unwrap()
    }

    #[test]
    fn init_with_seeds() {
        let m = EmbeddingMatrix::from_pairs([
            ("smoking", vec![1.0, 0.0]),
            ("smoker", vec![0.9, 0.1]),
            ("tobacco", vec![0.8, 0.3]),
            ("fire", vec![0.0, 1.0]),
        ])
        .unwrap()
        .normalize()
        .unwrap();
        let s = CurationSession::init("s1", "smoking", &m, &["smoking", "smoker", "tobacco"], 1).unwrap();
        assert_eq!(s.labels().positives.len(), 3);
        assert!(s.labels().negatives.is_empty());
        assert_eq!(s.round(), 0);

        let e = CurationSession::init("s", "x", &m, &["zzz_not_a_word"], 1).unwrap_err();
        assert!(matches!(e, CurationError::UnknownWord(w) if w == "zzz_not_a_word"));
        let e = CurationSession::init::<&str>("s", "x", &m, &[], 1).unwrap_err();
        assert!(matches!(e, CurationError::EmptySeeds));
    }

    #[test]
    fn sample_size_clamps() {
        let s = NegativeSampling::default();
        assert_eq!(s.sample_size(3), 100);
        assert_eq!(s.sample_size(50), 500);
        assert_eq!(s.sample_size(200), 1000);
        assert_eq!(NegativeSampling::disabled().sample_size(50), 0);
    }

    #[test]
    fn negatives_are_seeded_and_avoid_labels() {
        let m = grid_matrix(2000);
        let mut s = CurationSession::init("s", "x", &m, &["w0", "w1", "w2"], 42).unwrap();
        s.sample_negatives(&m).unwrap();
        let first = s.auto_negatives().clone();
        assert_eq!(first.len(), 100);
        assert!(first.iter().all(|id| !s.labels().contains(*id)));
        s.sample_negatives(&m).unwrap();
        assert_eq!(&first, s.auto_negatives());

        let mut big =
            CurationSession::init("s", "x", &m, &(0..200).map(|i| format!("w{i}")).collect::<Vec<_>>(), 42).unwrap();
        big.sample_negatives(&m).unwrap();
        assert_eq!(big.auto_negatives().len(), 1000);
    }

    #[test]
    fn small_vocab_takes_everything_then_exhausts() {
        let m = grid_matrix(5);
        let mut s = CurationSession::init("s", "x", &m, &["w0", "w1"], 0).unwrap();
        s.sample_negatives(&m).unwrap();
        assert_eq!(s.auto_negatives().len(), 3);
        let mut all = CurationSession::init("s", "x", &m, &["w0", "w1", "w2", "w3", "w4"], 0).unwrap();
        assert!(matches!(all.sample_negatives(&m), Err(CurationError::VocabularyExhausted)));
    }

    #[test]
    fn apply_labels_moves_words() {
        let m = grid_matrix(500);
        let mut s = CurationSession::init("s", "x", &m, &["w0"], 3).unwrap();
        s.sample_negatives(&m).unwrap();
        let auto = *s.auto_negatives().iter().next().unwrap();
        let auto_word = m.vocab().word(auto).to_owned();
        let counts = s.apply_labels(&m, &[auto_word.as_str(), "w1"], &["w2"]).unwrap();
        assert_eq!(counts.positives, 3);
        assert_eq!(counts.negatives, 1);
        assert!(!s.auto_negatives().contains(&auto));

        s.apply_labels(&m, &["w2"], &[]).unwrap();
        assert!(s.labels().positives.contains(&WordId(2)));
        assert!(!s.labels().negatives.contains(&WordId(2)));
        let last = s.label_log().last().unwrap();
        assert_eq!((last.label, last.previous), (Label::Positive, Some(Label::Negative)));

        let before = s.clone();
        assert!(matches!(s.apply_labels(&m, &["w7"], &["w7"]), Err(CurationError::OverlappingLabels(_))));
        assert!(matches!(s.apply_labels(&m, &["w7", "nope"], &[]), Err(CurationError::UnknownWord(_))));
        assert_eq!(s, before);
    }

    #[test]
    fn run_round_rejects_zero_k_and_needs_training_for_export() {
        let m = grid_matrix(300);
        let mut s = CurationSession::init("s", "x", &m, &["w0"], 3).unwrap();
        assert!(matches!(s.export_dictionary(&m, 0.5), Err(CurationError::NotTrained)));
        assert!(matches!(s.run_round(&m, &TrainConfig::default(), 0), Err(CurationError::InvalidCandidateCount)));
        let c = s.run_round(&m, &TrainConfig::default(), 5).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(s.round(), 1);
        assert_eq!(s.history().len(), 1);
        assert!(matches!(s.export_dictionary(&m, 1.0), Err(CurationError::InvalidThreshold(_))));
    }

    #[test]
    fn json_round_trip_and_failures() {
        let m = grid_matrix(300);
        let mut s = CurationSession::init("s", "x", &m, &["w0", "w5"], 11).unwrap();
        s.run_round(&m, &TrainConfig::default(), 4).unwrap();
        s.apply_labels(&m, &["w6"], &["w200"]).unwrap();
        let back = CurationSession::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);

        let bumped = s.to_json().replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        assert!(matches!(CurationSession::from_json(&bumped), Err(CurationError::VersionMismatch { found: Some(7) })));
        let json = s.to_json();
        assert!(matches!(CurationSession::from_json(&json[..json.len() / 2]), Err(CurationError::CorruptFile(_))));
    }

    #[test]
    fn vocab_mismatch_is_detected() {
        let m = grid_matrix(300);
        let other = grid_matrix(301);
        let mut s = CurationSession::init("s", "x", &m, &["w0"], 1).unwrap();
        assert!(matches!(s.run_round(&other, &TrainConfig::default(), 3), Err(CurationError::VocabMismatch)));
    }
}
