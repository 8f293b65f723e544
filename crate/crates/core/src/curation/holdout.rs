//! Held-out evaluation of a dimension trained on part of an expert label set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::classifier::{self, LabeledSet, TrainConfig};
use crate::embedding::{EmbeddingMatrix, WordId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutOptions {
    pub fraction: f64,
    pub rng_seed: u64,
    pub threshold: f64,
}

impl Default for HoldoutOptions {
    fn default() -> Self {
        HoldoutOptions { fraction: 0.10, rng_seed: 0, threshold: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    /// 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_positive)
    }

    /// 0 when there are no actual positives.
    pub fn recall(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: &Confusion) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.true_negative += other.true_negative;
        self.false_negative += other.false_negative;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

impl From<Confusion> for HoldoutReport {
    fn from(confusion: Confusion) -> Self {
        HoldoutReport { precision: confusion.precision(), recall: confusion.recall(), f1: confusion.f1(), confusion }
    }
}

/// Micro and macro F1 across several dimensions' holdout reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSummary {
    pub dimensions: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

impl HoldoutSummary {
    pub fn from_reports(reports: &[HoldoutReport]) -> Self {
        let mut pooled = Confusion::default();
        for r in reports {
            pooled.add(&r.confusion);
        }
        let macro_f1 =
            if reports.is_empty() { 0.0 } else { reports.iter().map(|r| r.f1).sum::<f64>() / reports.len() as f64 };
        HoldoutSummary { dimensions: reports.len(), micro_f1: pooled.f1(), macro_f1 }
    }
}

/// Stratified split: each class keeps at least one word on each side.
fn split(ids: &[WordId], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<WordId>, Vec<WordId>) {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(rng);
    let held = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let train = shuffled.split_off(held);
    (train, shuffled)
}

/// Trains on the retained labels and scores the held-out words at
/// `options.threshold`.
pub fn evaluate_holdout(
    matrix: &EmbeddingMatrix,
    labels: &LabeledSet,
    config: &TrainConfig,
    options: &HoldoutOptions,
) -> Result<HoldoutReport, CurationError> {
    if !(options.fraction > 0.0 && options.fraction < 1.0) {
        return Err(CurationError::InvalidFraction(options.fraction));
    }
    if !(options.threshold > 0.0 && options.threshold < 1.0) {
        return Err(CurationError::InvalidThreshold(options.threshold));
    }
    let (np, nn) = (labels.positives.len(), labels.negatives.len());
    if np < 2 || nn < 2 {
        return Err(CurationError::InsufficientLabels { positives: np, negatives: nn });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
    let positives: Vec<WordId> = labels.positives.iter().copied().collect();
    let negatives: Vec<WordId> = labels.negatives.iter().copied().collect();
    let (train_pos, held_pos) = split(&positives, options.fraction, &mut rng);
    let (train_neg, held_neg) = split(&negatives, options.fraction, &mut rng);

    let trained = classifier::train("holdout", matrix, &LabeledSet::new(train_pos, train_neg), config)?;
    let dim = &trained.dimension;
    let mut confusion = Confusion::default();
    for (ids, actual) in [(&held_pos, true), (&held_neg, false)] {
        for &id in ids {
            let predicted = dim.score(matrix.row(id))? >= options.threshold;
            match (predicted, actual) {
                (true, true) => confusion.true_positive += 1,
                (true, false) => confusion.false_positive += 1,
                (false, false) => confusion.true_negative += 1,
                (false, true) => confusion.false_negative += 1,
            }
        }
    }
    Ok(confusion.into())
}
