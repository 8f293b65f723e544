//! Weighted, L2-regularized binary logistic regression over embedding rows.
//!
//! The objective minimized by [`train`] is
//!
//! ```text
//! L(w, b) = sum_i c_i * CE(y_i, sigmoid(w . x_i + b)) + (lambda / 2) * |w|^2
//! ```
//!
//! where `c_i` is the positive class weight for positives and 1 for
//! negatives. The bias is not regularized. Optimization is full-batch gradient
//! descent with Armijo backtracking, started from the origin, so a fit is a
//! deterministic function of its inputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingMatrix, WordId};
use crate::math::{dot, inf_norm_with, sigmoid, softplus};

pub const DIMENSION_FORMAT_VERSION: u32 = 1;

const ARMIJO_SLOPE: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const INITIAL_STEP: f64 = 1.0;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} class is empty")]
    EmptyClass(Class),
    #[error("word {0} is labeled both positive and negative")]
    OverlappingLabels(WordId),
    #[error("word id {0} is outside the vocabulary")]
    UnknownWordId(WordId),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Class {
    Positive,
    Negative,
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Class::Positive => "positive",
            Class::Negative => "negative",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub positive_class_weight: f64,
    /// Coefficient on `0.5 * |w|^2`.
    pub l2_strength: f64,
    /// Stop once the gradient infinity norm is at or below this.
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { positive_class_weight: 2.0, l2_strength: 1.0, tolerance: 1e-8, max_iterations: 1000 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.positive_class_weight >= 1.0 && self.positive_class_weight.is_finite()) {
            return Err(TrainError::InvalidConfig("positive_class_weight must be >= 1"));
        }
        if !(self.l2_strength > 0.0 && self.l2_strength.is_finite()) {
            return Err(TrainError::InvalidConfig("l2_strength must be > 0"));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(TrainError::InvalidConfig("tolerance must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(TrainError::InvalidConfig("max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Disjoint positive and negative word sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub positives: BTreeSet<WordId>,
    pub negatives: BTreeSet<WordId>,
}

impl LabeledSet {
    pub fn new(positives: impl IntoIterator<Item = WordId>, negatives: impl IntoIterator<Item = WordId>) -> Self {
        LabeledSet { positives: positives.into_iter().collect(), negatives: negatives.into_iter().collect() }
    }

    pub fn validate(&self, vocab_len: usize) -> Result<(), TrainError> {
        if self.positives.is_empty() {
            return Err(TrainError::EmptyClass(Class::Positive));
        }
        if self.negatives.is_empty() {
            return Err(TrainError::EmptyClass(Class::Negative));
        }
        if let Some(id) = self.positives.intersection(&self.negatives).next() {
            return Err(TrainError::OverlappingLabels(*id));
        }
        let out_of_range = |s: &BTreeSet<WordId>| s.iter().next_back().copied().filter(|id| id.index() >= vocab_len);
        if let Some(id) = out_of_range(&self.positives).or_else(|| out_of_range(&self.negatives)) {
            return Err(TrainError::UnknownWordId(id));
        }
        Ok(())
    }

    pub fn contains(&self, id: WordId) -> bool {
        self.positives.contains(&id) || self.negatives.contains(&id)
    }
}

/// Borrowed feature rows with binary targets; the unit `train` works on.
#[derive(Clone, Debug)]
pub struct TrainingData<'a> {
    dim: usize,
    rows: Vec<&'a [f64]>,
    positive: Vec<bool>,
}

impl<'a> TrainingData<'a> {
    pub fn new(dim: usize) -> Self {
        TrainingData { dim, rows: Vec::new(), positive: Vec::new() }
    }

    pub fn push(&mut self, row: &'a [f64], positive: bool) -> Result<(), TrainError> {
        if row.len() != self.dim {
            return Err(TrainError::DimensionMismatch { expected: self.dim, found: row.len() });
        }
        self.rows.push(row);
        self.positive.push(positive);
        Ok(())
    }

    /// Positives first (ascending id), then negatives (ascending id).
    pub fn from_labels(matrix: &'a EmbeddingMatrix, labels: &LabeledSet) -> Result<Self, TrainError> {
        labels.validate(matrix.len())?;
        let mut data = TrainingData::new(matrix.dim());
        for &id in &labels.positives {
            data.push(matrix.row(id), true)?;
        }
        for &id in &labels.negatives {
            data.push(matrix.row(id), false)?;
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_classes(&self) -> Result<(), TrainError> {
        if !self.positive.iter().any(|&p| p) {
            return Err(TrainError::EmptyClass(Class::Positive));
        }
        if self.positive.iter().all(|&p| p) {
            return Err(TrainError::EmptyClass(Class::Negative));
        }
        Ok(())
    }

    /// Objective value; when `grad` is given it is overwritten with
    /// `(dL/dw, dL/db)`.
    fn objective(&self, config: &TrainConfig, w: &[f64], b: f64, grad: Option<(&mut [f64], &mut f64)>) -> f64 {
        let mut loss = 0.0;
        match grad {
            None => {
                for (x, &pos) in self.rows.iter().zip(&self.positive) {
                    let z = dot(w, x) + b;
                    let c = if pos { config.positive_class_weight } else { 1.0 };
                    loss += c * softplus(if pos { -z } else { z });
                }
            }
            Some((gw, gb)) => {
                for (g, wj) in gw.iter_mut().zip(w) {
                    *g = config.l2_strength * wj;
                }
                *gb = 0.0;
                for (x, &pos) in self.rows.iter().zip(&self.positive) {
                    let z = dot(w, x) + b;
                    let (c, y) = if pos { (config.positive_class_weight, 1.0) } else { (1.0, 0.0) };
                    loss += c * softplus(if pos { -z } else { z });
                    let r = c * (sigmoid(z) - y);
                    *gb += r;
                    for (g, xj) in gw.iter_mut().zip(x.iter()) {
                        *g += r * xj;
                    }
                }
            }
        }
        loss + 0.5 * config.l2_strength * dot(w, w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_bias: f64,
}

/// Which stopping rule ended an optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    GradientTolerance,
    MaxIterations,
    /// Backtracking could not find an acceptable step; the iterate is left at
    /// the last accepted point.
    LineSearchStalled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub stop: StopCondition,
    pub iterations: u32,
    pub loss: f64,
    pub gradient_inf_norm: f64,
}

/// A learned linear projection: `sigmoid(weights . x + bias)` is the
/// probability that the word behind `x` belongs to the dimension's topic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DimensionWire", into = "DimensionWire")]
pub struct SupervisedDimension {
    pub name: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained_rounds: u32,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct DimensionWire {
    format_version: u32,
    name: String,
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
    trained_rounds: u32,
    config: TrainConfig,
}

impl TryFrom<DimensionWire> for SupervisedDimension {
    type Error = String;

    fn try_from(w: DimensionWire) -> Result<Self, String> {
        if w.format_version != DIMENSION_FORMAT_VERSION {
            return Err(format!("unsupported dimension format_version {}", w.format_version));
        }
        if w.weights.len() != w.dim {
            return Err(format!("dim is {} but {} weights were given", w.dim, w.weights.len()));
        }
        Ok(SupervisedDimension {
            name: w.name,
            weights: w.weights,
            bias: w.bias,
            trained_rounds: w.trained_rounds,
            config: w.config,
        })
    }
}

impl From<SupervisedDimension> for DimensionWire {
    fn from(d: SupervisedDimension) -> Self {
        DimensionWire {
            format_version: DIMENSION_FORMAT_VERSION,
            name: d.name,
            dim: d.weights.len(),
            weights: d.weights,
            bias: d.bias,
            trained_rounds: d.trained_rounds,
            config: d.config,
        }
    }
}

impl SupervisedDimension {
    /// A dimension with explicit parameters, e.g. loaded from elsewhere.
    pub fn from_parameters(name: impl Into<String>, weights: Vec<f64>, bias: f64) -> Self {
        SupervisedDimension { name: name.into(), weights, bias, trained_rounds: 0, config: TrainConfig::default() }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Raw projection `w . x + b`.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64, TrainError> {
        if x.len() != self.weights.len() {
            return Err(TrainError::DimensionMismatch { expected: self.weights.len(), found: x.len() });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, TrainError> {
        self.decision_value(x).map(sigmoid)
    }

    /// Scores every vocabulary row of `matrix`.
    pub fn score_all(&self, matrix: &EmbeddingMatrix) -> Result<Vec<f64>, EmbeddingError> {
        matrix.score_all(&self.weights, self.bias)
    }
}

pub fn decision_value(dim: &SupervisedDimension, x: &[f64]) -> Result<f64, TrainError> {
    dim.decision_value(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub dimension: SupervisedDimension,
    pub report: FitReport,
}

/// Fits a supervised dimension on labeled vocabulary rows.
pub fn train(
    name: &str,
    matrix: &EmbeddingMatrix,
    labels: &LabeledSet,
    config: &TrainConfig,
) -> Result<Trained, TrainError> {
    if !matrix.is_normalized() {
        return Err(EmbeddingError::NotNormalized.into());
    }
    let data = TrainingData::from_labels(matrix, labels)?;
    let (weights, bias, report) = fit(&data, config)?;
    Ok(Trained {
        dimension: SupervisedDimension { name: name.to_owned(), weights, bias, trained_rounds: 0, config: *config },
        report,
    })
}

/// Analytic objective and gradient at `(weights, bias)`.
pub fn loss_and_gradient(
    matrix: &EmbeddingMatrix,
    labels: &LabeledSet,
    config: &TrainConfig,
    weights: &[f64],
    bias: f64,
) -> Result<LossGradient, TrainError> {
    config.validate()?;
    let data = TrainingData::from_labels(matrix, labels)?;
    data_loss_and_gradient(&data, config, weights, bias)
}

pub fn data_loss_and_gradient(
    data: &TrainingData<'_>,
    config: &TrainConfig,
    weights: &[f64],
    bias: f64,
) -> Result<LossGradient, TrainError> {
    if weights.len() != data.dim {
        return Err(TrainError::DimensionMismatch { expected: data.dim, found: weights.len() });
    }
    let mut grad_weights = vec![0.0; data.dim];
    let mut grad_bias = 0.0;
    let loss = data.objective(config, weights, bias, Some((&mut grad_weights, &mut grad_bias)));
    Ok(LossGradient { loss, grad_weights, grad_bias })
}

/// Minimizes the weighted, regularized cross-entropy over `data`.
pub fn fit(data: &TrainingData<'_>, config: &TrainConfig) -> Result<(Vec<f64>, f64, FitReport), TrainError> {
    config.validate()?;
    data.check_classes()?;
    let d = data.dim;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    let mut gb = 0.0;
    let mut loss = data.objective(config, &w, b, Some((&mut gw, &mut gb)));

    let mut trial_w = vec![0.0; d];
    let mut trial_gw = vec![0.0; d];
    let mut iterations = 0;
    let mut stop = StopCondition::MaxIterations;

    while iterations < config.max_iterations {
        let gnorm = inf_norm_with(&gw, gb);
        if gnorm <= config.tolerance {
            stop = StopCondition::GradientTolerance;
            break;
        }
        let g2 = dot(&gw, &gw) + gb * gb;
        let mut step = INITIAL_STEP;
        let accepted = loop {
            for ((t, wj), gj) in trial_w.iter_mut().zip(&w).zip(&gw) {
                *t = wj - step * gj;
            }
            let trial_b = b - step * gb;
            let mut trial_gb = 0.0;
            let trial_loss = data.objective(config, &trial_w, trial_b, Some((&mut trial_gw, &mut trial_gb)));
            let armijo = trial_loss <= loss - ARMIJO_SLOPE * step * g2;
            // Near the optimum the sufficient decrease falls below the
            // resolution of `loss`; progress is then judged on the gradient.
            let at_resolution =
                trial_loss - loss <= 8.0 * f64::EPSILON * loss.abs() && inf_norm_with(&trial_gw, trial_gb) < gnorm;
            if armijo || at_resolution {
                break Some((trial_loss, trial_b, trial_gb));
            }
            step *= BACKTRACK_SHRINK;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some((trial_loss, trial_b, trial_gb)) = accepted else {
            stop = StopCondition::LineSearchStalled;
            break;
        };
        std::mem::swap(&mut w, &mut trial_w);
        std::mem::swap(&mut gw, &mut trial_gw);
        b = trial_b;
        gb = trial_gb;
        loss = trial_loss;
        iterations += 1;
    }
    let gradient_inf_norm = inf_norm_with(&gw, gb);
    if stop == StopCondition::MaxIterations && gradient_inf_norm <= config.tolerance {
        stop = StopCondition::GradientTolerance;
    }
    Ok((w, b, FitReport { stop, iterations, loss, gradient_inf_norm }))
}
