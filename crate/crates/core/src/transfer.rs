//! Exporting dimensions for downstream models: dense-layer initializations,
//! precomputed per-word activation tables, and a small bag-of-embeddings
//! classifier that measures what the activations add.
//!
//! DenseInit JSON (format_version 1):
//!
//! ```text
//! { "format_version": 1, "names": [..], "dim": d,
//!   "weight_matrix": [[..d reals..], ..], "bias_vector": [..] }
//! ```
//!
//! Activation table binary cache (magic `SDAT`, version 1). Payload:
//!
//! ```text
//! vocab_hash  str
//! n_dims      u32
//! count       u64
//! names       n_dims x str
//! values      count*n_dims x f64, row-major (one row per word)
//! ```

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::{self, FrameError, PayloadReader, PayloadWriter};
use crate::classifier::{self, SupervisedDimension, TrainConfig, TrainError, TrainingData};
use crate::docfeatures::{self, DocError, StopWords};
use crate::embedding::{EmbeddingError, EmbeddingMatrix};
use crate::math::{dot, sigmoid};

pub const DENSE_INIT_FORMAT_VERSION: u32 = 1;
pub const ACTIVATION_TABLE_VERSION: u8 = 1;
const TABLE_MAGIC: &[u8; 4] = b"SDAT";
const ROW_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("at least one dimension is required")]
    NoDimensions,
    #[error("dimension {name:?} has {found} weights, expected {expected}")]
    MixedDimensionality { name: String, expected: usize, found: usize },
    #[error("need at least two classes in the training documents, found {0}")]
    InsufficientClasses(usize),
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("cannot read {path}: {source}")]
    FileUnreadable { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    FileUnwritable { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Doc(#[from] DocError),
}

fn shared_dim(dims: &[SupervisedDimension]) -> Result<usize, TransferError> {
    let first = dims.first().ok_or(TransferError::NoDimensions)?;
    let d = first.dim();
    for dim in dims {
        if dim.dim() != d {
            return Err(TransferError::MixedDimensionality { name: dim.name.clone(), expected: d, found: dim.dim() });
        }
    }
    Ok(d)
}

/// Dimensions stacked as an `n_dims x d` weight matrix plus bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseInit {
    names: Vec<String>,
    dim: usize,
    weight_matrix: Vec<Vec<f64>>,
    bias_vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseInitWire {
    format_version: u32,
    names: Vec<String>,
    dim: usize,
    weight_matrix: Vec<Vec<f64>>,
    bias_vector: Vec<f64>,
}

impl DenseInit {
    pub fn from_dimensions(dims: &[SupervisedDimension]) -> Result<Self, TransferError> {
        let dim = shared_dim(dims)?;
        Ok(DenseInit {
            names: dims.iter().map(|d| d.name.clone()).collect(),
            dim,
            weight_matrix: dims.iter().map(|d| d.weights.clone()).collect(),
            bias_vector: dims.iter().map(|d| d.bias).collect(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight_matrix(&self) -> &[Vec<f64>] {
        &self.weight_matrix
    }

    pub fn bias_vector(&self) -> &[f64] {
        &self.bias_vector
    }

    pub fn to_dimensions(&self) -> Vec<SupervisedDimension> {
        self.names
            .iter()
            .zip(&self.weight_matrix)
            .zip(&self.bias_vector)
            .map(|((n, w), &b)| SupervisedDimension::from_parameters(n.clone(), w.clone(), b))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let wire = DenseInitWire {
            format_version: DENSE_INIT_FORMAT_VERSION,
            names: self.names.clone(),
            dim: self.dim,
            weight_matrix: self.weight_matrix.clone(),
            bias_vector: self.bias_vector.clone(),
        };
        serde_json::to_string_pretty(&wire).expect("dense init serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TransferError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| TransferError::Corrupt(e.to_string()))?;
        let found = value.get("format_version").and_then(serde_json::Value::as_u64);
        if found != Some(DENSE_INIT_FORMAT_VERSION as u64) {
            return Err(TransferError::VersionMismatch {
                found: found.unwrap_or(0),
                expected: DENSE_INIT_FORMAT_VERSION as u64,
            });
        }
        let wire: DenseInitWire = serde_json::from_value(value).map_err(|e| TransferError::Corrupt(e.to_string()))?;
        let n = wire.names.len();
        if n == 0 || wire.weight_matrix.len() != n || wire.bias_vector.len() != n {
            return Err(TransferError::Corrupt("names, weight_matrix and bias_vector lengths differ".into()));
        }
        if let Some((i, row)) = wire.weight_matrix.iter().enumerate().find(|(_, r)| r.len() != wire.dim) {
            return Err(TransferError::MixedDimensionality {
                name: wire.names[i].clone(),
                expected: wire.dim,
                found: row.len(),
            });
        }
        Ok(DenseInit {
            names: wire.names,
            dim: wire.dim,
            weight_matrix: wire.weight_matrix,
            bias_vector: wire.bias_vector,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TransferError> {
        binfmt::atomic_write(path, self.to_json().as_bytes())
            .map_err(|source| TransferError::FileUnwritable { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TransferError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TransferError::FileUnreadable { path: path.into(), source })?;
        Self::from_json(&text)
    }
}

pub fn export_dense_init(dims: &[SupervisedDimension], path: &Path) -> Result<DenseInit, TransferError> {
    let init = DenseInit::from_dimensions(dims)?;
    init.save(path)?;
    Ok(init)
}

pub fn load_dense_init(path: &Path) -> Result<DenseInit, TransferError> {
    DenseInit::load(path)
}

/// `sigmoid(w_j . x_i + b_j)` for every word `i` and dimension `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTable {
    vocab_hash: String,
    words: Vec<String>,
    names: Vec<String>,
    values: Vec<f64>,
}

impl ActivationTable {
    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn n_dims(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn row(&self, word_index: usize) -> &[f64] {
        let n = self.n_dims();
        &self.values[word_index * n..(word_index + 1) * n]
    }

    pub fn get(&self, word_index: usize, dim_index: usize) -> f64 {
        self.values[word_index * self.n_dims() + dim_index]
    }

    /// `word,<name_1>,..,<name_n>` header then one row per word, values in
    /// shortest round-trip notation.
    pub fn write_csv(&self, path: &Path) -> Result<(), TransferError> {
        let unwritable = |source: io::Error| TransferError::FileUnwritable { path: path.into(), source };
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("word").chain(self.names.iter().map(String::as_str));
        wtr.write_record(header).map_err(|e| unwritable(e.into()))?;
        for (i, word) in self.words.iter().enumerate() {
            let record = std::iter::once(word.clone()).chain(self.row(i).iter().map(f64::to_string));
            wtr.write_record(record).map_err(|e| unwritable(e.into()))?;
        }
        let bytes = wtr.into_inner().map_err(|e| unwritable(e.into_error()))?;
        binfmt::atomic_write(path, &bytes).map_err(unwritable)
    }

    pub fn save(&self, path: &Path) -> Result<(), TransferError> {
        let mut w = PayloadWriter::default();
        w.str(&self.vocab_hash);
        w.u32(self.n_dims() as u32);
        w.u64(self.len() as u64);
        for name in &self.names {
            w.str(name);
        }
        for word in &self.words {
            w.str(word);
        }
        w.f64s(&self.values);
        binfmt::write_framed(path, TABLE_MAGIC, ACTIVATION_TABLE_VERSION, &w.buf)
            .map_err(|source| TransferError::FileUnwritable { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TransferError> {
        let payload = binfmt::read_framed(path, TABLE_MAGIC, ACTIVATION_TABLE_VERSION, "activation table").map_err(
            |e| match e {
                FrameError::Io(source) => TransferError::FileUnreadable { path: path.into(), source },
                other => frame_error(other),
            },
        )?;
        let mut r = PayloadReader::new(&payload);
        let vocab_hash = r.str().map_err(frame_error)?;
        let n_dims = r.u32().map_err(frame_error)? as usize;
        let count = r.u64().map_err(frame_error)? as usize;
        let names = (0..n_dims).map(|_| r.str()).collect::<Result<Vec<_>, _>>().map_err(frame_error)?;
        let words = (0..count).map(|_| r.str()).collect::<Result<Vec<_>, _>>().map_err(frame_error)?;
        let cells = count.checked_mul(n_dims).ok_or_else(|| TransferError::Corrupt("size overflow".into()))?;
        let values = r.f64s(cells).map_err(frame_error)?;
        r.finish().map_err(frame_error)?;
        Ok(ActivationTable { vocab_hash, words, names, values })
    }
}

fn frame_error(e: FrameError) -> TransferError {
    match e {
        FrameError::VersionMismatch { found, expected } => {
            TransferError::VersionMismatch { found: found as u64, expected: expected as u64 }
        }
        other => TransferError::Corrupt(other.to_string()),
    }
}

pub fn build_activation_table(
    dims: &[SupervisedDimension],
    matrix: &EmbeddingMatrix,
) -> Result<ActivationTable, TransferError> {
    if !matrix.is_normalized() {
        return Err(EmbeddingError::NotNormalized.into());
    }
    let d = shared_dim(dims)?;
    if d != matrix.dim() {
        return Err(TrainError::DimensionMismatch { expected: matrix.dim(), found: d }.into());
    }
    let n = dims.len();
    let mut values = vec![0.0; matrix.len() * n];
    values.par_chunks_mut(ROW_CHUNK * n).zip(matrix.rows().par_chunks(ROW_CHUNK * d)).for_each(|(out, rows)| {
        for (o, x) in out.chunks_mut(n).zip(rows.chunks(d)) {
            for (cell, dim) in o.iter_mut().zip(dims) {
                *cell = sigmoid(dot(&dim.weights, x) + dim.bias);
            }
        }
    });
    Ok(ActivationTable {
        vocab_hash: matrix.vocab().fingerprint(),
        words: matrix.vocab().words().to_vec(),
        names: dims.iter().map(|d| d.name.clone()).collect(),
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub text: String,
    pub class: String,
}

impl LabeledDoc {
    pub fn new(text: impl Into<String>, class: impl Into<String>) -> Self {
        LabeledDoc { text: text.into(), class: class.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamMode {
    /// Mean word embedding only.
    Plain,
    /// Mean word embedding followed by mean dimension activations.
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    pub mode: DownstreamMode,
    pub classes: Vec<String>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub train_used: usize,
    pub test_used: usize,
    pub train_skipped: usize,
    pub test_skipped: usize,
}

fn doc_vector(
    text: &str,
    dims: &[SupervisedDimension],
    matrix: &EmbeddingMatrix,
    stopwords: &StopWords,
    mode: DownstreamMode,
) -> Result<Option<Vec<f64>>, TransferError> {
    let tokens = docfeatures::tokenize(text);
    let ids = docfeatures::eligible_ids(&tokens, matrix, stopwords, false);
    if ids.is_empty() {
        return Ok(None);
    }
    let mut v = vec![0.0; matrix.dim()];
    for &id in &ids {
        for (a, x) in v.iter_mut().zip(matrix.row(id)) {
            *a += x;
        }
    }
    let n = ids.len() as f64;
    v.iter_mut().for_each(|a| *a /= n);
    if mode == DownstreamMode::Augmented {
        let f = docfeatures::doc_features("", &tokens, dims, matrix, stopwords, false)?;
        v.extend(f.values);
    }
    Ok(Some(v))
}

/// Feature rows with their class, plus the count of skipped documents.
type Featurized = (Vec<(Vec<f64>, String)>, usize);

fn featurize(
    docs: &[LabeledDoc],
    dims: &[SupervisedDimension],
    matrix: &EmbeddingMatrix,
    stopwords: &StopWords,
    mode: DownstreamMode,
) -> Result<Featurized, TransferError> {
    let mut used = Vec::with_capacity(docs.len());
    let mut skipped = 0;
    for doc in docs {
        match doc_vector(&doc.text, dims, matrix, stopwords, mode)? {
            Some(v) => used.push((v, doc.class.clone())),
            None => skipped += 1,
        }
    }
    Ok((used, skipped))
}

/// Trains one-vs-rest logistic classifiers on `train_docs` and reports
/// accuracy and macro-F1 on `test_docs`. Prediction is the class with the
/// highest decision value (earliest class name on ties). Documents with no
/// usable tokens are skipped and counted.
pub fn demo_downstream(
    train_docs: &[LabeledDoc],
    test_docs: &[LabeledDoc],
    dims: &[SupervisedDimension],
    matrix: &EmbeddingMatrix,
    mode: DownstreamMode,
    config: &TrainConfig,
    stopwords: &StopWords,
) -> Result<DownstreamReport, TransferError> {
    if mode == DownstreamMode::Augmented {
        let d = shared_dim(dims)?;
        if d != matrix.dim() {
            return Err(TrainError::DimensionMismatch { expected: matrix.dim(), found: d }.into());
        }
    }
    if !matrix.is_normalized() {
        return Err(EmbeddingError::NotNormalized.into());
    }
    let (train, train_skipped) = featurize(train_docs, dims, matrix, stopwords, mode)?;
    let (test, test_skipped) = featurize(test_docs, dims, matrix, stopwords, mode)?;
    let classes: Vec<String> = train.iter().map(|(_, c)| c.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(TransferError::InsufficientClasses(classes.len()));
    }
    let width = train[0].0.len();
    let mut models = Vec::with_capacity(classes.len());
    for class in &classes {
        let mut data = TrainingData::new(width);
        for (v, c) in &train {
            data.push(v, c == class)?;
        }
        let (w, b, _) = classifier::fit(&data, config)?;
        models.push((w, b));
    }

    let k = classes.len();
    let (mut tp, mut fp, mut fnn) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    let mut correct = 0;
    for (v, actual) in &test {
        let predicted = models
            .iter()
            .map(|(w, b)| dot(w, v) + b)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, s)| if s > bs { (i, s) } else { (bi, bs) })
            .0;
        let actual_idx = classes.iter().position(|c| c == actual);
        if actual_idx == Some(predicted) {
            correct += 1;
            tp[predicted] += 1;
        } else {
            fp[predicted] += 1;
            if let Some(a) = actual_idx {
                fnn[a] += 1;
            }
        }
    }
    let f1 = |i: usize| {
        let denom = 2 * tp[i] + fp[i] + fnn[i];
        if denom == 0 {
            0.0
        } else {
            2.0 * tp[i] as f64 / denom as f64
        }
    };
    let accuracy = if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 };
    Ok(DownstreamReport {
        mode,
        macro_f1: (0..k).map(f1).sum::<f64>() / k as f64,
        classes,
        accuracy,
        train_used: train.len(),
        test_used: test.len(),
        train_skipped,
        test_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> EmbeddingMatrix {
        EmbeddingMatrix::from_pairs([
            ("ball", vec![1.0, 0.0, 0.0]),
            ("goal", vec![0.9, 0.1, 0.0]),
            ("cat", vec![0.0, 1.0, 0.0]),
            ("dog", vec![0.1, 0.9, 0.1]),
            ("the", vec![0.0, 0.0, 1.0]),
        ])
        .unwrap()
        .normalize()
        .unwrap()
    }

    fn dims() -> Vec<SupervisedDimension> {
        vec![
            SupervisedDimension::from_parameters("sports", vec![4.0, -4.0, 0.1], -0.3),
            SupervisedDimension::from_parameters("animal", vec![-4.0, 4.0, 0.2], 0.1),
        ]
    }

    #[test]
    fn dense_init_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dense.json");
        let mut d = dims();
        d[0].weights[0] = 0.1 + 0.2;
        d[1].bias = -1.0 / 3.0;
        let init = export_dense_init(&d, &path).unwrap();
        let back = load_dense_init(&path).unwrap();
        assert_eq!(init, back);
        for (a, b) in d.iter().zip(back.to_dimensions()) {
            assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(a.bias.to_bits(), b.bias.to_bits());
            assert_eq!(a.name, b.name);
        }
    }

    #[test]
    fn dense_init_shapes_and_errors() {
        let single = DenseInit::from_dimensions(&dims()[..1]).unwrap();
        assert_eq!((single.weight_matrix().len(), single.weight_matrix()[0].len()), (1, 3));
        let mixed = [dims()[0].clone(), SupervisedDimension::from_parameters("short", vec![1.0], 0.0)];
        assert!(matches!(DenseInit::from_dimensions(&mixed), Err(TransferError::MixedDimensionality { .. })));
        assert!(matches!(DenseInit::from_dimensions(&[]), Err(TransferError::NoDimensions)));
        let bumped = single.to_json().replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(DenseInit::from_json(&bumped), Err(TransferError::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn table_matches_scores() {
        let (m, d) = (matrix(), dims());
        let t = build_activation_table(&d, &m).unwrap();
        for (j, dim) in d.iter().enumerate() {
            let scores = dim.score_all(&m).unwrap();
            for (i, s) in scores.iter().enumerate() {
                assert!((t.get(i, j) - s).abs() <= 1e-12);
            }
        }
        let zero = SupervisedDimension::from_parameters("const", vec![0.0; 3], 0.7);
        let t = build_activation_table(&[zero], &m).unwrap();
        assert!((0..m.len()).all(|i| t.get(i, 0) == sigmoid(0.7)));
    }

    #[test]
    fn table_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let (m, d) = (matrix(), dims());
        let t = build_activation_table(&d, &m).unwrap();
        let bin = dir.path().join("t.bin");
        t.save(&bin).unwrap();
        assert_eq!(ActivationTable::load(&bin).unwrap(), t);

        let csv_path = dir.path().join("t.csv");
        t.write_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("word,sports,animal"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "ball");
        assert_eq!(first[1].parse::<f64>().unwrap(), t.get(0, 0));
    }

    #[test]
    fn table_rejects_wrong_dimensionality() {
        let m = matrix();
        let d = [SupervisedDimension::from_parameters("x", vec![1.0, 2.0], 0.0)];
        assert!(matches!(
            build_activation_table(&d, &m),
            Err(TransferError::Train(TrainError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn memorizes_one_doc_per_class() {
        let (m, d) = (matrix(), dims());
        let docs = vec![LabeledDoc::new("ball goal", "sport"), LabeledDoc::new("cat dog", "pet")];
        for mode in [DownstreamMode::Plain, DownstreamMode::Augmented] {
            let r = demo_downstream(&docs, &docs, &d, &m, mode, &TrainConfig::default(), &StopWords::none()).unwrap();
            assert_eq!(r.accuracy, 1.0);
            assert_eq!(r.macro_f1, 1.0);
        }
    }

    #[test]
    fn skips_empty_docs_and_needs_two_classes() {
        let (m, d) = (matrix(), dims());
        let train =
            vec![LabeledDoc::new("ball", "sport"), LabeledDoc::new("cat", "pet"), LabeledDoc::new("zebra the", "pet")];
        let r = demo_downstream(
            &train,
            &train,
            &d,
            &m,
            DownstreamMode::Plain,
            &TrainConfig::default(),
            &StopWords::english(),
        )
        .unwrap();
        assert_eq!((r.train_used, r.train_skipped, r.test_skipped), (2, 1, 1));
        let one = vec![LabeledDoc::new("ball", "sport")];
        assert!(matches!(
            demo_downstream(&one, &one, &d, &m, DownstreamMode::Plain, &TrainConfig::default(), &StopWords::none()),
            Err(TransferError::InsufficientClasses(1))
        ));
    }
}
