//! Seeded synthetic embedding spaces and corpora for tests, demos and
//! benchmarks. Everything here is deterministic given the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::classifier::{self, LabeledSet, SupervisedDimension, TrainConfig, TrainError};
use crate::embedding::{EmbeddingMatrix, WordId};
use crate::transfer::LabeledDoc;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    unit(gaussian(rng, d))
}

/// `center + spread * g / sqrt(d)` for Gaussian `g`, renormalized.
pub fn near(center: &[f64], spread: f64, rng: &mut impl Rng) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    unit(center.iter().map(|c| c + scale * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Two tight antipodal clusters plus uniformly scattered background words.
#[derive(Clone, Debug)]
pub struct ClusterWorld {
    pub matrix: EmbeddingMatrix,
    pub cluster_a: Vec<String>,
    pub cluster_b: Vec<String>,
    pub background: Vec<String>,
}

impl ClusterWorld {
    /// Words are named `a000..`, `b000..` and `w0000..`; all rows are unit
    /// length. Cluster words sit within `spread` of `+c` and `-c`.
    pub fn antipodal(d: usize, per_cluster: usize, background: usize, spread: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let c = random_unit(&mut r, d);
        let neg: Vec<f64> = c.iter().map(|x| -x).collect();
        let mut pairs = Vec::with_capacity(2 * per_cluster + background);
        let cluster_a: Vec<String> = (0..per_cluster).map(|i| format!("a{i:03}")).collect();
        let cluster_b: Vec<String> = (0..per_cluster).map(|i| format!("b{i:03}")).collect();
        let bg: Vec<String> = (0..background).map(|i| format!("w{i:04}")).collect();
        for w in &cluster_a {
            pairs.push((w.clone(), near(&c, spread, &mut r)));
        }
        for w in &cluster_b {
            pairs.push((w.clone(), near(&neg, spread, &mut r)));
        }
        for w in &bg {
            pairs.push((w.clone(), random_unit(&mut r, d)));
        }
        let matrix = EmbeddingMatrix::from_pairs(pairs).expect("distinct words").normalize().expect("unit rows");
        ClusterWorld { matrix, cluster_a, cluster_b, background: bg }
    }

    pub fn ids(&self, words: &[String]) -> Vec<WordId> {
        words.iter().map(|w| self.matrix.vocab().get(w).expect("generated word")).collect()
    }
}

/// Shape of the two-class document corpus used by the downstream demo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferCorpusSpec {
    pub dim: usize,
    pub dictionary_words: usize,
    pub filler_words: usize,
    /// Spread of dictionary words around their class direction.
    pub spread: f64,
    pub filler_per_doc: usize,
    pub train_docs: usize,
    pub test_docs: usize,
}

impl Default for TransferCorpusSpec {
    fn default() -> Self {
        TransferCorpusSpec {
            dim: 50,
            dictionary_words: 40,
            filler_words: 2000,
            spread: 1.0,
            filler_per_doc: 15,
            train_docs: 200,
            test_docs: 200,
        }
    }
}

/// Documents whose class is carried only by one dictionary word each; all
/// other tokens are filler shared by both classes.
#[derive(Clone, Debug)]
pub struct TransferCorpus {
    pub matrix: EmbeddingMatrix,
    pub dictionary_a: Vec<String>,
    pub dictionary_b: Vec<String>,
    pub filler: Vec<String>,
    pub train: Vec<LabeledDoc>,
    pub test: Vec<LabeledDoc>,
}

impl TransferCorpus {
    pub fn generate(spec: &TransferCorpusSpec, seed: u64) -> Self {
        let mut r = rng(seed);
        let ca = random_unit(&mut r, spec.dim);
        let cb = random_unit(&mut r, spec.dim);
        let dictionary_a: Vec<String> = (0..spec.dictionary_words).map(|i| format!("sa{i:03}")).collect();
        let dictionary_b: Vec<String> = (0..spec.dictionary_words).map(|i| format!("sb{i:03}")).collect();
        let filler: Vec<String> = (0..spec.filler_words).map(|i| format!("f{i:05}")).collect();
        let mut pairs = Vec::new();
        for w in &dictionary_a {
            pairs.push((w.clone(), near(&ca, spec.spread, &mut r)));
        }
        for w in &dictionary_b {
            pairs.push((w.clone(), near(&cb, spec.spread, &mut r)));
        }
        for w in &filler {
            pairs.push((w.clone(), random_unit(&mut r, spec.dim)));
        }
        let matrix = EmbeddingMatrix::from_pairs(pairs).expect("distinct words").normalize().expect("unit rows");

        let make_docs = |n: usize, r: &mut ChaCha8Rng| -> Vec<LabeledDoc> {
            (0..n)
                .map(|i| {
                    let (dict, class) = if i % 2 == 0 { (&dictionary_a, "A") } else { (&dictionary_b, "B") };
                    let mut tokens: Vec<&str> =
                        (0..spec.filler_per_doc).map(|_| filler[r.random_range(0..filler.len())].as_str()).collect();
                    let pos = r.random_range(0..=tokens.len());
                    tokens.insert(pos, dict[r.random_range(0..dict.len())].as_str());
                    LabeledDoc::new(tokens.join(" "), class)
                })
                .collect()
        };
        let train = make_docs(spec.train_docs, &mut r);
        let test = make_docs(spec.test_docs, &mut r);
        TransferCorpus { matrix, dictionary_a, dictionary_b, filler, train, test }
    }

    /// One dimension per dictionary: its words as positives, the other
    /// dictionary and `filler_negatives` filler words as negatives.
    pub fn dictionary_dimensions(
        &self,
        filler_negatives: usize,
        config: &TrainConfig,
    ) -> Result<Vec<SupervisedDimension>, TrainError> {
        let ids = |ws: &[String]| -> Vec<WordId> { ws.iter().filter_map(|w| self.matrix.vocab().get(w)).collect() };
        let filler = ids(&self.filler[..filler_negatives.min(self.filler.len())]);
        let a = ids(&self.dictionary_a);
        let b = ids(&self.dictionary_b);
        let mut out = Vec::with_capacity(2);
        for (name, pos, other) in [("A", &a, &b), ("B", &b, &a)] {
            let labels = LabeledSet::new(pos.iter().copied(), other.iter().chain(&filler).copied());
            out.push(classifier::train(name, &self.matrix, &labels, config)?.dimension);
        }
        Ok(out)
    }
}
