//! Supervised dimensions: binary linear classifiers over L2-normalized word
//! embeddings, seeded from a few keywords and refined by expert labeling.

pub mod binfmt;
pub mod classifier;
pub mod crosslingual;
pub mod curation;
pub mod docfeatures;
pub mod embedding;
pub mod math;
pub mod ranking;
pub mod synthetic;
pub mod transfer;
