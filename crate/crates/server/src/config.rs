//! Service configuration.
//!
//! Plain-text `key = value` lines; `#` starts a comment, blank lines are
//! ignored. Relative paths are resolved against the config file's directory.
//!
//! ```text
//! listen = 127.0.0.1:8080
//! data_dir = data
//! primary_language = en
//! embeddings.en = vectors/wiki.en.align.vec
//! embeddings.de = vectors/wiki.de.align.vec
//! alignment.de = maps/de-en.json      # optional; omit for pre-aligned spaces
//! max_words = 250000
//! default_k = 25
//! train.positive_class_weight = 2
//! train.l2_strength = 1
//! train.tolerance = 1e-8
//! train.max_iterations = 1000
//! sampling.per_positive = 10
//! sampling.min = 100
//! sampling.max = 1000
//! ```
//!
//! `SUPDIM_LISTEN` and `SUPDIM_DATA_DIR` override `listen` and `data_dir`.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use supdim::classifier::TrainConfig;
use supdim::curation::NegativeSampling;
use supdim::embedding::DEFAULT_MAX_WORDS;
use thiserror::Error;

pub const ENV_LISTEN: &str = "SUPDIM_LISTEN";
pub const ENV_DATA_DIR: &str = "SUPDIM_DATA_DIR";
pub const DEFAULT_K: usize = 25;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("{key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub primary_language: Option<String>,
    pub embeddings: BTreeMap<String, PathBuf>,
    pub alignments: BTreeMap<String, PathBuf>,
    pub max_words: Option<usize>,
    pub default_k: usize,
    pub train: TrainConfig,
    pub sampling: NegativeSampling,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            primary_language: None,
            embeddings: BTreeMap::new(),
            alignments: BTreeMap::new(),
            max_words: Some(DEFAULT_MAX_WORDS),
            default_k: DEFAULT_K,
            train: TrainConfig::default(),
            sampling: NegativeSampling::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue { key: key.to_owned(), message: e.to_string() })
}

impl ServiceConfig {
    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c = ServiceConfig::default();
        let path = |v: &str| base.join(v);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            match key {
                "listen" => c.listen = parse_value(key, value)?,
                "data_dir" => c.data_dir = path(value),
                "primary_language" => c.primary_language = Some(value.to_owned()),
                "max_words" => {
                    c.max_words = if value == "unlimited" { None } else { Some(parse_value(key, value)?) };
                }
                "default_k" => c.default_k = parse_value(key, value)?,
                "train.positive_class_weight" => c.train.positive_class_weight = parse_value(key, value)?,
                "train.l2_strength" => c.train.l2_strength = parse_value(key, value)?,
                "train.tolerance" => c.train.tolerance = parse_value(key, value)?,
                "train.max_iterations" => c.train.max_iterations = parse_value(key, value)?,
                "sampling.per_positive" => c.sampling.per_positive = parse_value(key, value)?,
                "sampling.min" => c.sampling.min = parse_value(key, value)?,
                "sampling.max" => c.sampling.max = parse_value(key, value)?,
                _ => {
                    if let Some(tag) = key.strip_prefix("embeddings.").filter(|t| !t.is_empty()) {
                        c.embeddings.insert(tag.to_owned(), path(value));
                    } else if let Some(tag) = key.strip_prefix("alignment.").filter(|t| !t.is_empty()) {
                        c.alignments.insert(tag.to_owned(), path(value));
                    } else {
                        return Err(ConfigError::UnknownKey { line: i + 1, key: key.to_owned() });
                    }
                }
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Applies `SUPDIM_LISTEN` / `SUPDIM_DATA_DIR` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup(ENV_LISTEN) {
            self.listen = parse_value(ENV_LISTEN, &v)?;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(v);
        }
        Ok(())
    }

    /// The language whose space sessions train in: `primary_language`, or
    /// the only configured language.
    pub fn primary(&self) -> Result<&str, ConfigError> {
        match (&self.primary_language, self.embeddings.len()) {
            (Some(p), _) if self.embeddings.contains_key(p) => Ok(p),
            (Some(p), _) => Err(ConfigError::Invalid(format!("primary_language {p:?} has no embeddings entry"))),
            (None, 1) => Ok(self.embeddings.keys().next().expect("one entry")),
            (None, 0) => Err(ConfigError::Invalid("no embeddings.<tag> entry configured".into())),
            (None, _) => Err(ConfigError::Invalid("several languages configured; set primary_language".into())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.primary()?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.default_k == 0 {
            return Err(ConfigError::Invalid("default_k must be >= 1".into()));
        }
        if let Some(tag) = self.alignments.keys().find(|t| !self.embeddings.contains_key(*t)) {
            return Err(ConfigError::Invalid(format!("alignment.{tag} has no matching embeddings.{tag}")));
        }
        Ok(())
    }
}
