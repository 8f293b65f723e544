//! Shared service state: read-only embedding spaces and the per-session
//! slots that serialize mutations.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use supdim::classifier::TrainConfig;
use supdim::crosslingual::{AlignError, AlignmentMap};
use supdim::curation::{CurationError, CurationSession, NegativeSampling};
use supdim::embedding::{open_embeddings, EmbeddingError, EmbeddingMatrix};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::config::{ConfigError, ServiceConfig};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("embeddings for {tag:?}: {source}")]
    Embeddings { tag: String, source: EmbeddingError },
    #[error("alignment for {tag:?}: {source}")]
    Alignment { tag: String, source: AlignError },
    #[error("alignment for {tag:?} has dimension {found}, embeddings have {expected}")]
    AlignmentDimension { tag: String, expected: usize, found: usize },
    #[error("language {tag:?} has dimension {found}, primary has {expected}")]
    LanguageDimension { tag: String, expected: usize, found: usize },
    #[error("data directory {path}: {source}")]
    DataDir { path: PathBuf, source: io::Error },
    #[error("session file {path}: {source}")]
    Session { path: PathBuf, source: CurationError },
}

/// One session plus its round-in-flight flag.
pub struct SessionSlot {
    pub session: Mutex<CurationSession>,
    round_busy: AtomicBool,
}

/// Clears the round-in-flight flag on drop.
pub struct RoundGuard(Arc<SessionSlot>);

impl Drop for RoundGuard {
    fn drop(&mut self) {
        self.0.round_busy.store(false, Ordering::Release);
    }
}

impl SessionSlot {
    fn new(session: CurationSession) -> Self {
        SessionSlot { session: Mutex::new(session), round_busy: AtomicBool::new(false) }
    }

    /// `None` when a round is already running for this session.
    pub fn try_begin_round(self: &Arc<Self>) -> Option<RoundGuard> {
        if self.round_busy.swap(true, Ordering::AcqRel) {
            None
        } else {
            Some(RoundGuard(Arc::clone(self)))
        }
    }
}

/// Session files live at `<data_dir>/sessions/<id>.json`.
#[derive(Clone, Debug)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(data_dir: &Path) -> Result<Self, StartupError> {
        let dir = data_dir.join("sessions");
        std::fs::create_dir_all(&dir).map_err(|source| StartupError::DataDir { path: dir.clone(), source })?;
        Ok(SessionStore { dir })
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, session: &CurationSession) -> Result<(), CurationError> {
        session.save(&self.path_for(session.id()))
    }

    /// Every committed session file, in file-name order. Leftover temp files
    /// from interrupted writes are ignored.
    pub fn load_all(&self, matrix: &EmbeddingMatrix) -> Result<Vec<CurationSession>, StartupError> {
        let entries =
            std::fs::read_dir(&self.dir).map_err(|source| StartupError::DataDir { path: self.dir.clone(), source })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'))
            })
            .collect();
        paths.sort();
        let mut out = Vec::with_capacity(paths.len());
        for path in paths {
            let session = CurationSession::load(&path)
                .and_then(|s| s.check_vocab(matrix).map(|_| s))
                .map_err(|source| StartupError::Session { path: path.clone(), source })?;
            out.push(session);
        }
        Ok(out)
    }
}

pub struct AppState {
    pub primary_language: String,
    pub languages: BTreeMap<String, Arc<EmbeddingMatrix>>,
    pub alignments: BTreeMap<String, AlignmentMap>,
    pub train: TrainConfig,
    pub sampling: NegativeSampling,
    pub default_k: usize,
    pub store: SessionStore,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

impl AppState {
    /// Loads every configured space and alignment, then all persisted sessions.
    pub fn open(config: &ServiceConfig) -> Result<Self, StartupError> {
        config.validate()?;
        let mut languages = BTreeMap::new();
        for (tag, path) in &config.embeddings {
            log::info!("loading {tag} embeddings from {}", path.display());
            let m = open_embeddings(path, config.max_words)
                .map_err(|source| StartupError::Embeddings { tag: tag.clone(), source })?;
            log::info!("{tag}: {} words, dimension {}", m.len(), m.dim());
            languages.insert(tag.clone(), Arc::new(m));
        }
        let mut alignments = BTreeMap::new();
        for (tag, path) in &config.alignments {
            let map =
                AlignmentMap::load(path).map_err(|source| StartupError::Alignment { tag: tag.clone(), source })?;
            alignments.insert(tag.clone(), map);
        }
        Self::from_parts(config, languages, alignments)
    }

    /// Builds state from already-loaded spaces; used by `open` and by tests.
    pub fn from_parts(
        config: &ServiceConfig,
        languages: BTreeMap<String, Arc<EmbeddingMatrix>>,
        alignments: BTreeMap<String, AlignmentMap>,
    ) -> Result<Self, StartupError> {
        let mut probe = config.clone();
        probe.embeddings = languages.keys().map(|k| (k.clone(), PathBuf::new())).collect();
        probe.alignments = alignments.keys().map(|k| (k.clone(), PathBuf::new())).collect();
        probe.validate()?;
        let primary_language = probe.primary()?.to_owned();
        let expected = languages[&primary_language].dim();
        for (tag, m) in &languages {
            if m.dim() != expected {
                return Err(StartupError::LanguageDimension { tag: tag.clone(), expected, found: m.dim() });
            }
        }
        for (tag, map) in &alignments {
            if map.dim() != expected {
                return Err(StartupError::AlignmentDimension { tag: tag.clone(), expected, found: map.dim() });
            }
        }
        let store = SessionStore::open(&config.data_dir)?;
        let sessions = store
            .load_all(&languages[&primary_language])?
            .into_iter()
            .map(|s| (s.id().to_owned(), Arc::new(SessionSlot::new(s))))
            .collect::<HashMap<_, _>>();
        log::info!("restored {} sessions from {}", sessions.len(), config.data_dir.display());
        Ok(AppState {
            primary_language,
            languages,
            alignments,
            train: config.train,
            sampling: config.sampling,
            default_k: config.default_k,
            store,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn primary(&self) -> &Arc<EmbeddingMatrix> {
        &self.languages[&self.primary_language]
    }

    pub fn session(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions.read().expect("session map lock").get(id).cloned()
    }

    pub fn insert_session(&self, session: CurationSession) {
        let id = session.id().to_owned();
        self.sessions.write().expect("session map lock").insert(id, Arc::new(SessionSlot::new(session)));
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }
}
