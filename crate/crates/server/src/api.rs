//! HTTP routes. Every mutation is persisted before its response is sent.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use supdim::classifier::{StopCondition, TrainError};
use supdim::crosslingual::{apply_dimension_foreign, AlignError};
use supdim::curation::{CurationError, CurationSession, Dictionary, Label, LabelCounts};
use supdim::embedding::{EmbeddingMatrix, Vocab, WordId};
use supdim::ranking::CandidateList;

use crate::state::AppState;

pub type Shared = Arc<AppState>;

/// `{code, message, detail?}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), detail: None }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    fn session_not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "SessionNotFound", format!("no session {id:?}"))
            .with_detail(json!({ "session_id": id }))
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.detail {
            body["detail"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<CurationError> for ApiError {
    fn from(e: CurationError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        match e {
            CurationError::UnknownWord(word) => {
                ApiError::new(S::BAD_REQUEST, "UnknownWord", message).with_detail(json!({ "word": word }))
            }
            CurationError::EmptySeeds => ApiError::new(S::BAD_REQUEST, "EmptySeeds", message),
            CurationError::OverlappingLabels(words) => {
                ApiError::new(S::UNPROCESSABLE_ENTITY, "OverlappingLabels", message)
                    .with_detail(json!({ "words": words }))
            }
            CurationError::InvalidCandidateCount => ApiError::new(S::BAD_REQUEST, "InvalidCandidateCount", message),
            CurationError::InvalidThreshold(t) => {
                ApiError::new(S::BAD_REQUEST, "InvalidThreshold", message).with_detail(json!({ "threshold": t }))
            }
            CurationError::NotTrained => ApiError::new(S::CONFLICT, "NotTrained", message),
            CurationError::VocabularyExhausted => ApiError::new(S::CONFLICT, "VocabularyExhausted", message),
            CurationError::Train(TrainError::EmptyClass(class)) => {
                ApiError::new(S::CONFLICT, "EmptyClass", message).with_detail(json!({ "class": class.to_string() }))
            }
            _ => ApiError::internal(message),
        }
    }
}

impl From<AlignError> for ApiError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::DimensionMismatch { .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "DimensionMismatch", e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

fn schema_error(message: String) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "SchemaError", message)
}

fn from_json<T: DeserializeOwned>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| schema_error(e.body_text()))
}

/// Like `from_json` but an empty body yields `T::default()`.
fn from_optional_json<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| schema_error(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWord {
    pub word: String,
    pub score: f64,
}

fn scored(list: &CandidateList) -> Vec<ScoredWord> {
    list.entries.iter().map(|c| ScoredWord { word: c.word.clone(), score: c.score }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub round: u32,
    pub positives: usize,
    pub negatives: usize,
    pub auto_negatives: usize,
    pub stop: StopCondition,
    pub iterations: u32,
    pub loss: f64,
    pub candidates: Vec<ScoredWord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEventView {
    pub round: u32,
    pub word: String,
    pub label: Label,
    pub previous: Option<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionView {
    pub name: String,
    pub trained_rounds: u32,
    pub bias: f64,
    pub weights: Vec<f64>,
}

/// Session state with word ids resolved to strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub dimension_name: String,
    pub round: u32,
    pub rng_seed: u64,
    pub counts: LabelCounts,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub dimension: Option<DimensionView>,
    pub history: Vec<RoundView>,
    pub label_log: Vec<LabelEventView>,
}

fn words<'a>(vocab: &Vocab, ids: impl IntoIterator<Item = &'a WordId>) -> Vec<String> {
    ids.into_iter().map(|&id| vocab.word(id).to_owned()).collect()
}

impl SessionView {
    pub fn of(s: &CurationSession, matrix: &EmbeddingMatrix) -> Self {
        let vocab = matrix.vocab();
        SessionView {
            session_id: s.id().to_owned(),
            dimension_name: s.dimension_name().to_owned(),
            round: s.round(),
            rng_seed: s.rng_seed(),
            counts: s.counts(),
            positives: words(vocab, &s.labels().positives),
            negatives: words(vocab, &s.labels().negatives),
            dimension: s.current_dimension().map(|d| DimensionView {
                name: d.name.clone(),
                trained_rounds: d.trained_rounds,
                bias: d.bias,
                weights: d.weights.clone(),
            }),
            history: s
                .history()
                .iter()
                .map(|r| RoundView {
                    round: r.round,
                    positives: r.positives,
                    negatives: r.negatives,
                    auto_negatives: r.auto_negatives,
                    stop: r.stop,
                    iterations: r.iterations,
                    loss: r.loss,
                    candidates: r.top_k.iter().map(|c| ScoredWord { word: c.word.clone(), score: c.score }).collect(),
                })
                .collect(),
            label_log: s
                .label_log()
                .iter()
                .map(|e| LabelEventView {
                    round: e.round,
                    word: vocab.word(e.word).to_owned(),
                    label: e.label,
                    previous: e.previous,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub dimension_name: String,
    pub seeds: Vec<String>,
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct RoundRequest {
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct LabelRequest {
    #[serde(default)]
    pub accept: Vec<String>,
    #[serde(default)]
    pub reject: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct DictionaryQuery {
    pub threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct ApplyRequest {
    pub language_tag: String,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub round: u32,
    #[serde(flatten)]
    pub counts: LabelCounts,
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/round", post(run_round))
        .route("/sessions/{id}/labels", post(apply_labels))
        .route("/sessions/{id}/dictionary", get(dictionary))
        .route("/dimensions/{id}/apply", post(apply_foreign))
        .with_state(state)
}

async fn health(State(state): State<Shared>) -> Json<Value> {
    let sizes: BTreeMap<&str, usize> = state.languages.iter().map(|(k, m)| (k.as_str(), m.len())).collect();
    Json(json!({
        "status": "ok",
        "primary_language": state.primary_language,
        "vocab_sizes": sizes,
        "sessions": state.session_ids().len(),
    }))
}

async fn list_sessions(State(state): State<Shared>) -> Json<Value> {
    let mut out = Vec::new();
    for id in state.session_ids() {
        if let Some(slot) = state.session(&id) {
            let s = slot.session.lock().await;
            out.push(json!({ "session_id": id, "dimension_name": s.dimension_name(), "round": s.round() }));
        }
    }
    Json(json!({ "sessions": out }))
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req = from_json(body)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let st = Arc::clone(&state);
    let session = blocking(move || {
        let s = CurationSession::init(id, req.dimension_name, st.primary(), &req.seeds, req.rng_seed.unwrap_or(0))?
            .with_sampling(st.sampling);
        st.store.save(&s)?;
        Ok(s)
    })
    .await?;
    let id = session.id().to_owned();
    state.insert_session(session);
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = state.session(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let s = slot.session.lock().await;
    Ok(Json(SessionView::of(&s, state.primary())))
}

async fn run_round(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let slot = state.session(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let req: RoundRequest = from_optional_json(&body)?;
    let k = req.k.unwrap_or(state.default_k);
    if k == 0 {
        return Err(CurationError::InvalidCandidateCount.into());
    }
    let _guard = slot.try_begin_round().ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, "RoundInFlight", "a round is already running for this session")
    })?;
    let mut current = slot.session.lock().await;
    let mut next = current.clone();
    let st = Arc::clone(&state);
    let (next, candidates) = blocking(move || {
        let c = next.run_round(st.primary(), &st.train, k)?;
        st.store.save(&next)?;
        Ok((next, c))
    })
    .await?;
    *current = next;
    Ok(Json(json!({ "round": current.round(), "candidates": scored(&candidates) })))
}

async fn apply_labels(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<LabelResponse>, ApiError> {
    let slot = state.session(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let req = from_json(body)?;
    let mut current = slot.session.lock().await;
    let mut next = current.clone();
    let st = Arc::clone(&state);
    let next = blocking(move || {
        next.apply_labels(st.primary(), &req.accept, &req.reject)?;
        st.store.save(&next)?;
        Ok(next)
    })
    .await?;
    *current = next;
    Ok(Json(LabelResponse { round: current.round(), counts: current.counts() }))
}

async fn dictionary(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<DictionaryQuery>, QueryRejection>,
) -> Result<Json<Dictionary>, ApiError> {
    let slot = state.session(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let Query(q) = query.map_err(|e| schema_error(e.body_text()))?;
    let threshold = q.threshold.unwrap_or(0.5);
    let session = slot.session.lock().await.clone();
    let st = Arc::clone(&state);
    let dict = blocking(move || Ok(session.export_dictionary(st.primary(), threshold)?)).await?;
    Ok(Json(dict))
}

async fn apply_foreign(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<ApplyRequest>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let slot = state.session(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let req = from_json(body)?;
    let Some(matrix) = state.languages.get(&req.language_tag).cloned() else {
        let known: Vec<&String> = state.languages.keys().collect();
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "UnknownLanguage",
            format!("language {:?} is not configured", req.language_tag),
        )
        .with_detail(json!({ "language_tag": req.language_tag, "configured": known })));
    };
    let k = req.k.unwrap_or(state.default_k);
    if k == 0 {
        return Err(CurationError::InvalidCandidateCount.into());
    }
    let dim = slot.session.lock().await.current_dimension().cloned().ok_or(CurationError::NotTrained)?;
    let map = state.alignments.get(&req.language_tag).cloned();
    let candidates = blocking(move || Ok(apply_dimension_foreign(&dim, &matrix, map.as_ref(), k)?)).await?;
    Ok(Json(json!({ "language_tag": req.language_tag, "candidates": scored(&candidates) })))
}
