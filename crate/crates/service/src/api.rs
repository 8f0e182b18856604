use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rexplain_core::assessment::MetricReport;
use rexplain_core::experiment::{
    assign_condition, replay, step_session, Briefing, Clock, Condition, ConditionContext, ContextCache, EventLog,
    EventPayload, ExperimentConfig, ExperimentError, ParticipantKind, Phase, Session, SessionError,
    SessionResponse,
};
use rexplain_core::mdp::{GridLayout, StateId};
use rexplain_core::{Explanation, PreferenceQuery};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex, RwLock};

/// Shared service state. Each session sits behind its own lock; the event
/// log has a single appender.
pub struct AppState {
    cache: ContextCache,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    log: Mutex<EventLog>,
    next_participant: AtomicUsize,
}

impl AppState {
    /// Builds every condition up front so requests never block on planning.
    pub fn new(config: ExperimentConfig, log: EventLog) -> Result<Self, ExperimentError> {
        let cache = ContextCache::new(config)?;
        for i in 0..cache.len() {
            cache.get(i)?;
        }
        let restored = replay(log.records(), &cache)?;
        let created = log
            .records()
            .iter()
            .filter(|r| matches!(r.payload, EventPayload::Created { .. }))
            .count();
        Ok(Self {
            cache,
            sessions: RwLock::new(
                restored
                    .into_iter()
                    .map(|(id, s)| (id, Arc::new(Mutex::new(s))))
                    .collect(),
            ),
            log: Mutex::new(log),
            next_participant: AtomicUsize::new(created),
        })
    }

    pub fn in_memory(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        Self::new(config, EventLog::in_memory(Clock::Wall))
    }

    /// Appends to `events.jsonl` in `dir`, restoring sessions already logged there.
    pub fn with_log_dir(config: ExperimentConfig, dir: &Path) -> Result<Self, ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io(format!("{}: {e}", dir.display())))?;
        Self::new(config, EventLog::open(&dir.join(rexplain_core::experiment::EVENTS_FILE), Clock::Wall)?)
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    fn context(&self, index: usize) -> Result<Arc<ConditionContext>, ApiError> {
        self.cache.get(index).map_err(ApiError::from)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::PhaseMismatch { .. } | SessionError::Duplicate(_) | SessionError::Complete => {
                ApiError::Conflict(e.to_string())
            }
            SessionError::Log(_) => ApiError::Internal(e.to_string()),
            _ => ApiError::Unprocessable(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Unprocessable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string(), "kind": kind }))).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub participant: Option<ParticipantKind>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub condition_index: usize,
    pub condition: Condition,
    pub phase: Phase,
    pub briefing: Briefing,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryView {
    pub index: usize,
    pub query: PreferenceQuery,
    pub answered: bool,
}

/// What the current phase asks of the participant.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum AssessmentPayload {
    Briefing { briefing: Briefing },
    Explanation,
    AssessmentFr,
    AssessmentFs { candidates: Vec<String> },
    AssessmentPe { queries: Vec<QueryView> },
    AssessmentBd {
        start: StateId,
        horizon: usize,
        action_names: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<GridLayout>,
    },
    Done,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResult {
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub condition: Condition,
    pub report: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compliance_rate: Option<f64>,
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let participant = body.and_then(|b| b.0.participant).unwrap_or(ParticipantKind::Human);
    let index = state.next_participant.fetch_add(1, Ordering::SeqCst);
    let (condition_index, _) = assign_condition(state.cache.config(), index);
    let ctx = state.context(condition_index)?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::new(id.clone(), &ctx, participant, None);
    {
        let mut log = state.log.lock().await;
        log.append(
            &id,
            Phase::Briefing,
            EventPayload::Created {
                condition_index,
                condition: ctx.condition.clone(),
                participant,
                human: None,
            },
        )
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    }
    state.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(session)));
    tracing::info!(session = %id, condition = condition_index, "session created");
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: id,
            condition_index,
            condition: ctx.condition.clone(),
            phase: Phase::Briefing,
            briefing: ctx.briefing(),
        }),
    ))
}

async fn get_explanation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Explanation>, ApiError> {
    let session = state.session(&id).await?;
    let session = session.lock().await;
    if session.phase == Phase::Briefing {
        return Err(ApiError::Conflict("acknowledge the briefing first".into()));
    }
    Ok(Json(state.context(session.condition_index)?.explanation.clone()))
}

async fn get_assessment(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<AssessmentPayload>, ApiError> {
    let session = state.session(&id).await?;
    let session = session.lock().await;
    let ctx = state.context(session.condition_index)?;
    let payload = match session.phase {
        Phase::Briefing => AssessmentPayload::Briefing { briefing: ctx.briefing() },
        Phase::Explanation => AssessmentPayload::Explanation,
        Phase::AssessmentFr => AssessmentPayload::AssessmentFr,
        Phase::AssessmentFs => AssessmentPayload::AssessmentFs { candidates: ctx.candidates.clone() },
        Phase::AssessmentPe => AssessmentPayload::AssessmentPe {
            queries: ctx
                .queries
                .iter()
                .enumerate()
                .map(|(index, query)| QueryView {
                    index,
                    query: query.clone(),
                    answered: session.pe[index].is_some(),
                })
                .collect(),
        },
        Phase::AssessmentBd => AssessmentPayload::AssessmentBd {
            start: ctx.bd_start,
            horizon: ctx.domain.mdp.horizon,
            action_names: ctx.domain.mdp.action_names.clone(),
            grid: ctx.domain.mdp.layout.clone(),
        },
        Phase::Done => AssessmentPayload::Done,
    };
    Ok(Json(payload))
}

async fn post_response(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SessionResponse>, JsonRejection>,
) -> Result<Json<StepResult>, ApiError> {
    let Json(response) = body.map_err(|e| ApiError::Unprocessable(e.body_text()))?;
    let session = state.session(&id).await?;
    let mut session = session.lock().await;
    let ctx = state.context(session.condition_index)?;
    {
        let mut log = state.log.lock().await;
        step_session(&mut session, &ctx, response, &mut log)?;
    }
    Ok(Json(StepResult {
        phase: session.phase,
        report: session.report.clone(),
    }))
}

async fn get_report(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionReport>, ApiError> {
    let session = state.session(&id).await?;
    let session = session.lock().await;
    let report = session
        .report
        .clone()
        .ok_or_else(|| ApiError::Conflict(format!("session is in phase {}", session.phase.as_str())))?;
    Ok(Json(SessionReport {
        session_id: session.id.clone(),
        condition: session.condition.clone(),
        report,
        compliance_rate: session.compliance_rate(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/explanation", get(get_explanation))
        .route("/sessions/{id}/assessment", get(get_assessment))
        .route("/sessions/{id}/response", post(post_response))
        .route("/sessions/{id}/report", get(get_report))
        .with_state(state)
}
