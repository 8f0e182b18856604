//! The comparison experiment: condition grid, sessions, event log, simulated
//! batch runs and the hypothesis read-out.

mod analysis;
mod config;
mod context;
mod log;
mod seeds;
mod session;
mod simulate;

use thiserror::Error;

pub use analysis::{analyze_hypotheses, Direction, HypothesisOutcome, HypothesisReport};
pub use config::{
    assign_condition, AssessmentSettings, Condition, Design, DomainEntry, ExperimentConfig, ExplanationBudgets,
};
pub use context::{normalize_label, Briefing, ConditionContext, ContextCache};
pub use log::{read_jsonl, replay, write_jsonl, Clock, EventLog, EventPayload, EventRecord};
pub use seeds::derive_seed;
pub use session::{
    step_session, MonitoringEvent, MonitoringKind, ParticipantKind, Phase, Session, SessionError, SessionResponse,
};
pub use simulate::{
    read_results, run_simulated_experiment, run_with_cache, simulate_session, ExperimentResults, ResultRow,
    SessionRow, CONFIG_FILE, EVENTS_FILE, RESULTS_FILE, RESULTS_SD_FILE, SESSIONS_FILE,
};

use crate::assessment::AssessmentError;
use crate::domains::DomainError;
use crate::explainers::ExplainError;
use crate::planning::PlanningError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("no condition {0}")]
    UnknownCondition(usize),
    #[error("domain {domain}: query pool has {available} pairs, {requested} queries requested")]
    QueryPoolTooSmall { domain: String, available: usize, requested: usize },
    #[error("results table is missing cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Session(#[from] SessionError),
}
