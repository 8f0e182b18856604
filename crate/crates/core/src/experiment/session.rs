use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::Condition;
use super::context::ConditionContext;
use super::log::{EventLog, EventPayload};
use crate::assessment::{
    compose, score_bd_detailed, score_feature_belief, score_pe, AssessmentError, FeatureBeliefResponse,
    MetricReport, PreferenceResponses, ResponseSource,
};
use crate::human::HumanConfig;
use crate::mdp::{Step, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Briefing,
    Explanation,
    AssessmentFr,
    AssessmentFs,
    AssessmentPe,
    AssessmentBd,
    Done,
}

impl Phase {
    pub const ORDER: [Phase; 7] = [
        Phase::Briefing,
        Phase::Explanation,
        Phase::AssessmentFr,
        Phase::AssessmentFs,
        Phase::AssessmentPe,
        Phase::AssessmentBd,
        Phase::Done,
    ];

    pub fn next(self) -> Phase {
        let i = Self::ORDER.iter().position(|p| *p == self).expect("phase is listed");
        Self::ORDER[(i + 1).min(Self::ORDER.len() - 1)]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Briefing => "briefing",
            Phase::Explanation => "explanation",
            Phase::AssessmentFr => "assessment_fr",
            Phase::AssessmentFs => "assessment_fs",
            Phase::AssessmentPe => "assessment_pe",
            Phase::AssessmentBd => "assessment_bd",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantKind {
    Human,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitoringKind {
    Prompt,
    Ack,
    Miss,
}

/// One event of the attend-and-acknowledge distractor stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitoringEvent {
    pub kind: MonitoringKind,
    pub prompt: u32,
    /// Client time of the event in milliseconds.
    pub at_ms: u64,
}

/// A participant submission. The `type` tag selects the phase it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionResponse {
    BriefingAck,
    ExplanationViewed,
    /// Free labels; matched to feature names server-side.
    FreeResponse {
        features: Vec<String>,
        #[serde(default)]
        comparisons: Vec<(String, String)>,
    },
    SubSelection {
        features: Vec<String>,
        #[serde(default)]
        comparisons: Vec<(String, String)>,
    },
    Preference {
        query: usize,
        choice: usize,
    },
    Demonstration {
        steps: Vec<Step>,
    },
    Monitoring(MonitoringEvent),
}

impl SessionResponse {
    /// Phase the response belongs to; `None` for phase-independent events.
    pub fn phase(&self) -> Option<Phase> {
        match self {
            SessionResponse::BriefingAck => Some(Phase::Briefing),
            SessionResponse::ExplanationViewed => Some(Phase::Explanation),
            SessionResponse::FreeResponse { .. } => Some(Phase::AssessmentFr),
            SessionResponse::SubSelection { .. } => Some(Phase::AssessmentFs),
            SessionResponse::Preference { .. } => Some(Phase::AssessmentPe),
            SessionResponse::Demonstration { .. } => Some(Phase::AssessmentBd),
            SessionResponse::Monitoring(_) => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("response for {got} does not match phase {expected}")]
    PhaseMismatch { expected: &'static str, got: &'static str },
    #[error("duplicate submission for {0}")]
    Duplicate(String),
    #[error("session is complete")]
    Complete,
    #[error("invalid response: {0}")]
    Invalid(String),
    #[error("monitoring events are only accepted in loaded conditions")]
    NotLoaded,
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error("event log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub condition_index: usize,
    pub condition: Condition,
    pub participant: ParticipantKind,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanConfig>,
    pub fr: Option<FeatureBeliefResponse>,
    pub fs: Option<FeatureBeliefResponse>,
    pub pe: Vec<Option<usize>>,
    pub bd: Option<Trajectory>,
    pub monitoring: Vec<MonitoringEvent>,
    pub report: Option<MetricReport>,
}

impl Session {
    pub fn new(
        id: String,
        ctx: &ConditionContext,
        participant: ParticipantKind,
        human: Option<HumanConfig>,
    ) -> Self {
        Self {
            id,
            condition_index: ctx.index,
            condition: ctx.condition.clone(),
            participant,
            phase: Phase::Briefing,
            human,
            fr: None,
            fs: None,
            pe: vec![None; ctx.queries.len()],
            bd: None,
            monitoring: Vec::new(),
            report: None,
        }
    }

    /// Share of monitoring prompts acknowledged; `None` when no prompt was shown.
    pub fn compliance_rate(&self) -> Option<f64> {
        let prompts: BTreeSet<u32> = self
            .monitoring
            .iter()
            .filter(|e| e.kind == MonitoringKind::Prompt)
            .map(|e| e.prompt)
            .collect();
        if prompts.is_empty() {
            return None;
        }
        let acked = self
            .monitoring
            .iter()
            .filter(|e| e.kind == MonitoringKind::Ack && prompts.contains(&e.prompt))
            .map(|e| e.prompt)
            .collect::<BTreeSet<_>>()
            .len();
        Some(acked as f64 / prompts.len() as f64)
    }

    /// Checks a response against the current phase without changing anything.
    pub fn validate(&self, ctx: &ConditionContext, response: &SessionResponse) -> Result<(), SessionError> {
        if self.phase == Phase::Done {
            return Err(SessionError::Complete);
        }
        let Some(target) = response.phase() else {
            let SessionResponse::Monitoring(event) = response else { unreachable!() };
            if !ctx.condition.is_loaded() {
                return Err(SessionError::NotLoaded);
            }
            let known = self.monitoring.iter().any(|e| e.prompt == event.prompt && e.kind == MonitoringKind::Prompt);
            let answered = self
                .monitoring
                .iter()
                .any(|e| e.prompt == event.prompt && e.kind != MonitoringKind::Prompt);
            return match event.kind {
                MonitoringKind::Prompt if known => Err(SessionError::Duplicate(format!("prompt {}", event.prompt))),
                MonitoringKind::Prompt => Ok(()),
                _ if !known => Err(SessionError::Invalid(format!("prompt {} was never shown", event.prompt))),
                _ if answered => Err(SessionError::Duplicate(format!("answer to prompt {}", event.prompt))),
                _ => Ok(()),
            };
        };
        if target < self.phase {
            return Err(SessionError::Duplicate(target.as_str().into()));
        }
        if target > self.phase {
            return Err(SessionError::PhaseMismatch {
                expected: self.phase.as_str(),
                got: target.as_str(),
            });
        }
        match response {
            SessionResponse::FreeResponse { .. } | SessionResponse::SubSelection { .. } => {
                let belief = self.feature_belief(ctx, response)?;
                belief.validate()?;
            }
            SessionResponse::Preference { query, choice } => {
                if *query >= self.pe.len() {
                    return Err(SessionError::Invalid(format!("no query {query}")));
                }
                if *choice > 1 {
                    return Err(SessionError::Invalid(format!("choice {choice} is not 0 or 1")));
                }
                if self.pe[*query].is_some() {
                    return Err(SessionError::Duplicate(format!("query {query}")));
                }
            }
            SessionResponse::Demonstration { steps } => {
                let traj = Trajectory::new(steps.clone());
                match traj.start() {
                    None => return Err(AssessmentError::EmptyDemonstration.into()),
                    Some(s) if s != ctx.bd_start => {
                        return Err(SessionError::Invalid(format!(
                            "demonstration starts at {s}, expected {}",
                            ctx.bd_start
                        )))
                    }
                    Some(_) => {}
                }
                ctx.domain
                    .mdp
                    .check_episode(&traj)
                    .map_err(|e| SessionError::Assessment(e.into()))?;
            }
            _ => {}
        }
        Ok(())
    }

    fn feature_belief(
        &self,
        ctx: &ConditionContext,
        response: &SessionResponse,
    ) -> Result<FeatureBeliefResponse, SessionError> {
        let (features, comparisons, source) = match response {
            SessionResponse::FreeResponse { features, comparisons } => {
                (features, comparisons, ResponseSource::FreeResponse)
            }
            SessionResponse::SubSelection { features, comparisons } => {
                (features, comparisons, ResponseSource::SubSelection)
            }
            _ => unreachable!("only feature responses carry a belief"),
        };
        let map = |label: &String| -> Result<String, SessionError> {
            match source {
                ResponseSource::FreeResponse => Ok(ctx.canonical_label(label)),
                ResponseSource::SubSelection if ctx.candidates.contains(label) => Ok(label.clone()),
                ResponseSource::SubSelection => Err(SessionError::Invalid(format!("{label} is not a candidate"))),
            }
        };
        Ok(FeatureBeliefResponse {
            claimed_features: features.iter().map(map).collect::<Result<_, _>>()?,
            comparisons: comparisons
                .iter()
                .map(|(a, b)| Ok((map(a)?, map(b)?)))
                .collect::<Result<_, SessionError>>()?,
            source,
        })
    }

    /// Applies a validated response, advancing the phase and scoring on
    /// completion.
    pub fn apply(&mut self, ctx: &ConditionContext, response: &SessionResponse) -> Result<(), SessionError> {
        match response {
            SessionResponse::Monitoring(event) => {
                self.monitoring.push(event.clone());
                return Ok(());
            }
            SessionResponse::FreeResponse { .. } => self.fr = Some(self.feature_belief(ctx, response)?),
            SessionResponse::SubSelection { .. } => self.fs = Some(self.feature_belief(ctx, response)?),
            SessionResponse::Preference { query, choice } => self.pe[*query] = Some(*choice),
            SessionResponse::Demonstration { steps } => self.bd = Some(Trajectory::new(steps.clone())),
            SessionResponse::BriefingAck | SessionResponse::ExplanationViewed => {}
        }
        let finished = match self.phase {
            Phase::AssessmentPe => self.pe.iter().all(Option::is_some),
            _ => true,
        };
        if finished {
            self.phase = self.phase.next();
            if self.phase == Phase::Done {
                self.report = Some(self.score(ctx)?);
            }
        }
        Ok(())
    }

    fn score(&self, ctx: &ConditionContext) -> Result<MetricReport, SessionError> {
        let missing = |what: &str| SessionError::Invalid(format!("missing {what} response"));
        let fr_response = self.fr.as_ref().ok_or_else(|| missing("fr"))?;
        let fs_response = self.fs.as_ref().ok_or_else(|| missing("fs"))?;
        let demo = self.bd.as_ref().ok_or_else(|| missing("bd"))?;
        let fr = score_feature_belief(fr_response, &ctx.truth)?;
        let fs = score_feature_belief(fs_response, &ctx.truth)?;
        let responses = PreferenceResponses {
            responses: self
                .pe
                .iter()
                .map(|c| c.ok_or_else(|| missing("pe")))
                .collect::<Result<_, _>>()?,
            truth: ctx.query_truth.clone(),
        };
        let pe = score_pe(&responses)?;
        let bd = score_bd_detailed(&ctx.domain.mdp, &ctx.q, demo)?;
        let mut report = compose(fr, fs, pe, bd.score)?;
        report.provenance.fr_elements = Some(fr_response.claimed_features.len() + fr_response.comparisons.len());
        report.provenance.fs_elements = Some(fs_response.claimed_features.len() + fs_response.comparisons.len());
        report.provenance.pe_queries = Some(responses.truth.len());
        report.provenance.bd_raw = Some(bd.raw);
        report.provenance.bd_regret = Some(bd.optimal_return - bd.demo_return);
        Ok(report)
    }
}

/// Validates `response`, appends it to `log`, then applies it. Entering
/// `done` also logs the metric report.
pub fn step_session(
    session: &mut Session,
    ctx: &ConditionContext,
    response: SessionResponse,
    log: &mut EventLog,
) -> Result<(), SessionError> {
    session.validate(ctx, &response)?;
    let phase = session.phase;
    log.append(&session.id, phase, EventPayload::Response { response: response.clone() })
        .map_err(|e| SessionError::Log(e.to_string()))?;
    session.apply(ctx, &response)?;
    if phase != Phase::Done && session.phase == Phase::Done {
        let report = session.report.clone().expect("report exists once done");
        log.append(&session.id, Phase::Done, EventPayload::Completed { report })
            .map_err(|e| SessionError::Log(e.to_string()))?;
    }
    Ok(())
}
