//! Append-only JSON Lines event log and session replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::context::ContextCache;
use super::session::{ParticipantKind, Phase, Session, SessionResponse};
use super::ExperimentError;
use crate::assessment::MetricReport;
use crate::experiment::config::Condition;
use crate::human::HumanConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventPayload {
    Created {
        condition_index: usize,
        condition: Condition,
        participant: ParticipantKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        human: Option<HumanConfig>,
    },
    Response {
        response: SessionResponse,
    },
    Completed {
        report: MetricReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub session_id: String,
    /// Phase the session was in when the event occurred.
    pub phase: Phase,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Milliseconds since the Unix epoch.
    Wall,
    /// Timestamps equal sequence numbers, for reproducible simulated logs.
    Logical,
}

/// Records kept in memory and, optionally, mirrored line by line to a file.
#[derive(Debug)]
pub struct EventLog {
    records: Vec<EventRecord>,
    clock: Clock,
    sink: Option<File>,
}

impl EventLog {
    pub fn in_memory(clock: Clock) -> Self {
        Self { records: Vec::new(), clock, sink: None }
    }

    /// Opens `path` for appending, loading any records already in it so
    /// sequence numbers continue.
    pub fn open(path: &Path, clock: Clock) -> Result<Self, ExperimentError> {
        let records = if path.exists() { read_jsonl(path)? } else { Vec::new() };
        let sink = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self { records, clock, sink: Some(sink) })
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EventRecord> {
        self.records
    }

    pub fn append(&mut self, session_id: &str, phase: Phase, payload: EventPayload) -> io::Result<&EventRecord> {
        let seq = self.records.len() as u64;
        let timestamp_ms = match self.clock {
            Clock::Logical => seq,
            Clock::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        };
        let record = EventRecord {
            seq,
            timestamp_ms,
            session_id: session_id.to_string(),
            phase,
            payload,
        };
        if let Some(sink) = &mut self.sink {
            let line = serde_json::to_string(&record).map_err(io::Error::other)?;
            writeln!(sink, "{line}")?;
            sink.flush()?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }
}

pub fn write_jsonl(path: &Path, records: &[EventRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<EventRecord>, ExperimentError> {
    let reader = BufReader::new(File::open(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ExperimentError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| ExperimentError::Replay(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(records)
}

/// Rebuilds every session from its records. Each logged report must equal
/// the recomputed one exactly.
pub fn replay(records: &[EventRecord], cache: &ContextCache) -> Result<BTreeMap<String, Session>, ExperimentError> {
    let mut sessions: BTreeMap<String, Session> = BTreeMap::new();
    for record in records {
        let err = |msg: String| ExperimentError::Replay(format!("seq {} ({}): {msg}", record.seq, record.session_id));
        match &record.payload {
            EventPayload::Created { condition_index, condition, participant, human } => {
                let ctx = cache.get(*condition_index)?;
                if &ctx.condition != condition {
                    return Err(err("condition differs from the configured grid".into()));
                }
                let session = Session::new(record.session_id.clone(), &ctx, *participant, human.clone());
                if sessions.insert(record.session_id.clone(), session).is_some() {
                    return Err(err("session created twice".into()));
                }
            }
            EventPayload::Response { response } => {
                let session = sessions
                    .get_mut(&record.session_id)
                    .ok_or_else(|| err("response before creation".into()))?;
                let ctx = cache.get(session.condition_index)?;
                session.validate(&ctx, response).map_err(|e| err(e.to_string()))?;
                session.apply(&ctx, response).map_err(|e| err(e.to_string()))?;
            }
            EventPayload::Completed { report } => {
                let session = sessions
                    .get(&record.session_id)
                    .ok_or_else(|| err("completion before creation".into()))?;
                if session.report.as_ref() != Some(report) {
                    return Err(err("logged report differs from the replayed one".into()));
                }
            }
        }
    }
    Ok(sessions)
}
