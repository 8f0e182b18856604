use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Design, ExperimentConfig};
use super::context::{ConditionContext, ContextCache};
use super::log::{write_jsonl, Clock, EventLog, EventPayload, EventRecord};
use super::seeds::derive_seed;
use super::session::{step_session, ParticipantKind, Phase, Session, SessionResponse};
use super::ExperimentError;
use crate::assessment::{MetricReport, ResponseSource};
use crate::domains::{ComplexityLevel, Situational};
use crate::explainers::{Category, Modality};
use crate::human::{HumanConfig, SimulatedHuman};

/// One row of the per-condition results table. The metric columns hold
/// means in `results.csv` and standard deviations in `results_sd.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: usize,
    pub domain: String,
    pub modality: Modality,
    pub category: Category,
    pub complexity: ComplexityLevel,
    pub situational: Situational,
    pub baseline: Option<String>,
    pub n: usize,
    pub fr: f64,
    pub fs: f64,
    pub pe: f64,
    pub bd: f64,
    pub f: f64,
    pub p: f64,
    pub c: f64,
}

impl ResultRow {
    pub fn metrics(&self) -> [f64; 7] {
        [self.fr, self.fs, self.pe, self.bd, self.f, self.p, self.c]
    }

    fn with_metrics(mut self, m: [f64; 7]) -> Self {
        [self.fr, self.fs, self.pe, self.bd, self.f, self.p, self.c] = m;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub session_id: String,
    pub condition: usize,
    pub domain: String,
    pub modality: Modality,
    pub replicate: usize,
    pub seed: u64,
    pub fr: f64,
    pub fs: f64,
    pub pe: f64,
    pub bd: f64,
    pub f: f64,
    pub p: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub means: Vec<ResultRow>,
    pub sds: Vec<ResultRow>,
    pub sessions: Vec<SessionRow>,
    pub events: Vec<EventRecord>,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_SD_FILE: &str = "results_sd.csv";
pub const SESSIONS_FILE: &str = "sessions.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CONFIG_FILE: &str = "config.json";

fn csv_string<R: Serialize>(rows: &[R]) -> Result<String, ExperimentError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| ExperimentError::Io(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| ExperimentError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ExperimentError::Io(e.to_string()))
}

impl ExperimentResults {
    pub fn results_csv(&self) -> Result<String, ExperimentError> {
        csv_string(&self.means)
    }

    /// Writes the results tables, per-session scores, the event log and the
    /// config into `dir`.
    pub fn write_dir(&self, dir: &Path, config: &ExperimentConfig) -> Result<(), ExperimentError> {
        let io = |e: std::io::Error| ExperimentError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join(RESULTS_FILE), csv_string(&self.means)?).map_err(io)?;
        fs::write(dir.join(RESULTS_SD_FILE), csv_string(&self.sds)?).map_err(io)?;
        fs::write(dir.join(SESSIONS_FILE), csv_string(&self.sessions)?).map_err(io)?;
        write_jsonl(&dir.join(EVENTS_FILE), &self.events).map_err(io)?;
        let config_json = serde_json::to_string_pretty(config).map_err(|e| ExperimentError::Io(e.to_string()))?;
        fs::write(dir.join(CONFIG_FILE), config_json + "\n").map_err(io)?;
        Ok(())
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))
}

/// Runs one simulated participant through a session, returning the session
/// and its log records (logical clock, numbered from 0).
pub fn simulate_session(
    ctx: &ConditionContext,
    human_config: HumanConfig,
    session_id: String,
    tolerance: f64,
) -> Result<(Session, Vec<EventRecord>), ExperimentError> {
    let mut log = EventLog::in_memory(Clock::Logical);
    let mut session = Session::new(session_id, ctx, ParticipantKind::Simulated, Some(human_config.clone()));
    log.append(
        &session.id,
        Phase::Briefing,
        EventPayload::Created {
            condition_index: ctx.index,
            condition: ctx.condition.clone(),
            participant: ParticipantKind::Simulated,
            human: Some(human_config.clone()),
        },
    )
    .map_err(|e| ExperimentError::Io(e.to_string()))?;

    let threshold = human_config.threshold;
    let mut human = SimulatedHuman::new(human_config, ctx.domain.mdp.feature_names.clone())
        .apply_situational_load(ctx.condition.profile.situational_complexity);
    let structure = ctx.structure();
    let mut step = |session: &mut Session, response| step_session(session, ctx, response, &mut log);

    step(&mut session, SessionResponse::BriefingAck)?;
    human.perceive(&ctx.explanation, &ctx.prior(tolerance))?;
    step(&mut session, SessionResponse::ExplanationViewed)?;
    for source in [ResponseSource::FreeResponse, ResponseSource::SubSelection] {
        let belief = human.respond_features(&ctx.candidates, threshold, source);
        let features = belief.claimed_features.into_iter().collect();
        let comparisons = belief.comparisons.into_iter().collect();
        let response = match source {
            ResponseSource::FreeResponse => SessionResponse::FreeResponse { features, comparisons },
            ResponseSource::SubSelection => SessionResponse::SubSelection { features, comparisons },
        };
        step(&mut session, response)?;
    }
    for (i, query) in ctx.queries.iter().enumerate() {
        let choice = human.answer_query(&structure, query);
        step(&mut session, SessionResponse::Preference { query: i, choice })?;
    }
    let demo = human.demonstrate(&structure, ctx.bd_start);
    step(&mut session, SessionResponse::Demonstration { steps: demo.steps })?;
    Ok((session, log.into_records()))
}

fn mean_and_sd(reports: &[MetricReport]) -> ([f64; 7], [f64; 7]) {
    let n = reports.len() as f64;
    let mut mean = [0.0; 7];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sd = [0.0; 7];
    if reports.len() > 1 {
        for r in reports {
            for ((s, v), m) in sd.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        sd.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
    }
    (mean, sd)
}

/// Every condition × replicate with seeded simulated participants. The
/// output depends only on `(config, seed)`.
pub fn run_simulated_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentResults, ExperimentError> {
    let cache = ContextCache::new(config.clone())?;
    run_with_cache(&cache, seed)
}

pub fn run_with_cache(cache: &ContextCache, seed: u64) -> Result<ExperimentResults, ExperimentError> {
    let config = cache.config();
    let conditions = config.conditions();
    let jobs: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..config.replicates).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<(Session, Vec<EventRecord>, u64)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let ctx = cache.get(c)?;
            let participant_seed = match config.design {
                Design::BetweenSubjects => derive_seed(seed, &[c as u64, r as u64]),
                Design::WithinSubjects => {
                    let domain = config.domains.iter().position(|d| d.id == ctx.condition.domain).unwrap_or(0);
                    derive_seed(seed, &[1 << 32 | domain as u64, r as u64])
                }
            };
            let human = HumanConfig { seed: participant_seed, ..config.human.clone() };
            let id = format!("sim-{c:03}-{r:04}");
            let (session, records) = simulate_session(&ctx, human, id, config.solver_tolerance)?;
            Ok((session, records, participant_seed))
        })
        .collect::<Result<_, ExperimentError>>()?;

    let mut events = Vec::new();
    let mut sessions = Vec::new();
    for ((session, records, participant_seed), &(_, r)) in outcomes.iter().zip(&jobs) {
        for mut record in records.iter().cloned() {
            record.seq = events.len() as u64;
            record.timestamp_ms = record.seq;
            events.push(record);
        }
        let report = session.report.as_ref().expect("simulated sessions finish");
        let [fr, fs, pe, bd, f, p, c] = report.values();
        sessions.push(SessionRow {
            session_id: session.id.clone(),
            condition: session.condition_index,
            domain: session.condition.domain.clone(),
            modality: session.condition.modality,
            replicate: r,
            seed: *participant_seed,
            fr,
            fs,
            pe,
            bd,
            f,
            p,
            c,
        });
    }

    let mut means = Vec::new();
    let mut sds = Vec::new();
    for (i, condition) in conditions.iter().enumerate() {
        let reports: Vec<MetricReport> = outcomes
            .iter()
            .filter(|(s, _, _)| s.condition_index == i)
            .map(|(s, _, _)| s.report.clone().expect("simulated sessions finish"))
            .collect();
        let (mean, sd) = mean_and_sd(&reports);
        let entry = config.domain(&condition.domain).expect("condition domains are configured");
        let row = ResultRow {
            condition: i,
            domain: condition.domain.clone(),
            modality: condition.modality,
            category: condition.modality.category(),
            complexity: condition.complexity(),
            situational: condition.profile.situational_complexity,
            baseline: entry.baseline.clone(),
            n: reports.len(),
            fr: 0.0,
            fs: 0.0,
            pe: 0.0,
            bd: 0.0,
            f: 0.0,
            p: 0.0,
            c: 0.0,
        };
        sds.push(row.clone().with_metrics(sd));
        means.push(row.with_metrics(mean));
    }
    Ok(ExperimentResults { means, sds, sessions, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::Rationality;

    fn small_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.domains.truncate(3);
        config.replicates = 2;
        config.human.prior_samples = 20;
        config
    }

    #[test]
    fn oracle_humans_hit_the_ceiling() {
        let results = run_simulated_experiment(&small_config(), 9).unwrap();
        for row in &results.means {
            if row.modality == Modality::DirectReward {
                assert_eq!(row.c, 4.0, "{}", row.domain);
            }
        }
        assert_eq!(results.sessions.len(), 3 * 6 * 2);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let config = small_config();
        let a = run_simulated_experiment(&config, 5).unwrap();
        let b = run_simulated_experiment(&config, 5).unwrap();
        assert_eq!(a.results_csv().unwrap(), b.results_csv().unwrap());
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn results_round_trip_through_csv() {
        let mut config = small_config();
        config.human.rationality = Rationality::finite(2.0);
        config.human.perceptual_noise = 0.2;
        let results = run_simulated_experiment(&config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        results.write_dir(dir.path(), &config).unwrap();
        let rows = read_results(&dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(rows, results.means);
        let header = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        assert!(header.starts_with("condition,domain,modality,category,complexity,situational,baseline,n,fr,fs,pe,bd,f,p,c\n"));
    }
}
