use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::config::{Condition, ExperimentConfig};
use super::ExperimentError;
use crate::assessment::{
    build_query_pool, gen_preference_queries, ground_truth_belief, sample_unit_ball, GroundTruthBelief,
    PreferenceQuery,
};
use crate::domains::{build_domain, Domain};
use crate::explainers::{
    explain_abstraction, explain_direct, explain_factored, explain_subset, explain_summary, explain_trajectories,
    Explanation, Modality,
};
use crate::human::BeliefPrior;
use crate::mdp::{GridLayout, MdpStructure, StateId};
use crate::planning::{decomposed_value_iteration, solve_worst, value_iteration, QTable};

use super::seeds::derive_seed;

/// What a participant sees before the explanation. Carries no weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Briefing {
    pub domain: String,
    pub kind: String,
    pub modality: Modality,
    pub num_states: usize,
    pub action_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridLayout>,
    pub horizon: usize,
    pub monitoring_task: bool,
}

/// Everything a session in one condition needs, computed once.
#[derive(Debug)]
pub struct ConditionContext {
    pub index: usize,
    pub condition: Condition,
    pub domain: Domain<f64>,
    pub q: QTable<f64>,
    pub q_min: QTable<f64>,
    pub explanation: Explanation<f64>,
    /// Shared FR/FS candidate list: reward features plus distractors, sorted.
    pub candidates: Vec<String>,
    pub queries: Vec<PreferenceQuery>,
    pub query_truth: Vec<usize>,
    pub bd_start: StateId,
    pub truth: GroundTruthBelief,
    aliases: BTreeMap<String, String>,
    prior: OnceLock<Arc<BeliefPrior>>,
    prior_samples: usize,
    prior_seed: u64,
}

/// Lower-case with runs of non-alphanumerics collapsed to `_`.
pub fn normalize_label(label: &str) -> String {
    let mut out = String::new();
    for ch in label.trim().chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

impl ConditionContext {
    pub fn build(config: &ExperimentConfig, index: usize) -> Result<Self, ExperimentError> {
        let condition = config
            .conditions()
            .get(index)
            .cloned()
            .ok_or(ExperimentError::UnknownCondition(index))?;
        let entry = config
            .domain(&condition.domain)
            .ok_or_else(|| ExperimentError::InvalidConfig(format!("unknown domain {}", condition.domain)))?;
        let domain: Domain<f64> = build_domain(&entry.spec, entry.seed)?;
        let mdp = &domain.mdp;
        let tol = config.solver_tolerance;
        let q = value_iteration(mdp, tol)?;
        let q_min = solve_worst(mdp, tol)?;
        let budgets = &config.budgets;
        let explain_seed = derive_seed(entry.seed, &[1, index as u64]);
        let explanation = match condition.modality {
            Modality::DirectReward => explain_direct(mdp),
            Modality::FeatureSubset => {
                explain_subset(mdp, budgets.subset_k.min(mdp.feature_dim()), budgets.samples, explain_seed)?
            }
            Modality::Abstraction => {
                explain_abstraction(mdp, &domain.default_concepts(), budgets.samples, explain_seed)?
            }
            Modality::TrajectoryDemo => explain_trajectories(mdp, &q, &q_min, domain.assessment_start)?,
            Modality::PolicySummary => explain_summary(
                mdp,
                &q,
                budgets.summary_k,
                budgets.summary_window,
                budgets.summary_min_separation,
            )?,
            Modality::FactoredPolicy => {
                let dq = decomposed_value_iteration(mdp, tol)?;
                explain_factored(mdp, &dq, budgets.factored_k)?
            }
        };

        let settings = &config.assessment;
        // Pool and belief depend only on the domain, so every modality of a
        // domain is assessed with the same queries.
        let pool = build_query_pool(
            mdp,
            &q,
            &q_min,
            domain.assessment_start,
            settings.pool_rollouts,
            derive_seed(entry.seed, &[2]),
        )?;
        if pool.len() < settings.queries {
            return Err(ExperimentError::QueryPoolTooSmall {
                domain: entry.id.clone(),
                available: pool.len(),
                requested: settings.queries,
            });
        }
        let belief = sample_unit_ball(mdp.feature_dim(), settings.belief_samples, derive_seed(entry.seed, &[3]));
        let selection = gen_preference_queries(mdp, &belief, &pool, settings.queries, settings.query_rationality)?;
        let query_truth = selection.queries.iter().map(|q| q.truth(mdp)).collect();

        let mut candidates: Vec<String> = mdp.feature_names.clone();
        for d in &settings.distractors {
            if !candidates.contains(d) {
                candidates.push(d.clone());
            }
        }
        candidates.sort();

        Ok(Self {
            index,
            truth: ground_truth_belief(mdp),
            bd_start: domain.assessment_start,
            q,
            q_min,
            explanation,
            candidates,
            queries: selection.queries,
            query_truth,
            aliases: settings
                .aliases
                .iter()
                .map(|(k, v)| (normalize_label(k), v.clone()))
                .collect(),
            prior: OnceLock::new(),
            prior_samples: config.human.prior_samples,
            prior_seed: derive_seed(entry.seed, &[4]),
            condition,
            domain,
        })
    }

    pub fn structure(&self) -> MdpStructure<f64> {
        self.domain.mdp.structure()
    }

    /// Weight-sample prior shared by all simulated participants of this condition.
    pub fn prior(&self, tolerance: f64) -> Arc<BeliefPrior> {
        self.prior
            .get_or_init(|| {
                Arc::new(BeliefPrior::sampled(
                    self.structure(),
                    self.prior_samples,
                    self.prior_seed,
                    tolerance,
                ))
            })
            .clone()
    }

    pub fn briefing(&self) -> Briefing {
        let mdp = &self.domain.mdp;
        Briefing {
            domain: self.condition.domain.clone(),
            kind: self.domain.spec.kind.as_str().to_string(),
            modality: self.condition.modality,
            num_states: mdp.num_states,
            action_names: mdp.action_names.clone(),
            grid: mdp.layout.clone(),
            horizon: mdp.horizon,
            monitoring_task: self.condition.is_loaded(),
        }
    }

    /// Maps a free label to a feature name by exact, normalized or alias
    /// match; unmatched labels come back unchanged.
    pub fn canonical_label(&self, label: &str) -> String {
        let names = &self.domain.mdp.feature_names;
        if names.iter().any(|n| n == label) {
            return label.to_string();
        }
        let norm = normalize_label(label);
        if let Some(n) = names.iter().find(|n| normalize_label(n) == norm) {
            return n.clone();
        }
        if let Some(n) = self.aliases.get(&norm) {
            return n.clone();
        }
        label.trim().to_string()
    }
}

/// Lazily built, shared condition contexts.
#[derive(Debug)]
pub struct ContextCache {
    config: ExperimentConfig,
    cells: Vec<OnceLock<Result<Arc<ConditionContext>, ExperimentError>>>,
}

impl ContextCache {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let n = config.conditions().len();
        Ok(Self {
            config,
            cells: (0..n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<Arc<ConditionContext>, ExperimentError> {
        let cell = self.cells.get(index).ok_or(ExperimentError::UnknownCondition(index))?;
        cell.get_or_init(|| ConditionContext::build(&self.config, index).map(Arc::new))
            .clone()
    }
}
