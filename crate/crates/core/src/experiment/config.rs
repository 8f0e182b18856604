use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::choice::Rationality;
use crate::domains::{ComplexityLevel, ComplexityProfile, DomainKind, DomainSpec, FeatureTier, Situational};
use crate::explainers::Modality;
use crate::human::HumanConfig;

/// A named domain in the condition grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub id: String,
    pub spec: DomainSpec,
    pub seed: u64,
    /// For a loaded domain, the unloaded domain it is matched with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
}

impl DomainEntry {
    pub fn situational(&self) -> Situational {
        self.spec.profile.situational_complexity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplanationBudgets {
    pub subset_k: usize,
    /// Number of sampled (s,a) pairs for contribution mass and concept regression.
    pub samples: usize,
    pub summary_k: usize,
    pub summary_window: usize,
    pub summary_min_separation: usize,
    pub factored_k: usize,
}

impl Default for ExplanationBudgets {
    fn default() -> Self {
        Self {
            subset_k: 2,
            samples: 200,
            summary_k: 3,
            summary_window: 3,
            summary_min_separation: 2,
            factored_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssessmentSettings {
    pub queries: usize,
    /// Random rollouts added to the best and worst ones when building the query pool.
    pub pool_rollouts: usize,
    pub belief_samples: usize,
    pub query_rationality: Rationality,
    /// Extra FR/FS candidates that are not reward features.
    pub distractors: Vec<String>,
    /// Free-label aliases for FR, mapping a normalized label to a feature name.
    pub aliases: BTreeMap<String, String>,
}

impl Default for AssessmentSettings {
    fn default() -> Self {
        Self {
            queries: 4,
            pool_rollouts: 12,
            belief_samples: 100,
            query_rationality: Rationality::Finite(5.0),
            distractors: vec!["time_taken".into(), "distance_to_start".into()],
            aliases: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Each simulated participant sees one condition.
    #[default]
    BetweenSubjects,
    /// The same simulated participant (same seed) is reused across the
    /// modalities of a domain.
    WithinSubjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub domains: Vec<DomainEntry>,
    pub modalities: Vec<Modality>,
    pub budgets: ExplanationBudgets,
    pub assessment: AssessmentSettings,
    pub human: HumanConfig,
    /// Simulated participants per condition.
    pub replicates: usize,
    pub design: Design,
    pub solver_tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let threats = ComplexityProfile::new(3, FeatureTier::Atomic, 4, 4, 0.0);
        Self {
            domains: vec![
                DomainEntry {
                    id: "gridworld_simple".into(),
                    spec: DomainSpec::sampled(
                        DomainKind::Gridworld,
                        ComplexityProfile::new(2, FeatureTier::Atomic, 3, 3, 0.0),
                    ),
                    seed: 1,
                    baseline: None,
                },
                DomainEntry {
                    id: "threats_waypoints".into(),
                    spec: DomainSpec::sampled(DomainKind::ThreatsWaypoints, threats.clone()),
                    seed: 2,
                    baseline: None,
                },
                DomainEntry {
                    id: "threats_waypoints_loaded".into(),
                    spec: DomainSpec::sampled(
                        DomainKind::ThreatsWaypoints,
                        threats.with_situational(Situational::MonitoringTask),
                    ),
                    seed: 2,
                    baseline: Some("threats_waypoints".into()),
                },
                DomainEntry {
                    id: "gridworld_large".into(),
                    spec: DomainSpec::sampled(
                        DomainKind::Gridworld,
                        ComplexityProfile::new(8, FeatureTier::Composite, 8, 8, 0.1),
                    ),
                    seed: 4,
                    baseline: None,
                },
            ],
            modalities: Modality::ALL.to_vec(),
            budgets: ExplanationBudgets::default(),
            assessment: AssessmentSettings::default(),
            human: HumanConfig::default(),
            replicates: 10,
            design: Design::default(),
            solver_tolerance: 1e-8,
        }
    }
}

/// One cell of the condition grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub domain: String,
    pub modality: Modality,
    pub profile: ComplexityProfile,
    /// Seed the domain is generated from.
    pub seed: u64,
}

impl Condition {
    pub fn complexity(&self) -> ComplexityLevel {
        self.profile.level()
    }

    pub fn is_loaded(&self) -> bool {
        self.profile.situational_complexity == Situational::MonitoringTask
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |msg: String| Err(ExperimentError::InvalidConfig(msg));
        if self.domains.is_empty() {
            return invalid("no domains".into());
        }
        if self.modalities.is_empty() {
            return invalid("no modalities".into());
        }
        for (i, d) in self.domains.iter().enumerate() {
            if self.domains[..i].iter().any(|o| o.id == d.id) {
                return invalid(format!("duplicate domain id {}", d.id));
            }
            d.spec.profile.validate().map_err(|e| ExperimentError::InvalidConfig(format!("{}: {e}", d.id)))?;
            let loaded = d.situational() == Situational::MonitoringTask;
            if d.id.ends_with("_loaded") != loaded {
                return invalid(format!(
                    "domain {} must use situational complexity {}",
                    d.id,
                    if loaded { "none" } else { "monitoring_task" }
                ));
            }
            match (&d.baseline, loaded) {
                (Some(base), true) => {
                    let Some(other) = self.domains.iter().find(|o| &o.id == base) else {
                        return invalid(format!("baseline {base} of {} is not a domain", d.id));
                    };
                    if other.situational() != Situational::None {
                        return invalid(format!("baseline {base} of {} is itself loaded", d.id));
                    }
                }
                (Some(_), false) => return invalid(format!("unloaded domain {} has a baseline", d.id)),
                (None, _) => {}
            }
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if self.modalities[..i].contains(m) {
                return invalid(format!("duplicate modality {}", m.as_str()));
            }
        }
        if self.replicates == 0 {
            return invalid("replicates must be at least 1".into());
        }
        if self.assessment.queries == 0 {
            return invalid("at least one preference query is needed".into());
        }
        if self.assessment.belief_samples < 2 {
            return invalid("at least two belief samples are needed".into());
        }
        if !(self.solver_tolerance > 0.0) {
            return invalid("solver tolerance must be positive".into());
        }
        self.human.validate().map_err(ExperimentError::InvalidConfig)
    }

    /// Domain-major grid of all conditions.
    pub fn conditions(&self) -> Vec<Condition> {
        self.domains
            .iter()
            .flat_map(|d| {
                self.modalities.iter().map(move |m| Condition {
                    domain: d.id.clone(),
                    modality: *m,
                    profile: d.spec.profile.clone(),
                    seed: d.seed,
                })
            })
            .collect()
    }

    pub fn domain(&self, id: &str) -> Option<&DomainEntry> {
        self.domains.iter().find(|d| d.id == id)
    }
}

/// Round-robin over the condition grid; returns the grid index and the condition.
pub fn assign_condition(config: &ExperimentConfig, participant: usize) -> (usize, Condition) {
    let conditions = config.conditions();
    let index = participant % conditions.len();
    (index, conditions[index].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_24_conditions() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        let conditions = config.conditions();
        assert_eq!(conditions.len(), 24);
        let assigned: Vec<Condition> = (0..24).map(|i| assign_condition(&config, i).1).collect();
        assert_eq!(assigned, conditions);
        assert_eq!(assign_condition(&config, 24), assign_condition(&config, 0));
        let again: Vec<Condition> = (0..48).map(|i| assign_condition(&config, i).1).collect();
        assert_eq!(again, (0..48).map(|i| assign_condition(&config, i).1).collect::<Vec<_>>());
    }

    #[test]
    fn loaded_domains_need_monitoring() {
        let mut config = ExperimentConfig::default();
        config.domains[2].spec.profile.situational_complexity = Situational::None;
        assert!(config.validate().is_err());
    }

    #[test]
    fn complexity_groups() {
        let config = ExperimentConfig::default();
        let levels: Vec<ComplexityLevel> = config.domains.iter().map(|d| d.spec.profile.level()).collect();
        assert_eq!(
            levels,
            vec![ComplexityLevel::Low, ComplexityLevel::Low, ComplexityLevel::Low, ComplexityLevel::High]
        );
    }

    #[test]
    fn partial_json_uses_defaults() {
        let config: ExperimentConfig = serde_json::from_str(r#"{"replicates": 3}"#).unwrap();
        assert_eq!(config.replicates, 3);
        assert_eq!(config.domains.len(), 4);
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), config);
    }
}
