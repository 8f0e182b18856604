//! The six explanation modalities, produced from a solved MDP.
//!
//! Feature-space explanations talk about features and weights directly;
//! policy-space explanations show behaviour. Serialized explanations are the
//! payloads served to the web UI and logged with every session:
//!
//! ```json
//! {"modality": "feature_subset",
//!  "payload": {"features": [{"index": 0, "name": "goal", "weight": 1.0}], "fidelity": 0.8},
//!  "provenance": {"domain_id": "...", "budget": {"k": 1, "samples": 200, "seed": 3}, "flags": []}}
//! ```

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::ConceptSet;
use crate::mdp::{discounted_return, ActionId, LinearRewardMdp, StateId, Trajectory};
use crate::planning::{
    greedy_rollout, policy_rollout, rank_by_importance, state_importance, DecomposedQTable,
    Objective, PlanningError, QTable,
};
use crate::regression::ridge_least_squares;
use crate::scalar::Scalar;

const RIDGE: f64 = 1e-8;
const DEGENERATE_CONDITIONING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    DirectReward,
    FeatureSubset,
    Abstraction,
    TrajectoryDemo,
    PolicySummary,
    FactoredPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FeatureSpace,
    PolicySpace,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::FeatureSpace => "feature_space",
            Category::PolicySpace => "policy_space",
        }
    }
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::DirectReward,
        Modality::FeatureSubset,
        Modality::Abstraction,
        Modality::TrajectoryDemo,
        Modality::PolicySummary,
        Modality::FactoredPolicy,
    ];

    pub fn category(&self) -> Category {
        match self {
            Modality::DirectReward | Modality::FeatureSubset | Modality::Abstraction => {
                Category::FeatureSpace
            }
            _ => Category::PolicySpace,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::DirectReward => "direct_reward",
            Modality::FeatureSubset => "feature_subset",
            Modality::Abstraction => "abstraction",
            Modality::TrajectoryDemo => "trajectory_demo",
            Modality::PolicySummary => "policy_summary",
            Modality::FactoredPolicy => "factored_policy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WeightedFeature<T> {
    pub index: usize,
    pub name: String,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DirectRewardBody<T> {
    pub features: Vec<WeightedFeature<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureSubsetBody<T> {
    pub features: Vec<WeightedFeature<T>>,
    /// Share of sampled contribution mass covered by the shown features.
    pub fidelity: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConceptWeight<T> {
    pub name: String,
    pub weight: T,
    /// Definition of the concept over the reward features.
    pub coefficients: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AbstractionBody<T> {
    pub feature_names: Vec<String>,
    pub concepts: Vec<ConceptWeight<T>>,
    /// Coefficient of determination of the concept regression.
    pub fidelity: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AnnotatedStep<T> {
    pub state: StateId,
    pub action: ActionId,
    pub reward: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AnnotatedTrajectory<T> {
    pub steps: Vec<AnnotatedStep<T>>,
    /// Discounted return.
    pub total: T,
}

impl<T: Scalar> AnnotatedTrajectory<T> {
    fn annotate(mdp: &LinearRewardMdp<T>, traj: &Trajectory) -> Self {
        Self {
            steps: traj
                .steps
                .iter()
                .map(|s| AnnotatedStep {
                    state: s.state,
                    action: s.action,
                    reward: mdp.reward(s.state, s.action),
                })
                .collect(),
            total: discounted_return(mdp, &mdp.weights, traj),
        }
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.steps
                .iter()
                .map(|s| crate::mdp::Step { state: s.state, action: s.action })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrajectoryDemoBody<T> {
    pub best: AnnotatedTrajectory<T>,
    pub worst: AnnotatedTrajectory<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SummaryClip<T> {
    pub anchor: StateId,
    pub importance: T,
    pub steps: Vec<AnnotatedStep<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PolicySummaryBody<T> {
    pub clips: Vec<SummaryClip<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ActionBars<T> {
    pub action: ActionId,
    /// Per-feature Q contributions, in feature order.
    pub components: Vec<T>,
    pub combined: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FactoredState<T> {
    pub state: StateId,
    pub importance: T,
    pub actions: Vec<ActionBars<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FactoredPolicyBody<T> {
    pub component_names: Vec<String>,
    pub states: Vec<FactoredState<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", content = "payload", rename_all = "snake_case")]
#[serde(bound = "T: Scalar")]
pub enum ExplanationBody<T> {
    DirectReward(DirectRewardBody<T>),
    FeatureSubset(FeatureSubsetBody<T>),
    Abstraction(AbstractionBody<T>),
    TrajectoryDemo(TrajectoryDemoBody<T>),
    PolicySummary(PolicySummaryBody<T>),
    FactoredPolicy(FactoredPolicyBody<T>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_separation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StateId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub domain_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_tolerance: Option<f64>,
    pub budget: Budget,
    /// Conditions worth surfacing, e.g. `degenerate_design` or `summary_truncated`.
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Explanation<T> {
    #[serde(flatten)]
    pub body: ExplanationBody<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> Explanation<T> {
    pub fn modality(&self) -> Modality {
        match &self.body {
            ExplanationBody::DirectReward(_) => Modality::DirectReward,
            ExplanationBody::FeatureSubset(_) => Modality::FeatureSubset,
            ExplanationBody::Abstraction(_) => Modality::Abstraction,
            ExplanationBody::TrajectoryDemo(_) => Modality::TrajectoryDemo,
            ExplanationBody::PolicySummary(_) => Modality::PolicySummary,
            ExplanationBody::FactoredPolicy(_) => Modality::FactoredPolicy,
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.provenance.flags.iter().any(|f| f == flag)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("budget {k} outside 1..={max}")]
    InvalidBudget { k: usize, max: usize },
    #[error("invalid concept set: {0}")]
    InvalidConcepts(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Planning(#[from] PlanningError),
}

fn provenance<T: Scalar>(mdp: &LinearRewardMdp<T>, tolerance: Option<f64>, budget: Budget) -> Provenance {
    Provenance {
        domain_id: mdp.id.clone(),
        solver_tolerance: tolerance,
        budget,
        flags: Vec::new(),
    }
}

fn weighted_features<T: Scalar>(mdp: &LinearRewardMdp<T>, indices: &[usize]) -> Vec<WeightedFeature<T>> {
    indices
        .iter()
        .map(|&i| WeightedFeature {
            index: i,
            name: mdp.feature_names[i].clone(),
            weight: mdp.weights[i],
        })
        .collect()
}

/// Uniformly sampled `(s, a)` pairs, with replacement.
fn sample_pairs<T: Scalar>(mdp: &LinearRewardMdp<T>, n: usize, seed: u64) -> Vec<(StateId, ActionId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mdp.num_actions();
    let total = mdp.num_states * m;
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..total);
            (i / m, i % m)
        })
        .collect()
}

pub fn explain_direct<T: Scalar>(mdp: &LinearRewardMdp<T>) -> Explanation<T> {
    let all: Vec<usize> = (0..mdp.feature_dim()).collect();
    Explanation {
        body: ExplanationBody::DirectReward(DirectRewardBody {
            features: weighted_features(mdp, &all),
        }),
        provenance: provenance(mdp, None, Budget::default()),
    }
}

/// Sampled contribution mass `Σ |w_i φ_i(s,a)|` of every feature.
pub fn contribution_mass<T: Scalar>(mdp: &LinearRewardMdp<T>, pairs: &[(StateId, ActionId)]) -> Vec<T> {
    let mut mass = vec![T::zero(); mdp.feature_dim()];
    for &(s, a) in pairs {
        for (i, m) in mass.iter_mut().enumerate() {
            *m = *m + (mdp.weights[i] * mdp.features[s][a][i]).abs();
        }
    }
    mass
}

/// The `k` features carrying the most sampled reward mass, shown in feature order.
pub fn explain_subset<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<Explanation<T>, ExplainError> {
    let d = mdp.feature_dim();
    if k == 0 || k > d {
        return Err(ExplainError::InvalidBudget { k, max: d });
    }
    let pairs = sample_pairs(mdp, samples, seed);
    let mass = contribution_mass(mdp, &pairs);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| {
        mass[*b]
            .partial_cmp(&mass[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    let total: T = mass.iter().copied().sum();
    let covered: T = chosen.iter().map(|i| mass[*i]).sum();
    let fidelity = if k == d || total == T::zero() { T::one() } else { covered / total };
    Ok(Explanation {
        body: ExplanationBody::FeatureSubset(FeatureSubsetBody {
            features: weighted_features(mdp, &chosen),
            fidelity,
        }),
        provenance: provenance(
            mdp,
            None,
            Budget { k: Some(k), samples: Some(samples), seed: Some(seed), ..Budget::default() },
        ),
    })
}

/// Concept weights fitted by ridge regression of the true reward on sampled pairs.
pub fn explain_abstraction<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    concepts: &ConceptSet<T>,
    samples: usize,
    seed: u64,
) -> Result<Explanation<T>, ExplainError> {
    concepts
        .validate(mdp.feature_dim())
        .map_err(ExplainError::InvalidConcepts)?;
    if samples < concepts.len() {
        return Err(ExplainError::TooFewSamples { needed: concepts.len(), got: samples });
    }
    let pairs = sample_pairs(mdp, samples, seed);
    let design: Vec<Vec<T>> = pairs
        .iter()
        .map(|&(s, a)| concepts.evaluate(&mdp.features[s][a]))
        .collect();
    let target: Vec<T> = pairs.iter().map(|&(s, a)| mdp.reward(s, a)).collect();
    let fit = ridge_least_squares(&design, &target, T::lit(RIDGE));

    let n = T::lit(target.len() as f64);
    let mean = target.iter().copied().sum::<T>() / n;
    let sst: T = target.iter().map(|y| (*y - mean) * (*y - mean)).sum();
    let sse: T = design
        .iter()
        .zip(&target)
        .map(|(row, y)| {
            let e = *y - crate::scalar::dot(row, &fit.coefficients);
            e * e
        })
        .sum();
    let fidelity = if sst > T::zero() {
        T::one() - sse / sst
    } else if sse <= T::lit(1e-12) {
        T::one()
    } else {
        T::zero()
    };

    let mut prov = provenance(
        mdp,
        None,
        Budget { samples: Some(samples), seed: Some(seed), ..Budget::default() },
    );
    if fit.conditioning < T::lit(DEGENERATE_CONDITIONING) {
        prov.flags.push("degenerate_design".into());
    }
    Ok(Explanation {
        body: ExplanationBody::Abstraction(AbstractionBody {
            feature_names: mdp.feature_names.clone(),
            concepts: concepts
                .concepts
                .iter()
                .zip(&fit.coefficients)
                .map(|(c, v)| ConceptWeight {
                    name: c.name.clone(),
                    weight: *v,
                    coefficients: c.coefficients.clone(),
                })
                .collect(),
            fidelity,
        }),
        provenance: prov,
    })
}

/// Best and least-optimal rollouts from the same start.
pub fn explain_trajectories<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q_max: &QTable<T>,
    q_min: &QTable<T>,
    start: StateId,
) -> Result<Explanation<T>, ExplainError> {
    let best = greedy_rollout(mdp, q_max, start, Objective::Maximize)?;
    let worst = greedy_rollout(mdp, q_min, start, Objective::Minimize)?;
    Ok(Explanation {
        body: ExplanationBody::TrajectoryDemo(TrajectoryDemoBody {
            best: AnnotatedTrajectory::annotate(mdp, &best),
            worst: AnnotatedTrajectory::annotate(mdp, &worst),
        }),
        provenance: provenance(
            mdp,
            Some(q_max.tolerance),
            Budget { start: Some(start), ..Budget::default() },
        ),
    })
}

/// Hop distances in the undirected support graph of the transition table.
pub fn graph_distances<T: Scalar>(mdp: &LinearRewardMdp<T>, from: StateId) -> Vec<Option<usize>> {
    let mut adjacency = vec![Vec::new(); mdp.num_states];
    for (s, a) in mdp.state_action_pairs() {
        for succ in &mdp.transitions[s][a] {
            if succ.state != s && succ.probability > T::zero() {
                adjacency[s].push(succ.state);
                adjacency[succ.state].push(s);
            }
        }
    }
    let mut dist = vec![None; mdp.num_states];
    dist[from] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(s) = queue.pop_front() {
        let next = dist[s].map_or(0, |d| d + 1);
        for &t in &adjacency[s] {
            if dist[t].is_none() {
                dist[t] = Some(next);
                queue.push_back(t);
            }
        }
    }
    dist
}

/// Greedy importance selection where every pair of picks is at least
/// `min_separation` hops apart.
pub fn select_summary_states<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q: &QTable<T>,
    k: usize,
    min_separation: usize,
) -> Vec<StateId> {
    let mut selected: Vec<StateId> = Vec::new();
    let mut distances: Vec<Vec<Option<usize>>> = Vec::new();
    for s in rank_by_importance(q) {
        if selected.len() == k {
            break;
        }
        let too_close = distances
            .iter()
            .any(|dist| matches!(dist[s], Some(h) if h < min_separation));
        if too_close {
            continue;
        }
        selected.push(s);
        if min_separation > 0 {
            distances.push(graph_distances(mdp, s));
        }
    }
    selected
}

pub fn explain_summary<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q: &QTable<T>,
    k: usize,
    window: usize,
    min_separation: usize,
) -> Result<Explanation<T>, ExplainError> {
    if k == 0 {
        return Err(ExplainError::InvalidBudget { k, max: mdp.num_states });
    }
    if window == 0 {
        return Err(ExplainError::InvalidWindow);
    }
    let selected = select_summary_states(mdp, q, k, min_separation);
    let clips = selected
        .iter()
        .map(|&s| {
            let clip = policy_rollout(mdp, q, s, window)?;
            Ok(SummaryClip {
                anchor: s,
                importance: state_importance(q, s),
                steps: AnnotatedTrajectory::annotate(mdp, &clip).steps,
            })
        })
        .collect::<Result<Vec<_>, PlanningError>>()?;
    let mut prov = provenance(
        mdp,
        Some(q.tolerance),
        Budget {
            k: Some(k),
            window: Some(window),
            min_separation: Some(min_separation),
            ..Budget::default()
        },
    );
    if clips.len() < k {
        prov.flags.push("summary_truncated".into());
    }
    Ok(Explanation {
        body: ExplanationBody::PolicySummary(PolicySummaryBody { clips }),
        provenance: prov,
    })
}

pub fn explain_factored<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    dq: &DecomposedQTable<T>,
    k: usize,
) -> Result<Explanation<T>, ExplainError> {
    if k == 0 {
        return Err(ExplainError::InvalidBudget { k, max: mdp.num_states });
    }
    let states = rank_by_importance(&dq.combined)
        .into_iter()
        .take(k)
        .map(|s| FactoredState {
            state: s,
            importance: state_importance(&dq.combined, s),
            actions: (0..mdp.num_actions())
                .map(|a| ActionBars {
                    action: a,
                    components: dq.components.iter().map(|c| c.q(s, a)).collect(),
                    combined: dq.combined.q(s, a),
                })
                .collect(),
        })
        .collect();
    Ok(Explanation {
        body: ExplanationBody::FactoredPolicy(FactoredPolicyBody {
            component_names: mdp.feature_names.clone(),
            states,
        }),
        provenance: provenance(mdp, Some(dq.combined.tolerance), Budget { k: Some(k), ..Budget::default() }),
    })
}

/// Checks that every state and action an explanation references exists.
pub fn references_valid<T: Scalar>(explanation: &Explanation<T>, mdp: &LinearRewardMdp<T>) -> bool {
    let ok = |s: StateId, a: ActionId| s < mdp.num_states && a < mdp.num_actions();
    match &explanation.body {
        ExplanationBody::DirectReward(b) => b.features.iter().all(|f| f.index < mdp.feature_dim()),
        ExplanationBody::FeatureSubset(b) => b.features.iter().all(|f| f.index < mdp.feature_dim()),
        ExplanationBody::Abstraction(b) => b
            .concepts
            .iter()
            .all(|c| c.coefficients.len() == mdp.feature_dim()),
        ExplanationBody::TrajectoryDemo(b) => b
            .best
            .steps
            .iter()
            .chain(&b.worst.steps)
            .all(|s| ok(s.state, s.action)),
        ExplanationBody::PolicySummary(b) => b
            .clips
            .iter()
            .all(|c| c.anchor < mdp.num_states && c.steps.iter().all(|s| ok(s.state, s.action))),
        ExplanationBody::FactoredPolicy(b) => b
            .states
            .iter()
            .all(|f| f.state < mdp.num_states && f.actions.iter().all(|a| ok(f.state, a.action))),
    }
}
