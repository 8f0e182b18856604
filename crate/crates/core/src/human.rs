//! A simulated participant whose belief about the reward weights is shaped by
//! the explanation it receives, and who answers the four assessments from
//! that belief.
//!
//! Channel parameters (capacity, noise, rationality, load) are simulation
//! assumptions, not a model fitted to people.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assessment::{sample_unit_ball, FeatureBeliefResponse, PreferenceQuery, ResponseSource};
use crate::choice::Rationality;
use crate::domains::Situational;
use crate::explainers::{Explanation, ExplanationBody};
use crate::mdp::{discounted_return, MdpStructure, StateId, Step, Trajectory};
use crate::planning::{decomposed_value_iteration, finite_horizon_q, value_iteration, PlanningError};
use crate::scalar::argmax;

fn default_rationality() -> Rationality {
    Rationality::Perfect
}

fn default_load() -> f64 {
    2.0
}

fn default_threshold() -> f64 {
    0.05
}

fn default_prior_samples() -> usize {
    100
}

fn default_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    #[serde(default = "default_rationality")]
    pub rationality: Rationality,
    /// Most features (or concepts) retained from a feature-space explanation;
    /// `None` is unlimited.
    #[serde(default)]
    pub capacity: Option<usize>,
    /// Standard deviation of the Gaussian noise on perceived weights.
    #[serde(default)]
    pub perceptual_noise: f64,
    /// Factor applied to the noise and to 1/β under situational load.
    #[serde(default = "default_load")]
    pub load_multiplier: f64,
    /// Smallest |ŵ_i| at which a feature is reported as mattering.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Size of the weight-sample prior used for policy-space explanations.
    #[serde(default = "default_prior_samples")]
    pub prior_samples: usize,
    #[serde(default = "default_tolerance")]
    pub solver_tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for HumanConfig {
    fn default() -> Self {
        Self {
            rationality: default_rationality(),
            capacity: None,
            perceptual_noise: 0.0,
            load_multiplier: default_load(),
            threshold: default_threshold(),
            prior_samples: default_prior_samples(),
            solver_tolerance: default_tolerance(),
            seed: 0,
        }
    }
}

impl HumanConfig {
    /// Noiseless, unlimited, perfectly rational.
    pub fn oracle() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Rationality::Finite(b) = self.rationality {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(format!("rationality {b} must be finite and non-negative"));
            }
        }
        if self.capacity == Some(0) {
            return Err("capacity must be at least 1".into());
        }
        if !(self.perceptual_noise >= 0.0 && self.perceptual_noise.is_finite()) {
            return Err(format!("perceptual noise {} must be non-negative", self.perceptual_noise));
        }
        if !(self.load_multiplier >= 1.0 && self.load_multiplier.is_finite()) {
            return Err(format!("load multiplier {} must be at least 1", self.load_multiplier));
        }
        if !(self.threshold > 0.0) {
            return Err(format!("threshold {} must be positive", self.threshold));
        }
        if self.prior_samples == 0 {
            return Err("prior needs at least one sample".into());
        }
        Ok(())
    }
}

struct DemoTables {
    stages: Vec<Vec<f64>>,
    negated_stages: Vec<Vec<f64>>,
}

/// A seeded weight-sample prior over an MDP's structure, with each sample's
/// planning tables solved on first use.
pub struct BeliefPrior {
    structure: MdpStructure<f64>,
    samples: Vec<Vec<f64>>,
    tolerance: f64,
    demo: OnceLock<Vec<DemoTables>>,
    stationary: OnceLock<Result<Vec<Vec<f64>>, PlanningError>>,
    components: OnceLock<Result<Vec<Vec<Vec<f64>>>, PlanningError>>,
}

impl std::fmt::Debug for BeliefPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BeliefPrior")
            .field("samples", &self.samples.len())
            .field("tolerance", &self.tolerance)
            .finish()
    }
}

impl BeliefPrior {
    /// `count` weight vectors drawn uniformly from the unit ball.
    pub fn sampled(structure: MdpStructure<f64>, count: usize, seed: u64, tolerance: f64) -> Self {
        let samples = sample_unit_ball(structure.mdp().feature_dim(), count, seed);
        Self::from_samples(structure, samples, tolerance)
    }

    pub fn from_samples(structure: MdpStructure<f64>, samples: Vec<Vec<f64>>, tolerance: f64) -> Self {
        Self {
            structure,
            samples,
            tolerance,
            demo: OnceLock::new(),
            stationary: OnceLock::new(),
            components: OnceLock::new(),
        }
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn structure(&self) -> &MdpStructure<f64> {
        &self.structure
    }

    pub fn mean(&self) -> Vec<f64> {
        weighted_mean(&self.samples, &vec![1.0; self.samples.len()])
    }

    fn demo_tables(&self) -> &[DemoTables] {
        self.demo.get_or_init(|| {
            self.samples
                .par_iter()
                .map(|w| {
                    let mdp = self.structure.reweighted(w);
                    DemoTables {
                        stages: finite_horizon_q(&mdp),
                        negated_stages: finite_horizon_q(&mdp.negated()),
                    }
                })
                .collect()
        })
    }

    fn stationary_tables(&self) -> Result<&[Vec<f64>], PlanningError> {
        self.stationary
            .get_or_init(|| {
                self.samples
                    .par_iter()
                    .map(|w| value_iteration(&self.structure.reweighted(w), self.tolerance).map(|q| q.values))
                    .collect()
            })
            .as_deref()
            .map_err(Clone::clone)
    }

    fn component_tables(&self) -> Result<&[Vec<Vec<f64>>], PlanningError> {
        self.components
            .get_or_init(|| {
                self.samples
                    .par_iter()
                    .map(|w| {
                        decomposed_value_iteration(&self.structure.reweighted(w), self.tolerance)
                            .map(|dq| dq.components.into_iter().map(|c| c.values).collect())
                    })
                    .collect()
            })
            .as_deref()
            .map_err(Clone::clone)
    }
}

fn weighted_mean(samples: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let d = samples.first().map_or(0, Vec::len);
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (w, p) in samples.iter().zip(weights) {
        for (m, x) in mean.iter_mut().zip(w) {
            *m += p * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    mean
}

/// `ln p(action)` under a Boltzmann policy over `row`.
fn log_choice(rationality: Rationality, row: &[f64], action: usize) -> f64 {
    rationality.probabilities(row)[action].ln()
}

/// Posterior mean from per-sample log-likelihoods; the prior mean when every
/// sample has zero likelihood.
fn posterior_mean(samples: &[Vec<f64>], log_likelihood: &[f64]) -> Vec<f64> {
    let max = log_likelihood.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return weighted_mean(samples, &vec![1.0; samples.len()]);
    }
    let weights: Vec<f64> = log_likelihood.iter().map(|l| (l - max).exp()).collect();
    weighted_mean(samples, &weights)
}

/// Indices of the `capacity` largest-magnitude entries, ties by lower index.
fn retained(values: &[f64], capacity: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*b].abs().total_cmp(&values[*a].abs()).then(a.cmp(b)));
    order.truncate(capacity.unwrap_or(values.len()));
    order.sort_unstable();
    order
}

#[derive(Debug, Clone)]
pub struct SimulatedHuman {
    config: HumanConfig,
    feature_names: Vec<String>,
    belief: Vec<f64>,
    rationality: Rationality,
    noise: f64,
    rng: ChaCha8Rng,
}

impl SimulatedHuman {
    /// A human with no knowledge of the reward yet (ŵ = 0).
    pub fn new(config: HumanConfig, feature_names: Vec<String>) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            rationality: config.rationality,
            noise: config.perceptual_noise,
            belief: vec![0.0; feature_names.len()],
            feature_names,
            config,
        }
    }

    pub fn config(&self) -> &HumanConfig {
        &self.config
    }

    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn set_belief(&mut self, belief: Vec<f64>) {
        assert_eq!(belief.len(), self.feature_names.len(), "belief dimension");
        self.belief = belief;
    }

    pub fn rationality(&self) -> Rationality {
        self.rationality
    }

    pub fn perceptual_noise(&self) -> f64 {
        self.noise
    }

    /// Monitoring load multiplies the noise by λ and divides β by λ, starting
    /// from the configured values; no load restores them.
    pub fn apply_situational_load(&self, level: Situational) -> Self {
        let mut out = self.clone();
        match level {
            Situational::None => {
                out.noise = self.config.perceptual_noise;
                out.rationality = self.config.rationality;
            }
            Situational::MonitoringTask => {
                let lambda = self.config.load_multiplier;
                out.noise = self.config.perceptual_noise * lambda;
                out.rationality = self.config.rationality.scaled_down(lambda);
            }
        }
        out
    }

    fn noised(&mut self, value: f64) -> f64 {
        if self.noise > 0.0 {
            let normal = Normal::new(0.0, self.noise).expect("noise is finite");
            value + normal.sample(&mut self.rng)
        } else {
            value
        }
    }

    /// Updates ŵ from an explanation. `prior` supplies the structure and the
    /// weight samples used by policy-space explanations.
    pub fn perceive(&mut self, explanation: &Explanation<f64>, prior: &BeliefPrior) -> Result<(), PlanningError> {
        let d = self.feature_names.len();
        match &explanation.body {
            ExplanationBody::DirectReward(body) => {
                let weights: Vec<f64> = body.features.iter().map(|f| f.weight).collect();
                let mut belief = vec![0.0; d];
                for i in retained(&weights, self.config.capacity) {
                    let f = &body.features[i];
                    belief[f.index] = self.noised(f.weight);
                }
                self.belief = belief;
            }
            ExplanationBody::FeatureSubset(body) => {
                let mut belief = vec![0.0; d];
                for f in &body.features {
                    belief[f.index] = self.noised(f.weight);
                }
                self.belief = belief;
            }
            ExplanationBody::Abstraction(body) => {
                let weights: Vec<f64> = body.concepts.iter().map(|c| c.weight).collect();
                let mut belief = vec![0.0; d];
                for j in retained(&weights, self.config.capacity) {
                    let concept = &body.concepts[j];
                    let v = self.noised(concept.weight);
                    for (b, a) in belief.iter_mut().zip(&concept.coefficients) {
                        *b += a * v;
                    }
                }
                self.belief = belief;
            }
            ExplanationBody::TrajectoryDemo(body) => {
                let best = body.best.trajectory();
                let worst = body.worst.trajectory();
                let m = prior.structure.mdp().num_actions();
                let beta = self.rationality;
                let ll: Vec<f64> = prior
                    .demo_tables()
                    .iter()
                    .map(|tables| {
                        let score = |traj: &Trajectory, stages: &[Vec<f64>]| -> f64 {
                            traj.steps
                                .iter()
                                .zip(stages)
                                .map(|(step, stage)| {
                                    let row = &stage[step.state * m..(step.state + 1) * m];
                                    log_choice(beta, row, step.action)
                                })
                                .sum()
                        };
                        score(&best, &tables.stages) + score(&worst, &tables.negated_stages)
                    })
                    .collect();
                self.belief = posterior_mean(&prior.samples, &ll);
            }
            ExplanationBody::PolicySummary(body) => {
                let m = prior.structure.mdp().num_actions();
                let beta = self.rationality;
                let ll: Vec<f64> = prior
                    .stationary_tables()?
                    .iter()
                    .map(|q| {
                        body.clips
                            .iter()
                            .flat_map(|clip| &clip.steps)
                            .map(|step| {
                                let row = &q[step.state * m..(step.state + 1) * m];
                                log_choice(beta, row, step.action)
                            })
                            .sum()
                    })
                    .collect();
                self.belief = posterior_mean(&prior.samples, &ll);
            }
            ExplanationBody::FactoredPolicy(body) => {
                let m = prior.structure.mdp().num_actions();
                let beta = self.rationality;
                // the action each displayed component favours at each shown state
                let shown: Vec<(StateId, usize, usize)> = body
                    .states
                    .iter()
                    .flat_map(|fs| {
                        (0..body.component_names.len()).map(move |c| {
                            let bars: Vec<f64> = fs.actions.iter().map(|a| a.components[c]).collect();
                            (fs.state, c, fs.actions[argmax(&bars)].action)
                        })
                    })
                    .collect();
                let ll: Vec<f64> = prior
                    .component_tables()?
                    .iter()
                    .map(|components| {
                        shown
                            .iter()
                            .map(|&(s, c, a)| log_choice(beta, &components[c][s * m..(s + 1) * m], a))
                            .sum()
                    })
                    .collect();
                self.belief = posterior_mean(&prior.samples, &ll);
            }
        }
        Ok(())
    }

    /// Picks an option with Boltzmann probability under ŵ. Always consumes one
    /// uniform draw, so answer sequences are reproducible.
    pub fn answer_query(&mut self, structure: &MdpStructure<f64>, query: &PreferenceQuery) -> usize {
        let mdp = structure.mdp();
        let r0 = discounted_return(mdp, &self.belief, &query.options[0]);
        let r1 = discounted_return(mdp, &self.belief, &query.options[1]);
        let p_first = self.rationality.first_of_two(r0, r1);
        let u: f64 = self.rng.random();
        usize::from(u >= p_first)
    }

    /// Claims the candidates with |ŵ_i| ≥ τ and every strict ordering among
    /// them. Candidates that are not reward features count as ŵ_i = 0.
    pub fn respond_features(&self, candidates: &[String], threshold: f64, source: ResponseSource) -> FeatureBeliefResponse {
        let believed = |name: &str| {
            self.feature_names
                .iter()
                .position(|n| n == name)
                .map_or(0.0, |i| self.belief[i])
        };
        let claimed: Vec<(&String, f64)> = candidates
            .iter()
            .map(|c| (c, believed(c)))
            .filter(|(_, w)| w.abs() >= threshold)
            .collect();
        let mut comparisons = BTreeSet::new();
        for (a, wa) in &claimed {
            for (b, wb) in &claimed {
                if wa > wb {
                    comparisons.insert(((*a).clone(), (*b).clone()));
                }
            }
        }
        FeatureBeliefResponse {
            claimed_features: claimed.into_iter().map(|(c, _)| c.clone()).collect(),
            comparisons,
            source,
        }
    }

    /// Plans under ŵ and acts with Boltzmann action noise, following the most
    /// probable successor; the perfect limit acts greedily.
    pub fn demonstrate(&mut self, structure: &MdpStructure<f64>, start: StateId) -> Trajectory {
        let mdp = structure.reweighted(&self.belief);
        let stages = finite_horizon_q(&mdp);
        let m = mdp.num_actions();
        let mut steps = Vec::new();
        let mut s = start;
        for stage in &stages {
            if mdp.is_terminal(s) {
                break;
            }
            let row = &stage[s * m..(s + 1) * m];
            let action = match self.rationality {
                Rationality::Perfect => argmax(row),
                beta => {
                    let probs = beta.probabilities(row);
                    let u: f64 = self.rng.random();
                    let mut acc = 0.0;
                    let mut pick = m - 1;
                    for (a, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = a;
                            break;
                        }
                    }
                    pick
                }
            };
            steps.push(Step { state: s, action });
            s = mdp.nominal_successor(s, action);
        }
        Trajectory::new(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessment::{compose, ground_truth_belief, score_bd, score_feature_belief, score_pe, PreferenceResponses};
    use crate::domains::{build_domain, build_gridworld, ComplexityProfile, DomainKind, DomainSpec, FeatureTier};
    use crate::explainers::{explain_direct, explain_subset, explain_trajectories};
    use crate::mdp::LinearRewardMdp;
    use crate::planning::solve_worst;

    fn corridor() -> LinearRewardMdp<f64> {
        build_gridworld(&ComplexityProfile::new(1, FeatureTier::Atomic, 3, 1, 0.0), 0).unwrap()
    }

    fn threats() -> LinearRewardMdp<f64> {
        let spec = DomainSpec::sampled(
            DomainKind::ThreatsWaypoints,
            ComplexityProfile::new(3, FeatureTier::Atomic, 4, 4, 0.0),
        );
        build_domain::<f64>(&spec, 3).unwrap().mdp
    }

    fn oracle_for(mdp: &LinearRewardMdp<f64>) -> SimulatedHuman {
        SimulatedHuman::new(HumanConfig::oracle(), mdp.feature_names.clone())
    }

    fn prior_for(mdp: &LinearRewardMdp<f64>, n: usize) -> BeliefPrior {
        BeliefPrior::sampled(mdp.structure(), n, 11, 1e-8)
    }

    #[test]
    fn noiseless_direct_reward_copies_weights() {
        let mdp = threats();
        let mut h = oracle_for(&mdp);
        h.perceive(&explain_direct(&mdp), &prior_for(&mdp, 2)).unwrap();
        assert_eq!(h.belief(), mdp.weights.as_slice());
    }

    #[test]
    fn capacity_keeps_largest_weights() {
        let mut mdp = threats();
        mdp.weights = vec![0.3, -0.9, 0.5];
        let config = HumanConfig { capacity: Some(2), ..HumanConfig::oracle() };
        let mut h = SimulatedHuman::new(config, mdp.feature_names.clone());
        h.perceive(&explain_direct(&mdp), &prior_for(&mdp, 2)).unwrap();
        assert_eq!(h.belief(), &[0.0, -0.9, 0.5]);
    }

    #[test]
    fn feature_subset_zeroes_unshown() {
        let mdp = threats();
        let exp = explain_subset(&mdp, 1, 200, 4).unwrap();
        let ExplanationBody::FeatureSubset(body) = &exp.body else { unreachable!() };
        let shown = body.features[0].index;
        let mut h = oracle_for(&mdp);
        h.perceive(&exp, &prior_for(&mdp, 2)).unwrap();
        for i in 0..mdp.feature_dim() {
            let expected = if i == shown { mdp.weights[i] } else { 0.0 };
            assert_eq!(h.belief()[i], expected);
        }
    }

    #[test]
    fn trajectory_demo_posterior_on_corridor() {
        let mdp = corridor();
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let q_min = solve_worst(&mdp, 1e-10).unwrap();
        let exp = explain_trajectories(&mdp, &q, &q_min, 0).unwrap();
        let prior = prior_for(&mdp, 10);
        let mut h = oracle_for(&mdp);
        h.perceive(&exp, &prior).unwrap();

        // Oracle: the best path walks right into the goal, which only a
        // positive goal weight makes uniquely optimal; the worst path bumps
        // left, which every positive sample ties with "right" and every
        // negative sample strictly rejects. The posterior is uniform over the
        // positive samples.
        let positive: Vec<f64> = prior.samples().iter().map(|w| w[0]).filter(|w| *w > 0.0).collect();
        assert!(!positive.is_empty() && positive.len() < 10);
        let expected = positive.iter().sum::<f64>() / positive.len() as f64;
        assert!((h.belief()[0] - expected).abs() < 1e-12, "{} vs {expected}", h.belief()[0]);

        let mut soft = SimulatedHuman::new(
            HumanConfig { rationality: Rationality::finite(50.0), ..HumanConfig::oracle() },
            mdp.feature_names.clone(),
        );
        soft.perceive(&exp, &prior).unwrap();
        assert!(soft.belief()[0] > 0.0);
    }

    #[test]
    fn zero_rationality_returns_prior_mean() {
        let mdp = corridor();
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let q_min = solve_worst(&mdp, 1e-10).unwrap();
        let exp = explain_trajectories(&mdp, &q, &q_min, 0).unwrap();
        let prior = prior_for(&mdp, 10);
        let config = HumanConfig { rationality: Rationality::finite(0.0), ..HumanConfig::oracle() };
        let mut h = SimulatedHuman::new(config, mdp.feature_names.clone());
        h.perceive(&exp, &prior).unwrap();
        assert!((h.belief()[0] - prior.mean()[0]).abs() < 1e-12);
    }

    #[test]
    fn query_answers_follow_rationality() {
        let mdp = threats();
        let structure = mdp.structure();
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let q_min = solve_worst(&mdp, 1e-10).unwrap();
        let pool = crate::assessment::build_query_pool(&mdp, &q, &q_min, 0, 8, 1).unwrap();

        let mut perfect = oracle_for(&mdp);
        perfect.set_belief(mdp.weights.clone());
        for query in &pool {
            assert_eq!(perfect.answer_query(&structure, query), query.truth(&mdp));
        }

        let mut big = SimulatedHuman::new(
            HumanConfig { rationality: Rationality::finite(1e6), ..HumanConfig::oracle() },
            mdp.feature_names.clone(),
        );
        big.set_belief(mdp.weights.clone());
        for query in &pool {
            assert_eq!(big.answer_query(&structure, query), query.truth(&mdp));
        }

        let config = HumanConfig { rationality: Rationality::finite(0.0), seed: 5, ..HumanConfig::oracle() };
        let mut coin = SimulatedHuman::new(config, mdp.feature_names.clone());
        coin.set_belief(mdp.weights.clone());
        let firsts = (0..4000).filter(|_| coin.answer_query(&structure, &pool[0]) == 0).count();
        assert!((firsts as f64 / 4000.0 - 0.5).abs() < 0.03, "{firsts}");
    }

    #[test]
    fn equal_rewards_are_a_coin_flip() {
        let mdp = threats();
        let structure = mdp.structure();
        let t = Trajectory::from_pairs(&[(0, 0)]);
        let query = PreferenceQuery::new(t.clone(), t);
        let config = HumanConfig { rationality: Rationality::finite(40.0), seed: 2, ..HumanConfig::oracle() };
        let mut h = SimulatedHuman::new(config, mdp.feature_names.clone());
        h.set_belief(mdp.weights.clone());
        let firsts = (0..4000).filter(|_| h.answer_query(&structure, &query) == 0).count();
        assert!((firsts as f64 / 4000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn feature_responses() {
        let names: Vec<String> = ["f1", "f2", "f3"].map(String::from).to_vec();
        let mut h = SimulatedHuman::new(HumanConfig::oracle(), names.clone());
        h.set_belief(vec![0.9, 0.0, -0.5]);
        let r = h.respond_features(&names, 0.1, ResponseSource::SubSelection);
        assert_eq!(r.claimed_features, ["f1", "f3"].map(String::from).into());
        assert_eq!(r.comparisons, [("f1".to_string(), "f3".to_string())].into());

        h.set_belief(vec![0.01, 0.0, -0.02]);
        let r = h.respond_features(&names, 0.1, ResponseSource::FreeResponse);
        assert_eq!(r, FeatureBeliefResponse::empty(ResponseSource::FreeResponse));
    }

    #[test]
    fn oracle_feature_response_scores_one() {
        let mdp = threats();
        let mut h = oracle_for(&mdp);
        h.set_belief(mdp.weights.clone());
        let tau = mdp.weights.iter().map(|w| w.abs()).fold(f64::INFINITY, f64::min) / 2.0;
        let mut candidates = mdp.feature_names.clone();
        candidates.push("distractor".into());
        let r = h.respond_features(&candidates, tau, ResponseSource::SubSelection);
        assert_eq!(score_feature_belief(&r, &ground_truth_belief(&mdp)).unwrap(), 1.0);
    }

    #[test]
    fn demonstrations_span_the_bd_range() {
        let spec = DomainSpec::sampled(
            DomainKind::Gridworld,
            ComplexityProfile::new(2, FeatureTier::Atomic, 3, 3, 0.0),
        );
        let domain = build_domain::<f64>(&spec, 4).unwrap();
        let mdp = &domain.mdp;
        let structure = mdp.structure();
        let q = value_iteration(mdp, 1e-10).unwrap();
        let start = domain.assessment_start;

        let mut h = oracle_for(mdp);
        h.set_belief(mdp.weights.clone());
        let demo = h.demonstrate(&structure, start);
        assert_eq!(score_bd(mdp, &q, &demo).unwrap(), 1.0);

        h.set_belief(mdp.weights.iter().map(|w| -w).collect());
        let demo = h.demonstrate(&structure, start);
        assert_eq!(score_bd(mdp, &q, &demo).unwrap(), 0.0);

        let config = HumanConfig { rationality: Rationality::finite(1.0), seed: 8, ..HumanConfig::oracle() };
        let mut random = SimulatedHuman::new(config, mdp.feature_names.clone());
        for _ in 0..20 {
            let demo = random.demonstrate(&structure, start);
            let bd = score_bd(mdp, &q, &demo).unwrap();
            assert!((0.0..=1.0).contains(&bd));
        }
    }

    #[test]
    fn situational_load() {
        let config = HumanConfig {
            rationality: Rationality::finite(4.0),
            perceptual_noise: 0.1,
            ..HumanConfig::oracle()
        };
        let h = SimulatedHuman::new(config, vec!["a".into()]);
        let same = h.apply_situational_load(Situational::None);
        assert_eq!(same.rationality(), h.rationality());
        assert_eq!(same.perceptual_noise(), h.perceptual_noise());
        let loaded = h.apply_situational_load(Situational::MonitoringTask);
        assert!((loaded.perceptual_noise() - 0.2).abs() < 1e-15);
        assert_eq!(loaded.rationality(), Rationality::finite(2.0));

        let mdp = threats();
        let mut oracle = oracle_for(&mdp).apply_situational_load(Situational::MonitoringTask);
        oracle.perceive(&explain_direct(&mdp), &prior_for(&mdp, 2)).unwrap();
        assert_eq!(oracle.belief(), mdp.weights.as_slice());
    }

    #[test]
    fn oracle_scores_four() {
        let mdp = threats();
        let structure = mdp.structure();
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let q_min = solve_worst(&mdp, 1e-10).unwrap();
        let mut h = oracle_for(&mdp);
        h.perceive(&explain_direct(&mdp), &prior_for(&mdp, 2)).unwrap();
        let truth = ground_truth_belief(&mdp);
        let fr = score_feature_belief(&h.respond_features(&mdp.feature_names, 1e-6, ResponseSource::FreeResponse), &truth).unwrap();
        let fs = score_feature_belief(&h.respond_features(&mdp.feature_names, 1e-6, ResponseSource::SubSelection), &truth).unwrap();
        let pool = crate::assessment::build_query_pool(&mdp, &q, &q_min, 0, 8, 1).unwrap();
        let responses = PreferenceResponses {
            responses: pool.iter().map(|p| h.answer_query(&structure, p)).collect(),
            truth: pool.iter().map(|p| p.truth(&mdp)).collect(),
        };
        let pe = score_pe(&responses).unwrap();
        let bd = score_bd(&mdp, &q, &h.demonstrate(&structure, 0)).unwrap();
        assert_eq!(compose(fr, fs, pe, bd).unwrap().c, 4.0);
    }

    #[test]
    fn config_json_defaults() {
        let config: HumanConfig = serde_json::from_str(r#"{"rationality": "infinity", "seed": 3}"#).unwrap();
        assert_eq!(config, HumanConfig { seed: 3, ..HumanConfig::default() });
        let back: HumanConfig = serde_json::from_str(&serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(back, config);
        assert!(HumanConfig { capacity: Some(0), ..HumanConfig::default() }.validate().is_err());
    }
}
