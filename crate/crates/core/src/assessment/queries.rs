//! Preference queries chosen by greedy expected information gain over a
//! sample-based belief about the reward weights.
//!
//! The belief is tracked as a mixture over answer histories: after a query is
//! picked, every branch splits into one posterior per possible answer,
//! weighted by that answer's predictive probability. The expected entropy of
//! a candidate query is then the conditional entropy of the weights given all
//! answers so far plus the candidate's answer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AssessmentError;
use crate::choice::Rationality;
use crate::mdp::{discounted_return, LinearRewardMdp, StateId, Step, Trajectory};
use crate::planning::{greedy_rollout, Objective, QTable};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferenceQuery {
    pub options: [Trajectory; 2],
}

impl PreferenceQuery {
    pub fn new(first: Trajectory, second: Trajectory) -> Self {
        Self { options: [first, second] }
    }

    /// Index of the option with the higher true return; ties go to 0.
    pub fn truth<T: Scalar>(&self, mdp: &LinearRewardMdp<T>) -> usize {
        let r0 = discounted_return(mdp, &mdp.weights, &self.options[0]);
        let r1 = discounted_return(mdp, &mdp.weights, &self.options[1]);
        usize::from(r1 > r0)
    }
}

/// `count` weight vectors drawn uniformly from the unit ball in `dim` dimensions.
pub fn sample_unit_ball(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = rng.random::<f64>().powf(1.0 / dim as f64);
            direction.into_iter().map(|x| x * radius / norm).collect()
        })
        .collect()
}

/// Random rollout from `start`: uniform actions, sampled successors.
pub fn random_rollout<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    start: StateId,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut steps = Vec::new();
    let mut s = start;
    while steps.len() < mdp.horizon && !mdp.is_terminal(s) {
        let action = rng.random_range(0..mdp.num_actions());
        steps.push(Step { state: s, action });
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = &mdp.transitions[s][action];
        let mut next = row.last().map_or(s, |x| x.state);
        for succ in row {
            acc += succ.probability.as_f64();
            if u < acc {
                next = succ.state;
                break;
            }
        }
        s = next;
    }
    Trajectory::new(steps)
}

/// All pairs of `rollouts` seeded random rollouts plus the best and worst
/// rollouts from `start`. Duplicate trajectories and pairs with equal true
/// return are dropped.
pub fn build_query_pool<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q_max: &QTable<T>,
    q_min: &QTable<T>,
    start: StateId,
    rollouts: usize,
    seed: u64,
) -> Result<Vec<PreferenceQuery>, AssessmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = vec![
        greedy_rollout(mdp, q_max, start, Objective::Maximize)?,
        greedy_rollout(mdp, q_min, start, Objective::Minimize)?,
    ];
    for _ in 0..rollouts {
        let t = random_rollout(mdp, start, &mut rng);
        if !trajectories.contains(&t) {
            trajectories.push(t);
        }
    }
    let returns: Vec<T> = trajectories
        .iter()
        .map(|t| discounted_return(mdp, &mdp.weights, t))
        .collect();
    let mut pool = Vec::new();
    for i in 0..trajectories.len() {
        for j in i + 1..trajectories.len() {
            if returns[i] != returns[j] {
                pool.push(PreferenceQuery::new(trajectories[i].clone(), trajectories[j].clone()));
            }
        }
    }
    Ok(pool)
}

/// Shannon entropy (nats) of a normalized distribution.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter()
        .filter(|x| **x > T::zero())
        .map(|x| -*x * x.ln())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
struct Branch<T> {
    probability: T,
    posterior: Vec<T>,
}

/// Answer-history mixture over a fixed set of weight samples.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBelief<T> {
    branches: Vec<Branch<T>>,
}

impl<T: Scalar> QueryBelief<T> {
    pub fn uniform(samples: usize) -> Self {
        let p = T::one() / T::lit(samples as f64);
        Self {
            branches: vec![Branch { probability: T::one(), posterior: vec![p; samples] }],
        }
    }

    /// Expected entropy of the weights given the current branches.
    pub fn entropy(&self) -> T {
        self.branches
            .iter()
            .map(|b| b.probability * entropy(&b.posterior))
            .sum()
    }

    /// Expected posterior entropy after asking a query whose first option is
    /// chosen with probability `first[k]` under sample `k`.
    pub fn expected_entropy(&self, first: &[T]) -> T {
        let mut total = T::zero();
        for branch in &self.branches {
            for (answer_p, post) in split(&branch.posterior, first) {
                total = total + branch.probability * answer_p * entropy(&post);
            }
        }
        total
    }

    /// Conditions on the query's answer being unknown: every branch splits per answer.
    pub fn condition(&mut self, first: &[T]) {
        let mut merged: Vec<Branch<T>> = Vec::new();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        for branch in &self.branches {
            for (answer_p, posterior) in split(&branch.posterior, first) {
                let probability = branch.probability * answer_p;
                if probability <= T::zero() {
                    continue;
                }
                let key: Vec<u64> = posterior.iter().map(|x| x.as_f64().to_bits()).collect();
                match index.get(&key) {
                    Some(&i) => merged[i].probability = merged[i].probability + probability,
                    None => {
                        index.insert(key, merged.len());
                        merged.push(Branch { probability, posterior });
                    }
                }
            }
        }
        self.branches = merged;
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }
}

/// Predictive probability and posterior for each of the two answers.
fn split<T: Scalar>(prior: &[T], first: &[T]) -> Vec<(T, Vec<T>)> {
    let mut out = Vec::with_capacity(2);
    for answer in 0..2 {
        let joint: Vec<T> = prior
            .iter()
            .zip(first)
            .map(|(b, p)| *b * if answer == 0 { *p } else { T::one() - *p })
            .collect();
        let mass: T = joint.iter().copied().sum();
        if mass > T::zero() {
            out.push((mass, joint.into_iter().map(|x| x / mass).collect()));
        }
    }
    out
}

/// Probability that each weight sample picks the first option.
pub fn first_choice_probabilities<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    samples: &[Vec<T>],
    query: &PreferenceQuery,
    rationality: Rationality,
) -> Vec<T> {
    samples
        .iter()
        .map(|w| {
            let r0 = discounted_return(mdp, w, &query.options[0]);
            let r1 = discounted_return(mdp, w, &query.options[1]);
            rationality.first_of_two(r0, r1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    /// Index into the original pool.
    pub pool_index: usize,
    pub expected_entropy: f64,
    pub entropy_before: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySelection {
    pub queries: Vec<PreferenceQuery>,
    pub steps: Vec<SelectionStep>,
}

/// Greedily picks `count` queries from `pool`, each minimizing the expected
/// posterior entropy of the weight belief. Ties keep pool order.
pub fn gen_preference_queries<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    belief_samples: &[Vec<T>],
    pool: &[PreferenceQuery],
    count: usize,
    rationality: Rationality,
) -> Result<QuerySelection, AssessmentError> {
    if belief_samples.len() < 2 {
        return Err(AssessmentError::TooFewBeliefSamples(belief_samples.len()));
    }
    if pool.is_empty() {
        return Err(AssessmentError::EmptyPool);
    }
    if count > pool.len() {
        return Err(AssessmentError::PoolTooSmall { requested: count, available: pool.len() });
    }
    if let Some(w) = belief_samples.iter().find(|w| w.len() != mdp.feature_dim()) {
        return Err(AssessmentError::SampleDimension { expected: mdp.feature_dim(), got: w.len() });
    }
    let likelihoods: Vec<Vec<T>> = pool
        .iter()
        .map(|q| first_choice_probabilities(mdp, belief_samples, q, rationality))
        .collect();
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut belief = QueryBelief::uniform(belief_samples.len());
    let mut selection = QuerySelection { queries: Vec::new(), steps: Vec::new() };
    for _ in 0..count {
        let mut best: Option<(usize, T)> = None;
        for (slot, &i) in remaining.iter().enumerate() {
            let h = belief.expected_entropy(&likelihoods[i]);
            if best.is_none_or(|(_, b)| h < b) {
                best = Some((slot, h));
            }
        }
        let (slot, h) = best.expect("pool is non-empty");
        let chosen = remaining.remove(slot);
        selection.steps.push(SelectionStep {
            pool_index: chosen,
            expected_entropy: h.as_f64(),
            entropy_before: belief.entropy().as_f64(),
        });
        belief.condition(&likelihoods[chosen]);
        selection.queries.push(pool[chosen].clone());
    }
    Ok(selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Successor;

    /// One state, two actions with features [1,0] and [0,1], one step.
    fn two_arm() -> LinearRewardMdp<f64> {
        LinearRewardMdp {
            id: "arms".into(),
            num_states: 2,
            action_names: vec!["a".into(), "b".into(), "c".into()],
            transitions: vec![
                vec![vec![Successor { state: 1, probability: 1.0 }]; 3],
                vec![vec![Successor { state: 1, probability: 1.0 }]; 3],
            ],
            gamma: 0.9,
            horizon: 1,
            features: vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.1]],
                vec![vec![0.0, 0.0]; 3],
            ],
            weights: vec![1.0, 0.5],
            feature_names: vec!["x".into(), "y".into()],
            start_states: vec![0],
            terminal_states: vec![1],
            layout: None,
        }
    }

    fn arm(a: usize) -> Trajectory {
        Trajectory::from_pairs(&[(0, a)])
    }

    #[test]
    fn disagreeing_pair_is_picked_first() {
        let mdp = two_arm();
        let samples = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        // samples agree on a vs c (both prefer c or tie), disagree on a vs b
        let pool = vec![PreferenceQuery::new(arm(0), arm(2)), PreferenceQuery::new(arm(0), arm(1))];
        let sel = gen_preference_queries(&mdp, &samples, &pool, 1, Rationality::finite(5.0)).unwrap();
        assert_eq!(sel.steps[0].pool_index, 1);
        assert!(sel.steps[0].expected_entropy < sel.steps[0].entropy_before);
    }

    #[test]
    fn zero_rationality_falls_back_to_pool_order() {
        let mdp = two_arm();
        let samples = sample_unit_ball(2, 20, 1);
        let pool = vec![
            PreferenceQuery::new(arm(0), arm(2)),
            PreferenceQuery::new(arm(0), arm(1)),
            PreferenceQuery::new(arm(1), arm(2)),
        ];
        let sel = gen_preference_queries(&mdp, &samples, &pool, 3, Rationality::finite(0.0)).unwrap();
        let order: Vec<usize> = sel.steps.iter().map(|s| s.pool_index).collect();
        assert_eq!(order, vec![0, 1, 2]);
        for step in &sel.steps {
            assert!((step.expected_entropy - step.entropy_before).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_belief_has_zero_gain() {
        let mdp = two_arm();
        let samples = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let pool = vec![PreferenceQuery::new(arm(0), arm(1)), PreferenceQuery::new(arm(1), arm(2))];
        let sel = gen_preference_queries(&mdp, &samples, &pool, 2, Rationality::finite(3.0)).unwrap();
        for step in &sel.steps {
            assert!((step.expected_entropy - step.entropy_before).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_errors() {
        let mdp = two_arm();
        let samples = sample_unit_ball(2, 4, 0);
        let pool = vec![PreferenceQuery::new(arm(0), arm(1))];
        assert_eq!(
            gen_preference_queries(&mdp, &samples, &pool, 2, Rationality::Perfect).unwrap_err(),
            AssessmentError::PoolTooSmall { requested: 2, available: 1 }
        );
        assert_eq!(
            gen_preference_queries(&mdp, &samples[..1], &pool, 1, Rationality::Perfect).unwrap_err(),
            AssessmentError::TooFewBeliefSamples(1)
        );
    }

    #[test]
    fn unit_ball_samples_stay_inside() {
        let samples = sample_unit_ball(3, 200, 9);
        assert!(samples.iter().all(|w| w.iter().map(|x| x * x).sum::<f64>() <= 1.0 + 1e-12));
        assert_eq!(samples, sample_unit_ball(3, 200, 9));
    }

    #[test]
    fn truth_prefers_higher_return() {
        let mdp = two_arm();
        assert_eq!(PreferenceQuery::new(arm(0), arm(1)).truth(&mdp), 0);
        assert_eq!(PreferenceQuery::new(arm(1), arm(0)).truth(&mdp), 1);
    }

    #[test]
    fn conditioning_merges_identical_posteriors() {
        let mut belief = QueryBelief::<f64>::uniform(3);
        belief.condition(&[0.5, 0.5, 0.5]);
        assert_eq!(belief.branch_count(), 1);
        belief.condition(&[1.0, 0.0, 0.5]);
        assert_eq!(belief.branch_count(), 2);
    }
}
