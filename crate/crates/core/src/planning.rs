//! Exact dynamic programming over linear-reward MDPs.
//!
//! A [`QTable`] carries two solutions: the stationary discounted fixed point
//! (`values`, used for state importance and factored displays) and the
//! finite-horizon stage tables (`stages`, used by rollouts so that a greedy
//! rollout is optimal among all trajectories within the horizon).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{ActionId, LinearRewardMdp, StateId, Step, Trajectory};
use crate::scalar::{argmax, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("value iteration did not reach tolerance {tolerance} within {iterations} iterations (residual {residual})")]
    NotConverged {
        tolerance: f64,
        iterations: usize,
        residual: f64,
    },
    #[error("state {0} is out of range")]
    InvalidState(StateId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Maximize,
    /// The table must come from solving the weight-negated MDP.
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QTable<T> {
    pub num_states: usize,
    pub num_actions: usize,
    /// Stationary discounted Q, flattened state-major.
    pub values: Vec<T>,
    /// `stages[t]` is the Q table with `horizon - t` steps to go.
    pub stages: Vec<Vec<T>>,
    pub gamma: T,
    pub horizon: usize,
    pub tolerance: f64,
}

impl<T: Scalar> QTable<T> {
    pub fn q(&self, s: StateId, a: ActionId) -> T {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: StateId) -> &[T] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn stage_row(&self, t: usize, s: StateId) -> &[T] {
        &self.stages[t][s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn value(&self, s: StateId) -> T {
        self.row(s).iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Optimal finite-horizon value of `s`.
    pub fn horizon_value(&self, s: StateId) -> T {
        match self.stages.first() {
            Some(_) => self.stage_row(0, s).iter().copied().fold(T::neg_infinity(), T::max),
            None => T::zero(),
        }
    }

    pub fn greedy_action(&self, s: StateId) -> ActionId {
        argmax(self.row(s))
    }

    /// Sup-norm Bellman residual of the stationary table.
    pub fn bellman_residual(&self, mdp: &LinearRewardMdp<T>) -> T {
        let v: Vec<T> = (0..self.num_states).map(|s| self.value(s)).collect();
        mdp.state_action_pairs()
            .map(|(s, a)| {
                let backup = mdp.reward(s, a)
                    + mdp.gamma
                        * mdp.transitions[s][a]
                            .iter()
                            .map(|x| x.probability * v[x.state])
                            .sum::<T>();
                (backup - self.q(s, a)).abs()
            })
            .fold(T::zero(), T::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DecomposedQTable<T> {
    /// One table per reward feature, in feature order.
    pub components: Vec<QTable<T>>,
    pub combined: QTable<T>,
}

impl<T: Scalar> DecomposedQTable<T> {
    /// Largest `|Σ_c Q_c(s,a) − Q(s,a)|` over all entries, stages included.
    pub fn max_sum_gap(&self) -> T {
        let mut gap = T::zero();
        let tables = |q: &QTable<T>| {
            std::iter::once(q.values.clone())
                .chain(q.stages.iter().cloned())
                .collect::<Vec<_>>()
        };
        let combined = tables(&self.combined);
        let components: Vec<_> = self.components.iter().map(tables).collect();
        for (k, total) in combined.iter().enumerate() {
            for (i, q) in total.iter().enumerate() {
                let sum: T = components.iter().map(|c| c[k][i]).sum();
                gap = gap.max((sum - *q).abs());
            }
        }
        gap
    }
}

fn iteration_cap<T: Scalar>(mdp: &LinearRewardMdp<T>) -> usize {
    let gamma = mdp.gamma.as_f64();
    (10.0 * mdp.horizon as f64 / (1.0 - gamma)).ceil() as usize
}

fn check_tolerance(tolerance: f64) -> Result<(), PlanningError> {
    if tolerance > 0.0 && tolerance.is_finite() {
        Ok(())
    } else {
        Err(PlanningError::InvalidTolerance(tolerance))
    }
}

fn rewards<T: Scalar>(mdp: &LinearRewardMdp<T>) -> Vec<T> {
    mdp.state_action_pairs().map(|(s, a)| mdp.reward(s, a)).collect()
}

fn state_values<T: Scalar>(q: &[T], m: usize) -> Vec<T> {
    q.chunks(m)
        .map(|row| row.iter().copied().fold(T::neg_infinity(), T::max))
        .collect()
}

fn expected_next<T: Scalar>(mdp: &LinearRewardMdp<T>, s: StateId, a: ActionId, v: &[T]) -> T {
    mdp.transitions[s][a]
        .iter()
        .map(|x| x.probability * v[x.state])
        .sum()
}

/// Backward induction over the horizon; `stages[0]` has the full horizon to go.
pub(crate) fn finite_horizon_q<T: Scalar>(mdp: &LinearRewardMdp<T>) -> Vec<Vec<T>> {
    let m = mdp.num_actions();
    let r = rewards(mdp);
    let mut stages = vec![Vec::new(); mdp.horizon];
    let mut next_v = vec![T::zero(); mdp.num_states];
    for t in (0..mdp.horizon).rev() {
        let q: Vec<T> = mdp
            .state_action_pairs()
            .map(|(s, a)| r[s * m + a] + mdp.gamma * expected_next(mdp, s, a, &next_v))
            .collect();
        next_v = state_values(&q, m);
        stages[t] = q;
    }
    stages
}

/// Solves the MDP; the stationary table has Bellman residual at most `tolerance`.
pub fn value_iteration<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    tolerance: f64,
) -> Result<QTable<T>, PlanningError> {
    check_tolerance(tolerance)?;
    let m = mdp.num_actions();
    let r = rewards(mdp);
    let cap = iteration_cap(mdp);
    let tol = T::lit(tolerance);
    let mut q = vec![T::zero(); mdp.num_states * m];
    let mut delta = T::infinity();
    let mut iterations = 0;
    while iterations < cap {
        iterations += 1;
        let v = state_values(&q, m);
        let next: Vec<T> = mdp
            .state_action_pairs()
            .map(|(s, a)| r[s * m + a] + mdp.gamma * expected_next(mdp, s, a, &v))
            .collect();
        delta = q
            .iter()
            .zip(&next)
            .map(|(x, y)| (*x - *y).abs())
            .fold(T::zero(), T::max);
        q = next;
        if delta <= tol {
            return Ok(QTable {
                num_states: mdp.num_states,
                num_actions: m,
                values: q,
                stages: finite_horizon_q(mdp),
                gamma: mdp.gamma,
                horizon: mdp.horizon,
                tolerance,
            });
        }
    }
    Err(PlanningError::NotConverged {
        tolerance,
        iterations,
        residual: delta.as_f64(),
    })
}

/// Solves the weight-negated MDP, as required for least-optimal rollouts.
pub fn solve_worst<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    tolerance: f64,
) -> Result<QTable<T>, PlanningError> {
    value_iteration(&mdp.negated(), tolerance)
}

/// Per-feature Q functions backed up under the jointly greedy action.
pub fn decomposed_value_iteration<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    tolerance: f64,
) -> Result<DecomposedQTable<T>, PlanningError> {
    check_tolerance(tolerance)?;
    let m = mdp.num_actions();
    let d = mdp.feature_dim();
    let n = mdp.num_states;
    let cap = iteration_cap(mdp);
    let tol = T::lit(tolerance);
    let r = rewards(mdp);
    let component_rewards: Vec<Vec<T>> = (0..d)
        .map(|c| {
            mdp.state_action_pairs()
                .map(|(s, a)| mdp.weights[c] * mdp.features[s][a][c])
                .collect()
        })
        .collect();

    // One joint backup: combined via max, components via the combined argmax.
    let backup = |q: &[T], comps: &[Vec<T>]| -> (Vec<T>, Vec<Vec<T>>) {
        let greedy: Vec<ActionId> = (0..n).map(|s| argmax(&q[s * m..(s + 1) * m])).collect();
        let v: Vec<T> = (0..n).map(|s| q[s * m + greedy[s]]).collect();
        let next_q: Vec<T> = mdp
            .state_action_pairs()
            .map(|(s, a)| r[s * m + a] + mdp.gamma * expected_next(mdp, s, a, &v))
            .collect();
        let next_comps = (0..d)
            .map(|c| {
                let vc: Vec<T> = (0..n).map(|s| comps[c][s * m + greedy[s]]).collect();
                mdp.state_action_pairs()
                    .map(|(s, a)| {
                        component_rewards[c][s * m + a] + mdp.gamma * expected_next(mdp, s, a, &vc)
                    })
                    .collect()
            })
            .collect();
        (next_q, next_comps)
    };

    let mut q = vec![T::zero(); n * m];
    let mut comps = vec![vec![T::zero(); n * m]; d];
    let mut delta = T::infinity();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cap {
        iterations += 1;
        let (next_q, next_comps) = backup(&q, &comps);
        delta = max_abs_diff(&q, &next_q);
        for (old, new) in comps.iter().zip(&next_comps) {
            delta = delta.max(max_abs_diff(old, new));
        }
        q = next_q;
        comps = next_comps;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PlanningError::NotConverged {
            tolerance,
            iterations,
            residual: delta.as_f64(),
        });
    }

    // Finite-horizon stages under the same joint backup.
    let mut stage_q = vec![Vec::new(); mdp.horizon];
    let mut stage_comps = vec![vec![Vec::new(); mdp.horizon]; d];
    let mut next_q = vec![T::zero(); n * m];
    let mut next_comps = vec![vec![T::zero(); n * m]; d];
    for t in (0..mdp.horizon).rev() {
        let (sq, sc) = backup(&next_q, &next_comps);
        stage_q[t] = sq.clone();
        for c in 0..d {
            stage_comps[c][t] = sc[c].clone();
        }
        next_q = sq;
        next_comps = sc;
    }

    let table = |values: Vec<T>, stages: Vec<Vec<T>>| QTable {
        num_states: n,
        num_actions: m,
        values,
        stages,
        gamma: mdp.gamma,
        horizon: mdp.horizon,
        tolerance,
    };
    Ok(DecomposedQTable {
        components: comps
            .into_iter()
            .zip(stage_comps)
            .map(|(values, stages)| table(values, stages))
            .collect(),
        combined: table(q, stage_q),
    })
}

fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), T::max)
}

pub(crate) fn rollout_staged<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    stages: &[Vec<T>],
    start: StateId,
) -> Trajectory {
    let m = mdp.num_actions();
    let mut steps = Vec::new();
    let mut s = start;
    for stage in stages.iter().take(mdp.horizon) {
        if mdp.is_terminal(s) {
            break;
        }
        let action = argmax(&stage[s * m..(s + 1) * m]);
        steps.push(Step { state: s, action });
        s = mdp.nominal_successor(s, action);
    }
    Trajectory::new(steps)
}

/// Follows the stage-wise greedy action from `start` until a terminal state or
/// the horizon, stepping to the most probable successor. Ties go to the lowest
/// action id. For [`Objective::Minimize`] `q` must solve the negated MDP.
pub fn greedy_rollout<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q: &QTable<T>,
    start: StateId,
    _objective: Objective,
) -> Result<Trajectory, PlanningError> {
    if start >= mdp.num_states {
        return Err(PlanningError::InvalidState(start));
    }
    Ok(rollout_staged(mdp, &q.stages, start))
}

/// Up to `steps` actions of the stationary greedy policy.
pub fn policy_rollout<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q: &QTable<T>,
    start: StateId,
    steps: usize,
) -> Result<Trajectory, PlanningError> {
    if start >= mdp.num_states {
        return Err(PlanningError::InvalidState(start));
    }
    let mut out = Vec::new();
    let mut s = start;
    while out.len() < steps.min(mdp.horizon) && !mdp.is_terminal(s) {
        let action = q.greedy_action(s);
        out.push(Step { state: s, action });
        s = mdp.nominal_successor(s, action);
    }
    Ok(Trajectory::new(out))
}

/// Gap between the best and worst action values at `s`.
pub fn state_importance<T: Scalar>(q: &QTable<T>, s: StateId) -> T {
    let row = q.row(s);
    let hi = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lo = row.iter().copied().fold(T::infinity(), T::min);
    hi - lo
}

/// All states ordered by descending importance, ties by ascending id.
pub fn rank_by_importance<T: Scalar>(q: &QTable<T>) -> Vec<StateId> {
    let importance: Vec<T> = (0..q.num_states).map(|s| state_importance(q, s)).collect();
    let mut order: Vec<StateId> = (0..q.num_states).collect();
    order.sort_by(|a, b| {
        importance[*b]
            .partial_cmp(&importance[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{
        build_domain, AnnotationKind, ComplexityProfile, DomainKind, DomainSpec, FeatureAnnotation,
        FeatureTier,
    };
    use crate::mdp::trajectory_reward;

    pub(crate) fn corridor(gamma: f64) -> LinearRewardMdp<f64> {
        let spec = DomainSpec {
            kind: DomainKind::Gridworld,
            profile: ComplexityProfile::new(1, FeatureTier::Atomic, 3, 1, 0.0),
            gamma: Some(gamma),
            horizon: None,
            start: None,
            features: Some(vec![FeatureAnnotation {
                name: "goal".into(),
                kind: AnnotationKind::Goal,
                cells: vec![(0, 2)],
                radius: 0,
                weight: 1.0,
            }]),
        };
        build_domain(&spec, 0).unwrap().mdp
    }

    #[test]
    fn corridor_q_values() {
        let mdp = corridor(0.9);
        let q = value_iteration(&mdp, 1e-12).unwrap();
        let (left, right) = (0, 1);
        assert!((q.q(1, right) - 1.0).abs() < 1e-9);
        assert!((q.q(0, right) - 0.9).abs() < 1e-9);
        assert!((q.q(0, left) - 0.81).abs() < 1e-9);
        assert!(q.bellman_residual(&mdp) <= 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_q() {
        let mdp = corridor(0.9).with_weights(vec![0.0]);
        let q = value_iteration(&mdp, 1e-9).unwrap();
        assert!(q.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scaling_weights_scales_q() {
        let mdp = corridor(0.9);
        let q1 = value_iteration(&mdp, 1e-12).unwrap();
        let q3 = value_iteration(&mdp.with_weights(vec![3.0]), 1e-12).unwrap();
        for (a, b) in q1.values.iter().zip(&q3.values) {
            assert!((3.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        assert_eq!(
            value_iteration(&corridor(0.9), 0.0).unwrap_err(),
            PlanningError::InvalidTolerance(0.0)
        );
    }

    #[test]
    fn reports_non_convergence() {
        // rewarding self-loop: the sup change halves each sweep, so 20 sweeps
        // leave it near 2e-6
        let mut mdp = crate::mdp::fixtures::one_step(vec![1.0], vec![1.0], 0.5);
        mdp.horizon = 1;
        mdp.transitions[0][0][0].state = 0;
        mdp.terminal_states.clear();
        let err = value_iteration(&mdp, 1e-12).unwrap_err();
        assert!(matches!(err, PlanningError::NotConverged { .. }));
    }

    #[test]
    fn best_and_worst_rollouts_on_corridor() {
        let mdp = corridor(0.9);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let best = greedy_rollout(&mdp, &q, 0, Objective::Maximize).unwrap();
        assert_eq!(best, Trajectory::from_pairs(&[(0, 1), (1, 1)]));
        let worst_q = solve_worst(&mdp, 1e-10).unwrap();
        let worst = greedy_rollout(&mdp, &worst_q, 0, Objective::Minimize).unwrap();
        assert_eq!(worst.len(), mdp.horizon);
        assert!(worst.steps.iter().all(|s| s.state != 2));
        assert_eq!(trajectory_reward(&mdp, &worst).unwrap(), 0.0);
    }

    #[test]
    fn ties_break_to_lowest_action() {
        let mdp = corridor(0.9).with_weights(vec![0.0]);
        let q = value_iteration(&mdp, 1e-9).unwrap();
        let t = greedy_rollout(&mdp, &q, 1, Objective::Maximize).unwrap();
        assert!(t.steps.iter().all(|s| s.action == 0));
    }

    #[test]
    fn importance_examples() {
        let q = QTable {
            num_states: 2,
            num_actions: 3,
            values: vec![2.0, 5.0, -1.0, 4.0, 4.0, 4.0],
            stages: vec![],
            gamma: 0.9,
            horizon: 1,
            tolerance: 1e-9,
        };
        assert_eq!(state_importance(&q, 0), 6.0);
        assert_eq!(state_importance(&q, 1), 0.0);
        assert_eq!(rank_by_importance(&q), vec![0, 1]);
    }

    #[test]
    fn decomposition_single_feature_is_identity() {
        let mdp = corridor(0.9);
        let dq = decomposed_value_iteration(&mdp, 1e-10).unwrap();
        assert_eq!(dq.components.len(), 1);
        assert_eq!(dq.components[0].values, dq.combined.values);
    }

    #[test]
    fn decomposition_split_feature_halves() {
        // duplicate the goal feature, half the weight on each copy
        let base = corridor(0.9);
        let mut mdp = base.clone();
        for row in mdp.features.iter_mut().flatten() {
            let x = row[0];
            row.push(x);
        }
        mdp.weights = vec![0.5, 0.5];
        mdp.feature_names = vec!["goal_a".into(), "goal_b".into()];
        let dq = decomposed_value_iteration(&mdp, 1e-12).unwrap();
        for i in 0..dq.combined.values.len() {
            let half = dq.combined.values[i] / 2.0;
            assert!((dq.components[0].values[i] - half).abs() < 1e-12);
            assert!((dq.components[1].values[i] - half).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_matches_plain_solver_on_waypoints() {
        let spec = DomainSpec::sampled(
            DomainKind::ThreatsWaypoints,
            ComplexityProfile::new(3, FeatureTier::Composite, 4, 4, 0.1),
        );
        let mdp = build_domain::<f64>(&spec, 2).unwrap().mdp;
        let dq = decomposed_value_iteration(&mdp, 1e-10).unwrap();
        let q = value_iteration(&mdp, 1e-10).unwrap();
        assert!(dq.max_sum_gap() <= 1e-8);
        for (a, b) in dq.combined.values.iter().zip(&q.values) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn f32_solver_runs() {
        let spec = DomainSpec::sampled(
            DomainKind::Gridworld,
            ComplexityProfile::new(2, FeatureTier::Atomic, 3, 3, 0.0),
        );
        let mdp = build_domain::<f32>(&spec, 1).unwrap().mdp;
        let q = value_iteration(&mdp, 1e-4).unwrap();
        assert!(q.bellman_residual(&mdp) <= 1e-4);
    }
}
