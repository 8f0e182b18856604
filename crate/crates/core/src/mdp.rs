//! Finite MDPs whose reward is linear in a feature map, plus trajectories over them.
//!
//! States and actions are dense integer ids. Every action is available in every
//! state; walls and terminal states are expressed through the transition table.
//! The feature map is stored as the expected feature vector of each `(s, a)`
//! under its successor distribution, so trajectory scoring and dynamic
//! programming agree exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{dot, Scalar};

pub type StateId = usize;
pub type ActionId = usize;

/// Probability mass on one successor state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Successor<T> {
    pub state: StateId,
    pub probability: T,
}

/// Grid coordinates of each state, used by the UI and for display.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    /// `(row, col)` of every state, indexed by state id.
    pub positions: Vec<(usize, usize)>,
    /// Visited-waypoint bitmask of every state (all zero outside waypoint domains).
    pub visited: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearRewardMdp<T> {
    pub id: String,
    pub num_states: usize,
    pub action_names: Vec<String>,
    /// `transitions[s][a]` lists successors with positive probability.
    pub transitions: Vec<Vec<Vec<Successor<T>>>>,
    pub gamma: T,
    pub horizon: usize,
    /// `features[s][a]` is the expected feature vector of taking `a` in `s`.
    pub features: Vec<Vec<Vec<T>>>,
    pub weights: Vec<T>,
    pub feature_names: Vec<String>,
    pub start_states: Vec<StateId>,
    pub terminal_states: Vec<StateId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<GridLayout>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub state: StateId,
    pub action: ActionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn from_pairs(pairs: &[(StateId, ActionId)]) -> Self {
        Self {
            steps: pairs
                .iter()
                .map(|&(state, action)| Step { state, action })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> Option<StateId> {
        self.steps.first().map(|s| s.state)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("step {step}: state {state} is out of range")]
    UnknownState { step: usize, state: StateId },
    #[error("step {step}: action {action} is out of range")]
    UnknownAction { step: usize, action: ActionId },
    #[error("step {step}: state {to} is unreachable from state {from} under action {action}")]
    InvalidTransition {
        step: usize,
        from: StateId,
        action: ActionId,
        to: StateId,
    },
    #[error("trajectory has {len} steps, horizon is {horizon}")]
    TooLong { len: usize, horizon: usize },
    #[error("trajectory starts at {0}, which is not a start state")]
    NotAStartState(StateId),
}

impl<T: Scalar> LinearRewardMdp<T> {
    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal_states.contains(&s)
    }

    pub fn reward(&self, s: StateId, a: ActionId) -> T {
        dot(&self.weights, &self.features[s][a])
    }

    /// Reward of `(s, a)` under an arbitrary weight vector.
    pub fn reward_under(&self, weights: &[T], s: StateId, a: ActionId) -> T {
        dot(weights, &self.features[s][a])
    }

    pub fn transition_probability(&self, s: StateId, a: ActionId, next: StateId) -> T {
        self.transitions[s][a]
            .iter()
            .filter(|succ| succ.state == next)
            .map(|succ| succ.probability)
            .sum()
    }

    /// Most probable successor; ties go to the lowest state id.
    pub fn nominal_successor(&self, s: StateId, a: ActionId) -> StateId {
        let mut best: Option<Successor<T>> = None;
        for succ in &self.transitions[s][a] {
            best = match best {
                None => Some(*succ),
                Some(b) if succ.probability > b.probability
                    || (succ.probability == b.probability && succ.state < b.state) =>
                {
                    Some(*succ)
                }
                keep => keep,
            };
        }
        best.map(|b| b.state).unwrap_or(s)
    }

    /// Copy of this MDP with a different weight vector.
    pub fn with_weights(&self, weights: Vec<T>) -> Self {
        Self {
            weights,
            ..self.clone()
        }
    }

    pub fn negated(&self) -> Self {
        self.with_weights(self.weights.iter().map(|w| -*w).collect())
    }

    /// The MDP with its weights hidden, as handed to a responder.
    pub fn structure(&self) -> MdpStructure<T> {
        MdpStructure(self.with_weights(vec![T::zero(); self.feature_dim()]))
    }

    pub fn is_deterministic(&self) -> bool {
        self.transitions
            .iter()
            .flatten()
            .all(|row| row.len() == 1)
    }

    /// All `(s, a)` pairs in state-major order.
    pub fn state_action_pairs(&self) -> impl Iterator<Item = (StateId, ActionId)> + '_ {
        let m = self.num_actions();
        (0..self.num_states).flat_map(move |s| (0..m).map(move |a| (s, a)))
    }

    /// Checks that every step is in range, transitions have positive
    /// probability and the length is within the horizon.
    pub fn check_trajectory(&self, traj: &Trajectory) -> Result<(), TrajectoryError> {
        if traj.len() > self.horizon {
            return Err(TrajectoryError::TooLong {
                len: traj.len(),
                horizon: self.horizon,
            });
        }
        for (i, step) in traj.steps.iter().enumerate() {
            if step.state >= self.num_states {
                return Err(TrajectoryError::UnknownState {
                    step: i,
                    state: step.state,
                });
            }
            if step.action >= self.num_actions() {
                return Err(TrajectoryError::UnknownAction {
                    step: i,
                    action: step.action,
                });
            }
            if let Some(next) = traj.steps.get(i + 1) {
                if next.state >= self.num_states {
                    return Err(TrajectoryError::UnknownState {
                        step: i + 1,
                        state: next.state,
                    });
                }
                if self.transition_probability(step.state, step.action, next.state) <= T::zero() {
                    return Err(TrajectoryError::InvalidTransition {
                        step: i + 1,
                        from: step.state,
                        action: step.action,
                        to: next.state,
                    });
                }
            }
        }
        Ok(())
    }

    /// As [`Self::check_trajectory`], additionally requiring a start state.
    pub fn check_episode(&self, traj: &Trajectory) -> Result<(), TrajectoryError> {
        self.check_trajectory(traj)?;
        match traj.start() {
            Some(s) if !self.start_states.contains(&s) => Err(TrajectoryError::NotAStartState(s)),
            _ => Ok(()),
        }
    }

    /// Checks every structural invariant and describes each violation.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let d = self.weights.len();
        let m = self.num_actions();
        let tol = 1e-9;

        if self.num_states == 0 {
            violations.push("MDP has no states".to_string());
        }
        if m == 0 {
            violations.push("MDP has no actions".to_string());
        }
        if self.feature_names.len() != d {
            violations.push(format!(
                "dimension mismatch: {} weights but {} feature names",
                d,
                self.feature_names.len()
            ));
        }
        if !(self.gamma >= T::zero() && self.gamma < T::one()) {
            violations.push(format!("discount {} outside [0, 1)", self.gamma));
        }
        if self.horizon == 0 {
            violations.push("horizon must be positive".to_string());
        }
        if self.transitions.len() != self.num_states {
            violations.push(format!(
                "transition table covers {} states, expected {}",
                self.transitions.len(),
                self.num_states
            ));
        }
        if self.features.len() != self.num_states {
            violations.push(format!(
                "feature table covers {} states, expected {}",
                self.features.len(),
                self.num_states
            ));
        }
        for (s, rows) in self.transitions.iter().enumerate() {
            if rows.len() != m {
                violations.push(format!(
                    "state {s} has {} transition rows, expected {m}",
                    rows.len()
                ));
            }
            for (a, row) in rows.iter().enumerate() {
                let mut total = 0.0;
                for succ in row {
                    let p = succ.probability.as_f64();
                    if !(p >= 0.0) {
                        violations.push(format!("(s={s}, a={a}): negative probability {p}"));
                    }
                    if succ.state >= self.num_states {
                        violations.push(format!(
                            "(s={s}, a={a}): successor {} out of range",
                            succ.state
                        ));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > tol {
                    violations.push(format!(
                        "(s={s}, a={a}): transition probabilities sum to {total}"
                    ));
                }
            }
        }
        for (s, rows) in self.features.iter().enumerate() {
            if rows.len() != m {
                violations.push(format!(
                    "state {s} has {} feature rows, expected {m}",
                    rows.len()
                ));
            }
            for (a, phi) in rows.iter().enumerate() {
                if phi.len() != d {
                    violations.push(format!(
                        "dimension mismatch at (s={s}, a={a}): feature vector has {} entries, weights have {d}",
                        phi.len()
                    ));
                }
                if phi.iter().any(|x| !x.is_finite()) {
                    violations.push(format!("(s={s}, a={a}): non-finite feature value"));
                }
            }
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            violations.push("non-finite weight".to_string());
        }
        if self.start_states.is_empty() {
            violations.push("no start states".to_string());
        }
        for s in self.start_states.iter().chain(&self.terminal_states) {
            if *s >= self.num_states {
                violations.push(format!("state {s} referenced but out of range"));
            }
        }
        for s in &self.start_states {
            if self.terminal_states.contains(s) {
                violations.push(format!("state {s} is both a start and a terminal state"));
            }
        }
        for &s in &self.terminal_states {
            if s >= self.num_states || s >= self.transitions.len() || s >= self.features.len() {
                continue;
            }
            for (a, row) in self.transitions[s].iter().enumerate() {
                if row.len() != 1 || row[0].state != s {
                    violations.push(format!("terminal state {s} does not self-loop under action {a}"));
                }
            }
            for (a, phi) in self.features[s].iter().enumerate() {
                if phi.iter().any(|x| *x != T::zero()) {
                    violations.push(format!("terminal state {s} has nonzero features under action {a}"));
                }
            }
        }
        if let Some(layout) = &self.layout {
            if layout.positions.len() != self.num_states || layout.visited.len() != self.num_states {
                violations.push("layout does not cover every state".to_string());
            }
        }
        violations
    }
}

/// An MDP whose weights are hidden (all zero). Responders plan on it by
/// supplying their own belief about the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MdpStructure<T>(LinearRewardMdp<T>);

impl<T: Scalar> MdpStructure<T> {
    pub fn reweighted(&self, weights: &[T]) -> LinearRewardMdp<T> {
        self.0.with_weights(weights.to_vec())
    }

    pub fn mdp(&self) -> &LinearRewardMdp<T> {
        &self.0
    }
}

/// Discounted return `Σ_t γ^t · w·φ(s_t, a_t)` of a trajectory.
pub fn trajectory_reward<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    traj: &Trajectory,
) -> Result<T, TrajectoryError> {
    trajectory_reward_under(mdp, &mdp.weights, traj)
}

/// Discounted return of a trajectory under an arbitrary weight vector.
pub fn trajectory_reward_under<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    weights: &[T],
    traj: &Trajectory,
) -> Result<T, TrajectoryError> {
    mdp.check_trajectory(traj)?;
    Ok(discounted_return(mdp, weights, traj))
}

/// Discounted feature counts of a (pre-validated) trajectory.
pub fn feature_counts<T: Scalar>(mdp: &LinearRewardMdp<T>, traj: &Trajectory) -> Vec<T> {
    let mut counts = vec![T::zero(); mdp.feature_dim()];
    let mut discount = T::one();
    for step in &traj.steps {
        for (c, phi) in counts.iter_mut().zip(&mdp.features[step.state][step.action]) {
            *c = *c + discount * *phi;
        }
        discount = discount * mdp.gamma;
    }
    counts
}

pub(crate) fn discounted_return<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    weights: &[T],
    traj: &Trajectory,
) -> T {
    let mut total = T::zero();
    let mut discount = T::one();
    for step in &traj.steps {
        total = total + discount * mdp.reward_under(weights, step.state, step.action);
        discount = discount * mdp.gamma;
    }
    total
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Single state, one action, explicit features and weights.
    pub fn one_step(phi: Vec<f64>, weights: Vec<f64>, gamma: f64) -> LinearRewardMdp<f64> {
        let d = weights.len();
        LinearRewardMdp {
            id: "one-step".into(),
            num_states: 2,
            action_names: vec!["go".into()],
            transitions: vec![
                vec![vec![Successor { state: 1, probability: 1.0 }]],
                vec![vec![Successor { state: 1, probability: 1.0 }]],
            ],
            gamma,
            horizon: 4,
            features: vec![vec![phi], vec![vec![0.0; d]]],
            weights,
            feature_names: (0..d).map(|i| format!("f{}", i + 1)).collect(),
            start_states: vec![0],
            terminal_states: vec![1],
            layout: None,
        }
    }

    /// A chain where every step yields `w·φ = 1`.
    pub fn unit_chain(len: usize, gamma: f64) -> LinearRewardMdp<f64> {
        let n = len + 1;
        let mut transitions = Vec::new();
        let mut features = Vec::new();
        for s in 0..n {
            let next = if s + 1 < n { s + 1 } else { s };
            transitions.push(vec![vec![Successor { state: next, probability: 1.0 }]]);
            features.push(vec![vec![if s + 1 < n { 1.0 } else { 0.0 }]]);
        }
        LinearRewardMdp {
            id: "chain".into(),
            num_states: n,
            action_names: vec!["next".into()],
            transitions,
            gamma,
            horizon: len.max(1),
            features,
            weights: vec![1.0],
            feature_names: vec!["progress".into()],
            start_states: vec![0],
            terminal_states: vec![n - 1],
            layout: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_reward() {
        let mdp = one_step(vec![1.0, 0.0], vec![2.0, -1.0], 0.3);
        let r = trajectory_reward(&mdp, &Trajectory::from_pairs(&[(0, 0)])).unwrap();
        assert_eq!(r, 2.0);
    }

    #[test]
    fn two_step_geometric_sum() {
        let mdp = unit_chain(2, 0.5);
        let r = trajectory_reward(&mdp, &Trajectory::from_pairs(&[(0, 0), (1, 0)])).unwrap();
        assert_eq!(r, 1.5);
    }

    #[test]
    fn empty_trajectory_is_zero() {
        let mdp = unit_chain(2, 0.5);
        assert_eq!(trajectory_reward(&mdp, &Trajectory::default()).unwrap(), 0.0);
    }

    #[test]
    fn invalid_transition_names_step() {
        let mdp = unit_chain(3, 0.5);
        let err = trajectory_reward(&mdp, &Trajectory::from_pairs(&[(0, 0), (2, 0)])).unwrap_err();
        assert_eq!(
            err,
            TrajectoryError::InvalidTransition { step: 1, from: 0, action: 0, to: 2 }
        );
    }

    #[test]
    fn validate_flags_bad_row_and_dimension() {
        let mut mdp = unit_chain(2, 0.5);
        assert!(mdp.validate().is_empty());
        mdp.transitions[0][0][0].probability = 0.9;
        let v = mdp.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("(s=0, a=0)"), "{v:?}");

        let mut mdp = one_step(vec![1.0, 0.0], vec![2.0, -1.0], 0.5);
        mdp.weights.pop();
        let v = mdp.validate();
        assert!(v.iter().any(|m| m.contains("dimension mismatch")), "{v:?}");
    }

    #[test]
    fn structure_hides_weights() {
        let mdp = one_step(vec![1.0], vec![3.0], 0.5);
        let st = mdp.structure();
        assert_eq!(st.mdp().weights, vec![0.0]);
        assert_eq!(st.reweighted(&[3.0]), mdp);
    }

    proptest! {
        #[test]
        fn reward_is_linear_in_weights(
            w1 in proptest::collection::vec(-5.0f64..5.0, 3),
            w2 in proptest::collection::vec(-5.0f64..5.0, 3),
            phis in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..6),
        ) {
            let n = phis.len() + 1;
            let mut transitions = Vec::new();
            let mut features = Vec::new();
            for s in 0..n {
                let next = (s + 1).min(n - 1);
                transitions.push(vec![vec![Successor { state: next, probability: 1.0 }]]);
                features.push(vec![if s + 1 < n { phis[s].clone() } else { vec![0.0; 3] }]);
            }
            let mdp = LinearRewardMdp {
                id: "p".into(), num_states: n, action_names: vec!["a".into()], transitions,
                gamma: 0.9, horizon: n, features, weights: w1.clone(),
                feature_names: vec!["a".into(), "b".into(), "c".into()],
                start_states: vec![0], terminal_states: vec![n - 1], layout: None,
            };
            let traj = Trajectory::new((0..n - 1).map(|s| Step { state: s, action: 0 }).collect());
            let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let lhs = trajectory_reward_under(&mdp, &sum, &traj).unwrap();
            let rhs = trajectory_reward_under(&mdp, &w1, &traj).unwrap()
                + trajectory_reward_under(&mdp, &w2, &traj).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
