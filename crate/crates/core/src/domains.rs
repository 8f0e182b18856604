//! Complexity-parameterized domain generators and the domain spec file format.
//!
//! A [`DomainSpec`] either carries explicit feature annotations or leaves them
//! to be sampled from its [`ComplexityProfile`] and a seed. Sampling produces
//! annotations first and then builds from them, so the resolved spec written
//! by `gen-domain` regenerates the identical MDP.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{GridLayout, LinearRewardMdp, StateId, Successor};
use crate::planning;
use crate::scalar::Scalar;

pub const MAX_WAYPOINTS: usize = 6;
pub const DEFAULT_GAMMA: f64 = 0.95;
const WEIGHT_REDRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTier {
    /// Single-cell indicators.
    Atomic,
    /// Predicates over several cells (terrain classes, threat neighbourhoods).
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Situational {
    None,
    MonitoringTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentComplexity {
    pub width: usize,
    pub height: usize,
    pub slip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityProfile {
    /// Number of reward features `d`.
    pub reward_complexity: usize,
    pub feature_complexity: FeatureTier,
    pub environment_complexity: EnvironmentComplexity,
    pub situational_complexity: Situational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityLevel {
    Low,
    High,
}

impl ComplexityProfile {
    pub fn new(d: usize, tier: FeatureTier, width: usize, height: usize, slip: f64) -> Self {
        Self {
            reward_complexity: d,
            feature_complexity: tier,
            environment_complexity: EnvironmentComplexity { width, height, slip },
            situational_complexity: Situational::None,
        }
    }

    pub fn with_situational(mut self, level: Situational) -> Self {
        self.situational_complexity = level;
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let env = &self.environment_complexity;
        if self.reward_complexity == 0 {
            return Err(DomainError::InvalidProfile("feature count must be at least 1".into()));
        }
        if env.width == 0 || env.height == 0 || env.width * env.height < 2 {
            return Err(DomainError::InvalidProfile("grid needs at least two cells".into()));
        }
        if !(env.slip >= 0.0 && env.slip < 0.5) {
            return Err(DomainError::InvalidProfile(format!(
                "slip probability {} outside [0, 0.5)",
                env.slip
            )));
        }
        Ok(())
    }

    /// Coarse reward/feature/environment complexity used to group conditions.
    pub fn level(&self) -> ComplexityLevel {
        let env = &self.environment_complexity;
        if self.reward_complexity > 3
            || self.feature_complexity == FeatureTier::Composite
            || env.width * env.height > 25
            || env.slip > 0.0
        {
            ComplexityLevel::High
        } else {
            ComplexityLevel::Low
        }
    }

    /// Label identifying the profile with situational load ignored.
    pub fn family_signature(&self) -> String {
        let env = &self.environment_complexity;
        let tier = match self.feature_complexity {
            FeatureTier::Atomic => "atomic",
            FeatureTier::Composite => "composite",
        };
        format!(
            "{}x{}/d{}/{}/slip{}",
            env.width, env.height, self.reward_complexity, tier, env.slip
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Gridworld,
    ThreatsWaypoints,
}

impl DomainKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainKind::Gridworld => "gridworld",
            DomainKind::ThreatsWaypoints => "threats_waypoints",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    /// Terminal goal cell; entering it fires the feature.
    Goal,
    /// Entering any listed cell fires the feature.
    Region,
    /// First entry into the cell fires the feature.
    Waypoint,
    /// Ending a step within `radius` (Manhattan) of the cell fires the feature.
    Threat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnnotation {
    pub name: String,
    pub kind: AnnotationKind,
    /// `(row, col)` cells.
    pub cells: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub radius: usize,
    pub weight: f64,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

/// The domain spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub profile: ComplexityProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Assessment start cell; defaults to `(0, 0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<FeatureAnnotation>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("profile asks for {requested} features but only {available} cell predicates can be placed")]
    TooManyFeatures { requested: usize, available: usize },
    #[error("{0} waypoints requested, at most {MAX_WAYPOINTS} are supported")]
    TooManyWaypoints(usize),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("no weight draw gave a positive optimal return within {0} attempts")]
    NoPositiveOptimum(usize),
    #[error("generated MDP violates invariants: {0:?}")]
    Invalid(Vec<String>),
}

impl DomainSpec {
    pub fn sampled(kind: DomainKind, profile: ComplexityProfile) -> Self {
        Self {
            kind,
            profile,
            gamma: None,
            horizon: None,
            start: None,
            features: None,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(DEFAULT_GAMMA)
    }

    pub fn horizon(&self) -> usize {
        let env = &self.profile.environment_complexity;
        self.horizon.unwrap_or(4 * (env.width + env.height))
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start.unwrap_or((0, 0))
    }
}

/// A generated domain: the resolved spec (with explicit annotations) and its MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Domain<T> {
    pub spec: DomainSpec,
    pub mdp: LinearRewardMdp<T>,
    /// Designated start state for demonstrations and query rollouts.
    pub assessment_start: StateId,
}

/// Linear concept over the reward features: `ψ_j(s,a) = coefficients_j · φ(s,a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Concept<T> {
    pub name: String,
    pub coefficients: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConceptSet<T> {
    pub concepts: Vec<Concept<T>>,
}

impl<T: Scalar> ConceptSet<T> {
    pub fn new(concepts: Vec<Concept<T>>) -> Self {
        Self { concepts }
    }

    /// One concept per reward feature.
    pub fn identity(names: &[String]) -> Self {
        let d = names.len();
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, name)| Concept {
                    name: name.clone(),
                    coefficients: (0..d).map(|j| if i == j { T::one() } else { T::zero() }).collect(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn validate(&self, feature_dim: usize) -> Result<(), String> {
        if self.concepts.is_empty() {
            return Err("concept set is empty".into());
        }
        for c in &self.concepts {
            if c.coefficients.len() != feature_dim {
                return Err(format!(
                    "concept {} has {} coefficients, expected {feature_dim}",
                    c.name,
                    c.coefficients.len()
                ));
            }
        }
        Ok(())
    }

    /// Evaluates every concept on a feature vector.
    pub fn evaluate(&self, phi: &[T]) -> Vec<T> {
        self.concepts
            .iter()
            .map(|c| crate::scalar::dot(&c.coefficients, phi))
            .collect()
    }
}

impl<T: Scalar> Domain<T> {
    /// Pre-defined concepts grouping features by role.
    pub fn default_concepts(&self) -> ConceptSet<T> {
        let annotations = self.spec.features.as_deref().unwrap_or(&[]);
        let d = annotations.len();
        let group = |name: &str, pick: &dyn Fn(&FeatureAnnotation) -> bool| {
            let coefficients: Vec<T> = annotations
                .iter()
                .map(|a| if pick(a) { T::one() } else { T::zero() })
                .collect();
            coefficients.iter().any(|c| *c != T::zero()).then(|| Concept {
                name: name.to_string(),
                coefficients,
            })
        };
        let concepts: Vec<Concept<T>> = match self.spec.kind {
            DomainKind::Gridworld => [
                group("reach_goal", &|a| a.kind == AnnotationKind::Goal),
                group("terrain", &|a| a.kind == AnnotationKind::Region),
            ]
            .into_iter()
            .flatten()
            .collect(),
            DomainKind::ThreatsWaypoints => [
                group("waypoints", &|a| a.kind == AnnotationKind::Waypoint),
                group("danger", &|a| a.kind == AnnotationKind::Threat),
            ]
            .into_iter()
            .flatten()
            .collect(),
        };
        debug_assert!(concepts.iter().all(|c| c.coefficients.len() == d));
        ConceptSet::new(concepts)
    }
}

/// Builds a domain from a spec, sampling annotations when none are given.
pub fn build_domain<T: Scalar>(spec: &DomainSpec, seed: u64) -> Result<Domain<T>, DomainError> {
    spec.profile.validate()?;
    match &spec.features {
        Some(_) => build_annotated(spec),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layout = sample_layout(spec, &mut rng)?;
            for _ in 0..WEIGHT_REDRAWS {
                let mut resolved = spec.clone();
                resolved.features = Some(layout.draw_weights(&mut rng));
                let domain = build_annotated::<T>(&resolved)?;
                if optimal_return(&domain) > 0.0 {
                    return Ok(domain);
                }
            }
            Err(DomainError::NoPositiveOptimum(WEIGHT_REDRAWS))
        }
    }
}

pub fn build_gridworld<T: Scalar>(
    profile: &ComplexityProfile,
    seed: u64,
) -> Result<LinearRewardMdp<T>, DomainError> {
    build_domain(&DomainSpec::sampled(DomainKind::Gridworld, *profile), seed).map(|d| d.mdp)
}

pub fn build_threats_waypoints<T: Scalar>(
    profile: &ComplexityProfile,
    seed: u64,
) -> Result<LinearRewardMdp<T>, DomainError> {
    build_domain(&DomainSpec::sampled(DomainKind::ThreatsWaypoints, *profile), seed).map(|d| d.mdp)
}

fn optimal_return<T: Scalar>(domain: &Domain<T>) -> f64 {
    let q = planning::finite_horizon_q(&domain.mdp);
    let traj = planning::rollout_staged(&domain.mdp, &q, domain.assessment_start);
    crate::mdp::discounted_return(&domain.mdp, &domain.mdp.weights, &traj).as_f64()
}

/// Feature placements before weights are drawn.
struct SampledLayout {
    kind: DomainKind,
    slots: Vec<(String, AnnotationKind, Vec<(usize, usize)>, usize)>,
}

const TERRAIN_NAMES: [&str; 8] = ["mud", "sand", "rock", "grass", "water", "ice", "gravel", "brush"];

impl SampledLayout {
    fn draw_weights(&self, rng: &mut ChaCha8Rng) -> Vec<FeatureAnnotation> {
        let mut hazard = 0;
        let mut bonus = 0;
        self.slots
            .iter()
            .map(|(name, kind, cells, radius)| {
                let (name, weight) = match (self.kind, kind) {
                    (_, AnnotationKind::Goal) => (name.clone(), 1.0),
                    (_, AnnotationKind::Waypoint) => (name.clone(), rng.random_range(0.5..1.0)),
                    (_, AnnotationKind::Threat) => (name.clone(), -rng.random_range(0.2..1.0)),
                    (_, AnnotationKind::Region) => {
                        let magnitude: f64 = rng.random_range(0.05..0.5);
                        let negative = rng.random_bool(0.6);
                        let w = if negative { -magnitude } else { magnitude };
                        if cells.len() == 1 && name.is_empty() {
                            if negative {
                                hazard += 1;
                                (format!("hazard_{hazard}"), w)
                            } else {
                                bonus += 1;
                                (format!("bonus_{bonus}"), w)
                            }
                        } else {
                            (name.clone(), w)
                        }
                    }
                };
                FeatureAnnotation {
                    name,
                    kind: *kind,
                    cells: cells.clone(),
                    radius: *radius,
                    weight,
                }
            })
            .collect()
    }
}

fn sample_layout(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Result<SampledLayout, DomainError> {
    let profile = &spec.profile;
    let env = &profile.environment_complexity;
    let d = profile.reward_complexity;
    let start = spec.start_cell();
    let mut free: Vec<(usize, usize)> = (0..env.height)
        .flat_map(|r| (0..env.width).map(move |c| (r, c)))
        .filter(|cell| *cell != start)
        .collect();

    match spec.kind {
        DomainKind::Gridworld => {
            let goal = (env.height - 1, env.width - 1);
            if goal == start {
                return Err(DomainError::InvalidProfile("goal coincides with start".into()));
            }
            free.retain(|c| *c != goal);
            if d - 1 > free.len() {
                return Err(DomainError::TooManyFeatures {
                    requested: d,
                    available: free.len() + 1,
                });
            }
            free.shuffle(rng);
            let mut slots = vec![("goal".to_string(), AnnotationKind::Goal, vec![goal], 0)];
            match profile.feature_complexity {
                FeatureTier::Atomic => {
                    for cell in free.iter().take(d - 1) {
                        slots.push((String::new(), AnnotationKind::Region, vec![*cell], 0));
                    }
                }
                FeatureTier::Composite => {
                    let classes = d - 1;
                    if classes > 0 {
                        let per_class = (free.len() / (2 * classes)).max(1);
                        for k in 0..classes {
                            let cells: Vec<_> =
                                free.iter().skip(k * per_class).take(per_class).copied().collect();
                            let name = match TERRAIN_NAMES.get(k) {
                                Some(t) => format!("terrain_{t}"),
                                None => format!("terrain_{}", k + 1),
                            };
                            slots.push((name, AnnotationKind::Region, cells, 0));
                        }
                    }
                }
            }
            Ok(SampledLayout { kind: spec.kind, slots })
        }
        DomainKind::ThreatsWaypoints => {
            let waypoints = d.div_ceil(2);
            let threats = d / 2;
            if waypoints > MAX_WAYPOINTS {
                return Err(DomainError::TooManyWaypoints(waypoints));
            }
            if d > free.len() {
                return Err(DomainError::TooManyFeatures {
                    requested: d,
                    available: free.len(),
                });
            }
            free.shuffle(rng);
            let radius = match profile.feature_complexity {
                FeatureTier::Atomic => 0,
                FeatureTier::Composite => 1,
            };
            let mut slots = Vec::new();
            for (i, cell) in free.iter().take(waypoints).enumerate() {
                slots.push((format!("waypoint_{}", i + 1), AnnotationKind::Waypoint, vec![*cell], 0));
            }
            for (j, cell) in free.iter().skip(waypoints).take(threats).enumerate() {
                slots.push((format!("threat_{}", j + 1), AnnotationKind::Threat, vec![*cell], radius));
            }
            Ok(SampledLayout { kind: spec.kind, slots })
        }
    }
}

fn build_annotated<T: Scalar>(spec: &DomainSpec) -> Result<Domain<T>, DomainError> {
    let profile = &spec.profile;
    profile.validate()?;
    let env = &profile.environment_complexity;
    let annotations = spec.features.as_deref().unwrap_or(&[]);
    if annotations.len() != profile.reward_complexity {
        return Err(DomainError::InvalidAnnotation(format!(
            "{} feature annotations for a profile with {} features",
            annotations.len(),
            profile.reward_complexity
        )));
    }
    let mut names = BTreeSet::new();
    for a in annotations {
        if !names.insert(a.name.as_str()) {
            return Err(DomainError::InvalidAnnotation(format!("duplicate feature name {}", a.name)));
        }
        if a.cells.is_empty() {
            return Err(DomainError::InvalidAnnotation(format!("feature {} has no cells", a.name)));
        }
        if a.cells.iter().any(|(r, c)| *r >= env.height || *c >= env.width) {
            return Err(DomainError::InvalidAnnotation(format!("feature {} leaves the grid", a.name)));
        }
        if !a.weight.is_finite() {
            return Err(DomainError::InvalidAnnotation(format!("feature {} has a non-finite weight", a.name)));
        }
    }
    let start = spec.start_cell();
    if start.0 >= env.height || start.1 >= env.width {
        return Err(DomainError::InvalidAnnotation("start cell leaves the grid".into()));
    }
    let grid = Grid::new(env.width, env.height, env.slip);
    let mdp_id = format!("{}/{}", spec.kind.as_str(), profile.family_signature());
    match spec.kind {
        DomainKind::Gridworld => build_grid_mdp(spec, &grid, annotations, start, mdp_id),
        DomainKind::ThreatsWaypoints => build_waypoint_mdp(spec, &grid, annotations, start, mdp_id),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Left,
    Right,
    Up,
    Down,
}

impl Move {
    fn lateral(self) -> [Move; 2] {
        match self {
            Move::Left | Move::Right => [Move::Up, Move::Down],
            Move::Up | Move::Down => [Move::Left, Move::Right],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Move::Left => "left",
            Move::Right => "right",
            Move::Up => "up",
            Move::Down => "down",
        }
    }
}

struct Grid {
    width: usize,
    height: usize,
    slip: f64,
    moves: Vec<Move>,
}

impl Grid {
    fn new(width: usize, height: usize, slip: f64) -> Self {
        let mut moves = Vec::new();
        if width > 1 {
            moves.extend([Move::Left, Move::Right]);
        }
        if height > 1 {
            moves.extend([Move::Up, Move::Down]);
        }
        Self { width, height, slip, moves }
    }

    fn cells(&self) -> usize {
        self.width * self.height
    }

    fn cell_id(&self, (r, c): (usize, usize)) -> usize {
        r * self.width + c
    }

    fn position(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    fn shift(&self, cell: usize, mv: Move) -> usize {
        let (r, c) = self.position(cell);
        let (r, c) = match mv {
            Move::Left if c > 0 => (r, c - 1),
            Move::Right if c + 1 < self.width => (r, c + 1),
            Move::Up if r > 0 => (r - 1, c),
            Move::Down if r + 1 < self.height => (r + 1, c),
            _ => (r, c),
        };
        self.cell_id((r, c))
    }

    /// Successor cells with lateral slip, merged and sorted by cell id.
    fn successors(&self, cell: usize, mv: Move) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut add = |next: usize, p: f64| {
            if p <= 0.0 {
                return;
            }
            match out.iter_mut().find(|(s, _)| *s == next) {
                Some(entry) => entry.1 += p,
                None => out.push((next, p)),
            }
        };
        add(self.shift(cell, mv), 1.0 - self.slip);
        for lateral in mv.lateral() {
            add(self.shift(cell, lateral), self.slip / 2.0);
        }
        out.sort_by_key(|(s, _)| *s);
        out
    }

    fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.position(a);
        let (rb, cb) = self.position(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }
}

fn build_grid_mdp<T: Scalar>(
    spec: &DomainSpec,
    grid: &Grid,
    annotations: &[FeatureAnnotation],
    start: (usize, usize),
    id: String,
) -> Result<Domain<T>, DomainError> {
    let goals: Vec<_> = annotations.iter().filter(|a| a.kind == AnnotationKind::Goal).collect();
    if goals.len() != 1 || goals[0].cells.len() != 1 {
        return Err(DomainError::InvalidAnnotation(
            "gridworld needs exactly one single-cell goal feature".into(),
        ));
    }
    if annotations
        .iter()
        .any(|a| !matches!(a.kind, AnnotationKind::Goal | AnnotationKind::Region))
    {
        return Err(DomainError::InvalidAnnotation(
            "gridworld features must be goal or region annotations".into(),
        ));
    }
    let goal = grid.cell_id(goals[0].cells[0]);
    let start = grid.cell_id(start);
    if goal == start {
        return Err(DomainError::InvalidAnnotation("goal coincides with start".into()));
    }
    let cell_sets: Vec<BTreeSet<usize>> = annotations
        .iter()
        .map(|a| a.cells.iter().map(|c| grid.cell_id(*c)).collect())
        .collect();
    let d = annotations.len();
    let n = grid.cells();
    let mut transitions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for s in 0..n {
        let mut rows = Vec::new();
        let mut phis = Vec::new();
        for &mv in &grid.moves {
            if s == goal {
                rows.push(vec![Successor { state: s, probability: T::one() }]);
                phis.push(vec![T::zero(); d]);
                continue;
            }
            let succ = grid.successors(s, mv);
            let mut phi = vec![0.0; d];
            for &(next, p) in &succ {
                if next == s {
                    continue;
                }
                for (i, cells) in cell_sets.iter().enumerate() {
                    if cells.contains(&next) {
                        phi[i] += p;
                    }
                }
            }
            rows.push(to_successors(&succ));
            phis.push(phi.into_iter().map(T::lit).collect());
        }
        transitions.push(rows);
        features.push(phis);
    }
    let mut start_states: Vec<StateId> = (0..n).filter(|s| *s != goal).collect();
    start_states.sort_by_key(|s| (*s != start, *s));
    let mdp = LinearRewardMdp {
        id,
        num_states: n,
        action_names: grid.moves.iter().map(|m| m.name().to_string()).collect(),
        transitions,
        gamma: T::lit(spec.gamma()),
        horizon: spec.horizon(),
        features,
        weights: annotations.iter().map(|a| T::lit(a.weight)).collect(),
        feature_names: annotations.iter().map(|a| a.name.clone()).collect(),
        start_states,
        terminal_states: vec![goal],
        layout: Some(GridLayout {
            width: grid.width,
            height: grid.height,
            positions: (0..n).map(|c| grid.position(c)).collect(),
            visited: vec![0; n],
        }),
    };
    finish(spec, mdp, start)
}

fn build_waypoint_mdp<T: Scalar>(
    spec: &DomainSpec,
    grid: &Grid,
    annotations: &[FeatureAnnotation],
    start: (usize, usize),
    id: String,
) -> Result<Domain<T>, DomainError> {
    if annotations
        .iter()
        .any(|a| !matches!(a.kind, AnnotationKind::Waypoint | AnnotationKind::Threat) || a.cells.len() != 1)
    {
        return Err(DomainError::InvalidAnnotation(
            "threats/waypoints features must be single-cell waypoint or threat annotations".into(),
        ));
    }
    let waypoint_features: Vec<usize> = (0..annotations.len())
        .filter(|i| annotations[*i].kind == AnnotationKind::Waypoint)
        .collect();
    let w = waypoint_features.len();
    if w == 0 {
        return Err(DomainError::InvalidAnnotation("at least one waypoint is required".into()));
    }
    if w > MAX_WAYPOINTS {
        return Err(DomainError::TooManyWaypoints(w));
    }
    let waypoint_cells: Vec<usize> = waypoint_features
        .iter()
        .map(|i| grid.cell_id(annotations[*i].cells[0]))
        .collect();
    if waypoint_cells.iter().collect::<BTreeSet<_>>().len() != w {
        return Err(DomainError::InvalidAnnotation("waypoints must occupy distinct cells".into()));
    }
    let cells = grid.cells();
    let masks = 1usize << w;
    let full = (masks - 1) as u32;
    let d = annotations.len();
    let state_of = |cell: usize, mask: u32| mask as usize * cells + cell;
    let n = cells * masks;

    let mut transitions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for s in 0..n {
        let cell = s % cells;
        let mask = (s / cells) as u32;
        let mut rows = Vec::new();
        let mut phis = Vec::new();
        for &mv in &grid.moves {
            if mask == full {
                rows.push(vec![Successor { state: s, probability: T::one() }]);
                phis.push(vec![T::zero(); d]);
                continue;
            }
            let mut phi = vec![0.0; d];
            let mut succ: Vec<(usize, f64)> = Vec::new();
            for (next_cell, p) in grid.successors(cell, mv) {
                let mut next_mask = mask;
                for (k, &feature) in waypoint_features.iter().enumerate() {
                    if waypoint_cells[k] == next_cell && mask & (1 << k) == 0 {
                        next_mask |= 1 << k;
                        phi[feature] += p;
                    }
                }
                for (i, a) in annotations.iter().enumerate() {
                    if a.kind == AnnotationKind::Threat
                        && grid.manhattan(next_cell, grid.cell_id(a.cells[0])) <= a.radius
                    {
                        phi[i] += p;
                    }
                }
                succ.push((state_of(next_cell, next_mask), p));
            }
            succ.sort_by_key(|(s, _)| *s);
            rows.push(to_successors(&succ));
            phis.push(phi.into_iter().map(T::lit).collect());
        }
        transitions.push(rows);
        features.push(phis);
    }
    let start = state_of(grid.cell_id(start), 0);
    let mut start_states: Vec<StateId> = (0..cells)
        .filter(|c| !waypoint_cells.contains(c))
        .map(|c| state_of(c, 0))
        .collect();
    if !start_states.contains(&start) {
        return Err(DomainError::InvalidAnnotation("start cell holds a waypoint".into()));
    }
    start_states.sort_by_key(|s| (*s != start, *s));
    let terminal_states: Vec<StateId> = (0..cells).map(|c| state_of(c, full)).collect();
    let mdp = LinearRewardMdp {
        id,
        num_states: n,
        action_names: grid.moves.iter().map(|m| m.name().to_string()).collect(),
        transitions,
        gamma: T::lit(spec.gamma()),
        horizon: spec.horizon(),
        features,
        weights: annotations.iter().map(|a| T::lit(a.weight)).collect(),
        feature_names: annotations.iter().map(|a| a.name.clone()).collect(),
        start_states,
        terminal_states,
        layout: Some(GridLayout {
            width: grid.width,
            height: grid.height,
            positions: (0..n).map(|s| grid.position(s % cells)).collect(),
            visited: (0..n).map(|s| (s / cells) as u32).collect(),
        }),
    };
    finish(spec, mdp, start)
}

fn to_successors<T: Scalar>(succ: &[(usize, f64)]) -> Vec<Successor<T>> {
    succ.iter()
        .map(|&(state, p)| Successor { state, probability: T::lit(p) })
        .collect()
}

fn finish<T: Scalar>(
    spec: &DomainSpec,
    mdp: LinearRewardMdp<T>,
    assessment_start: StateId,
) -> Result<Domain<T>, DomainError> {
    let violations = mdp.validate();
    if !violations.is_empty() {
        return Err(DomainError::Invalid(violations));
    }
    Ok(Domain {
        spec: spec.clone(),
        mdp,
        assessment_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{trajectory_reward, Trajectory};

    fn profile(d: usize, w: usize, h: usize, slip: f64) -> ComplexityProfile {
        ComplexityProfile::new(d, FeatureTier::Atomic, w, h, slip)
    }

    #[test]
    fn minimal_corridor() {
        let mdp: LinearRewardMdp<f64> = build_gridworld(&profile(1, 3, 1, 0.0), 0).unwrap();
        assert_eq!(mdp.num_states, 3);
        assert_eq!(mdp.action_names, vec!["left", "right"]);
        assert_eq!(mdp.weights, vec![1.0]);
        assert_eq!(mdp.terminal_states, vec![2]);
        // entering the goal from s1 is the only rewarded transition
        for (s, a) in mdp.state_action_pairs() {
            let expected = if (s, a) == (1, 1) { 1.0 } else { 0.0 };
            assert_eq!(mdp.reward(s, a), expected, "({s},{a})");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = ComplexityProfile::new(4, FeatureTier::Composite, 5, 4, 0.1);
        let a: Domain<f64> = build_domain(&DomainSpec::sampled(DomainKind::Gridworld, p), 3).unwrap();
        let b: Domain<f64> = build_domain(&DomainSpec::sampled(DomainKind::Gridworld, p), 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn stochastic_rows_sum_to_one() {
        let mdp: LinearRewardMdp<f64> = build_gridworld(&profile(3, 5, 5, 0.1), 7).unwrap();
        for (s, a) in mdp.state_action_pairs() {
            let total: f64 = mdp.transitions[s][a].iter().map(|x| x.probability).sum();
            assert!((total - 1.0).abs() <= 1e-9);
        }
        assert!(mdp.validate().is_empty());
    }

    #[test]
    fn too_many_features_rejected() {
        let err = build_gridworld::<f64>(&profile(3, 3, 1, 0.0), 0).unwrap_err();
        assert!(matches!(err, DomainError::TooManyFeatures { .. }), "{err:?}");
    }

    #[test]
    fn waypoint_state_space_is_product() {
        let mdp: LinearRewardMdp<f64> = build_threats_waypoints(&profile(3, 4, 4, 0.0), 1).unwrap();
        // d=3 -> 2 waypoints, 1 threat
        assert_eq!(mdp.num_states, 16 * 4);
    }

    #[test]
    fn seven_waypoints_rejected() {
        let err = build_threats_waypoints::<f64>(&profile(13, 6, 6, 0.0), 0).unwrap_err();
        assert_eq!(err, DomainError::TooManyWaypoints(7));
    }

    #[test]
    fn resolved_spec_regenerates_same_mdp() {
        let spec = DomainSpec::sampled(
            DomainKind::ThreatsWaypoints,
            ComplexityProfile::new(4, FeatureTier::Composite, 4, 4, 0.1),
        );
        let first: Domain<f64> = build_domain(&spec, 11).unwrap();
        let text = serde_json::to_string(&first.spec).unwrap();
        let reparsed: DomainSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(reparsed, first.spec);
        let second: Domain<f64> = build_domain(&reparsed, 999).unwrap();
        assert_eq!(second.mdp, first.mdp);
    }

    #[test]
    fn f32_generation_matches_structure() {
        let p = profile(2, 3, 3, 0.0);
        let a: LinearRewardMdp<f32> = build_gridworld(&p, 5).unwrap();
        let b: LinearRewardMdp<f64> = build_gridworld(&p, 5).unwrap();
        assert_eq!(a.num_states, b.num_states);
        assert_eq!(a.feature_names, b.feature_names);
        assert!(a.validate().is_empty());
    }

    #[test]
    fn waypoint_feature_fires_once() {
        let spec = DomainSpec {
            kind: DomainKind::ThreatsWaypoints,
            profile: profile(1, 3, 1, 0.0),
            gamma: Some(0.5),
            horizon: Some(6),
            start: None,
            features: Some(vec![FeatureAnnotation {
                name: "waypoint_1".into(),
                kind: AnnotationKind::Waypoint,
                cells: vec![(0, 1)],
                radius: 0,
                weight: 2.0,
            }]),
        };
        let domain: Domain<f64> = build_domain(&spec, 0).unwrap();
        let mdp = &domain.mdp;
        // 3 cells x 2 masks; entering the waypoint reaches the terminal full mask
        assert_eq!(mdp.num_states, 6);
        let traj = Trajectory::from_pairs(&[(0, 1)]);
        assert_eq!(trajectory_reward(mdp, &traj).unwrap(), 2.0);
        assert!(mdp.is_terminal(4));
    }
}
