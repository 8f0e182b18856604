//! Reward-understanding metrics (FR, FS, PE, BD and their composites) and
//! preference-query generation.

mod metrics;
mod queries;

use thiserror::Error;

pub use metrics::{
    compose, feature_iou, ground_truth_belief, score_bd, score_bd_detailed, score_feature_belief,
    score_pe, BdScore, FeatureBeliefResponse, GroundTruthBelief, MetricProvenance, MetricReport,
    PreferenceResponses, ResponseSource,
};
pub use queries::{
    build_query_pool, entropy, first_choice_probabilities, gen_preference_queries, random_rollout,
    sample_unit_ball, PreferenceQuery, QueryBelief, QuerySelection, SelectionStep,
};

use crate::mdp::TrajectoryError;
use crate::planning::PlanningError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssessmentError {
    #[error("comparison mentions unclaimed feature {0}")]
    UnclaimedComparison(String),
    #[error("comparison between {0} and {1} is contradictory")]
    ContradictoryComparison(String, String),
    #[error("no preference responses to score")]
    NoPreferenceResponses,
    #[error("{responses} responses for {truth} queries")]
    ResponseCountMismatch { responses: usize, truth: usize },
    #[error("demonstration is empty")]
    EmptyDemonstration,
    #[error("optimal return {0} is not positive; domain is unfit for demonstration scoring")]
    NonPositiveOptimum(f64),
    #[error("metric {name} = {value} outside [0, 1]")]
    MetricOutOfRange { name: &'static str, value: f64 },
    #[error("need at least two belief samples, got {0}")]
    TooFewBeliefSamples(usize),
    #[error("query pool is empty")]
    EmptyPool,
    #[error("{requested} queries requested from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("belief sample has dimension {got}, expected {expected}")]
    SampleDimension { expected: usize, got: usize },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
}
