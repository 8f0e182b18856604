//! Reward explanations for linear-reward MDPs and the machinery to measure
//! how well a (real or simulated) person understands a reward function after
//! seeing one.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiment runner uses.

pub mod assessment;
pub mod choice;
pub mod domains;
pub mod experiment;
pub mod explainers;
pub mod human;
pub mod mdp;
pub mod planning;
mod regression;
pub mod scalar;

pub use scalar::Scalar;

pub type Mdp = mdp::LinearRewardMdp<f64>;
pub type Mdp32 = mdp::LinearRewardMdp<f32>;
pub type QTable = planning::QTable<f64>;
pub type QTable32 = planning::QTable<f32>;
pub type DecomposedQTable = planning::DecomposedQTable<f64>;
pub type Domain = domains::Domain<f64>;
pub type ConceptSet = domains::ConceptSet<f64>;
pub type Explanation = explainers::Explanation<f64>;
pub type Explanation32 = explainers::Explanation<f32>;
pub type PreferenceQuery = assessment::PreferenceQuery;
