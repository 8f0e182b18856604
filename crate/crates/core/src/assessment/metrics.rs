use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::AssessmentError;
use crate::mdp::{discounted_return, LinearRewardMdp, Trajectory};
use crate::planning::{greedy_rollout, Objective, QTable};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    FreeResponse,
    SubSelection,
}

/// Claimed features and strict pairwise weight orderings `(a, b)` meaning `w_a > w_b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBeliefResponse {
    pub claimed_features: BTreeSet<String>,
    pub comparisons: BTreeSet<(String, String)>,
    pub source: ResponseSource,
}

impl FeatureBeliefResponse {
    pub fn empty(source: ResponseSource) -> Self {
        Self {
            claimed_features: BTreeSet::new(),
            comparisons: BTreeSet::new(),
            source,
        }
    }

    pub fn validate(&self) -> Result<(), AssessmentError> {
        for (a, b) in &self.comparisons {
            for name in [a, b] {
                if !self.claimed_features.contains(name) {
                    return Err(AssessmentError::UnclaimedComparison(name.clone()));
                }
            }
            if a == b || self.comparisons.contains(&(b.clone(), a.clone())) {
                return Err(AssessmentError::ContradictoryComparison(a.clone(), b.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthBelief {
    pub features: BTreeSet<String>,
    pub comparisons: BTreeSet<(String, String)>,
}

/// Features with nonzero weight and every strict ordering among them.
pub fn ground_truth_belief<T: Scalar>(mdp: &LinearRewardMdp<T>) -> GroundTruthBelief {
    let used: Vec<usize> = (0..mdp.feature_dim())
        .filter(|i| mdp.weights[*i] != T::zero())
        .collect();
    let mut comparisons = BTreeSet::new();
    for &i in &used {
        for &j in &used {
            if mdp.weights[i] > mdp.weights[j] {
                comparisons.insert((mdp.feature_names[i].clone(), mdp.feature_names[j].clone()));
            }
        }
    }
    GroundTruthBelief {
        features: used.iter().map(|i| mdp.feature_names[*i].clone()).collect(),
        comparisons,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum BeliefElement<'a> {
    Feature(&'a str),
    Ordering(&'a str, &'a str),
}

fn elements<'a>(
    features: &'a BTreeSet<String>,
    comparisons: &'a BTreeSet<(String, String)>,
) -> BTreeSet<BeliefElement<'a>> {
    features
        .iter()
        .map(|f| BeliefElement::Feature(f))
        .chain(comparisons.iter().map(|(a, b)| BeliefElement::Ordering(a, b)))
        .collect()
}

/// Intersection over union of `(F ∪ W)` element sets; features and
/// orderings are distinct elements. Two empty sets score 1.
pub fn feature_iou(
    features_a: &BTreeSet<String>,
    comparisons_a: &BTreeSet<(String, String)>,
    features_b: &BTreeSet<String>,
    comparisons_b: &BTreeSet<(String, String)>,
) -> f64 {
    let a = elements(features_a, comparisons_a);
    let b = elements(features_b, comparisons_b);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// FR / FS score of a response against the ground truth.
pub fn score_feature_belief(
    response: &FeatureBeliefResponse,
    truth: &GroundTruthBelief,
) -> Result<f64, AssessmentError> {
    response.validate()?;
    Ok(feature_iou(
        &response.claimed_features,
        &response.comparisons,
        &truth.features,
        &truth.comparisons,
    ))
}

/// Chosen option indices and the truly better option of each query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceResponses {
    pub responses: Vec<usize>,
    pub truth: Vec<usize>,
}

/// Share of queries answered with the truly better option.
pub fn score_pe(responses: &PreferenceResponses) -> Result<f64, AssessmentError> {
    if responses.truth.is_empty() {
        return Err(AssessmentError::NoPreferenceResponses);
    }
    if responses.responses.len() != responses.truth.len() {
        return Err(AssessmentError::ResponseCountMismatch {
            responses: responses.responses.len(),
            truth: responses.truth.len(),
        });
    }
    let correct = responses
        .responses
        .iter()
        .zip(&responses.truth)
        .filter(|(h, r)| h == r)
        .count();
    Ok(correct as f64 / responses.truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BdScore<T> {
    /// Clamped score in `[0, 1]`.
    pub score: T,
    /// `1 − regret / R(ξ*)` before clamping.
    pub raw: T,
    pub optimal_return: T,
    pub demo_return: T,
}

/// Complement of normalized regret of a demonstration, clamped to `[0, 1]`.
pub fn score_bd<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q_max: &QTable<T>,
    demo: &Trajectory,
) -> Result<T, AssessmentError> {
    score_bd_detailed(mdp, q_max, demo).map(|s| s.score)
}

pub fn score_bd_detailed<T: Scalar>(
    mdp: &LinearRewardMdp<T>,
    q_max: &QTable<T>,
    demo: &Trajectory,
) -> Result<BdScore<T>, AssessmentError> {
    let start = demo.start().ok_or(AssessmentError::EmptyDemonstration)?;
    mdp.check_episode(demo)?;
    let optimal = greedy_rollout(mdp, q_max, start, Objective::Maximize)?;
    let optimal_return = discounted_return(mdp, &mdp.weights, &optimal);
    if optimal_return <= T::zero() {
        return Err(AssessmentError::NonPositiveOptimum(optimal_return.as_f64()));
    }
    let demo_return = discounted_return(mdp, &mdp.weights, demo);
    let raw = T::one() - (optimal_return - demo_return) / optimal_return;
    Ok(BdScore {
        score: raw.max(T::zero()).min(T::one()),
        raw,
        optimal_return,
        demo_return,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricProvenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fr_elements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs_elements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_queries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bd_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bd_regret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fr: f64,
    pub fs: f64,
    pub pe: f64,
    pub bd: f64,
    /// `fr + fs`.
    pub f: f64,
    /// `pe + bd`.
    pub p: f64,
    /// `f + p`.
    pub c: f64,
    #[serde(default)]
    pub provenance: MetricProvenance,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 7] = ["fr", "fs", "pe", "bd", "f", "p", "c"];

    pub fn values(&self) -> [f64; 7] {
        [self.fr, self.fs, self.pe, self.bd, self.f, self.p, self.c]
    }
}

/// Sums the four normalized metrics into the feature, policy and overall composites.
pub fn compose(fr: f64, fs: f64, pe: f64, bd: f64) -> Result<MetricReport, AssessmentError> {
    for (name, v) in [("fr", fr), ("fs", fs), ("pe", pe), ("bd", bd)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(AssessmentError::MetricOutOfRange { name, value: v });
        }
    }
    let f = fr + fs;
    let p = pe + bd;
    Ok(MetricReport {
        fr,
        fs,
        pe,
        bd,
        f,
        p,
        c: f + p,
        provenance: MetricProvenance::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{
        build_domain, AnnotationKind, ComplexityProfile, DomainKind, DomainSpec, FeatureAnnotation,
        FeatureTier,
    };
    use crate::planning::value_iteration;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn pairs(items: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn response(f: &[&str], w: &[(&str, &str)]) -> FeatureBeliefResponse {
        FeatureBeliefResponse {
            claimed_features: set(f),
            comparisons: pairs(w),
            source: ResponseSource::SubSelection,
        }
    }

    fn truth(f: &[&str], w: &[(&str, &str)]) -> GroundTruthBelief {
        GroundTruthBelief { features: set(f), comparisons: pairs(w) }
    }

    #[test]
    fn identical_beliefs_score_one() {
        let r = response(&["f1", "f2"], &[("f1", "f2")]);
        let t = truth(&["f1", "f2"], &[("f1", "f2")]);
        assert_eq!(score_feature_belief(&r, &t).unwrap(), 1.0);
    }

    #[test]
    fn partial_overlap() {
        let r = response(&["f1", "f2"], &[("f1", "f2")]);
        let t = truth(&["f1", "f3"], &[("f1", "f3")]);
        assert!((score_feature_belief(&r, &t).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empty_response_scores_zero() {
        let r = FeatureBeliefResponse::empty(ResponseSource::FreeResponse);
        let t = truth(&["f1"], &[]);
        assert_eq!(score_feature_belief(&r, &t).unwrap(), 0.0);
        assert_eq!(score_feature_belief(&r, &truth(&[], &[])).unwrap(), 1.0);
    }

    #[test]
    fn unclaimed_comparison_rejected() {
        let r = response(&["f1"], &[("f1", "f2")]);
        assert_eq!(
            score_feature_belief(&r, &truth(&["f1"], &[])).unwrap_err(),
            AssessmentError::UnclaimedComparison("f2".into())
        );
        let r = response(&["f1", "f2"], &[("f1", "f2"), ("f2", "f1")]);
        assert!(matches!(r.validate(), Err(AssessmentError::ContradictoryComparison(..))));
    }

    fn weights_mdp(weights: Vec<f64>) -> LinearRewardMdp<f64> {
        let mut mdp = crate::mdp::fixtures::one_step(vec![0.0; weights.len()], weights, 0.5);
        mdp.feature_names = (1..=mdp.weights.len()).map(|i| format!("f{i}")).collect();
        mdp
    }

    #[test]
    fn ground_truth_orderings() {
        assert_eq!(ground_truth_belief(&weights_mdp(vec![3.0, 1.0])).comparisons, pairs(&[("f1", "f2")]));
        assert!(ground_truth_belief(&weights_mdp(vec![2.0, 2.0])).comparisons.is_empty());
        let t = ground_truth_belief(&weights_mdp(vec![1.0, 2.0, 3.0]));
        assert_eq!(t.comparisons, pairs(&[("f2", "f1"), ("f3", "f1"), ("f3", "f2")]));
    }

    #[test]
    fn pe_examples() {
        let r = |h: Vec<usize>, t: Vec<usize>| PreferenceResponses { responses: h, truth: t };
        assert_eq!(score_pe(&r(vec![0, 1, 1, 0], vec![0, 1, 1, 1])).unwrap(), 0.75);
        assert_eq!(score_pe(&r(vec![1, 0], vec![1, 0])).unwrap(), 1.0);
        assert_eq!(score_pe(&r(vec![1, 0], vec![0, 1])).unwrap(), 0.0);
        assert_eq!(score_pe(&r(vec![], vec![])).unwrap_err(), AssessmentError::NoPreferenceResponses);
    }

    #[test]
    fn compose_examples() {
        let all = compose(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((all.f, all.p, all.c), (2.0, 2.0, 4.0));
        assert_eq!(compose(0.0, 0.0, 0.0, 0.0).unwrap().c, 0.0);
        let r = compose(0.5, 0.25, 1.0, 0.8).unwrap();
        assert!((r.f - 0.75).abs() < 1e-15);
        assert!((r.p - 1.8).abs() < 1e-15);
        assert!((r.c - 2.55).abs() < 1e-15);
        assert!(matches!(compose(1.2, 0.0, 0.0, 0.0), Err(AssessmentError::MetricOutOfRange { .. })));
    }

    /// Corridor with a unit goal reward and γ = 0.9.
    fn scored_chain() -> (LinearRewardMdp<f64>, QTable<f64>) {
        let spec = DomainSpec {
            kind: DomainKind::Gridworld,
            profile: ComplexityProfile::new(1, FeatureTier::Atomic, 3, 1, 0.0),
            gamma: Some(0.9),
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
        let mdp = build_domain::<f64>(&spec, 0).unwrap().mdp;
        let q = value_iteration(&mdp, 1e-12).unwrap();
        (mdp, q)
    }

    #[test]
    fn bd_optimal_demo_scores_one() {
        let (mdp, q) = scored_chain();
        let demo = Trajectory::from_pairs(&[(0, 1), (1, 1)]);
        assert_eq!(score_bd(&mdp, &q, &demo).unwrap(), 1.0);
    }

    #[test]
    fn bd_ratio_and_clamp() {
        // R* = 0.9; a demo stalling one step first earns 0.81 -> 0.9
        let (mdp, q) = scored_chain();
        let demo = Trajectory::from_pairs(&[(0, 0), (0, 1), (1, 1)]);
        let s = score_bd_detailed(&mdp, &q, &demo).unwrap();
        assert!((s.score - 0.9).abs() < 1e-12);
        // negative demo return clamps to zero
        let mut neg = mdp.clone();
        neg.features[0][0] = vec![-5.0];
        let q = value_iteration(&neg, 1e-12).unwrap();
        let s = score_bd_detailed(&neg, &q, &Trajectory::from_pairs(&[(0, 0)])).unwrap();
        assert!(s.raw < 0.0);
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn bd_requires_positive_optimum() {
        let (mdp, _) = scored_chain();
        let flipped = mdp.negated();
        let q = value_iteration(&flipped, 1e-12).unwrap();
        let err = score_bd(&flipped, &q, &Trajectory::from_pairs(&[(0, 0)])).unwrap_err();
        assert!(matches!(err, AssessmentError::NonPositiveOptimum(_)));
    }

    fn arb_belief() -> impl Strategy<Value = (BTreeSet<String>, BTreeSet<(String, String)>)> {
        let names = ["a", "b", "c", "d"];
        (proptest::collection::btree_set(0usize..4, 0..4), proptest::collection::vec((0usize..4, 0usize..4), 0..6))
            .prop_map(move |(fs, ps)| {
                let features: BTreeSet<String> = fs.iter().map(|i| names[*i].to_string()).collect();
                let comparisons = ps
                    .into_iter()
                    .filter(|(i, j)| i < j && fs.contains(i) && fs.contains(j))
                    .map(|(i, j)| (names[i].to_string(), names[j].to_string()))
                    .collect();
                (features, comparisons)
            })
    }

    proptest! {
        #[test]
        fn iou_is_bounded_and_symmetric((fa, wa) in arb_belief(), (fb, wb) in arb_belief()) {
            let ab = feature_iou(&fa, &wa, &fb, &wb);
            let ba = feature_iou(&fb, &wb, &fa, &wa);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 1.0, fa == fb && wa == wb);
        }
    }
}
