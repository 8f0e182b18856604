//! Directional read-out of the four hypotheses from a results table. Reports
//! directions and mean differences only; no significance testing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::simulate::ResultRow;
use super::ExperimentError;
use crate::domains::{ComplexityLevel, Situational};
use crate::explainers::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Consistent,
    Inconsistent,
    NoDirection,
}

impl Direction {
    fn of(effect: f64) -> Self {
        if effect > 0.0 {
            Direction::Consistent
        } else if effect < 0.0 {
            Direction::Inconsistent
        } else {
            Direction::NoDirection
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub hypothesis: String,
    pub direction: Direction,
    /// Mean-C difference in the hypothesized direction (positive supports it).
    pub effect: f64,
    pub details: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1: HypothesisOutcome,
    pub h2: HypothesisOutcome,
    pub h3: HypothesisOutcome,
    pub h4: HypothesisOutcome,
}

fn category_means<'a>(rows: impl Iterator<Item = &'a ResultRow>) -> BTreeMap<Category, f64> {
    let mut sums: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    for row in rows {
        let entry = sums.entry(row.category).or_default();
        entry.0 += row.c;
        entry.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn missing_cells(rows: &[ResultRow]) -> Vec<String> {
    let mut missing = Vec::new();
    let modalities: BTreeSet<_> = rows.iter().map(|r| r.modality).collect();
    let domains: BTreeSet<&str> = rows.iter().map(|r| r.domain.as_str()).collect();
    for domain in &domains {
        for m in &modalities {
            if !rows.iter().any(|r| r.domain == *domain && r.modality == *m) {
                missing.push(format!("{domain}/{}", m.as_str()));
            }
        }
    }
    for category in [Category::FeatureSpace, Category::PolicySpace] {
        if !modalities.iter().any(|m| m.category() == category) {
            missing.push(format!("any {} modality", category.as_str()));
        }
    }
    let unloaded = |level| {
        rows.iter()
            .any(|r| r.situational == Situational::None && r.complexity == level)
    };
    if !unloaded(ComplexityLevel::Low) {
        missing.push("a low-complexity domain without load".into());
    }
    if !unloaded(ComplexityLevel::High) {
        missing.push("a high-complexity domain without load".into());
    }
    let loaded: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.situational == Situational::MonitoringTask)
        .collect();
    if loaded.is_empty() {
        missing.push("a loaded domain".into());
    }
    for row in loaded {
        match &row.baseline {
            None => missing.push(format!("baseline of {}", row.domain)),
            Some(b) if !domains.contains(b.as_str()) => missing.push(format!("baseline domain {b}")),
            Some(_) => {}
        }
    }
    missing.sort();
    missing.dedup();
    missing
}

fn group_outcome(rows: &[ResultRow], level: ComplexityLevel, hypothesis: &str, favoured: Category) -> HypothesisOutcome {
    let means = category_means(
        rows.iter()
            .filter(|r| r.situational == Situational::None && r.complexity == level),
    );
    let feature = means[&Category::FeatureSpace];
    let policy = means[&Category::PolicySpace];
    let effect = match favoured {
        Category::FeatureSpace => feature - policy,
        Category::PolicySpace => policy - feature,
    };
    HypothesisOutcome {
        hypothesis: hypothesis.into(),
        direction: Direction::of(effect),
        effect,
        details: BTreeMap::from([
            ("feature_space_c".to_string(), feature),
            ("policy_space_c".to_string(), policy),
        ]),
    }
}

/// H1/H2 compare category means within the unloaded low- and high-complexity
/// domains; H3 checks the best category is the same with and without load for
/// every matched domain pair; H4 checks loaded C is below unloaded C for every
/// category. Fails listing the missing cells when the table is incomplete.
pub fn analyze_hypotheses(rows: &[ResultRow]) -> Result<HypothesisReport, ExperimentError> {
    let missing = missing_cells(rows);
    if !missing.is_empty() {
        return Err(ExperimentError::MissingCells(missing));
    }
    let h1 = group_outcome(rows, ComplexityLevel::Low, "H1", Category::FeatureSpace);
    let h2 = group_outcome(rows, ComplexityLevel::High, "H2", Category::PolicySpace);

    let pairs: BTreeSet<(&str, &str)> = rows
        .iter()
        .filter_map(|r| r.baseline.as_deref().map(|b| (r.domain.as_str(), b)))
        .collect();
    let mut h3_details = BTreeMap::new();
    let mut h4_diffs: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    let mut same_best = true;
    let mut any_tie = false;
    let mut gap_changes = Vec::new();
    for (loaded, base) in &pairs {
        let loaded_means = category_means(rows.iter().filter(|r| r.domain == *loaded));
        let base_means = category_means(rows.iter().filter(|r| r.domain == *base));
        let gap = |m: &BTreeMap<Category, f64>| m[&Category::FeatureSpace] - m[&Category::PolicySpace];
        let (g_loaded, g_base) = (gap(&loaded_means), gap(&base_means));
        any_tie |= g_loaded == 0.0 || g_base == 0.0;
        same_best &= (g_loaded > 0.0) == (g_base > 0.0);
        gap_changes.push(g_loaded - g_base);
        h3_details.insert(format!("{base}/feature_minus_policy"), g_base);
        h3_details.insert(format!("{loaded}/feature_minus_policy"), g_loaded);
        for category in [Category::FeatureSpace, Category::PolicySpace] {
            h4_diffs
                .entry(category)
                .or_default()
                .push(loaded_means[&category] - base_means[&category]);
        }
    }
    let h3 = HypothesisOutcome {
        hypothesis: "H3".into(),
        direction: if any_tie {
            Direction::NoDirection
        } else if same_best {
            Direction::Consistent
        } else {
            Direction::Inconsistent
        },
        effect: gap_changes.iter().sum::<f64>() / gap_changes.len() as f64,
        details: h3_details,
    };

    let h4_means: BTreeMap<Category, f64> = h4_diffs
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let h4_direction = if h4_means.values().all(|d| *d < 0.0) {
        Direction::Consistent
    } else if h4_means.values().all(|d| *d == 0.0) {
        Direction::NoDirection
    } else {
        Direction::Inconsistent
    };
    let h4 = HypothesisOutcome {
        hypothesis: "H4".into(),
        direction: h4_direction,
        effect: -h4_means.values().sum::<f64>() / h4_means.len() as f64,
        details: h4_means
            .iter()
            .map(|(k, v)| (format!("{}/loaded_minus_unloaded", k.as_str()), *v))
            .collect(),
    };
    Ok(HypothesisReport { h1, h2, h3, h4 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::Modality;

    /// One row per (domain, modality) of the default grid, with C from `c`.
    fn table(c: impl Fn(&str, Category) -> f64) -> Vec<ResultRow> {
        let domains = [
            ("gridworld_simple", ComplexityLevel::Low, Situational::None, None),
            ("threats_waypoints", ComplexityLevel::Low, Situational::None, None),
            ("threats_waypoints_loaded", ComplexityLevel::Low, Situational::MonitoringTask, Some("threats_waypoints")),
            ("gridworld_large", ComplexityLevel::High, Situational::None, None),
        ];
        let mut rows = Vec::new();
        for (domain, complexity, situational, baseline) in domains {
            for modality in Modality::ALL {
                let value = c(domain, modality.category());
                rows.push(ResultRow {
                    condition: rows.len(),
                    domain: domain.into(),
                    modality,
                    category: modality.category(),
                    complexity,
                    situational,
                    baseline: baseline.map(String::from),
                    n: 1,
                    fr: 0.0,
                    fs: 0.0,
                    pe: 0.0,
                    bd: 0.0,
                    f: 0.0,
                    p: 0.0,
                    c: value,
                });
            }
        }
        rows
    }

    #[test]
    fn feature_space_ahead_in_low_complexity() {
        let rows = table(|d, cat| match (d, cat) {
            ("gridworld_large", _) => 2.0,
            (_, Category::FeatureSpace) => 3.5,
            _ => 2.5,
        });
        let report = analyze_hypotheses(&rows).unwrap();
        assert_eq!(report.h1.direction, Direction::Consistent);
        assert!((report.h1.effect - 1.0).abs() < 1e-12);
        assert_eq!(report.h2.direction, Direction::NoDirection);
    }

    #[test]
    fn identical_means_have_no_direction() {
        let report = analyze_hypotheses(&table(|_, _| 2.0)).unwrap();
        for h in [&report.h1, &report.h2, &report.h3, &report.h4] {
            assert_eq!(h.direction, Direction::NoDirection, "{}", h.hypothesis);
        }
    }

    #[test]
    fn loaded_below_unloaded() {
        let rows = table(|d, cat| {
            let base = if cat == Category::FeatureSpace { 3.0 } else { 2.0 };
            if d.ends_with("_loaded") { base - 0.5 } else { base }
        });
        let report = analyze_hypotheses(&rows).unwrap();
        assert_eq!(report.h4.direction, Direction::Consistent);
        assert!((report.h4.effect - 0.5).abs() < 1e-12);
        assert_eq!(report.h3.direction, Direction::Consistent);
    }

    #[test]
    fn best_category_flips_under_load() {
        let rows = table(|d, cat| match (d.ends_with("_loaded"), cat) {
            (false, Category::FeatureSpace) | (true, Category::PolicySpace) => 3.0,
            _ => 2.0,
        });
        assert_eq!(analyze_hypotheses(&rows).unwrap().h3.direction, Direction::Inconsistent);
    }

    #[test]
    fn missing_cells_are_listed() {
        let mut rows = table(|_, _| 1.0);
        rows.retain(|r| !(r.domain == "gridworld_large" && r.modality == Modality::Abstraction));
        rows.retain(|r| r.situational == Situational::None);
        match analyze_hypotheses(&rows) {
            Err(ExperimentError::MissingCells(cells)) => {
                assert!(cells.contains(&"gridworld_large/abstraction".to_string()));
                assert!(cells.contains(&"a loaded domain".to_string()));
            }
            other => panic!("expected missing cells, got {other:?}"),
        }
    }
}
