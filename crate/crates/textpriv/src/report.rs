//! Report assembly: per-category scores, unweighted category averages, and
//! effect sizes of every run against a designated baseline.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bias::{cohens_d, BiasError};

/// One category's score within one run of one benchmark section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    pub score: f64,
    pub count: u64,
}

/// All category scores of one run (one epsilon label) in one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub epsilon: String,
    pub categories: Vec<CategoryScore>,
}

/// A category row of the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub category: String,
    pub score: f64,
    pub count: u64,
    /// Cohen's d against the baseline; `None` on the baseline run itself.
    pub effect_size: Option<f64>,
}

/// Report for one run: category rows plus the unweighted average row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereotypeReport {
    pub epsilon: String,
    pub baseline_epsilon: String,
    pub rows: Vec<ReportRow>,
    /// Unweighted mean of the category scores.
    pub average: f64,
    pub average_effect_size: Option<f64>,
}

/// Build one report per run. The baseline run must be present; every
/// category of every run must exist in the baseline. Effect sizes on the
/// average row compare the two runs' averages.
pub fn build_report(
    runs: &[RunScores],
    baseline_epsilon: &str,
) -> Result<Vec<StereotypeReport>, BiasError> {
    let baseline = runs
        .iter()
        .find(|r| r.epsilon == baseline_epsilon)
        .ok_or_else(|| BiasError::BaselineMissing(baseline_epsilon.to_string()))?;
    let baseline_score = |category: &str| -> Option<f64> {
        baseline
            .categories
            .iter()
            .find(|c| c.category == category)
            .map(|c| c.score)
    };
    let baseline_average = average(&baseline.categories)?;

    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        let is_baseline = run.epsilon == baseline_epsilon;
        let mut rows = Vec::with_capacity(run.categories.len());
        for cat in &run.categories {
            let effect_size = if is_baseline {
                None
            } else {
                let base = baseline_score(&cat.category).ok_or_else(|| {
                    BiasError::CategoryMissingFromBaseline(cat.category.clone())
                })?;
                Some(cohens_d(cat.score, base)?)
            };
            rows.push(ReportRow {
                category: cat.category.clone(),
                score: cat.score,
                count: cat.count,
                effect_size,
            });
        }
        let avg = average(&run.categories)?;
        let average_effect_size = if is_baseline {
            None
        } else {
            Some(cohens_d(avg, baseline_average)?)
        };
        reports.push(StereotypeReport {
            epsilon: run.epsilon.clone(),
            baseline_epsilon: baseline_epsilon.to_string(),
            rows,
            average: avg,
            average_effect_size,
        });
    }
    Ok(reports)
}

fn average(categories: &[CategoryScore]) -> Result<f64, BiasError> {
    if categories.is_empty() {
        return Err(BiasError::NoChoices);
    }
    Ok(categories.iter().map(|c| c.score).sum::<f64>() / categories.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn run(eps: &str, scores: &[(&str, f64)]) -> RunScores {
        RunScores {
            epsilon: eps.into(),
            categories: scores
                .iter()
                .map(|(c, s)| CategoryScore {
                    category: (*c).into(),
                    score: *s,
                    count: 100,
                })
                .collect(),
        }
    }

    // Published intrasentence proportions; the average row must come out at
    // .6054 and the race effect size at eps 5 must round to -.27.
    #[test]
    fn published_intrasentence_rows_reproduce() {
        let runs = vec![
            run(
                "inf",
                &[
                    ("gender", 0.6196),
                    ("race", 0.6060),
                    ("religion", 0.5897),
                    ("profession", 0.6062),
                ],
            ),
            run(
                "5",
                &[
                    ("gender", 0.5020),
                    ("race", 0.4709),
                    ("religion", 0.6538),
                    ("profession", 0.5259),
                ],
            ),
        ];
        let reports = build_report(&runs, "inf").unwrap();
        assert!((reports[0].average - 0.605375).abs() < 1e-12);
        assert!(reports[0].rows.iter().all(|r| r.effect_size.is_none()));
        let race = reports[1]
            .rows
            .iter()
            .find(|r| r.category == "race")
            .unwrap();
        assert!((race.effect_size.unwrap() - (-0.271)).abs() < 5e-4);
    }

    #[test]
    fn run_equal_to_baseline_has_zero_effect_sizes() {
        let a = run("inf", &[("gender", 0.6), ("race", 0.55)]);
        let mut b = a.clone();
        b.epsilon = "10".into();
        let reports = build_report(&[a, b], "inf").unwrap();
        for row in &reports[1].rows {
            assert_eq!(row.effect_size, Some(0.0));
        }
        assert_eq!(reports[1].average_effect_size, Some(0.0));
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let runs = vec![run("10", &[("gender", 0.5)])];
        assert_eq!(
            build_report(&runs, "inf"),
            Err(BiasError::BaselineMissing("inf".into()))
        );
    }

    #[test]
    fn category_absent_from_baseline_is_an_error() {
        let runs = vec![
            run("inf", &[("gender", 0.5)]),
            run("10", &[("gender", 0.5), ("age", 0.6)]),
        ];
        assert_eq!(
            build_report(&runs, "inf"),
            Err(BiasError::CategoryMissingFromBaseline("age".into()))
        );
    }

    #[test]
    fn report_json_uses_stable_keys() {
        let runs = vec![
            run("inf", &[("gender", 0.6)]),
            run("5", &[("gender", 0.5)]),
        ];
        let reports = build_report(&runs, "inf").unwrap();
        let json = serde_json::to_string(&reports[1]).unwrap();
        for key in ["category", "score", "count", "effect_size", "epsilon"] {
            assert!(json.contains(key), "missing key {key} in {json}");
        }
    }
}
