//! Bench orchestration: run the loaded benchmark items against a scorer,
//! aggregate per-category stereotype scores, and (given a baseline run)
//! assemble the effect-size report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use textpriv::bias::{
    crows_preference, pseudo_perplexity, stereoset_intersentence_choice,
    stereoset_intrasentence_choice, stereotype_score, BiasError, Choice, CrowsCategory,
    CrowsPair, OptionLabel, Preference, StereoCategory, StereoSetItem, StereoSetTask,
};
use textpriv::report::{build_report, CategoryScore, RunScores, StereotypeReport};
use textpriv::scoring::MaskedLmScorer;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error("nothing to do: no benchmark inputs were given")]
    NoInputs,
    #[error("section {0:?} is present in this run but missing from the baseline")]
    SectionMissingFromBaseline(String),
}

/// Loaded benchmark material for one run.
#[derive(Debug, Default)]
pub struct BenchInputs {
    pub stereoset: Option<Vec<StereoSetItem>>,
    pub crows: Option<Vec<CrowsPair>>,
    pub wikitext: Option<Vec<Vec<String>>>,
}

/// Win/tie tallies of the three-way choices, kept for diagnostics. The
/// unrelated option never enters the stereotype score, but seeing it win
/// often is a signal the scorer is not meaningfully ranking options.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceTally {
    pub stereotype: u64,
    pub anti_stereotype: u64,
    pub unrelated: u64,
    pub tie: u64,
}

impl ChoiceTally {
    fn record(&mut self, choice: &Choice) {
        match choice {
            Choice::Single(OptionLabel::Stereotype) => self.stereotype += 1,
            Choice::Single(OptionLabel::AntiStereotype) => self.anti_stereotype += 1,
            Choice::Single(OptionLabel::Unrelated) => self.unrelated += 1,
            Choice::Tie(_) => self.tie += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intrasentence_choices: Option<ChoiceTally>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intersentence_choices: Option<ChoiceTally>,
}

/// One complete bench run, serialized as the run JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub epsilon: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stereoset_intrasentence: Option<Vec<CategoryScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stereoset_intersentence: Option<Vec<CategoryScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crows_pairs: Option<Vec<CategoryScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_perplexity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

/// Effect-size report against a baseline, one entry per section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub baseline_epsilon: String,
    pub sections: BTreeMap<String, StereotypeReport>,
}

fn group_scores<C: Copy + Eq>(
    ordered: &[C],
    name: impl Fn(C) -> &'static str,
    results: &[(C, Preference)],
) -> Result<Vec<CategoryScore>, BiasError> {
    let mut out = Vec::new();
    for &cat in ordered {
        let prefs: Vec<Preference> = results
            .iter()
            .filter(|(c, _)| *c == cat)
            .map(|(_, p)| *p)
            .collect();
        if prefs.is_empty() {
            continue;
        }
        out.push(CategoryScore {
            category: name(cat).to_string(),
            score: stereotype_score(&prefs)?,
            count: prefs.len() as u64,
        });
    }
    Ok(out)
}

/// Score every input against the scorer. Items are scored concurrently;
/// aggregation is an order-independent fold, so the result is deterministic.
pub fn run_bench(
    scorer: &dyn MaskedLmScorer,
    inputs: &BenchInputs,
    epsilon_label: &str,
) -> Result<BenchRun, BenchError> {
    if inputs.stereoset.is_none() && inputs.crows.is_none() && inputs.wikitext.is_none() {
        return Err(BenchError::NoInputs);
    }
    let mut run = BenchRun {
        epsilon: epsilon_label.to_string(),
        stereoset_intrasentence: None,
        stereoset_intersentence: None,
        crows_pairs: None,
        pseudo_perplexity: None,
        diagnostics: None,
    };

    if let Some(items) = &inputs.stereoset {
        let scored: Result<Vec<(StereoSetTask, StereoCategory, Preference, Choice)>, BiasError> =
            items
                .par_iter()
                .map(|item| {
                    let scores = match item.task {
                        StereoSetTask::Intrasentence => {
                            stereoset_intrasentence_choice(scorer, item)?
                        }
                        StereoSetTask::Intersentence => {
                            stereoset_intersentence_choice(scorer, item)?
                        }
                    };
                    Ok((item.task, item.category, scores.preference(), scores.choice()))
                })
                .collect();
        let scored = scored?;
        let mut intra_tally = ChoiceTally::default();
        let mut inter_tally = ChoiceTally::default();
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for (task, cat, pref, choice) in scored {
            match task {
                StereoSetTask::Intrasentence => {
                    intra_tally.record(&choice);
                    intra.push((cat, pref));
                }
                StereoSetTask::Intersentence => {
                    inter_tally.record(&choice);
                    inter.push((cat, pref));
                }
            }
        }
        if !intra.is_empty() {
            run.stereoset_intrasentence =
                Some(group_scores(&StereoCategory::ALL, |c| c.name(), &intra)?);
        }
        if !inter.is_empty() {
            run.stereoset_intersentence =
                Some(group_scores(&StereoCategory::ALL, |c| c.name(), &inter)?);
        }
        run.diagnostics = Some(Diagnostics {
            intrasentence_choices: (!intra.is_empty()).then_some(intra_tally),
            intersentence_choices: (!inter.is_empty()).then_some(inter_tally),
        });
    }

    if let Some(pairs) = &inputs.crows {
        let scored: Result<Vec<(CrowsCategory, Preference)>, BiasError> = pairs
            .par_iter()
            .map(|pair| Ok((pair.category, crows_preference(scorer, pair)?)))
            .collect();
        let scored = scored?;
        if !scored.is_empty() {
            run.crows_pairs = Some(group_scores(&CrowsCategory::ALL, |c| c.name(), &scored)?);
        }
    }

    if let Some(corpus) = &inputs.wikitext {
        run.pseudo_perplexity = Some(pseudo_perplexity(scorer, corpus)?);
    }

    Ok(run)
}

fn sections_of(run: &BenchRun) -> Vec<(&'static str, &Vec<CategoryScore>)> {
    let mut v = Vec::new();
    if let Some(s) = &run.stereoset_intrasentence {
        v.push(("stereoset_intrasentence", s));
    }
    if let Some(s) = &run.stereoset_intersentence {
        v.push(("stereoset_intersentence", s));
    }
    if let Some(s) = &run.crows_pairs {
        v.push(("crows_pairs", s));
    }
    v
}

/// Compare a run against a baseline run, section by section.
pub fn attach_report(run: &BenchRun, baseline: &BenchRun) -> Result<BenchReport, BenchError> {
    let baseline_sections: BTreeMap<&str, &Vec<CategoryScore>> =
        sections_of(baseline).into_iter().collect();
    let mut sections = BTreeMap::new();
    for (name, scores) in sections_of(run) {
        let base_scores = baseline_sections
            .get(name)
            .ok_or_else(|| BenchError::SectionMissingFromBaseline(name.to_string()))?;
        let runs = [
            RunScores {
                epsilon: baseline.epsilon.clone(),
                categories: (*base_scores).clone(),
            },
            RunScores {
                epsilon: run.epsilon.clone(),
                categories: scores.clone(),
            },
        ];
        let reports = build_report(&runs, &baseline.epsilon)?;
        sections.insert(
            name.to_string(),
            reports.into_iter().last().expect("two runs in, two reports out"),
        );
    }
    Ok(BenchReport {
        baseline_epsilon: baseline.epsilon.clone(),
        sections,
    })
}

fn format_effect(d: Option<f64>) -> String {
    match d {
        None => "—".to_string(),
        Some(d) => {
            let arrow = if d < 0.0 { "↓" } else { "↑" };
            let mag = format!("{:.2}", d.abs());
            let mag = mag.strip_prefix('0').unwrap_or(&mag);
            format!("({arrow} {mag})")
        }
    }
}

/// Human-readable rendering of a run (and its report, when present).
pub fn render_markdown(run: &BenchRun, report: Option<&BenchReport>) -> String {
    use std::fmt::Write;
    let mut md = String::new();
    let _ = writeln!(md, "# Stereotype bench — epsilon {}", run.epsilon);
    for (name, scores) in sections_of(run) {
        let _ = writeln!(md, "\n## {name}\n");
        let section_report = report.and_then(|r| r.sections.get(name));
        let _ = writeln!(md, "| category | score | count | effect size |");
        let _ = writeln!(md, "|---|---|---|---|");
        for cat in scores {
            let effect = section_report
                .and_then(|r| r.rows.iter().find(|row| row.category == cat.category))
                .map(|row| format_effect(row.effect_size))
                .unwrap_or_else(|| "—".to_string());
            let _ = writeln!(
                md,
                "| {} | {:.4} | {} | {} |",
                cat.category, cat.score, cat.count, effect
            );
        }
        let average: f64 =
            scores.iter().map(|c| c.score).sum::<f64>() / scores.len().max(1) as f64;
        let avg_effect = section_report
            .map(|r| format_effect(r.average_effect_size))
            .unwrap_or_else(|| "—".to_string());
        let _ = writeln!(md, "| **average** | {average:.4} |  | {avg_effect} |");
    }
    if let Some(ppl) = run.pseudo_perplexity {
        let _ = writeln!(md, "\npseudo-perplexity: {ppl:.2}");
    }
    if let Some(report) = report {
        let _ = writeln!(md, "\nbaseline: epsilon {}", report.baseline_epsilon);
    }
    md
}
