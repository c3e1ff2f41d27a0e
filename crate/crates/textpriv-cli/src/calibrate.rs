//! Calibration runner: estimates deniability statistics for a list of
//! candidate budgets in parallel and assembles the JSON/CSV artifacts used
//! to pick a budget.
//!
//! The word subset is keyed by the seed alone, so every budget in one run
//! is measured on the same words — and the per-word streams are keyed by
//! `(seed, word, query)`, so the parallel fan-out below reproduces the
//! sequential estimator exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use textpriv::calibration::{
    check_skew_criterion, estimate_word, histogram, sample_words, CalibrationError,
    DeniabilityStat, DeniabilityStats, HistogramData,
};
use textpriv::index::NeighborSearch;
use textpriv::mechanism::PrivacyBudget;

/// Parallel version of [`textpriv::calibration::estimate_deniability`];
/// identical output by construction.
pub fn par_estimate_deniability<S>(
    search: &S,
    budget: PrivacyBudget,
    sample_size: usize,
    queries: u32,
    seed: u64,
) -> Result<DeniabilityStats, CalibrationError>
where
    S: NeighborSearch + ?Sized + Sync,
{
    if queries == 0 {
        return Err(CalibrationError::NoQueries);
    }
    let words = sample_words(search.store().len(), sample_size, seed)?;
    let counts: Result<Vec<(u32, u32)>, CalibrationError> = words
        .par_iter()
        .map(|&w| estimate_word(search, budget, seed, w, queries))
        .collect();
    let counts = counts?;
    Ok(DeniabilityStats {
        epsilon: budget,
        sample_words: words,
        queries_per_word: queries,
        n_w: counts.iter().map(|c| c.0).collect(),
        s_w: counts.iter().map(|c| c.1).collect(),
    })
}

/// Everything recorded for one budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetCalibration {
    pub n_w: Vec<u32>,
    pub s_w: Vec<u32>,
    pub skew_nw: Option<f64>,
    pub skew_sw: Option<f64>,
    /// "pass" / "fail", or "not_evaluable" when a statistic is constant
    /// (the identity mechanism produces that).
    pub skew_criterion: String,
    pub histograms: BTreeMap<String, HistogramData>,
}

/// The full calibration document: one entry per requested epsilon, keyed
/// by its label.
pub type CalibrationDoc = BTreeMap<String, BudgetCalibration>;

pub fn calibrate_budget(stats: &DeniabilityStats, bins: usize) -> Result<BudgetCalibration, CalibrationError> {
    let (skew_nw, skew_sw, verdict) = match check_skew_criterion(stats) {
        Ok(check) => (
            Some(check.n_w_skewness),
            Some(check.s_w_skewness),
            if check.pass { "pass" } else { "fail" },
        ),
        Err(CalibrationError::ConstantInput) => (None, None, "not_evaluable"),
        Err(e) => return Err(e),
    };
    let mut histograms = BTreeMap::new();
    histograms.insert(
        "n_w".to_string(),
        histogram(stats, DeniabilityStat::SelfCount, bins)?,
    );
    histograms.insert(
        "s_w".to_string(),
        histogram(stats, DeniabilityStat::Support, bins)?,
    );
    Ok(BudgetCalibration {
        n_w: stats.n_w.clone(),
        s_w: stats.s_w.clone(),
        skew_nw,
        skew_sw,
        skew_criterion: verdict.to_string(),
        histograms,
    })
}

/// Write one histogram as `bin_lo,bin_hi,count` CSV.
pub fn write_histogram_csv(hist: &HistogramData, path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "bin_lo,bin_hi,count")?;
    for (i, count) in hist.counts.iter().enumerate() {
        writeln!(out, "{},{},{}", hist.bin_edges[i], hist.bin_edges[i + 1], count)?;
    }
    out.flush()
}
