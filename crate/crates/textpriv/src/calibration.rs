//! Plausible-deniability calibration.
//!
//! For a candidate budget, repeatedly query the mechanism on a random
//! vocabulary subset and record, per word, how many queries returned the
//! word itself (`n_w`) and how many distinct words came out (`s_w`). A
//! budget gives a reasonable guarantee when `n_w` is positively skewed
//! (most words rarely survive unchanged) and `s_w` negatively skewed (most
//! words have a wide effective support); [`check_skew_criterion`] tests
//! exactly that, and [`histogram`] produces the distribution data one
//! inspects to choose between candidate budgets.

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::index::NeighborSearch;
use crate::mechanism::{perturb_index, MechanismError, PrivacyBudget, RngStream, StreamKey};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("sample size {requested} exceeds vocabulary size {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("queries per word must be at least 1")]
    NoQueries,
    #[error("skewness needs at least 3 values, got {0}")]
    TooFewValues(usize),
    #[error("skewness is undefined for constant input")]
    ConstantInput,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// Per-word deniability counts estimated over repeated mechanism queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeniabilityStats {
    pub epsilon: PrivacyBudget,
    /// The sampled vocabulary indices, in draw order.
    pub sample_words: Vec<u32>,
    pub queries_per_word: u32,
    /// Queries that returned the word itself; parallel to `sample_words`.
    pub n_w: Vec<u32>,
    /// Distinct output words; parallel to `sample_words`.
    pub s_w: Vec<u32>,
}

/// Which of the two deniability statistics to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeniabilityStat {
    /// `n_w`: self-output count.
    SelfCount,
    /// `s_w`: distinct-output count (effective support).
    Support,
}

/// Draw the calibration word subset: `sample_size` vocabulary indices,
/// uniform without replacement. The draw is keyed by the seed alone, so
/// every budget evaluated under one seed reuses the same subset.
pub fn sample_words(
    vocab_size: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<u32>, CalibrationError> {
    if sample_size > vocab_size {
        return Err(CalibrationError::SampleTooLarge {
            requested: sample_size,
            available: vocab_size,
        });
    }
    let mut rng = RngStream::new(seed, StreamKey::WordSample).rng();
    Ok(sample_indices(&mut rng, vocab_size, sample_size)
        .into_iter()
        .map(|i| i as u32)
        .collect())
}

/// Query one word `queries` times and count `(n_w, s_w)`.
///
/// Each query runs on its own stream keyed `(seed, word index, query index)`,
/// so per-word estimation can be distributed arbitrarily and still reproduce.
pub fn estimate_word<S>(
    search: &S,
    budget: PrivacyBudget,
    seed: u64,
    word_index: u32,
    queries: u32,
) -> Result<(u32, u32), CalibrationError>
where
    S: NeighborSearch + ?Sized,
{
    let mut self_count = 0u32;
    let mut outputs: Vec<u32> = Vec::with_capacity(queries as usize);
    for query in 0..queries {
        let stream = RngStream::new(
            seed,
            StreamKey::Calibration {
                word_index: u64::from(word_index),
                query: u64::from(query),
            },
        );
        let out = perturb_index(search, word_index as usize, budget, stream)? as u32;
        if out == word_index {
            self_count += 1;
        }
        outputs.push(out);
    }
    outputs.sort_unstable();
    outputs.dedup();
    Ok((self_count, outputs.len() as u32))
}

/// Estimate deniability statistics over a fresh uniform word subset.
///
/// Sequential reference implementation; the per-word work is independent,
/// so callers with a thread pool can fan out [`estimate_word`] over
/// [`sample_words`] and assemble the identical result.
pub fn estimate_deniability<S>(
    search: &S,
    budget: PrivacyBudget,
    sample_size: usize,
    queries: u32,
    seed: u64,
) -> Result<DeniabilityStats, CalibrationError>
where
    S: NeighborSearch + ?Sized,
{
    if queries == 0 {
        return Err(CalibrationError::NoQueries);
    }
    let words = sample_words(search.store().len(), sample_size, seed)?;
    let mut n_w = Vec::with_capacity(words.len());
    let mut s_w = Vec::with_capacity(words.len());
    for &w in &words {
        let (n, s) = estimate_word(search, budget, seed, w, queries)?;
        n_w.push(n);
        s_w.push(s);
    }
    Ok(DeniabilityStats {
        epsilon: budget,
        sample_words: words,
        queries_per_word: queries,
        n_w,
        s_w,
    })
}

impl DeniabilityStats {
    pub fn values(&self, which: DeniabilityStat) -> &[u32] {
        match which {
            DeniabilityStat::SelfCount => &self.n_w,
            DeniabilityStat::Support => &self.s_w,
        }
    }
}

/// Fisher–Pearson moment coefficient of skewness, `g1 = m3 / m2^(3/2)`,
/// with population (biased) moments about the mean.
pub fn skewness(values: &[f64]) -> Result<f64, CalibrationError> {
    if values.len() < 3 {
        return Err(CalibrationError::TooFewValues(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 == 0.0 {
        return Err(CalibrationError::ConstantInput);
    }
    Ok(m3 / Float::powf(m2, 1.5))
}

/// Histogram of one deniability statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    /// `bins + 1` strictly increasing edges; the right-most bin is closed.
    pub bin_edges: Vec<f64>,
    /// One count per bin; sums to the number of sampled words.
    pub counts: Vec<u64>,
}

/// Equal-width histogram over `[min, max]` of the chosen statistic.
/// A degenerate range (all values identical) spans one unit around the
/// value so the edges stay strictly increasing.
pub fn histogram(
    stats: &DeniabilityStats,
    which: DeniabilityStat,
    bins: usize,
) -> Result<HistogramData, CalibrationError> {
    if bins == 0 {
        return Err(CalibrationError::NoBins);
    }
    let values = stats.values(which);
    let min = values.iter().copied().min().map(f64::from).unwrap_or(0.0);
    let max = values.iter().copied().max().map(f64::from).unwrap_or(0.0);
    let (lo, hi) = if min == max {
        (min - 0.5, min + 0.5)
    } else {
        (min, max)
    };
    let width = (hi - lo) / bins as f64;
    let mut bin_edges = Vec::with_capacity(bins + 1);
    for i in 0..=bins {
        bin_edges.push(lo + width * i as f64);
    }
    let mut counts = alloc::vec![0u64; bins];
    for &v in values {
        let x = f64::from(v);
        let mut idx = ((x - lo) / width) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    Ok(HistogramData { bin_edges, counts })
}

/// Result of the skew-sign criterion for one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewCheck {
    pub n_w_skewness: f64,
    pub s_w_skewness: f64,
    /// `n_w` positively skewed and `s_w` negatively skewed.
    pub pass: bool,
}

/// Test whether a budget's statistics have the skew signs a reasonable
/// privacy guarantee requires. Constant statistics (the identity mechanism
/// produces them) are not evaluable and surface as an error.
pub fn check_skew_criterion(stats: &DeniabilityStats) -> Result<SkewCheck, CalibrationError> {
    let nw: Vec<f64> = stats.n_w.iter().map(|&v| f64::from(v)).collect();
    let sw: Vec<f64> = stats.s_w.iter().map(|&v| f64::from(v)).collect();
    let n_w_skewness = skewness(&nw)?;
    let s_w_skewness = skewness(&sw)?;
    Ok(SkewCheck {
        n_w_skewness,
        s_w_skewness,
        pass: n_w_skewness > 0.0 && s_w_skewness < 0.0,
    })
}
