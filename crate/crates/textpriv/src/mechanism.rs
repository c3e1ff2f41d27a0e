//! The word-level substitution mechanism.
//!
//! One perturbation is three steps: look up the word's embedding, add noise
//! drawn from the density proportional to `exp(-eps * ||z||)`, and snap the
//! noisy point back to the nearest vocabulary word. That density factors
//! into a direction uniform on the unit sphere and a magnitude distributed
//! `Gamma(dim, 1/eps)`, which is how [`sample_noise`] draws it: `dim`
//! standard Gaussians normalized for the direction, then the Gamma draw.
//!
//! An infinite budget is an explicit bypass (the identity mechanism), not a
//! limit of the sampler.
//!
//! All randomness is keyed: a [`RngStream`] derives an independent ChaCha
//! stream from `(seed, stream key)`, so every token of every document — and
//! every calibration query — perturbs identically no matter how work is
//! scheduled across threads.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embedding::StoreError;
use crate::index::NeighborSearch;

/// Errors raised by the mechanism layer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MechanismError {
    /// Epsilon must lie in `(0, inf]`.
    #[error("invalid privacy budget epsilon = {0}; must be positive (or infinite)")]
    InvalidEpsilon(f64),
    /// `perturb_word` requires an in-vocabulary word; filtering is the
    /// caller's job (see the corpus pipeline's OOV policy).
    #[error("word {0:?} is not in the vocabulary")]
    WordNotInVocabulary(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The privacy budget epsilon in `(0, inf]`.
///
/// Smaller epsilon means more noise and stronger privacy; infinity encodes
/// "no privatization" and short-circuits the mechanism entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self, MechanismError> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(MechanismError::InvalidEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    /// The identity mechanism.
    pub fn infinite() -> Self {
        Self {
            epsilon: f64::INFINITY,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_infinite(&self) -> bool {
        self.epsilon.is_infinite()
    }
}

impl core::fmt::Display for PrivacyBudget {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.epsilon)
        }
    }
}

impl core::str::FromStr for PrivacyBudget {
    type Err = MechanismError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf")
            || t.eq_ignore_ascii_case("infinity")
            || t == "∞"
        {
            return Ok(Self::infinite());
        }
        let v: f64 = t
            .parse()
            .map_err(|_| MechanismError::InvalidEpsilon(f64::NAN))?;
        Self::new(v)
    }
}

// JSON has no infinity literal, so the budget serializes as a string.
impl Serialize for PrivacyBudget {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PrivacyBudget {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One multivariate noise draw, decomposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    /// Unit direction.
    pub direction: Vec<f64>,
    /// Nonnegative magnitude.
    pub magnitude: f64,
    /// `direction * magnitude`, the vector actually added to an embedding.
    pub vector: Vec<f64>,
}

/// Identifies one independent randomness stream within a seeded run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKey {
    /// One token of one document in a corpus run.
    Token { doc_id: u64, position: u64 },
    /// One query of one word in a calibration run.
    Calibration { word_index: u64, query: u64 },
    /// The calibration word-subset draw.
    WordSample,
}

impl StreamKey {
    fn parts(&self) -> (u8, u64, u64) {
        match *self {
            StreamKey::Token { doc_id, position } => (1, doc_id, position),
            StreamKey::Calibration { word_index, query } => (2, word_index, query),
            StreamKey::WordSample => (3, 0, 0),
        }
    }
}

/// A keyed, counter-style randomness source: the same `(seed, key)` always
/// yields the same sample sequence, independent of any other stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub key: StreamKey,
}

impl RngStream {
    pub fn new(seed: u64, key: StreamKey) -> Self {
        Self { seed, key }
    }

    /// Instantiate the generator. Distinct `(seed, key)` tuples map to
    /// distinct ChaCha keys by construction, so streams never collide.
    pub fn rng(&self) -> ChaCha8Rng {
        let (domain, a, b) = self.key.parts();
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&a.to_le_bytes());
        key[16..24].copy_from_slice(&b.to_le_bytes());
        key[24] = domain;
        ChaCha8Rng::from_seed(key)
    }
}

/// Draw one noise sample for a `dim`-dimensional embedding space.
///
/// With a finite budget the direction comes from normalizing `dim`
/// independent standard Gaussians (exactly uniform on the sphere in any
/// dimension, no rejection) and the magnitude from `Gamma(dim, 1/eps)`.
/// An infinite budget returns the zero vector without touching the RNG's
/// distributional machinery.
pub fn sample_noise<R: Rng>(budget: PrivacyBudget, dim: usize, rng: &mut R) -> NoiseSample {
    assert!(dim >= 1, "noise dimension must be at least 1");
    if budget.is_infinite() {
        let mut direction = vec![0.0; dim];
        direction[0] = 1.0;
        return NoiseSample {
            direction,
            magnitude: 0.0,
            vector: vec![0.0; dim],
        };
    }
    let mut direction = vec![0.0f64; dim];
    let magnitude = sample_noise_into(budget, rng, &mut direction);
    let vector = direction.iter().map(|d| d * magnitude).collect();
    NoiseSample {
        direction,
        magnitude,
        vector,
    }
}

/// Allocation-light inner sampler: writes the unit direction into `direction`
/// and returns the magnitude. Requires a finite budget.
fn sample_noise_into<R: Rng>(budget: PrivacyBudget, rng: &mut R, direction: &mut [f64]) -> f64 {
    debug_assert!(!budget.is_infinite());
    loop {
        let mut norm_sq = 0.0f64;
        for d in direction.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *d = g;
            norm_sq += g * g;
        }
        if norm_sq > 0.0 {
            let norm = Float::sqrt(norm_sq);
            for d in direction.iter_mut() {
                *d /= norm;
            }
            break;
        }
        // An all-zero Gaussian vector has probability zero; loop regardless.
    }
    let gamma = Gamma::new(direction.len() as f64, 1.0 / budget.epsilon())
        .expect("gamma parameters are positive by construction");
    gamma.sample(rng)
}

/// Perturb the word at a vocabulary index; returns the output word's index.
///
/// The candidate set for the remap is the full vocabulary including the
/// queried word itself — the self-output probability is exactly the N_w
/// statistic calibration estimates, so it must be attainable.
pub fn perturb_index<S>(
    search: &S,
    word_index: usize,
    budget: PrivacyBudget,
    stream: RngStream,
) -> Result<usize, MechanismError>
where
    S: NeighborSearch + ?Sized,
{
    let store = search.store();
    if word_index >= store.len() {
        return Err(StoreError::IndexOutOfBounds {
            index: word_index,
            len: store.len(),
        }
        .into());
    }
    if budget.is_infinite() {
        return Ok(word_index);
    }
    let row = store.row(word_index);
    let mut rng = stream.rng();
    let mut query = vec![0.0f64; store.dimension()];
    let magnitude = sample_noise_into(budget, &mut rng, &mut query);
    for (q, &c) in query.iter_mut().zip(row.iter()) {
        *q = *q * magnitude + f64::from(c);
    }
    let top = search.nearest(&query, 1)?;
    Ok(top[0].index)
}

/// Perturb a single in-vocabulary word. Out-of-vocabulary input is an
/// error here; the corpus layer filters by policy before calling.
pub fn perturb_word<'s, S>(
    search: &'s S,
    word: &str,
    budget: PrivacyBudget,
    stream: RngStream,
) -> Result<&'s str, MechanismError>
where
    S: NeighborSearch + ?Sized,
{
    let store = search.store();
    let index = store
        .index_of(word)
        .ok_or_else(|| MechanismError::WordNotInVocabulary(word.into()))?;
    let out = perturb_index(search, index, budget, stream)?;
    Ok(store.word(out))
}

/// What to do with tokens the vocabulary does not contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    /// Copy the token through unchanged (the default: dropping tokens would
    /// silently change corpus statistics).
    Passthrough,
    /// Remove the token from the output.
    Drop,
    /// Replace the token with a fixed marker string.
    Marker(String),
}

impl Default for OovPolicy {
    fn default() -> Self {
        OovPolicy::Passthrough
    }
}

/// Outcome of perturbing a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedTokens {
    pub tokens: Vec<String>,
    /// In-vocabulary tokens that went through the mechanism.
    pub perturbed: u64,
    /// Tokens handled by the OOV policy instead.
    pub oov: u64,
}

/// Perturb every in-vocabulary token independently, each with its own
/// stream keyed by `(seed, doc_id, token position)`. Positions index the
/// *input* sequence, so the draw for a token does not depend on what the
/// OOV policy did to the tokens before it.
pub fn perturb_tokens<S, T>(
    search: &S,
    tokens: &[T],
    budget: PrivacyBudget,
    seed: u64,
    doc_id: u64,
    oov: &OovPolicy,
) -> Result<PerturbedTokens, MechanismError>
where
    S: NeighborSearch + ?Sized,
    T: AsRef<str>,
{
    let store = search.store();
    let mut out = Vec::with_capacity(tokens.len());
    let mut perturbed = 0u64;
    let mut oov_count = 0u64;
    for (position, token) in tokens.iter().enumerate() {
        let token = token.as_ref();
        match store.index_of(token) {
            Some(index) => {
                let stream = RngStream::new(
                    seed,
                    StreamKey::Token {
                        doc_id,
                        position: position as u64,
                    },
                );
                let replacement = perturb_index(search, index, budget, stream)?;
                out.push(store.word(replacement).into());
                perturbed += 1;
            }
            None => {
                oov_count += 1;
                match oov {
                    OovPolicy::Passthrough => out.push(token.into()),
                    OovPolicy::Drop => {}
                    OovPolicy::Marker(marker) => out.push(marker.clone()),
                }
            }
        }
    }
    Ok(PerturbedTokens {
        tokens: out,
        perturbed,
        oov: oov_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingStore;

    fn stream(a: u64, b: u64) -> RngStream {
        RngStream::new(7, StreamKey::Token {
            doc_id: a,
            position: b,
        })
    }

    fn store_1d(coords: &[f32]) -> EmbeddingStore {
        let entries: Vec<(String, Vec<f32>)> = coords
            .iter()
            .enumerate()
            .map(|(i, &c)| (alloc::format!("w{i}"), vec![c]))
            .collect();
        EmbeddingStore::from_entries(entries.iter().map(|(w, c)| (w.as_str(), c.as_slice())))
            .unwrap()
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(5.0).is_ok());
        assert!(PrivacyBudget::new(0.0).is_err());
        assert!(PrivacyBudget::new(-1.0).is_err());
        assert!(PrivacyBudget::new(f64::NAN).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY).unwrap().is_infinite());
    }

    #[test]
    fn budget_parses_and_displays() {
        let b: PrivacyBudget = "inf".parse().unwrap();
        assert!(b.is_infinite());
        let b: PrivacyBudget = "10".parse().unwrap();
        assert_eq!(b.epsilon(), 10.0);
        assert_eq!(alloc::format!("{b}"), "10");
        assert!("0".parse::<PrivacyBudget>().is_err());
        assert!("-3".parse::<PrivacyBudget>().is_err());
    }

    #[test]
    fn infinite_budget_yields_zero_noise() {
        let mut rng = stream(0, 0).rng();
        let s = sample_noise(PrivacyBudget::infinite(), 4, &mut rng);
        assert_eq!(s.vector, vec![0.0; 4]);
        assert_eq!(s.magnitude, 0.0);
        let norm: f64 = s.direction.iter().map(|d| d * d).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noise_sample_is_consistent() {
        let mut rng = stream(1, 2).rng();
        let s = sample_noise(PrivacyBudget::new(5.0).unwrap(), 8, &mut rng);
        let norm: f64 = s.direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(s.magnitude >= 0.0);
        for (v, d) in s.vector.iter().zip(s.direction.iter()) {
            assert!((v - d * s.magnitude).abs() < 1e-12);
        }
    }

    #[test]
    fn same_stream_key_same_sample() {
        let b = PrivacyBudget::new(3.0).unwrap();
        let a = sample_noise(b, 16, &mut stream(4, 9).rng());
        let c = sample_noise(b, 16, &mut stream(4, 9).rng());
        assert_eq!(a, c);
        let d = sample_noise(b, 16, &mut stream(4, 10).rng());
        assert_ne!(a, d);
    }

    #[test]
    fn infinite_budget_is_identity() {
        let store = store_1d(&[0.0, 1.0, 5.0]);
        for w in ["w0", "w1", "w2"] {
            let out = perturb_word(&store, w, PrivacyBudget::infinite(), stream(0, 0)).unwrap();
            assert_eq!(out, w);
        }
    }

    #[test]
    fn output_is_always_in_vocabulary() {
        let store = store_1d(&[0.0, 0.5, 1.5, 8.0]);
        let b = PrivacyBudget::new(0.5).unwrap();
        for q in 0..200u64 {
            let out = perturb_word(&store, "w1", b, stream(0, q)).unwrap();
            assert!(store.index_of(out).is_some());
        }
    }

    #[test]
    fn oov_word_is_an_error() {
        let store = store_1d(&[0.0]);
        let err = perturb_word(&store, "zxqv", PrivacyBudget::infinite(), stream(0, 0))
            .unwrap_err();
        assert_eq!(err, MechanismError::WordNotInVocabulary("zxqv".into()));
    }

    #[test]
    fn tokens_identity_at_infinity() {
        let store = store_1d(&[0.0, 1.0]);
        let tokens = ["w0", "w1", "zxqv", "w1"];
        let out = perturb_tokens(
            &store,
            &tokens,
            PrivacyBudget::infinite(),
            1,
            0,
            &OovPolicy::Passthrough,
        )
        .unwrap();
        assert_eq!(out.tokens, tokens.map(String::from).to_vec());
        assert_eq!(out.perturbed, 3);
        assert_eq!(out.oov, 1);
    }

    #[test]
    fn tokens_deterministic_per_key() {
        let store = store_1d(&[0.0, 0.3, 0.6, 0.9, 5.0]);
        let b = PrivacyBudget::new(2.0).unwrap();
        let tokens = ["w0", "w2", "w4", "w1"];
        let a = perturb_tokens(&store, &tokens, b, 42, 7, &OovPolicy::Passthrough).unwrap();
        let c = perturb_tokens(&store, &tokens, b, 42, 7, &OovPolicy::Passthrough).unwrap();
        assert_eq!(a, c);
        let d = perturb_tokens(&store, &tokens, b, 42, 8, &OovPolicy::Passthrough).unwrap();
        assert_eq!(a.tokens.len(), d.tokens.len());
    }

    #[test]
    fn oov_policies() {
        let store = store_1d(&[0.0]);
        let b = PrivacyBudget::infinite();
        let tokens = ["w0", "zxqv", "w0"];
        let pass =
            perturb_tokens(&store, &tokens, b, 0, 0, &OovPolicy::Passthrough).unwrap();
        assert_eq!(pass.tokens, vec!["w0", "zxqv", "w0"]);
        let drop = perturb_tokens(&store, &tokens, b, 0, 0, &OovPolicy::Drop).unwrap();
        assert_eq!(drop.tokens, vec!["w0", "w0"]);
        let marked = perturb_tokens(
            &store,
            &tokens,
            b,
            0,
            0,
            &OovPolicy::Marker("<unk>".into()),
        )
        .unwrap();
        assert_eq!(marked.tokens, vec!["w0", "<unk>", "w0"]);
        assert_eq!(marked.oov, 1);
        assert_eq!(marked.perturbed, 2);
    }

    #[test]
    fn drop_policy_does_not_shift_streams() {
        // The token at position 2 must draw the same noise whether or not
        // the OOV token before it was dropped.
        let store = store_1d(&[0.0, 0.4, 0.8, 1.2, 9.0]);
        let b = PrivacyBudget::new(1.0).unwrap();
        let with_oov = ["w1", "zxqv", "w3"];
        let dropped = perturb_tokens(&store, &with_oov, b, 5, 1, &OovPolicy::Drop).unwrap();
        let passed =
            perturb_tokens(&store, &with_oov, b, 5, 1, &OovPolicy::Passthrough).unwrap();
        assert_eq!(dropped.tokens[1], passed.tokens[2]);
    }
}
