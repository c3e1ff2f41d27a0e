//! Word-level text privatization over an embedding metric space, with the
//! bookkeeping needed to pick a privacy budget and to measure what the
//! rewriting does to a masked language model.
//!
//! The crate has three layers:
//!
//! * the substitution mechanism itself ([`mechanism`]), which perturbs a
//!   word's embedding with noise whose density decays as `exp(-eps * ||z||)`
//!   and snaps the result back to the nearest vocabulary word
//!   ([`embedding`], [`index`]);
//! * plausible-deniability calibration ([`calibration`]): Monte-Carlo
//!   estimates of how often a word survives perturbation and how many
//!   distinct words it can turn into, plus the skewness criterion used to
//!   choose the budget;
//! * a scoring harness ([`scoring`], [`bias`], [`report`]) that talks to any
//!   masked LM over a small JSON protocol and computes stereotype
//!   preference scores, pseudo-perplexity, and effect sizes.
//!
//! Everything here is deterministic given a seed: randomness flows through
//! keyed counter-style streams so results do not depend on scheduling or
//! evaluation order. The crate is `no_std`-compatible (with `alloc`); file
//! formats, transports, and the CLI live in the companion `textpriv-cli`
//! crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod bias;
pub mod calibration;
pub mod embedding;
pub mod index;
pub mod mechanism;
pub mod report;
pub mod scoring;
pub mod tokenize;

pub use embedding::{EmbeddingStore, EmbeddingStoreBuilder, NeighborResult, StoreError};
pub use index::{build_index, IndexParams, NearestIndex, NeighborSearch};
pub use mechanism::{
    sample_noise, MechanismError, NoiseSample, OovPolicy, PrivacyBudget, RngStream, StreamKey,
};
