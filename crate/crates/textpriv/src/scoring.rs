//! The masked-LM scoring protocol.
//!
//! Any model runtime that can answer two questions can be benchmarked:
//! the log-probability of the original token at masked positions (each
//! index masked individually, everything else visible), and a plausibility
//! score for a continuation sentence given a context. Messages are
//! newline-delimited JSON with fixed field names; transports (child-process
//! stdio, HTTP) live in the companion crate. Requests and responses are
//! matched by `id`, so responses may arrive out of order.
//!
//! [`MockScorer`] provides deterministic in-process backends for hermetic
//! tests and for exercising the protocol end to end.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    /// The request violates a protocol precondition; nothing was sent.
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// The peer answered, but the answer violates the protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// The peer could not be reached (after bounded retries).
    #[error("transport error: {0}")]
    Transport(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

/// Ask for log-probabilities of the original tokens at `mask_indices`.
///
/// Batching several indices in one request means each index is masked
/// individually with all other tokens visible — pseudo-likelihood
/// semantics, with server-side batching permitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskScoreRequest {
    pub id: String,
    pub tokens: Vec<String>,
    pub mask_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexLogprob {
    pub index: usize,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskScoreResponse {
    pub id: String,
    /// One entry per requested index, in request order.
    pub logprobs: Vec<IndexLogprob>,
}

/// Ask how plausible `continuation` is as the next sentence after `context`.
/// Scores are raw reals (larger = more plausible); only comparisons matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextSentenceRequest {
    pub id: String,
    pub context: Vec<String>,
    pub continuation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextSentenceResponse {
    pub id: String,
    pub score: f64,
}

impl MaskScoreRequest {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.mask_indices.is_empty() {
            return Err(ScoreError::InvalidRequest("mask_indices is empty".into()));
        }
        for pair in self.mask_indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(ScoreError::InvalidRequest(
                    "mask_indices must be strictly increasing".into(),
                ));
            }
        }
        let last = *self.mask_indices.last().unwrap();
        if last >= self.tokens.len() {
            return Err(ScoreError::InvalidRequest(alloc::format!(
                "mask index {last} out of bounds for {} tokens",
                self.tokens.len()
            )));
        }
        Ok(())
    }
}

impl MaskScoreResponse {
    /// Check the response against its request: matching id, one finite
    /// logprob per requested index, in order.
    pub fn validate_against(&self, req: &MaskScoreRequest) -> Result<(), ScoreError> {
        if self.id != req.id {
            return Err(ScoreError::Protocol(alloc::format!(
                "response id {:?} does not match request id {:?}",
                self.id,
                req.id
            )));
        }
        if self.logprobs.len() != req.mask_indices.len() {
            return Err(ScoreError::Protocol(alloc::format!(
                "expected {} logprobs, got {}",
                req.mask_indices.len(),
                self.logprobs.len()
            )));
        }
        for (entry, &want) in self.logprobs.iter().zip(req.mask_indices.iter()) {
            if entry.index != want {
                return Err(ScoreError::Protocol(alloc::format!(
                    "missing logprob for index {want}"
                )));
            }
            if !entry.logprob.is_finite() {
                return Err(ScoreError::Protocol("non-finite logprob".into()));
            }
        }
        Ok(())
    }
}

impl NextSentenceRequest {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.continuation.is_empty() {
            return Err(ScoreError::InvalidRequest("continuation is empty".into()));
        }
        Ok(())
    }
}

/// A scoring backend. Implementations must be idempotent: re-sending a
/// request yields the same response.
pub trait MaskedLmScorer: Send + Sync {
    fn score_masked(&self, req: &MaskScoreRequest) -> Result<MaskScoreResponse, ScoreError>;
    fn score_next_sentence(
        &self,
        req: &NextSentenceRequest,
    ) -> Result<NextSentenceResponse, ScoreError>;
}

/// Serialize one protocol message to its JSON line (without the newline).
pub fn encode_line<T: Serialize>(msg: &T) -> Result<String, ScoreError> {
    serde_json::to_string(msg).map_err(|e| ScoreError::Serialization(e.to_string()))
}

/// Parse one protocol message from a JSON line.
pub fn decode_line<T: DeserializeOwned>(line: &str) -> Result<T, ScoreError> {
    serde_json::from_str(line).map_err(|e| ScoreError::Serialization(e.to_string()))
}

/// Either request kind, for servers reading a single stdio stream. The two
/// shapes share no required fields, so no envelope is needed.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum AnyRequest {
    Masked(MaskScoreRequest),
    NextSentence(NextSentenceRequest),
}

/// Deterministic in-process scorers.
#[derive(Debug, Clone)]
pub enum MockScorer {
    /// Every token has probability `1/vocab_size`: logprob `-ln(V)`
    /// everywhere, constant next-sentence score.
    Uniform { vocab_size: u64 },
    /// Per-token probabilities from a table; absent tokens fall back to
    /// `default_prob`. Next-sentence score is the mean log-probability per
    /// continuation token.
    Table {
        probs: BTreeMap<String, f64>,
        default_prob: f64,
    },
    /// Next-sentence score is the number of continuation tokens present in
    /// the context; masked scoring is constant `-ln 2`.
    Overlap,
}

impl MockScorer {
    pub fn uniform(vocab_size: u64) -> Self {
        MockScorer::Uniform { vocab_size }
    }

    pub fn table<I, K>(entries: I, default_prob: f64) -> Self
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<String>,
    {
        MockScorer::Table {
            probs: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            default_prob,
        }
    }

    fn token_logprob(&self, token: &str) -> f64 {
        match self {
            MockScorer::Uniform { vocab_size } => -Float::ln(*vocab_size as f64),
            MockScorer::Table {
                probs,
                default_prob,
            } => Float::ln(probs.get(token).copied().unwrap_or(*default_prob)),
            MockScorer::Overlap => -Float::ln(2.0),
        }
    }
}

impl MaskedLmScorer for MockScorer {
    fn score_masked(&self, req: &MaskScoreRequest) -> Result<MaskScoreResponse, ScoreError> {
        req.validate()?;
        let logprobs = req
            .mask_indices
            .iter()
            .map(|&index| IndexLogprob {
                index,
                logprob: self.token_logprob(&req.tokens[index]),
            })
            .collect();
        Ok(MaskScoreResponse {
            id: req.id.clone(),
            logprobs,
        })
    }

    fn score_next_sentence(
        &self,
        req: &NextSentenceRequest,
    ) -> Result<NextSentenceResponse, ScoreError> {
        req.validate()?;
        let score = match self {
            MockScorer::Uniform { .. } => 0.0,
            MockScorer::Table { .. } => {
                let sum: f64 = req
                    .continuation
                    .iter()
                    .map(|t| self.token_logprob(t))
                    .sum();
                sum / req.continuation.len() as f64
            }
            MockScorer::Overlap => req
                .continuation
                .iter()
                .filter(|t| req.context.contains(t))
                .count() as f64,
        };
        Ok(NextSentenceResponse {
            id: req.id.clone(),
            score,
        })
    }
}

/// Build a mask request over every position of `tokens` except `protected`.
/// `protected` must be sorted; out-of-range entries are ignored.
pub fn mask_request_excluding(
    id: impl Into<String>,
    tokens: &[String],
    protected: &[usize],
) -> MaskScoreRequest {
    let mask_indices = (0..tokens.len())
        .filter(|i| protected.binary_search(i).is_err())
        .collect();
    MaskScoreRequest {
        id: id.into(),
        tokens: tokens.to_vec(),
        mask_indices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_tokens(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn uniform_mock_scores_every_index_at_minus_ln_v() {
        let mock = MockScorer::uniform(50);
        let req = MaskScoreRequest {
            id: "r1".into(),
            tokens: to_tokens(&["the", "doctors", "won"]),
            mask_indices: alloc::vec![0, 2],
        };
        let res = mock.score_masked(&req).unwrap();
        res.validate_against(&req).unwrap();
        let expect = -(50f64).ln();
        assert_eq!(res.logprobs.len(), 2);
        for lp in &res.logprobs {
            assert!((lp.logprob - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn table_mock_looks_up_probabilities_anywhere() {
        let mock = MockScorer::table([("nurses", 0.3)], 0.01);
        for tokens in [
            to_tokens(&["nurses", "x"]),
            to_tokens(&["x", "nurses"]),
        ] {
            let idx = tokens.iter().position(|t| t == "nurses").unwrap();
            let req = MaskScoreRequest {
                id: "t".into(),
                tokens,
                mask_indices: alloc::vec![idx],
            };
            let res = mock.score_masked(&req).unwrap();
            assert!((res.logprobs[0].logprob - 0.3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_bounds_mask_is_rejected_before_scoring() {
        let mock = MockScorer::uniform(10);
        let req = MaskScoreRequest {
            id: "r".into(),
            tokens: to_tokens(&["a", "b", "c", "d"]),
            mask_indices: alloc::vec![5],
        };
        assert!(matches!(
            mock.score_masked(&req),
            Err(ScoreError::InvalidRequest(_))
        ));
        let unsorted = MaskScoreRequest {
            id: "r".into(),
            tokens: to_tokens(&["a", "b"]),
            mask_indices: alloc::vec![1, 0],
        };
        assert!(unsorted.validate().is_err());
        let empty = MaskScoreRequest {
            id: "r".into(),
            tokens: to_tokens(&["a"]),
            mask_indices: alloc::vec![],
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn overlap_mock_prefers_shared_tokens() {
        let mock = MockScorer::Overlap;
        let ctx = to_tokens(&["doctors"]);
        let a = mock
            .score_next_sentence(&NextSentenceRequest {
                id: "a".into(),
                context: ctx.clone(),
                continuation: to_tokens(&["doctors", "win"]),
            })
            .unwrap();
        let b = mock
            .score_next_sentence(&NextSentenceRequest {
                id: "b".into(),
                context: ctx,
                continuation: to_tokens(&["xyzzy"]),
            })
            .unwrap();
        assert!(a.score > b.score);
    }

    #[test]
    fn identical_continuations_score_identically() {
        let mock = MockScorer::uniform(7);
        let mk = |id: &str| NextSentenceRequest {
            id: id.into(),
            context: to_tokens(&["c"]),
            continuation: to_tokens(&["same", "thing"]),
        };
        let a = mock.score_next_sentence(&mk("1")).unwrap();
        let b = mock.score_next_sentence(&mk("2")).unwrap();
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn mock_is_idempotent() {
        let mock = MockScorer::table([("poor", 0.9)], 0.1);
        let req = MaskScoreRequest {
            id: "same".into(),
            tokens: to_tokens(&["poor", "rich"]),
            mask_indices: alloc::vec![0, 1],
        };
        assert_eq!(
            mock.score_masked(&req).unwrap(),
            mock.score_masked(&req).unwrap()
        );
    }

    #[test]
    fn wire_round_trip_all_message_types() {
        let m_req = MaskScoreRequest {
            id: "x".into(),
            tokens: to_tokens(&["a", "b"]),
            mask_indices: alloc::vec![0],
        };
        let m_res = MaskScoreResponse {
            id: "x".into(),
            logprobs: alloc::vec![IndexLogprob {
                index: 0,
                logprob: -1.5,
            }],
        };
        let n_req = NextSentenceRequest {
            id: "y".into(),
            context: to_tokens(&["a"]),
            continuation: to_tokens(&["b"]),
        };
        let n_res = NextSentenceResponse {
            id: "y".into(),
            score: 2.25,
        };
        assert_eq!(
            decode_line::<MaskScoreRequest>(&encode_line(&m_req).unwrap()).unwrap(),
            m_req
        );
        assert_eq!(
            decode_line::<MaskScoreResponse>(&encode_line(&m_res).unwrap()).unwrap(),
            m_res
        );
        assert_eq!(
            decode_line::<NextSentenceRequest>(&encode_line(&n_req).unwrap()).unwrap(),
            n_req
        );
        assert_eq!(
            decode_line::<NextSentenceResponse>(&encode_line(&n_res).unwrap()).unwrap(),
            n_res
        );
    }

    #[test]
    fn wire_field_names_are_exact() {
        let req = MaskScoreRequest {
            id: "i".into(),
            tokens: to_tokens(&["t"]),
            mask_indices: alloc::vec![0],
        };
        let line = encode_line(&req).unwrap();
        assert_eq!(line, r#"{"id":"i","tokens":["t"],"mask_indices":[0]}"#);
        let res = NextSentenceResponse {
            id: "i".into(),
            score: 1.0,
        };
        assert_eq!(encode_line(&res).unwrap(), r#"{"id":"i","score":1.0}"#);
    }

    #[test]
    fn untagged_dispatch_distinguishes_request_kinds() {
        let masked = r#"{"id":"1","tokens":["a"],"mask_indices":[0]}"#;
        let next = r#"{"id":"2","context":["a"],"continuation":["b"]}"#;
        assert!(matches!(
            decode_line::<AnyRequest>(masked).unwrap(),
            AnyRequest::Masked(_)
        ));
        assert!(matches!(
            decode_line::<AnyRequest>(next).unwrap(),
            AnyRequest::NextSentence(_)
        ));
    }

    #[test]
    fn response_validation_catches_missing_index() {
        let req = MaskScoreRequest {
            id: "r".into(),
            tokens: to_tokens(&["a", "b", "c"]),
            mask_indices: alloc::vec![0, 2],
        };
        let bad = MaskScoreResponse {
            id: "r".into(),
            logprobs: alloc::vec![IndexLogprob {
                index: 0,
                logprob: -1.0,
            }],
        };
        assert!(matches!(
            bad.validate_against(&req),
            Err(ScoreError::Protocol(_))
        ));
    }

    #[test]
    fn mask_request_excluding_skips_protected() {
        let tokens = to_tokens(&["a", "b", "c", "d"]);
        let req = mask_request_excluding("id", &tokens, &[1, 3]);
        assert_eq!(req.mask_indices, alloc::vec![0, 2]);
    }
}
