//! Streaming corpus privatization.
//!
//! Documents are tokenized, pushed through the mechanism with streams keyed
//! by `(seed, doc id, token position)`, and re-joined. Because every token
//! owns its randomness, the output is a pure function of the configuration
//! and the input — worker count and completion order cannot change a byte.
//! A run manifest records the configuration, the embedding file checksum,
//! and token accounting.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use textpriv::index::NeighborSearch;
use textpriv::mechanism::{perturb_tokens, MechanismError, OovPolicy, PrivacyBudget};
use textpriv::tokenize::{detokenize, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(u64),
    #[error("record {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// One corpus unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One JSON object `{"id": ..., "text": ...}` per line.
    Jsonl,
    /// One document per line; ids assigned sequentially from zero.
    Txt,
}

/// Privatization settings carried into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivatizationConfig {
    pub epsilon: PrivacyBudget,
    pub seed: u64,
    pub oov_policy: OovPolicy,
    pub lowercase: bool,
}

impl PrivatizationConfig {
    pub fn new(epsilon: PrivacyBudget, seed: u64) -> Self {
        Self {
            epsilon,
            seed,
            oov_policy: OovPolicy::Passthrough,
            lowercase: true,
        }
    }
}

/// Token accounting for one document or a whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub total: u64,
    /// In-vocabulary tokens that went through the mechanism.
    pub perturbed: u64,
    /// Tokens handled by the OOV policy; `perturbed + oov == total`.
    pub oov: u64,
}

impl TokenCounts {
    fn add(&mut self, other: TokenCounts) {
        self.total += other.total;
        self.perturbed += other.perturbed;
        self.oov += other.oov;
    }
}

/// Sidecar metadata written next to every privatized corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PrivatizationConfig,
    pub embeddings: EmbeddingInfo,
    pub documents: u64,
    pub counts: TokenCounts,
    pub parallelism: usize,
    pub exact_nn: bool,
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingInfo {
    pub path: String,
    pub sha256: String,
    pub words: u64,
    pub dimension: u64,
}

/// SHA-256 of a file, hex-encoded; recorded in the manifest so a run can be
/// tied to the exact embedding file that produced it.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    use sha2::{Digest, Sha256};
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

/// Privatize one document. The output id equals the input id.
pub fn privatize_document<S>(
    search: &S,
    doc: &Document,
    cfg: &PrivatizationConfig,
) -> Result<(Document, TokenCounts), PipelineError>
where
    S: NeighborSearch + ?Sized,
{
    let tokens = tokenize(&doc.text, cfg.lowercase);
    let result = perturb_tokens(
        search,
        &tokens,
        cfg.epsilon,
        cfg.seed,
        doc.id,
        &cfg.oov_policy,
    )?;
    let counts = TokenCounts {
        total: tokens.len() as u64,
        perturbed: result.perturbed,
        oov: result.oov,
    };
    Ok((
        Document {
            id: doc.id,
            text: detokenize(&result.tokens),
        },
        counts,
    ))
}

/// Privatize a corpus on a bounded worker pool.
///
/// Output documents are in input order; `parallelism = 0` uses the default
/// pool size. Duplicate ids are rejected up front.
pub fn privatize_corpus<S>(
    search: &S,
    docs: &[Document],
    cfg: &PrivatizationConfig,
    parallelism: usize,
) -> Result<(Vec<Document>, TokenCounts), PipelineError>
where
    S: NeighborSearch + ?Sized + Sync,
{
    let mut seen = HashSet::with_capacity(docs.len());
    for doc in docs {
        if !seen.insert(doc.id) {
            return Err(PipelineError::DuplicateDocId(doc.id));
        }
    }
    let work = || -> Result<Vec<(Document, TokenCounts)>, PipelineError> {
        docs.par_iter()
            .map(|doc| privatize_document(search, doc, cfg))
            .collect()
    };
    let results = if parallelism == 0 {
        work()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .expect("thread pool");
        pool.install(work)?
    };
    let mut out = Vec::with_capacity(results.len());
    let mut totals = TokenCounts::default();
    for (doc, counts) in results {
        totals.add(counts);
        out.push(doc);
    }
    Ok((out, totals))
}

/// Read a corpus file. `Txt` assigns sequential ids starting at zero.
pub fn read_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>, PipelineError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| PipelineError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io {
            path: display.clone(),
            source,
        })?;
        match format {
            CorpusFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let doc: Document =
                    serde_json::from_str(&line).map_err(|e| PipelineError::BadRecord {
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                docs.push(doc);
            }
            CorpusFormat::Txt => docs.push(Document {
                id: i as u64,
                text: line,
            }),
        }
    }
    Ok(docs)
}

/// Write a corpus file in the given format.
pub fn write_corpus(
    path: &Path,
    docs: &[Document],
    format: CorpusFormat,
) -> Result<(), PipelineError> {
    let display = path.display().to_string();
    let io = |source| PipelineError::Io {
        path: display.clone(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for doc in docs {
        match format {
            CorpusFormat::Jsonl => {
                let line = serde_json::to_string(doc).expect("document serializes");
                writeln!(out, "{line}").map_err(io)?;
            }
            CorpusFormat::Txt => writeln!(out, "{}", doc.text).map_err(io)?,
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_store, SynthParams};
    use std::io::Write as _;

    fn small_store() -> textpriv::EmbeddingStore {
        synthetic_store(SynthParams {
            words: 300,
            dim: 8,
            clusters: 6,
            seed: 3,
            ..Default::default()
        })
    }

    #[test]
    fn identity_budget_reproduces_tokens() {
        let store = small_store();
        let cfg = PrivatizationConfig::new(PrivacyBudget::infinite(), 1);
        let doc = Document {
            id: 0,
            text: "w1 w2 , w3 (unknownword)".into(),
        };
        let (out, counts) = privatize_document(&store, &doc, &cfg).unwrap();
        assert_eq!(out.text, "w1 w2 , w3 ( unknownword )");
        assert_eq!(counts.total, 7);
        assert_eq!(counts.perturbed + counts.oov, counts.total);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let store = small_store();
        let cfg = PrivatizationConfig::new(PrivacyBudget::infinite(), 1);
        let docs = vec![
            Document { id: 4, text: "w1".into() },
            Document { id: 4, text: "w2".into() },
        ];
        assert!(matches!(
            privatize_corpus(&store, &docs, &cfg, 1),
            Err(PipelineError::DuplicateDocId(4))
        ));
    }

    #[test]
    fn parallelism_does_not_change_output() {
        let store = small_store();
        let cfg = PrivatizationConfig::new(PrivacyBudget::new(3.0).unwrap(), 99);
        let docs: Vec<Document> = (0..60)
            .map(|i| Document {
                id: i,
                text: format!("w{} w{} xq{} w{}", i % 250, (i * 7) % 250, i, (i * 13) % 250),
            })
            .collect();
        let (seq, c1) = privatize_corpus(&store, &docs, &cfg, 1).unwrap();
        let (par, c8) = privatize_corpus(&store, &docs, &cfg, 8).unwrap();
        assert_eq!(seq, par);
        assert_eq!(c1, c8);
        assert!(c1.perturbed > 0);
        assert_eq!(c1.oov, 60);
    }

    #[test]
    fn token_accounting_is_conserved() {
        let store = small_store();
        let mut cfg = PrivatizationConfig::new(PrivacyBudget::new(5.0).unwrap(), 2);
        cfg.oov_policy = OovPolicy::Drop;
        let docs = vec![Document {
            id: 0,
            text: "w0 notaword w1 alsonot w2".into(),
        }];
        let (out, counts) = privatize_corpus(&store, &docs, &cfg, 1).unwrap();
        assert_eq!(counts.total, 5);
        assert_eq!(counts.perturbed, 3);
        assert_eq!(counts.oov, 2);
        assert_eq!(counts.perturbed + counts.oov, counts.total);
        // Dropped tokens shrink the output.
        assert_eq!(out[0].text.split_whitespace().count(), 3);
    }

    #[test]
    fn jsonl_and_txt_round_trip() {
        let docs = vec![
            Document { id: 0, text: "hello there".into() },
            Document { id: 1, text: "second doc".into() },
        ];
        for format in [CorpusFormat::Jsonl, CorpusFormat::Txt] {
            let f = tempfile::NamedTempFile::new().unwrap();
            write_corpus(f.path(), &docs, format).unwrap();
            let back = read_corpus(f.path(), format).unwrap();
            assert_eq!(back, docs);
        }
    }

    #[test]
    fn bad_jsonl_record_names_the_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":0,"text":"ok"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let err = read_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        assert!(matches!(err, PipelineError::BadRecord { line: 2, .. }));
    }

    #[test]
    fn sha256_matches_known_vector() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"abc").unwrap();
        assert_eq!(
            file_sha256(f.path()).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
