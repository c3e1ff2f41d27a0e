//! Synthetic embedding stores for tests, demos, and calibration dry runs.
//!
//! Real embedding clouds are not homogeneous: most words sit in dense
//! clusters, a minority sit nearly alone. The generator mirrors that with a
//! Gaussian mixture whose per-cluster spread varies, plus a configurable
//! fraction of isolated outlier words. The heterogeneity is what gives the
//! deniability statistics their characteristic skew.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{BufWriter, Write};
use std::path::Path;

use textpriv::embedding::{EmbeddingStore, EmbeddingStoreBuilder};

#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub words: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Spread of cluster centers around the origin.
    pub center_scale: f64,
    /// Median intra-cluster standard deviation; per-cluster values vary
    /// log-uniformly within a factor of four of this.
    pub cluster_spread: f64,
    /// Fraction of words placed as isolated outliers.
    pub isolated_fraction: f64,
    /// Distance scale of the outliers.
    pub isolated_scale: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            words: 10_000,
            dim: 16,
            clusters: 64,
            center_scale: 4.0,
            cluster_spread: 0.35,
            isolated_fraction: 0.03,
            isolated_scale: 14.0,
            seed: 7,
        }
    }
}

/// Generate a deterministic synthetic store. Words are named `w0..wN-1`.
pub fn synthetic_store(params: SynthParams) -> EmbeddingStore {
    assert!(params.words >= 1 && params.dim >= 1 && params.clusters >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dim = params.dim;

    let mut centers = vec![0.0f64; params.clusters * dim];
    for c in centers.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *c = g * params.center_scale;
    }
    let sigmas: Vec<f64> = (0..params.clusters)
        .map(|_| {
            // Log-uniform in [spread/4, spread*4].
            let u: f64 = rng.random_range(-1.0..1.0);
            params.cluster_spread * (4.0f64).powf(u)
        })
        .collect();

    let isolated = ((params.words as f64) * params.isolated_fraction).round() as usize;
    let mut builder = EmbeddingStoreBuilder::new();
    let mut row = vec![0.0f32; dim];
    for i in 0..params.words {
        if i < isolated {
            for r in row.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *r = (g * params.isolated_scale) as f32;
            }
        } else {
            let c = rng.random_range(0..params.clusters);
            let sigma = sigmas[c];
            for (j, r) in row.iter_mut().enumerate() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *r = (centers[c * dim + j] + g * sigma) as f32;
            }
        }
        builder.push(&format!("w{i}"), &row).expect("generated words are unique");
    }
    builder.finish().expect("at least one word")
}

/// Write a store in the text embedding format [`crate::glove`] loads.
pub fn write_embedding_file(store: &EmbeddingStore, path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..store.len() {
        write!(out, "{}", store.word(i))?;
        for c in store.row(i) {
            write!(out, " {c}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let p = SynthParams {
            words: 200,
            ..Default::default()
        };
        let a = synthetic_store(p);
        let b = synthetic_store(p);
        assert_eq!(a.len(), 200);
        for i in 0..a.len() {
            assert_eq!(a.row(i), b.row(i));
        }
    }

    #[test]
    fn file_round_trip_is_exact() {
        let p = SynthParams {
            words: 50,
            dim: 5,
            clusters: 4,
            ..Default::default()
        };
        let store = synthetic_store(p);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_embedding_file(&store, f.path()).unwrap();
        let loaded = crate::glove::load_embeddings(f.path(), Some(5)).unwrap();
        assert_eq!(loaded.len(), store.len());
        for i in 0..store.len() {
            assert_eq!(loaded.word(i), store.word(i));
            assert_eq!(loaded.row(i), store.row(i));
        }
    }
}
