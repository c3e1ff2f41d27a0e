//! The word-embedding store: an immutable vocabulary with one vector per
//! word, plus the exact nearest-neighbor oracle that defines the metric
//! space the privatization mechanism operates in.
//!
//! Vectors are kept as `f32` rows (the precision of the common text
//! distribution formats); all distance arithmetic is carried out in `f64`.
//! Nothing is normalized on load: rescaling the vectors would change the
//! metric and therefore the privacy semantics.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

use hashbrown::HashMap;

/// Errors raised while building or querying an [`EmbeddingStore`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    /// The same word was inserted twice. Duplicates are a hard error:
    /// silently overwriting rows would corrupt every statistic estimated
    /// over the vocabulary.
    #[error("duplicate word {0:?}")]
    DuplicateWord(String),
    /// A row's length disagrees with the store dimension.
    #[error("dimension mismatch: expected {expected} components, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    /// A vector component was NaN or infinite.
    #[error("non-finite component in vector for {0:?}")]
    NonFiniteComponent(String),
    /// The store would be empty.
    #[error("embedding store must contain at least one word")]
    Empty,
    /// A query vector's length disagrees with the store dimension.
    #[error("query has {actual} components, store dimension is {expected}")]
    QueryDimension { expected: usize, actual: usize },
    /// More neighbors were requested than words exist.
    #[error("k = {k} exceeds vocabulary size {len}")]
    KTooLarge { k: usize, len: usize },
    /// A word index outside `0..len`.
    #[error("word index {index} out of bounds for vocabulary of {len}")]
    IndexOutOfBounds { index: usize, len: usize },
}

/// One entry of a nearest-neighbor result list.
///
/// Result lists are always sorted by `(distance, index)` ascending, so equal
/// distances resolve to the smaller vocabulary index. That tie-break is what
/// makes every query deterministic and reproducible across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborResult<'a> {
    /// The vocabulary word.
    pub word: &'a str,
    /// Its vocabulary index (file insertion order).
    pub index: usize,
    /// Euclidean distance to the query.
    pub distance: f64,
}

/// Immutable vocabulary-to-vector map defining the mechanism's metric space.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    words: Vec<String>,
    by_word: HashMap<String, u32>,
    /// Row-major `len x dim`.
    vectors: Vec<f32>,
    dim: usize,
}

/// Incremental, validating constructor for [`EmbeddingStore`].
///
/// The dimension is fixed by the first row (or by `expect_dim`) and every
/// subsequent row must match it exactly.
#[derive(Debug, Default)]
pub struct EmbeddingStoreBuilder {
    words: Vec<String>,
    by_word: HashMap<String, u32>,
    vectors: Vec<f32>,
    dim: Option<usize>,
}

impl EmbeddingStoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pin the dimension up front instead of inferring it from the first row.
    pub fn expect_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    /// Append one `(word, vector)` row.
    pub fn push(&mut self, word: &str, coords: &[f32]) -> Result<(), StoreError> {
        let dim = match self.dim {
            Some(d) => d,
            None => {
                if coords.is_empty() {
                    return Err(StoreError::DimensionMismatch {
                        expected: 1,
                        actual: 0,
                    });
                }
                self.dim = Some(coords.len());
                coords.len()
            }
        };
        if coords.len() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                actual: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(StoreError::NonFiniteComponent(word.to_owned()));
        }
        if self.by_word.contains_key(word) {
            return Err(StoreError::DuplicateWord(word.to_owned()));
        }
        let index = self.words.len() as u32;
        self.by_word.insert(word.to_owned(), index);
        self.words.push(word.to_owned());
        self.vectors.extend_from_slice(coords);
        Ok(())
    }

    pub fn finish(self) -> Result<EmbeddingStore, StoreError> {
        let dim = self.dim.ok_or(StoreError::Empty)?;
        if self.words.is_empty() {
            return Err(StoreError::Empty);
        }
        Ok(EmbeddingStore {
            words: self.words,
            by_word: self.by_word,
            vectors: self.vectors,
            dim,
        })
    }
}

impl EmbeddingStore {
    /// Build a store from `(word, vector)` pairs, validating all invariants.
    pub fn from_entries<'w, W, C>(entries: W) -> Result<Self, StoreError>
    where
        W: IntoIterator<Item = (&'w str, C)>,
        C: AsRef<[f32]>,
    {
        let mut b = EmbeddingStoreBuilder::new();
        for (word, coords) in entries {
            b.push(word, coords.as_ref())?;
        }
        b.finish()
    }

    /// Number of vocabulary words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Embedding dimension `d`.
    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Word at a vocabulary index. Panics on out-of-bounds.
    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    /// Vocabulary index of `word`, if present.
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.by_word.get(word).map(|&i| i as usize)
    }

    /// The stored vector for `word`. A miss is not an error: out-of-vocabulary
    /// policy is decided by the caller.
    pub fn lookup(&self, word: &str) -> Option<&[f32]> {
        self.index_of(word).map(|i| self.row(i))
    }

    /// Row at a vocabulary index. Panics on out-of-bounds.
    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|w| w.as_str())
    }

    pub(crate) fn check_query(&self, query: &[f64], k: usize) -> Result<(), StoreError> {
        if query.len() != self.dim {
            return Err(StoreError::QueryDimension {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if k > self.len() {
            return Err(StoreError::KTooLarge { k, len: self.len() });
        }
        Ok(())
    }

    /// Exact k-nearest-neighbor search by full scan.
    ///
    /// This is the oracle: any accelerated index is tested against it.
    /// Results are sorted by `(distance, index)` ascending.
    pub fn nearest_exact(&self, query: &[f64], k: usize) -> Result<Vec<NeighborResult<'_>>, StoreError> {
        self.check_query(query, k)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut best = KBest::new(k);
        for index in 0..self.len() {
            best.offer(dist_sq(self.row(index), query), index as u32);
        }
        Ok(best.into_results(self))
    }
}

/// Squared Euclidean distance between a stored `f32` row and an `f64` query.
#[inline]
pub(crate) fn dist_sq(row: &[f32], query: &[f64]) -> f64 {
    debug_assert_eq!(row.len(), query.len());
    let mut acc = 0.0f64;
    for (a, b) in row.iter().zip(query.iter()) {
        let d = f64::from(*a) - *b;
        acc += d * d;
    }
    acc
}

/// Bounded best-k accumulator ordered by `(squared distance, index)`.
///
/// Shared by the exact scan and the pruned index so both paths keep and
/// tie-break candidates identically.
pub(crate) struct KBest {
    k: usize,
    // Max-heap: the worst kept candidate sits on top.
    heap: alloc::collections::BinaryHeap<HeapEntry>,
}

#[derive(PartialEq)]
struct HeapEntry {
    d2: f64,
    index: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        // Lexicographic on (d2, index); total_cmp keeps this a total order.
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl KBest {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: alloc::collections::BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn offer(&mut self, d2: f64, index: u32) {
        let entry = HeapEntry { d2, index };
        if self.heap.len() < self.k {
            self.heap.push(entry);
        } else if let Some(worst) = self.heap.peek() {
            if entry < *worst {
                self.heap.pop();
                self.heap.push(entry);
            }
        }
    }

    /// Current k-th best squared distance, once k candidates are held.
    #[inline]
    pub(crate) fn kth_d2(&self) -> Option<f64> {
        if self.heap.len() < self.k {
            None
        } else {
            self.heap.peek().map(|e| e.d2)
        }
    }

    pub(crate) fn into_results<'a>(self, store: &'a EmbeddingStore) -> Vec<NeighborResult<'a>> {
        use num_traits::Float;
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| NeighborResult {
                word: store.word(e.index as usize),
                index: e.index as usize,
                distance: Float::sqrt(e.d2),
            })
            .collect()
    }
}
