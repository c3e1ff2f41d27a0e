//! Accelerated nearest-neighbor search.
//!
//! [`NearestIndex`] partitions the vocabulary into clusters (a few rounds of
//! seeded Lloyd iterations) and prunes whole clusters at query time with the
//! triangle inequality: a cluster at centroid distance `c` with radius `r`
//! cannot hold anything closer than `c - r`. Pruned search therefore returns
//! the same neighbors as [`EmbeddingStore::nearest_exact`], including
//! tie-breaks — the index trades nothing for its speed except build time.
//! A small relative margin keeps float rounding in the bound from ever
//! discarding a true neighbor.
//!
//! Callers that want the brute-force path (or need to compare against it)
//! use the store directly: [`EmbeddingStore`] implements [`NeighborSearch`]
//! with the exact scan.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{dist_sq, EmbeddingStore, KBest, NeighborResult, StoreError};

/// Relative slack applied to the pruning bound so that rounding in
/// `centroid distance - radius` can never hide a genuine neighbor.
const PRUNE_MARGIN: f64 = 1e-9;

/// Anything that can answer k-nearest-neighbor queries over a store.
///
/// Implemented by [`EmbeddingStore`] (exact scan) and [`NearestIndex`]
/// (cluster-pruned). The mechanism and calibration layers are generic over
/// this, which is how the "force the exact path" configuration flag works.
pub trait NeighborSearch: Sync {
    /// The store the searcher answers for.
    fn store(&self) -> &EmbeddingStore;

    /// The k nearest vocabulary entries, sorted by `(distance, index)`.
    fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<NeighborResult<'_>>, StoreError>;
}

impl NeighborSearch for EmbeddingStore {
    fn store(&self) -> &EmbeddingStore {
        self
    }

    fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<NeighborResult<'_>>, StoreError> {
        self.nearest_exact(query, k)
    }
}

/// Build parameters for [`NearestIndex`].
#[derive(Debug, Clone, Copy)]
pub struct IndexParams {
    /// Number of clusters; `None` picks `ceil(sqrt(len))`.
    pub clusters: Option<usize>,
    /// Lloyd iterations.
    pub iterations: usize,
    /// Seed for centroid initialization. The build is fully deterministic.
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            clusters: None,
            iterations: 8,
            seed: 0x1df0_63c5,
        }
    }
}

/// Cluster-pruned nearest-neighbor index over a borrowed store.
#[derive(Debug)]
pub struct NearestIndex<'a> {
    store: &'a EmbeddingStore,
    /// Row-major `clusters x dim`.
    centroids: Vec<f64>,
    /// Max distance from a member to its centroid, per cluster.
    radii: Vec<f64>,
    /// Member word indices, grouped by cluster.
    members: Vec<u32>,
    /// Cluster `c` owns `members[offsets[c]..offsets[c + 1]]`.
    offsets: Vec<usize>,
}

/// Cluster the store and return a query-ready index.
pub fn build_index(store: &EmbeddingStore, params: IndexParams) -> NearestIndex<'_> {
    let n = store.len();
    let dim = store.dimension();
    let k = params
        .clusters
        .unwrap_or_else(|| Float::sqrt(n as f64).ceil() as usize)
        .clamp(1, n);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    for i in sample_indices(&mut rng, n, k).into_iter() {
        centroids.extend(store.row(i).iter().map(|&c| f64::from(c)));
    }

    let mut assignment: Vec<u32> = vec![0; n];
    for iter in 0..params.iterations.max(1) {
        let mut changed = false;
        for p in 0..n {
            let row = store.row(p);
            let mut best = (f64::INFINITY, 0u32);
            for c in 0..k {
                let d2 = dist_sq_f64(&centroids[c * dim..(c + 1) * dim], row);
                if d2 < best.0 {
                    best = (d2, c as u32);
                }
            }
            if assignment[p] != best.1 {
                assignment[p] = best.1;
                changed = true;
            }
        }
        if iter + 1 == params.iterations.max(1) || !changed {
            break;
        }
        // Recompute means; an emptied cluster keeps its previous centroid.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for p in 0..n {
            let c = assignment[p] as usize;
            counts[c] += 1;
            let row = store.row(p);
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row.iter()) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }

    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a as usize] += 1;
    }
    let mut offsets = Vec::with_capacity(k + 1);
    let mut acc = 0usize;
    for c in 0..k {
        offsets.push(acc);
        acc += counts[c];
    }
    offsets.push(acc);

    let mut cursor = offsets.clone();
    let mut members = vec![0u32; n];
    for p in 0..n {
        let c = assignment[p] as usize;
        members[cursor[c]] = p as u32;
        cursor[c] += 1;
    }

    let mut radii = vec![0.0f64; k];
    for c in 0..k {
        let centroid = &centroids[c * dim..(c + 1) * dim];
        for &p in &members[offsets[c]..offsets[c + 1]] {
            let d = Float::sqrt(dist_sq(store.row(p as usize), centroid));
            if d > radii[c] {
                radii[c] = d;
            }
        }
    }

    NearestIndex {
        store,
        centroids,
        radii,
        members,
        offsets,
    }
}

#[inline]
fn dist_sq_f64(centroid: &[f64], row: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (a, b) in centroid.iter().zip(row.iter()) {
        let d = a - f64::from(*b);
        acc += d * d;
    }
    acc
}

impl<'a> NearestIndex<'a> {
    pub fn cluster_count(&self) -> usize {
        self.radii.len()
    }

    /// Pruned k-nearest-neighbor search; output matches the exact scan.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<NeighborResult<'a>>, StoreError> {
        self.store.check_query(query, k)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let dim = self.store.dimension();
        let nc = self.cluster_count();

        // Rank clusters by their lower bound on any member distance.
        let mut order: Vec<(f64, u32)> = (0..nc)
            .map(|c| {
                let dc = Float::sqrt(dist_sq_query(&self.centroids[c * dim..(c + 1) * dim], query));
                let lb = (dc - self.radii[c]).max(0.0);
                (lb, c as u32)
            })
            .collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best = KBest::new(k);
        for &(lb, c) in &order {
            if let Some(kth) = best.kth_d2() {
                if lb * lb > kth * (1.0 + PRUNE_MARGIN) {
                    break;
                }
            }
            let c = c as usize;
            for &p in &self.members[self.offsets[c]..self.offsets[c + 1]] {
                best.offer(dist_sq(self.store.row(p as usize), query), p);
            }
        }
        Ok(best.into_results(self.store))
    }
}

#[inline]
fn dist_sq_query(centroid: &[f64], query: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (a, b) in centroid.iter().zip(query.iter()) {
        let d = a - b;
        acc += d * d;
    }
    acc
}

impl<'a> NeighborSearch for NearestIndex<'a> {
    fn store(&self) -> &EmbeddingStore {
        self.store
    }

    fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<NeighborResult<'_>>, StoreError> {
        NearestIndex::nearest(self, query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = crate::embedding::EmbeddingStoreBuilder::new();
        for i in 0..n {
            let row: Vec<f32> = (0..dim).map(|_| rng.random_range(-4.0f32..4.0)).collect();
            b.push(&alloc::format!("w{i}"), &row).unwrap();
        }
        b.finish().unwrap()
    }

    #[test]
    fn index_matches_exact_scan_bit_for_bit() {
        let store = random_store(400, 6, 11);
        let index = build_index(&store, IndexParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-6.0f64..6.0)).collect();
            let exact = store.nearest_exact(&q, 3).unwrap();
            let fast = index.nearest(&q, 3).unwrap();
            assert_eq!(exact.len(), fast.len());
            for (e, f) in exact.iter().zip(fast.iter()) {
                assert_eq!(e.index, f.index);
                assert_eq!(e.distance.to_bits(), f.distance.to_bits());
            }
        }
    }

    #[test]
    fn index_handles_duplicate_vectors_and_ties() {
        let rows: Vec<(&str, Vec<f32>)> = alloc::vec![
            ("a", alloc::vec![1.0f32, 1.0]),
            ("b", alloc::vec![1.0, 1.0]),
            ("c", alloc::vec![-1.0, -1.0]),
            ("d", alloc::vec![-1.0, -1.0]),
            ("e", alloc::vec![0.0, 0.0]),
        ];
        let store =
            EmbeddingStore::from_entries(rows.iter().map(|(w, c)| (*w, c.as_slice()))).unwrap();
        let index = build_index(&store, IndexParams::default());
        let res = index.nearest(&[0.0, 0.0], 5).unwrap();
        let order: Vec<usize> = res.iter().map(|r| r.index).collect();
        assert_eq!(order, alloc::vec![4, 0, 1, 2, 3]);
    }

    #[test]
    fn k_equals_len_returns_everything() {
        let store = random_store(64, 3, 5);
        let index = build_index(&store, IndexParams::default());
        let res = index.nearest(&[0.0, 0.0, 0.0], 64).unwrap();
        assert_eq!(res.len(), 64);
        let mut seen: Vec<usize> = res.iter().map(|r| r.index).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn single_cluster_degenerate_store() {
        let store = EmbeddingStore::from_entries([("only", [3.0f32].as_slice())]).unwrap();
        let index = build_index(&store, IndexParams::default());
        let res = index.nearest(&[100.0], 1).unwrap();
        assert_eq!(res[0].word, "only");
    }

    #[test]
    fn far_queries_still_match_exact() {
        // Queries far outside the data cloud defeat pruning but not
        // correctness — this is the regime small privacy budgets produce.
        let store = random_store(300, 4, 7);
        let index = build_index(&store, IndexParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-400.0f64..400.0)).collect();
            let exact = store.nearest_exact(&q, 1).unwrap();
            let fast = index.nearest(&q, 1).unwrap();
            assert_eq!(exact[0].index, fast[0].index);
        }
    }
}
