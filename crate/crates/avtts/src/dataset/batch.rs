//! Epoch batching: shuffle, bucket by length, pad per batch (padding
//! itself happens at graph-build time).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::rng::derive_seed;

/// Deterministic per (seed, epoch). Every index appears exactly once.
/// Nearby lengths are grouped to keep padding waste low.
pub fn make_batches(
    lengths: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xBA7C, epoch]));
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);

    // sort by length within macro-chunks so batches are length-homogeneous
    // without making the epoch order deterministic in length
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size * 4) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| std::cmp::Reverse(lengths[i]));
        for batch in chunk.chunks(batch_size) {
            batches.push(batch.to_vec());
        }
    }
    batches.shuffle(&mut rng);
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn small_corpus_is_one_batch() {
        let lengths = vec![5; 10];
        let batches = make_batches(&lengths, 16, 1, 0);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 10);
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let lengths: Vec<usize> = (0..50).map(|i| 3 + i % 7).collect();
        assert_eq!(make_batches(&lengths, 8, 4, 2), make_batches(&lengths, 8, 4, 2));
        assert_ne!(make_batches(&lengths, 8, 4, 2), make_batches(&lengths, 8, 4, 3));
    }

    #[test]
    fn every_index_exactly_once() {
        let lengths: Vec<usize> = (0..37).map(|i| 2 + i % 9).collect();
        let batches = make_batches(&lengths, 8, 9, 1);
        let all: Vec<usize> = batches.concat();
        assert_eq!(all.len(), 37);
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 37);
    }
}
