//! Deterministic seed fan-out.
//!
//! Every run draws all of its randomness from a single root seed. Subsystems
//! (per-learner init, bootstraps, negative sampling, dropout, ...) get their
//! own streams by mixing the root with a stream tag and an index, so changing
//! one consumer never shifts another consumer's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. The numeric values are part of the reproducibility contract:
/// renumbering them changes every derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    LearnerInit = 1,
    LearnerTraining = 2,
    Bootstrap = 3,
    Negatives = 4,
    Subset = 5,
    MetaTraining = 6,
    Predict = 7,
    Uncertainty = 8,
    Synthetic = 9,
}

/// SplitMix64 finalizer; decorrelates structured inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive a child seed from `root` for `stream`, index `idx`.
pub fn derive(root: u64, stream: Stream, idx: u64) -> u64 {
    splitmix64(splitmix64(root ^ (stream as u64).wrapping_mul(0xa076_1d64_78bd_642f)) ^ idx)
}

/// A seeded generator for a derived stream.
pub fn rng(root: u64, stream: Stream, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, idx))
}

/// Mix an extra index into an already-derived seed (e.g. per-step, then
/// per-sample within the step).
pub fn mix(seed: u64, idx: u64) -> u64 {
    splitmix64(seed ^ idx)
}

/// Generator seeded directly from a raw (already derived) seed value.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_stream_separated() {
        assert_eq!(derive(42, Stream::Bootstrap, 0), derive(42, Stream::Bootstrap, 0));
        assert_ne!(derive(42, Stream::Bootstrap, 0), derive(42, Stream::Bootstrap, 1));
        assert_ne!(derive(42, Stream::Bootstrap, 0), derive(42, Stream::Negatives, 0));
        assert_ne!(derive(42, Stream::Bootstrap, 0), derive(43, Stream::Bootstrap, 0));
    }

    #[test]
    fn learner_seeds_are_pairwise_distinct() {
        let seeds: Vec<u64> = (0..64).map(|k| derive(7, Stream::LearnerInit, k)).collect();
        for i in 0..seeds.len() {
            for j in (i + 1)..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
