//! Seed derivation for reproducible sampling.
//!
//! Every random draw in the crate comes from a generator whose seed is a hash of
//! `(run seed, phase tag, sub-stream tags, question id, rollout index)`. Nothing
//! depends on the order in which work is scheduled, so parallel and sequential
//! execution produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all sampling.
pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn combine(h: u64, x: u64) -> u64 {
    mix64(h ^ mix64(x).rotate_left(17))
}

/// Phase tags that keep the seed streams of different pipeline stages disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Phase {
    Graph = 1,
    Split = 2,
    Pretrain = 3,
    Scan = 4,
    Sweep = 5,
    Harvest = 6,
    Batch = 7,
    Train = 8,
    Eval = 9,
    Recovery = 10,
    Exemplar = 11,
    Replicate = 12,
    Reference = 13,
    Bandit = 14,
}

/// A named, splittable stream of seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(run_seed: u64, phase: Phase) -> Self {
        SeedStream(combine(mix64(run_seed), phase as u64))
    }

    /// Wraps an already-derived stream seed.
    pub fn from_raw(seed: u64) -> Self {
        SeedStream(seed)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Derives an independent sub-stream.
    pub fn fork(self, tag: u64) -> Self {
        SeedStream(combine(self.0, tag))
    }

    pub fn seed(self, question_id: u64, index: u64) -> u64 {
        combine(combine(self.0, question_id), index)
    }

    pub fn rng(self, question_id: u64, index: u64) -> Rng {
        Rng::seed_from_u64(self.seed(question_id, index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn streams_are_distinct() {
        let a = SeedStream::new(7, Phase::Scan);
        let b = SeedStream::new(7, Phase::Train);
        let c = SeedStream::new(8, Phase::Scan);
        assert_ne!(a, b);
        assert_ne!(a, c);
        let mut seen = HashSet::new();
        for q in 0..50 {
            for i in 0..50 {
                assert!(seen.insert(a.seed(q, i)));
            }
        }
    }

    #[test]
    fn derivation_is_pure() {
        let s = SeedStream::new(42, Phase::Eval).fork(3);
        assert_eq!(s.seed(10, 11), SeedStream::new(42, Phase::Eval).fork(3).seed(10, 11));
        assert_ne!(s.seed(10, 11), s.seed(11, 10));
    }
}
