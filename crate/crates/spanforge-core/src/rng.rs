//! Seeded pseudo-random streams for reproducible sampling and shuffling.
//!
//! Every random decision in the toolkit flows through [`SeededRng`], a small
//! xoshiro256++ generator seeded via splitmix64. The generator is implemented
//! here rather than pulled from a crate so that shuffles and samples stay
//! byte-identical across platforms and dependency upgrades.
//!
//! Pipeline stages draw from independent streams derived with
//! [`SeededRng::for_stream`], keyed by a stage name, so adding a stage never
//! perturbs the draws of another.

use alloc::vec::Vec;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derive the seed of a named stream from a master seed. Seeding an
/// operation with `stream_seed(seed, "stage")` keeps its draws independent
/// of every other stage's.
pub fn stream_seed(seed: u64, stream: &str) -> u64 {
    seed ^ fnv1a64(stream.as_bytes())
}

/// Deterministic xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct SeededRng {
    state: [u64; 4],
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        SeededRng { state }
    }

    /// Derive the stream for a named pipeline stage from the master seed.
    pub fn for_stream(seed: u64, stream: &str) -> Self {
        Self::new(stream_seed(seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, n). The widening-multiply bias is below 2^-64 per draw.
    pub fn gen_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.gen_range(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices drawn uniformly from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.gen_range(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = SeededRng::for_stream(7, "split");
        let mut b = SeededRng::for_stream(7, "train_fold0");
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn gen_range_in_bounds() {
        let mut rng = SeededRng::new(3);
        for n in 1..50 {
            for _ in 0..20 {
                assert!(rng.gen_range(n) < n);
            }
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = SeededRng::new(11);
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn sample_indices_distinct() {
        let mut rng = SeededRng::new(5);
        let sample = rng.sample_indices(30, 12);
        assert_eq!(sample.len(), 12);
        let mut sorted = sample.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
    }

    #[test]
    fn f64_in_unit_interval() {
        let mut rng = SeededRng::new(9);
        for _ in 0..1000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
