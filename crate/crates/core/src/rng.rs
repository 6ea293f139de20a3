//! Seeded pseudo-random streams.
//!
//! Every stochastic step in the pipeline draws from an [`Rng`]: a
//! xoshiro256** generator whose 256-bit state is expanded from a 64-bit
//! seed with splitmix64. Streams are identical on every platform.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng(Xoshiro256StarStar);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    /// Independent stream for a numbered sub-task (trial, fold, worker).
    pub fn derive(seed: u64, stream: u64) -> Self {
        Rng::new(splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.0.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `amount` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        assert!(amount <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..amount {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(amount);
        pool
    }

    pub fn next_seed(&mut self) -> u64 {
        self.0.next_u64()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
