//! Seeded random number generation.
//!
//! All randomness in the crate flows through [`Rng`], a thin wrapper around
//! ChaCha20 (`rand_chacha`). ChaCha20 output is specified bit-for-bit by its
//! reference algorithm, so a `(seed, stream)` pair yields the same sequence on
//! every platform. The generator is counter based: [`Rng::word_pos`] and
//! [`Rng::set_word_pos`] expose the 32-bit word counter so a stream can be
//! advanced or rewound without drawing.
//!
//! Gaussian variates use the Box–Muller transform on two 64-bit uniforms:
//!
//! ```text
//! u1 = ((next_u64 >> 11) + 1) * 2^-53      in (0, 1]
//! u2 =  (next_u64 >> 11)      * 2^-53      in [0, 1)
//! r  = sqrt(-2 ln u1)
//! z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)
//! ```
//!
//! `z0` is returned first and `z1` is cached for the next call.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Independent sub-streams derived from one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 0,
    Init = 1,
    Batches = 2,
    Probes = 3,
    PowerIteration = 4,
    MonteCarlo = 5,
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Generator for `seed` positioned at the start of a named sub-stream.
    pub fn with_stream(seed: u64, stream: Stream) -> Self {
        let mut rng = Self::new(seed);
        rng.inner.set_stream(stream as u64);
        rng
    }

    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Moves the counter; discards any cached Gaussian.
    pub fn set_word_pos(&mut self, pos: u128) {
        self.inner.set_word_pos(pos);
        self.spare = None;
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform in `(0, 1]`.
    fn uniform_open_zero(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * TWO_POW_M53
    }

    /// Standard normal via Box–Muller.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open_zero();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..bound` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below(0)");
        let bound = bound as u64;
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.inner.next_u64();
            let wide = (x as u128) * (bound as u128);
            if (wide as u64) >= threshold {
                return (wide >> 64) as usize;
            }
        }
    }

    /// `k` distinct indices from `0..n`, uniformly, returned in ascending order.
    /// Partial Fisher–Yates over an index table.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_unstable();
        pool
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn gaussian_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.gaussian()).collect()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = Rng::with_stream(7, Stream::Data);
        let mut b = Rng::with_stream(7, Stream::Init);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn word_pos_rewinds() {
        let mut rng = Rng::new(3);
        let pos = rng.word_pos();
        let first: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        rng.set_word_pos(pos);
        let again: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn sample_without_replacement_is_sorted_and_distinct() {
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            let s = rng.sample_without_replacement(10, 4);
            assert_eq!(s.len(), 4);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&i| i < 10));
        }
        assert_eq!(rng.sample_without_replacement(5, 5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn below_covers_range_uniformly() {
        let mut rng = Rng::new(11);
        let mut counts = [0usize; 6];
        let draws = 60_000;
        for _ in 0..draws {
            counts[rng.below(6)] += 1;
        }
        for c in counts {
            // binomial sd ~ 91
            assert!((c as f64 - 10_000.0).abs() < 500.0, "{counts:?}");
        }
    }
}
