use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Seeded random stream: xoshiro256++ with its state expanded from the
/// 64-bit seed by SplitMix64. Identical seeds give identical streams on
/// every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `stream`; does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(mix(self.seed ^ mix(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`. Panics when `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n` in ascending order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..n).collect();
        self.shuffle(&mut all);
        all.truncate(k.min(n));
        all.sort_unstable();
        all
    }
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen draws; a change here changes every seeded output file.
        let mut r = Rng::new(7);
        let bits: Vec<u64> = (0..3).map(|_| r.uniform().to_bits()).collect();
        assert_eq!(
            bits,
            [0x3fac583400555d20, 0x3fc607e46efd274c, 0x3fe6f66236761a8b]
        );
        assert_eq!(r.normal().to_bits(), 0xbfd33a7993f0bf9c);
    }

    #[test]
    fn forks_are_independent_of_parent_progress() {
        let mut parent = Rng::new(3);
        let a = parent.fork(1).uniform();
        parent.uniform();
        let b = parent.fork(1).uniform();
        assert_eq!(a, b);
        assert_ne!(parent.fork(1).uniform(), parent.fork(2).uniform());
    }

    #[test]
    fn choose_distinct_returns_sorted_unique() {
        let mut r = Rng::new(1);
        let picks = r.choose_distinct(10, 5);
        assert_eq!(picks.len(), 5);
        assert!(picks.windows(2).all(|w| w[0] < w[1]));
    }
}
