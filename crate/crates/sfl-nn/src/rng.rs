//! Counter-based splittable PRNG.
//!
//! Every consumer of randomness (weight init, shuffling, augmentation,
//! attacker noise, ...) derives an independent named stream from the run's
//! root seed. Stream derivation depends only on the parent key and the
//! stream name, never on how many values the parent has produced, so the
//! overall run is deterministic regardless of the order in which
//! subsystems draw randomness.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a over the stream name bytes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A counter-based generator: the i-th output is `mix64(key + i*GOLDEN)`.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    ctr: u64,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng { key: mix64(seed ^ GOLDEN), ctr: 0 }
    }

    /// Derive an independent child stream. Position-independent: calling
    /// this before or after drawing values yields the same child.
    pub fn stream(&self, name: &str) -> Rng {
        Rng { key: mix64(self.key.wrapping_add(mix64(hash_name(name)))), ctr: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key.wrapping_add(self.ctr.wrapping_mul(GOLDEN)).wrapping_add(GOLDEN));
        self.ctr += 1;
        out
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform in [0, 1).
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, 1).
    pub fn uniform_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Uniform integer in [0, n). n must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift; bias is negligible for the desk-scale ranges used here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian_f64(&mut self) -> f64 {
        let u1 = self.uniform_f64().max(1e-300);
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_position_independent() {
        let root = Rng::from_seed(7);
        let mut spent = root.clone();
        for _ in 0..100 {
            spent.next_u64();
        }
        let a: Vec<u64> = {
            let mut s = root.stream("init");
            (0..8).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = spent.stream("init");
            (0..8).map(|_| s.next_u64()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_names_give_distinct_streams() {
        let root = Rng::from_seed(7);
        let a = root.stream("a").next_u64();
        let b = root.stream("b").next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..10_000 {
            let x = rng.uniform_f64();
            assert!((0.0..1.0).contains(&x));
            let y = rng.uniform_f32();
            assert!((0.0..1.0).contains(&y));
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::from_seed(11);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
