//! Deterministic randomness.
//!
//! Everything stochastic in this crate is derived from a `u64` key through
//! splitmix64, either as a one-shot hash (per-decision Gumbel noise keyed by
//! slot/rule identity) or as a short stream (`Mix64`). This keeps every run
//! bit-reproducible from its seed regardless of thread scheduling, and lets
//! noise follow a permutation of slot or rule identities, which the
//! permutation-equivariance tests rely on.

/// One splitmix64 scramble step.
#[inline]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a list of key parts into a single seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3u64; // arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Small deterministic generator: splitmix64 iterated as a stream.
#[derive(Clone, Debug)]
pub struct Mix64 {
    state: u64,
}

impl Mix64 {
    pub fn new(seed: u64) -> Self {
        Mix64 { state: splitmix64(seed) }
    }

    /// Stream seeded from several key parts.
    pub fn from_parts(parts: &[u64]) -> Self {
        Mix64 { state: mix(parts) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    /// A permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Gumbel(0,1) sample from a uniform, with the uniform clamped to
/// [1e-12, 1 - 1e-12] so the double log never overflows.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// One-shot Gumbel draw keyed by an identity tuple.
#[inline]
pub fn gumbel_keyed(parts: &[u64]) -> f64 {
    let v = mix(parts);
    gumbel_from_uniform((v >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
}

/// Stable 64-bit hash of a string, for seeding per-parameter init streams.
pub fn hash_str(s: &str) -> u64 {
    let mut acc = 0xCBF2_9CE4_8422_2325u64;
    for b in s.as_bytes() {
        acc ^= *b as u64;
        acc = acc.wrapping_mul(0x1000_0000_01B3);
    }
    splitmix64(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_deterministic() {
        let mut a = Mix64::new(42);
        let mut b = Mix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Mix64::new(7);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn uniform_mean_near_half() {
        let mut rng = Mix64::new(3);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rng.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean={mean}");
    }

    #[test]
    fn gumbel_extreme_uniforms_finite() {
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Mix64::new(11);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
