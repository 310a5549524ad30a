//! Deterministic seeded randomness.
//!
//! All stochastic choices in the crate (scenario layout, link outcomes,
//! weight init, pose noise) are drawn from splitmix64 streams derived from
//! explicit integer keys, so every artifact is a pure function of its seeds
//! and is stable across platforms. Channel sampling uses counter-based keys
//! of the form (seed, t, src, dst) and therefore does not depend on query
//! order.

/// Stream tags keeping independent uses of one user seed decorrelated.
pub mod streams {
    pub const OBJECTS: u64 = 0x01;
    pub const AGENTS: u64 = 0x02;
    pub const CHANNEL: u64 = 0x03;
    pub const CURRICULUM: u64 = 0x04;
    pub const WEIGHTS: u64 = 0x05;
    pub const POSE_NOISE: u64 = 0x06;
    pub const TRACE: u64 = 0x07;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a sequence of key words into one 64-bit state.
pub fn hash_key(words: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3; // arbitrary nonzero start
    for &w in words {
        h = splitmix64(h ^ splitmix64(w));
    }
    h
}

/// Sequential splitmix64 generator.
#[derive(Clone, Debug)]
pub struct SimRng {
    state: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng { state: splitmix64(seed) }
    }

    /// Generator keyed by a list of words, e.g. `[seed, stream, t, i]`.
    pub fn from_key(words: &[u64]) -> Self {
        SimRng { state: hash_key(words) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        splitmix64(self.state)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn next_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        // Shift u1 away from zero so ln() stays finite.
        let u1 = u1 + f64::MIN_POSITIVE;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// One Bernoulli outcome keyed by counters; `true` with probability `prob`.
pub fn keyed_bernoulli(words: &[u64], prob: f64) -> bool {
    let u = (hash_key(words) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u < prob
}
