//! Seeded randomness primitives shared by every module.
//!
//! All stochastic behaviour in this crate flows through [`SplitMix64`] so
//! that outputs are reproducible across runs, platforms, and independent
//! reimplementations. The generator and the shuffle built on top of it are
//! part of the crate's external contract:
//!
//! * `SplitMix64` is the standard splitmix64 successor stream: the state
//!   advances by `0x9E3779B97F4A7C15` per draw and each output is the
//!   finalized mix of the new state.
//! * [`permutation_from_seed`] shuffles `0..t` with a Fisher-Yates pass that
//!   walks `i` from `t-1` down to `1` and swaps `a[i]` with `a[j]`,
//!   `j = next_u64() % (i + 1)`, consuming exactly `t - 1` draws.
//! * [`derive_seed`] produces per-item sub-seeds as
//!   `splitmix64_next(base_seed XOR index)`.

/// Splitmix64 generator. Copy-cheap; every draw mutates the state in place.
#[derive(Debug, Clone, Copy)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + self.below(span) as i64
    }

    /// Standard normal via Box-Muller. Consumes two draws.
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Sub-seed for item `index` under `base_seed`: one splitmix64 step of
/// `base_seed ^ index`.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    SplitMix64::new(base_seed ^ index).next_u64()
}

/// Seeded Fisher-Yates shuffle of the identity permutation on `0..t`.
pub fn permutation_from_seed(t: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    let mut perm: Vec<usize> = (0..t).collect();
    for i in (1..t).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Seeded in-place shuffle of an arbitrary slice (same walk as
/// [`permutation_from_seed`]).
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
