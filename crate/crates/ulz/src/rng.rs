//! Deterministic counter-based pseudo-random generation.
//!
//! All randomness in the crate flows through [`SplitMix64`], keyed by a
//! user seed and a stream id. Distinct streams (dictionary entries, signal
//! entries, noise, initialization, per-run parameter draws) are derived by
//! mixing the stream id into the seed, so draws are independent per stream
//! and bit-reproducible across platforms.

/// Named streams. Adding a stream never perturbs existing ones.
pub mod stream {
    pub const DICT: u64 = 1;
    pub const SIGNAL: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SOLVER: u64 = 5;
    pub const TRAIN: u64 = 6;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 generator with Box-Muller Gaussian sampling.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed, spare: None }
    }

    /// Generator for `(seed, stream_id)`; streams do not overlap because
    /// the id is scrambled into the key before any output is taken.
    pub fn stream(seed: u64, stream_id: u64) -> Self {
        Self::new(mix(seed ^ stream_id.wrapping_mul(GOLDEN)))
    }

    /// A sub-stream of an existing stream, e.g. per-instance or per-iteration.
    pub fn substream(seed: u64, stream_id: u64, index: u64) -> Self {
        Self::new(mix(
            mix(seed ^ stream_id.wrapping_mul(GOLDEN)) ^ index.wrapping_mul(GOLDEN),
        ))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    #[inline]
    pub fn next_f64_open(&mut self) -> f64 {
        1.0 - self.next_f64()
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller; the second value of each pair is cached.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }
}
