//! Counter-based random number stream.
//!
//! Every stochastic operation in this crate takes an explicit [`RngStream`];
//! there is no global RNG state. The generator is a counter-based SplitMix64:
//! draw `i` from seed `s` is a pure function of `(s, i)`, so equal seeds give
//! bit-identical sequences on every platform. Streams are [`split`](RngStream::split)
//! rather than shared across concurrent tasks.

/// Deterministic, splittable random number stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Seed this stream was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Derives an independent child stream, advancing this one by one draw.
    pub fn split(&mut self) -> RngStream {
        RngStream::new(mix(self.next_u64() ^ GOLDEN_GAMMA))
    }

    /// Uniform in `[0, 1)`, 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn uniform_int(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw via Box-Muller (consumes two uniforms).
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_int(i + 1);
            items.swap(i, j);
        }
    }
}
