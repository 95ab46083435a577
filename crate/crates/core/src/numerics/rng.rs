//! Counter-based random number streams.
//!
//! The generator is a 10-round Philox-style 2x64 bijection: each 128-bit
//! counter block (block index, stream index) is scrambled under a 64-bit
//! key (the master seed) into two output words. A draw is therefore a pure
//! function of (seed, stream, position), which is what makes parallel
//! simulation replications reproducible regardless of scheduling: every
//! replication owns its own stream index and never shares mutable state.

const PHILOX_M: u64 = 0xD2B7_4407_B1CE_6E93;
const PHILOX_W: u64 = 0x9E37_79B9_7F4A_7C15;
const ROUNDS: usize = 10;

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let wide = (a as u128) * (b as u128);
    ((wide >> 64) as u64, wide as u64)
}

#[inline]
fn philox2x64(mut c0: u64, mut c1: u64, mut key: u64) -> (u64, u64) {
    for _ in 0..ROUNDS {
        let (hi, lo) = mulhilo(PHILOX_M, c0);
        c0 = hi ^ key ^ c1;
        c1 = lo;
        key = key.wrapping_add(PHILOX_W);
    }
    (c0, c1)
}

/// One independent random stream identified by (seed, stream index).
///
/// Streams are single-owner: clone or construct fresh ones instead of
/// sharing across threads.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    block: u64,
    pending: Option<u64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream {
            seed,
            stream,
            block: 0,
            pending: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        if let Some(w) = self.pending.take() {
            return w;
        }
        let (a, b) = philox2x64(self.block, self.stream, self.seed);
        self.block = self.block.wrapping_add(1);
        self.pending = Some(b);
        a
    }

    /// Uniform draw strictly inside (0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform index in `0..n`, by 128-bit widening multiply.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    pub fn next_bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Exponential draw with the given rate.
    pub fn next_exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -self.next_f64().ln() / rate
    }

    /// Standard normal draw (Marsaglia polar method; the spare is
    /// discarded so each call consumes a whole rejection loop).
    pub fn next_standard_normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    pub fn next_normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.next_standard_normal()
    }
}
