//! Deterministic pseudo-random numbers.
//!
//! Everything that draws randomness in this crate goes through [`Rng`]
//! (splitmix64), so a seed pins the whole stream bit for bit across
//! platforms and releases. Mask and shuffle seeds for a run are derived
//! from the run seed with [`derive_seed`] rather than drawn from a shared
//! stream, so consuming randomness in one component cannot shift another.

/// splitmix64 generator.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        // Guard the log; next_f64 can return exactly 0.
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Derive an independent stream seed from (base, salt, counter).
pub fn derive_seed(base: u64, salt: u64, counter: u64) -> u64 {
    let mut rng = Rng::new(base ^ salt.wrapping_mul(0xd6e8_feb8_6659_fd93));
    let _ = rng.next_u64();
    rng.next_u64() ^ Rng::new(counter.wrapping_add(0x2545_f491_4f6c_dd1d)).next_u64()
}
