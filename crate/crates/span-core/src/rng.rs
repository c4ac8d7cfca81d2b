//! Pinned PRNG: xorshift64* with splitmix64 seeding.
//!
//! Every stochastic choice in the crate (weight init, demonstration jitter,
//! shuffling, obstacle placement) flows through this generator so that a
//! (seed, config) pair reproduces byte-identical artifacts on any platform.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a master seed. Used to give each
/// episode / trial / model its own generator without correlation.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut s = stream ^ SPLITMIX_GAMMA;
    let mut t = master ^ splitmix64(&mut s);
    splitmix64(&mut t)
}

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn seed_from(seed: u64) -> Rng {
        let mut s = seed;
        let mut state = splitmix64(&mut s);
        if state == 0 {
            state = SPLITMIX_GAMMA;
        }
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        // xorshift64* (Vigna 2016)
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). n must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() >> 32) * n as u64) >> 32) as usize
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
