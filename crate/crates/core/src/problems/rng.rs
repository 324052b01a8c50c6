//! xoshiro256++ seeded through splitmix64, with Box–Muller normals.
//!
//! Every draw is specified down to the bit so that datasets and index
//! sequences can be regenerated by any implementation:
//!
//! - state words are four consecutive splitmix64 outputs of the seed;
//! - `uniform01 = (next_u64 >> 11) * 2^-53`, in `[0, 1)`;
//! - normals come in Box–Muller pairs with `u1 = 1 - uniform01` (never zero)
//!   and `u2 = uniform01`; `r cos(2 pi u2)` is returned first and
//!   `r sin(2 pi u2)` on the following call;
//! - `index(n) = (next_u64 * n) >> 64` in 128-bit arithmetic.

use std::f64::consts::TAU;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Mixes a base seed with a stream number into an independent seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut sm = SplitMix64::new(base ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03));
    sm.next_u64()
}

#[derive(Debug, Clone)]
pub struct Xoshiro256pp {
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl Xoshiro256pp {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let s = [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()];
        Self {
            s,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by multiply-shift. `n = 0` is treated as 1.
    pub fn index(&mut self, n: usize) -> usize {
        let n = n.max(1) as u128;
        ((self.next_u64() as u128 * n) >> 64) as usize
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
