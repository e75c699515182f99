//! Counter-based splittable random number generator.
//!
//! The generator is fully described by a 64-bit key and a 64-bit counter.
//! Draw `n` (zero-based) of a stream with key `k` is
//!
//! ```text
//! mix64(k + (n + 1) * 0x9E37_79B9_7F4A_7C15)
//! ```
//!
//! where `mix64` is the SplitMix64 finalizer (shifts 30/27/31, multipliers
//! `0xBF58_476D_1CE4_E5B9` and `0x94D0_49BB_1331_11EB`). Child streams are
//! derived with `split(id)`, whose key is
//! `mix_split(k ^ (id + 1) * 0xD1B5_4A32_D192_ED03)` using the Murmur3
//! finalizer (shifts 33/33/33, multipliers `0xFF51_AFD7_ED55_8CCD` and
//! `0xC4CE_B9FE_1A85_EC53`). A child never shares a key with its parent
//! for realistic seeds, and the parent counter is untouched by splitting.
//!
//! Uniform doubles take the top 53 bits: `(x >> 11) * 2^-53`, in `[0, 1)`.
//! Normals use Box–Muller with `u1 = 1 - uniform()` so the log never sees
//! zero; the sine half of each pair is cached and returned next.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_MUL: u64 = 0xD1B5_4A32_D192_ED03;

/// Named child streams of a run's master seed.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const TASK: u64 = 4;
    /// Held-out evaluation data.
    pub const EVAL: u64 = 5;
}

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mix_split(mut z: u64) -> u64 {
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z = (z ^ (z >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^ (z >> 33)
}

#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            key: seed,
            counter: 0,
            spare_normal: None,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream; does not advance `self`.
    pub fn split(&self, stream: u64) -> Rng {
        Rng::new(mix_split(self.key ^ stream.wrapping_add(1).wrapping_mul(SPLIT_MUL)))
    }

    /// Random access to draw `n` without touching the counter.
    pub fn at(&self, n: u64) -> u64 {
        mix64(self.key.wrapping_add(n.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * theta.sin());
        radius * theta.cos()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn uniforms(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    /// Fisher–Yates shuffle driven by `below`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
