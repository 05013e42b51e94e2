//! Counter-keyed Gaussian draws.
//!
//! Every draw is addressed by `(seed, stream, flat index)`: the generator for a
//! stream is positioned at word `4 * index` and consumes exactly two `u64`.
//! Two tensors with the same key therefore share base draws regardless of
//! their scale, which is what coupled seeding of gauge pairs relies on.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids. Layers get distinct streams so no two tensors correlate.
pub mod stream {
    pub const INIT_U: u64 = 1;
    pub const INIT_W: u64 = 2;
    pub const INIT_V: u64 = 3;
    pub const TEACHER_U: u64 = 11;
    pub const TEACHER_V: u64 = 12;
    pub const DATA_X: u64 = 21;
    pub const DATA_NOISE: u64 = 22;
    pub const BATCH_INDEX: u64 = 23;
    pub const EVAL_X: u64 = 24;
    pub const PROBE_X: u64 = 31;
    pub const PROBE_Y: u64 = 32;
    pub const ATTN_Q: u64 = 41;
    pub const ATTN_K: u64 = 42;
}

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines several words into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x51_7C_C1_B7_27_22_0A_95u64, |acc, &p| mix(acc ^ mix(p)))
}

pub struct KeyedRng {
    rng: ChaCha8Rng,
}

impl KeyedRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        KeyedRng { rng }
    }

    /// Positions the generator at element `index`.
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(4 * index as u128);
    }

    /// Standard normal for the current element; advances one element.
    pub fn normal(&mut self) -> f64 {
        let x = self.rng.next_u64();
        let y = self.rng.next_u64();
        let u1 = ((x >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (y >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform in [0, 1) for the current element; advances one element.
    pub fn uniform(&mut self) -> f64 {
        let x = self.rng.next_u64();
        let _ = self.rng.next_u64();
        (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Fills `out` with `scale * N(0,1)` draws for elements `offset..offset+len`.
pub fn fill_normal(seed: u64, stream: u64, offset: u64, scale: f64, out: &mut [f64]) {
    let mut r = KeyedRng::new(seed, stream);
    r.seek(offset);
    for o in out.iter_mut() {
        *o = scale * r.normal();
    }
}

pub fn normal_vec(seed: u64, stream: u64, len: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; len];
    fill_normal(seed, stream, 0, scale, &mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_access_matches_sequential() {
        let all = normal_vec(7, 3, 100, 1.0);
        let mut part = vec![0.0; 10];
        fill_normal(7, 3, 45, 1.0, &mut part);
        assert_eq!(&all[45..55], &part[..]);
    }

    #[test]
    fn streams_differ() {
        let a = normal_vec(7, 1, 8, 1.0);
        let b = normal_vec(7, 2, 8, 1.0);
        assert_ne!(a, b);
    }

    #[test]
    fn moments_are_standard() {
        let v = normal_vec(1, 1, 200_000, 1.0);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        assert!(m.abs() < 0.01, "{m}");
        assert!((s - 1.0).abs() < 0.01, "{s}");
    }
}
