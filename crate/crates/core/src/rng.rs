//! Seeded, splittable random streams.
//!
//! Algorithm: ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`). The 256-bit key
//! comes from `SeedableRng::seed_from_u64(seed)`; independent sub-streams of the
//! same seed are selected with `set_stream(stream_id)`.
//!
//! Draws are defined on top of `next_u64` so they can be reproduced elsewhere:
//! - uniform on `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! - standard normal: Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one
//!   value per pair of uniforms

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used by the generators, so derived streams never collide.
pub mod streams {
    pub const EXOGENOUS: u64 = 1;
    pub const UNBIASED: u64 = 2;
    pub const LABEL_NOISE: u64 = 3;
    pub const SELECTION: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const ESTIMATOR: u64 = 7;
    pub const INTERVENTION: u64 = 8;
}

pub fn stream(seed: u64, stream_id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Child seed for the `index`-th sub-task of a parent seed (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform_range(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn normal(rng: &mut impl RngCore, mean: f64, sd: f64) -> f64 {
    mean + sd * standard_normal(rng)
}

pub fn bernoulli(rng: &mut impl RngCore, p: f64) -> bool {
    uniform(rng) < p
}

/// Uniform index in `0..n`.
pub fn index(rng: &mut impl RngCore, n: usize) -> usize {
    ((uniform(rng) * n as f64) as usize).min(n.saturating_sub(1))
}

/// Fisher–Yates shuffle driven by [`index`].
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}

/// `m` distinct indices from `0..n`, returned in ascending order.
pub fn sample_without_replacement(rng: &mut impl RngCore, n: usize, m: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    // partial Fisher–Yates
    for i in 0..m.min(n) {
        let j = i + index(rng, n - i);
        all.swap(i, j);
    }
    let mut picked = all[..m.min(n)].to_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, 1).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(stream(7, 1).next_u64(), stream(7, 2).next_u64());
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
    }

    #[test]
    fn normal_moments() {
        let mut rng = stream(1, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn sampling_without_replacement() {
        let mut rng = stream(3, 0);
        let s = sample_without_replacement(&mut rng, 50, 10);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&i| i < 50));
        assert_eq!(sample_without_replacement(&mut rng, 5, 5), vec![0, 1, 2, 3, 4]);
    }
}
