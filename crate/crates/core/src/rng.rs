//! Random-number plumbing: seeded streams, inverse-CDF categorical draws and a
//! keyed hash for deterministic noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `k` derived from `base`. Stream 0 reproduces `base`.
pub fn split_stream(base: &SimRng, k: u64) -> SimRng {
    let mut r = base.clone();
    r.set_stream(base.get_stream().wrapping_add(k));
    r
}

/// Inverse-CDF draw over `probs` in index order from a single uniform `u`.
///
/// `probs` need not be exactly normalized; the last index with positive
/// mass absorbs round-off.
pub fn categorical_from_uniform(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = k;
            if target < acc {
                return k;
            }
        }
    }
    last_positive
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    categorical_from_uniform(probs, rng.random::<f64>())
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one key.
pub fn hash_words(words: impl IntoIterator<Item = u64>) -> u64 {
    words.into_iter().fold(0x51_7C_C1_B7_27_22_0A_95, |h, w| mix64(h ^ mix64(w)))
}

/// Maps a hash to a uniform value in `[-1, 1]`.
pub fn unit_symmetric(h: u64) -> f64 {
    ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_boundaries() {
        let p = [0.2, 0.0, 0.5, 0.3];
        assert_eq!(categorical_from_uniform(&p, 0.0), 0);
        assert_eq!(categorical_from_uniform(&p, 0.1999), 0);
        assert_eq!(categorical_from_uniform(&p, 0.2), 2);
        assert_eq!(categorical_from_uniform(&p, 0.69), 2);
        assert_eq!(categorical_from_uniform(&p, 0.7), 3);
        assert_eq!(categorical_from_uniform(&p, 0.999_999_999), 3);
        assert_eq!(categorical_from_uniform(&[0.0, 1.0, 0.0], 0.999_999), 1);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let base = seeded(5);
        let mut a = split_stream(&base, 0);
        let mut b = base.clone();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        let mut c = split_stream(&base, 1);
        let mut d = split_stream(&base, 1);
        let x = c.random::<u64>();
        assert_eq!(x, d.random::<u64>());
        assert_ne!(x, split_stream(&base, 2).random::<u64>());
    }

    #[test]
    fn unit_symmetric_range() {
        for k in 0..10_000u64 {
            let u = unit_symmetric(mix64(k));
            assert!((-1.0..=1.0).contains(&u));
        }
        assert_eq!(unit_symmetric(0), -1.0);
    }
}
