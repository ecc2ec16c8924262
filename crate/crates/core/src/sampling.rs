//! Seeded randomness shared by every stochastic operation in the crate.
//!
//! All sampling runs on ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`).
//! Integers in `[0, n)` are drawn by rejection on raw `next_u64` output rather
//! than through `rand`'s range sampling, so a split or bootstrap can be
//! replayed bit-for-bit by any implementation of the same two steps:
//!
//! 1. `x = next_u64()`; reject while `x >= u64::MAX - (u64::MAX % n)`;
//!    return `x % n`.
//! 2. Subsets of size `k` come from the first `k` steps of a forward
//!    Fisher-Yates shuffle: for `i in 0..k`, swap `i` with `i + below(n - i)`.
//!
//! Sub-seeds (per trial, per bin, per judge) are the first eight bytes,
//! little-endian, of SHA-256 over length-prefixed parts.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform integer in `[0, n)`. Panics if `n == 0`.
pub fn below<R: RngCore>(rng: &mut R, n: u64) -> u64 {
    assert!(n > 0, "below(0)");
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % n;
        }
    }
}

/// Uniform real in `[0, 1)` with 53 bits of precision.
pub fn unit<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `k` distinct indices from `0..n`, in draw order.
pub fn sample_indices<R: RngCore>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} of {n}");
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + below(rng, (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Full permutation of `0..n`.
pub fn permutation<R: RngCore>(rng: &mut R, n: usize) -> Vec<usize> {
    sample_indices(rng, n, n)
}

/// Parts fed to [`derive_seed`].
pub enum SeedPart<'a> {
    U64(u64),
    Str(&'a str),
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::U64(v)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(v: usize) -> Self {
        SeedPart::U64(v as u64)
    }
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(v: &'a str) -> Self {
        SeedPart::Str(v)
    }
}

pub fn derive_seed(parts: &[SeedPart<'_>]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        match p {
            SeedPart::U64(v) => {
                h.update([0u8]);
                h.update(v.to_le_bytes());
            }
            SeedPart::Str(s) => {
                h.update([1u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
        }
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

#[macro_export]
#[doc(hidden)]
macro_rules! seed_of {
    ($($part:expr),+ $(,)?) => {
        $crate::sampling::derive_seed(&[$($crate::sampling::SeedPart::from($part)),+])
    };
}
