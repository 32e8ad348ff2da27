//! Counter-based, splittable pseudorandom numbers.
//!
//! Every random draw in the crate is a pure function of a [`RandomKey`] and a
//! counter. The block function is Threefry-4x32 with 20 rounds: a 128-bit key
//! encrypts a 128-bit counter. Child keys are derived by encrypting the pair
//! `(child_index, n_children)` under a tweaked parent key, so a tree of keys can
//! be walked from any node without carrying generator state.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Result};

const ROTATIONS: [[u32; 2]; 8] = [
    [10, 26],
    [11, 21],
    [13, 27],
    [23, 5],
    [6, 20],
    [17, 11],
    [25, 10],
    [18, 20],
];
const KS_PARITY: u32 = 0x1BD1_1BDA;
const ROUNDS: usize = 20;

// Key tweaks that separate the split domain from the sampling domain.
const SPLIT_TWEAK: u128 = 0x5350_4c49_545f_4b45_595f_5457_4541_4b31;
const SAMPLE_TWEAK: u128 = 0x5341_4d50_4c45_5f4b_4559_5f54_5745_414b;
const SEED_KEY: u128 = 0x9e37_79b9_7f4a_7c15_f39c_c060_5ced_c834;

/// Opaque 128-bit key of the counter-based generator.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RandomKey(u128);

impl RandomKey {
    pub const fn from_raw(raw: u128) -> Self {
        Self(raw)
    }

    /// Spreads a small integer seed over all 128 key bits.
    pub fn from_seed(seed: u64) -> Self {
        let block = threefry4x32(words(SEED_KEY), [seed as u32, (seed >> 32) as u32, 0, 0]);
        Self(join(block))
    }

    pub const fn raw(self) -> u128 {
        self.0
    }

    /// Encrypts `counter` under this key.
    pub fn block(self, counter: [u32; 4]) -> [u32; 4] {
        threefry4x32(words(self.0), counter)
    }

    pub fn split(self, child_index: u64, n_children: u64) -> Result<RandomKey> {
        split(self, child_index, n_children)
    }
}

impl fmt::Debug for RandomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RandomKey({:032x})", self.0)
    }
}

impl fmt::Display for RandomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid key {0:?}: expected 1 to 32 hexadecimal digits")]
pub struct ParseKeyError(String);

impl FromStr for RandomKey {
    type Err = ParseKeyError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let digits = s.strip_prefix("0x").unwrap_or(s);
        if digits.is_empty() || digits.len() > 32 {
            return Err(ParseKeyError(s.to_string()));
        }
        u128::from_str_radix(digits, 16)
            .map(RandomKey)
            .map_err(|_| ParseKeyError(s.to_string()))
    }
}

/// Derives the key of child `child_index` out of `n_children`.
pub fn split(parent: RandomKey, child_index: u64, n_children: u64) -> Result<RandomKey> {
    if child_index >= n_children {
        return Err(contract(format!(
            "child index {child_index} out of range for {n_children} children"
        )));
    }
    let counter = [
        child_index as u32,
        (child_index >> 32) as u32,
        n_children as u32,
        (n_children >> 32) as u32,
    ];
    Ok(RandomKey(join(threefry4x32(words(parent.0 ^ SPLIT_TWEAK), counter))))
}

/// Splits into `N` children at once.
pub fn split_n<const N: usize>(parent: RandomKey) -> [RandomKey; N] {
    std::array::from_fn(|i| split(parent, i as u64, N as u64).expect("index below N"))
}

/// Uniform draw in the open interval (0, 1) from 53 random bits.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn sample_block(key: RandomKey, index: u64) -> (u64, u64) {
    let b = threefry4x32(words(key.0 ^ SAMPLE_TWEAK), [index as u32, (index >> 32) as u32, 0, 0]);
    (
        (b[0] as u64) | ((b[1] as u64) << 32),
        (b[2] as u64) | ((b[3] as u64) << 32),
    )
}

/// `n` uniforms on (0, 1).
pub fn uniform(key: RandomKey, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut index = 0u64;
    while out.len() < n {
        let (a, b) = sample_block(key, index);
        out.push(open_unit(a));
        if out.len() < n {
            out.push(open_unit(b));
        }
        index += 1;
    }
    out
}

/// `n` independent standard normal draws (Box–Muller).
pub fn standard_normal(key: RandomKey, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    fill_standard_normal(key, &mut out);
    out
}

/// In-place variant of [`standard_normal`]; the output depends only on the key
/// and the slice length.
pub fn fill_standard_normal(key: RandomKey, out: &mut [f64]) {
    for (index, pair) in out.chunks_mut(2).enumerate() {
        let (a, b) = sample_block(key, index as u64);
        let radius = (-2.0 * open_unit(a).ln()).sqrt();
        let angle = std::f64::consts::TAU * open_unit(b);
        let (sin, cos) = angle.sin_cos();
        pair[0] = radius * cos;
        if let Some(second) = pair.get_mut(1) {
            *second = radius * sin;
        }
    }
}

#[inline]
fn words(k: u128) -> [u32; 4] {
    [k as u32, (k >> 32) as u32, (k >> 64) as u32, (k >> 96) as u32]
}

#[inline]
fn join(w: [u32; 4]) -> u128 {
    (w[0] as u128) | ((w[1] as u128) << 32) | ((w[2] as u128) << 64) | ((w[3] as u128) << 96)
}

fn threefry4x32(key: [u32; 4], counter: [u32; 4]) -> [u32; 4] {
    let ks = [
        key[0],
        key[1],
        key[2],
        key[3],
        KS_PARITY ^ key[0] ^ key[1] ^ key[2] ^ key[3],
    ];
    let mut x = [
        counter[0].wrapping_add(ks[0]),
        counter[1].wrapping_add(ks[1]),
        counter[2].wrapping_add(ks[2]),
        counter[3].wrapping_add(ks[3]),
    ];
    for round in 0..ROUNDS {
        let [r0, r1] = ROTATIONS[round % 8];
        if round % 2 == 0 {
            x[0] = x[0].wrapping_add(x[1]);
            x[1] = x[1].rotate_left(r0) ^ x[0];
            x[2] = x[2].wrapping_add(x[3]);
            x[3] = x[3].rotate_left(r1) ^ x[2];
        } else {
            x[0] = x[0].wrapping_add(x[3]);
            x[3] = x[3].rotate_left(r0) ^ x[0];
            x[2] = x[2].wrapping_add(x[1]);
            x[1] = x[1].rotate_left(r1) ^ x[2];
        }
        if round % 4 == 3 {
            let s = (round + 1) / 4;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = xi.wrapping_add(ks[(s + i) % 5]);
            }
            x[3] = x[3].wrapping_add(s as u32);
        }
    }
    x
}
