//! Seeded, splittable randomness.
//!
//! Every stochastic operation in the crate draws from a [`RandomSource`], a
//! ChaCha8 stream keyed by `(seed, stream_id)`. ChaCha is counter based, so
//! [`RandomSource::split`] is O(1) and distinct stream ids never share state.
//!
//! The sampling primitives live on the [`BitSource`] extension trait, which is
//! implemented for every [`RngCore`]. That keeps the machines testable with
//! scripted bit sequences while production code uses [`RandomSource`].
//!
//! Exactness notes:
//!
//! * [`BitSource::bernoulli`] compares a lazily generated uniform binary
//!   fraction against the exact binary expansion of `p`. Every `f64` is a
//!   dyadic rational, so the draw is exact for every representable `p`, and it
//!   usually consumes a single 64-bit word.
//! * [`BitSource::bernoulli_ratio`] draws an exact rational `num / den` via an
//!   unbiased integer in `[0, den)`.
//! * [`BitSource::geometric`] inverts the CDF on one uniform with 53-bit
//!   resolution.

use rand::rand_core::impls;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use std::sync::LazyLock;

use crate::error::{domain, Result};

/// Deterministic source of random bits identified by `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    /// Stream 0 of `seed`.
    pub fn new(seed: u64) -> Self {
        Self::split(seed, 0)
    }

    /// Independent stream `stream_id` derived from `seed`.
    pub fn split(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Draws a seed for a family of child streams.
    ///
    /// Children are then built with `RandomSource::split(family, i)`, which
    /// keeps parallel work deterministic regardless of scheduling.
    pub fn fresh_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// A scripted bit source: replays a fixed list of 64-bit words, cycling.
///
/// Used to pin randomness when tracing a single machine transition. For every
/// primitive in [`BitSource`], the word `1` means "succeed / lowest outcome"
/// and `u64::MAX` means "fail / highest outcome".
#[derive(Clone, Debug)]
pub struct ScriptedBits {
    words: Vec<u64>,
    pos: usize,
}

impl ScriptedBits {
    pub fn new(words: Vec<u64>) -> Self {
        assert!(!words.is_empty(), "scripted source needs at least one word");
        Self { words, pos: 0 }
    }

    /// Number of words consumed so far.
    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl RngCore for ScriptedBits {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let w = self.words[self.pos % self.words.len()];
        self.pos += 1;
        w
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

/// `1 / ln(1 - 2^-k)` for k in 1..64, the dwell-time constants of a Morris
/// counter.
static INV_LN_Q_POW2: LazyLock<[f64; 64]> = LazyLock::new(|| {
    let mut t = [0.0; 64];
    for (k, slot) in t.iter_mut().enumerate().skip(1) {
        *slot = 1.0 / (-(2f64).powi(-(k as i32))).ln_1p();
    }
    t
});

/// Sampling primitives shared by every stochastic routine.
pub trait BitSource: RngCore {
    /// Uniform on `(0, 1]` with 53-bit resolution.
    fn uniform_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `[0, bound)` (Lemire's multiply-and-reject).
    fn uniform_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let mut m = u128::from(self.next_u64()) * u128::from(bound);
        if (m as u64) < bound {
            let threshold = bound.wrapping_neg() % bound;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(bound);
            }
        }
        (m >> 64) as u64
    }

    /// Exact Bernoulli(`num / den`).
    fn bernoulli_ratio(&mut self, num: u64, den: u64) -> bool {
        debug_assert!(num <= den && den > 0);
        if num == 0 {
            return false;
        }
        if num >= den {
            return true;
        }
        self.uniform_below(den) < num
    }

    /// Exact Bernoulli(2^-k).
    fn bernoulli_dyadic(&mut self, k: u32) -> bool {
        let mut remaining = k;
        while remaining > 64 {
            if self.next_u64() != 0 {
                return false;
            }
            remaining -= 64;
        }
        match remaining {
            0 => true,
            64 => self.next_u64() == 0,
            r => self.next_u64() >> (64 - r) == 0,
        }
    }

    /// Exact Bernoulli(`p`) for any `p` in `[0, 1]`.
    fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(domain("p", p, "probability must lie in [0, 1]"));
        }
        if p == 0.0 {
            return Ok(false);
        }
        if p == 1.0 {
            return Ok(true);
        }
        let (mantissa, exponent) = dyadic_parts(p);
        let mut chunk = 0u32;
        loop {
            let target = expansion_chunk(mantissa, exponent, chunk);
            let u = self.next_u64();
            if u != target {
                return Ok(u < target);
            }
            // Equal so far: U < p is only still possible if p has more bits.
            if expansion_exhausted(mantissa, exponent, chunk) {
                return Ok(false);
            }
            chunk += 1;
        }
    }

    /// Number of Bernoulli(`p`) trials up to and including the first success.
    fn geometric(&mut self, p: f64) -> Result<u64> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(domain("p", p, "geometric needs 0 < p <= 1"));
        }
        if p == 1.0 {
            return Ok(1);
        }
        let inv_ln_q = 1.0 / (-p).ln_1p();
        Ok(invert_geometric(self.uniform_open01(), inv_ln_q))
    }

    /// Geometric with success probability 2^-k, the dwell time of a Morris
    /// counter in state k.
    fn geometric_dyadic(&mut self, k: u32) -> u64 {
        match k {
            0 => 1,
            1..=63 => invert_geometric(self.uniform_open01(), INV_LN_Q_POW2[k as usize]),
            _ => {
                let q = -(2f64).powi(-(k.min(1074) as i32));
                invert_geometric(self.uniform_open01(), 1.0 / q.ln_1p())
            }
        }
    }

    /// Binomial(`trials`, `p`).
    fn binomial(&mut self, trials: u64, p: f64) -> u64 {
        if trials == 0 || p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return trials;
        }
        Binomial::new(trials, p)
            .expect("binomial parameters validated above")
            .sample(&mut RngRef(self))
    }
}

impl<R: RngCore + ?Sized> BitSource for R {}

/// Sized handle on an unsized source, for APIs that take `R: Rng`.
struct RngRef<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngRef<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

#[inline]
fn invert_geometric(u: f64, inv_ln_q: f64) -> u64 {
    // P(K > j) = P(U < q^j) = q^j
    let r = u.ln() * inv_ln_q;
    if r >= 1.8e19 {
        u64::MAX
    } else {
        (r.ceil() as u64).max(1)
    }
}

/// Splits `p` in (0, 1) into `mantissa * 2^exponent`.
fn dyadic_parts(p: f64) -> (u64, i32) {
    let bits = p.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), raw_exp - 1075)
    }
}

/// Bits `64 * chunk + 1 ..= 64 * (chunk + 1)` of the binary expansion of
/// `mantissa * 2^exponent`, as an integer.
fn expansion_chunk(mantissa: u64, exponent: i32, chunk: u32) -> u64 {
    let shift = i64::from(exponent) + 64 * (i64::from(chunk) + 1);
    if shift >= 128 {
        0
    } else if shift >= 0 {
        (u128::from(mantissa) << shift) as u64
    } else if shift <= -64 {
        0
    } else {
        mantissa >> (-shift)
    }
}

/// True when no bits of the expansion remain past `chunk`.
fn expansion_exhausted(mantissa: u64, exponent: i32, chunk: u32) -> bool {
    let shift = i64::from(exponent) + 64 * (i64::from(chunk) + 1);
    if shift >= 0 {
        true
    } else if shift <= -64 {
        mantissa == 0
    } else {
        mantissa & ((1u64 << (-shift)) - 1) == 0
    }
}
