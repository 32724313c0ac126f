//! Derived constants of the estimators.
//!
//! For alphabet size `n`, overhead `c`, accuracy `beta` and failure
//! probability `delta`:
//!
//! * `B = min{k : ceil(n^c) <= 2^k}` and `M = B + 1` (the clock cap);
//! * `mu`, the additive constant in the mean of a Morris counter;
//! * `eta = E[log2 N]` where `N = sum_{k=1}^{M-1} Geo(2^-k)` is the window
//!   length, estimated by Monte Carlo;
//! * the offset `a`, chosen so the Bernoulli parameter fed to the bias
//!   machine is `1 - C / (2M)` (entropy) or `(4M - C) / (6M)` (mutual
//!   information);
//! * `s_bias`, the bias machine's state count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::num::ceil_snapped;
use crate::rng::{BitSource, RandomSource};

/// Euler's constant to 20 digits.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `gamma / ln 2 + 1/2 - sum_{i>=1} 1 / (2^i - 1)`, with the series summed
/// until its tail is below `tolerance`.
pub fn mu(tolerance: f64) -> Result<f64> {
    if !(tolerance > 0.0) {
        return Err(domain("tolerance", tolerance, "tolerance must be positive"));
    }
    let mut sum = 0.0;
    let mut i = 1;
    loop {
        sum += 1.0 / ((2f64).powi(i) - 1.0);
        // Remaining terms are at most sum_{j>i} 2^(1-j) = 2^(1-i).
        if (2f64).powi(1 - i) < tolerance || i >= 1000 {
            break;
        }
        i += 1;
    }
    Ok(EULER_GAMMA / std::f64::consts::LN_2 + 0.5 - sum)
}

/// The first `terms` partial values of [`mu`]; strictly decreasing.
pub fn mu_partial(terms: u32) -> Vec<f64> {
    let base = EULER_GAMMA / std::f64::consts::LN_2 + 0.5;
    let mut sum = 0.0;
    (1..=terms as i32)
        .map(|i| {
            sum += 1.0 / ((2f64).powi(i) - 1.0);
            base - sum
        })
        .collect()
}

/// One window length `N = sum_{k=1}^{M-1} Geo(2^-k)`.
#[inline]
pub fn sample_window_length<R: BitSource + ?Sized>(m: u32, src: &mut R) -> u64 {
    (1..m).map(|k| src.geometric_dyadic(k)).sum()
}

/// Monte Carlo sample count `ceil(((M + 2)^2 + 1) / (alpha^2 delta))`.
///
/// Chebyshev with `Var[log2 N] <= (M + 2)^2 + 1` gives an `alpha`-accurate
/// mean with probability at least `1 - delta`.
pub fn eta_sample_count(m: u32, alpha: f64, delta: f64) -> Result<u64> {
    check_eta_args(m, alpha, delta)?;
    let m = f64::from(m);
    Ok(ceil_snapped(((m + 2.0).powi(2) + 1.0) / (alpha * alpha * delta)) as u64)
}

fn check_eta_args(m: u32, alpha: f64, delta: f64) -> Result<()> {
    if m < 2 {
        return Err(domain("M", f64::from(m), "need M >= 2 for a nonempty window"));
    }
    if !(alpha > 0.0) {
        return Err(domain("alpha", alpha, "alpha must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain("delta", delta, "delta must lie in (0, 1)"));
    }
    Ok(())
}

const ETA_CHUNK: u64 = 1 << 16;

/// Monte Carlo estimate of `E[log2 N]` from [`eta_sample_count`] samples.
///
/// Samples are drawn in fixed-size chunks, each from its own stream split off
/// one family seed, and reduced in chunk order, so the value is independent
/// of the thread count.
pub fn eta_monte_carlo(m: u32, alpha: f64, delta: f64, src: &mut RandomSource) -> Result<f64> {
    let samples = eta_sample_count(m, alpha, delta)?;
    Ok(eta_from_samples(m, samples, src))
}

/// Mean of `log2 N` over exactly `samples` windows.
pub fn eta_from_samples(m: u32, samples: u64, src: &mut RandomSource) -> f64 {
    let family = src.fresh_seed();
    let chunks = samples.div_ceil(ETA_CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = RandomSource::split(family, chunk);
            let len = ETA_CHUNK.min(samples - chunk * ETA_CHUNK);
            (0..len)
                .map(|_| (sample_window_length(m, &mut rng) as f64).log2())
                .sum()
        })
        .collect();
    sums.iter().sum::<f64>() / samples as f64
}

/// Largest `M` accepted by [`eta_exact_small`].
pub const ETA_EXACT_MAX_M: u32 = 12;

/// `E[log2 N]` by exact convolution of the `M - 1` geometric laws.
///
/// The law of `N` is computed on `[M - 1, x]`, doubling `x` until a rigorous
/// bound on the neglected tail contribution falls below `tolerance`. The
/// returned value adds half that bound, so it is within `tolerance / 2`.
pub fn eta_exact_small(m: u32, tolerance: f64) -> Result<f64> {
    if m < 2 {
        return Err(domain("M", f64::from(m), "need M >= 2 for a nonempty window"));
    }
    if m > ETA_EXACT_MAX_M {
        return Err(Error::Intractable {
            what: "exact convolution",
            name: "M",
            value: f64::from(m),
            limit: f64::from(ETA_EXACT_MAX_M),
        });
    }
    if !(tolerance > 0.0) {
        return Err(domain("tolerance", tolerance, "tolerance must be positive"));
    }
    let stages = m - 1;
    let mut x = 64u64 << stages;
    loop {
        let bound = eta_tail_bound(stages, x);
        if bound < tolerance {
            let pmf = window_length_pmf(stages, x as usize);
            let head: f64 = pmf
                .iter()
                .enumerate()
                .skip(1)
                .map(|(n, p)| p * (n as f64).log2())
                .sum();
            return Ok(head + bound / 2.0);
        }
        x *= 2;
    }
}

/// `P(N = n)` for `n` in `0..=x`, where `N` sums `Geo(2^-k)` for `k = 1..=stages`.
pub fn window_length_pmf(stages: u32, x: usize) -> Vec<f64> {
    let mut pmf = vec![0.0; x + 1];
    pmf[0] = 1.0;
    let mut next = vec![0.0; x + 1];
    for k in 1..=stages {
        let p = (2f64).powi(-(k as i32));
        // f(n) = (1 - p) f(n - 1) + p g(n - 1)
        next[0] = 0.0;
        for n in 1..=x {
            next[n] = (1.0 - p) * next[n - 1] + p * pmf[n - 1];
        }
        std::mem::swap(&mut pmf, &mut next);
    }
    pmf
}

/// Upper bound on `E[log2 N ; N > x]`.
///
/// With `y = floor(x / stages)`, `P(N > x) <= sum_k (1 - 2^-k)^y` and
/// `E[(N - x)^+] <= sum_k (1 - 2^-k)^y 2^k`; combine with
/// `log2 N <= log2 x + (N - x) / (x ln 2)`.
fn eta_tail_bound(stages: u32, x: u64) -> f64 {
    let y = (x / u64::from(stages)) as f64;
    let (mut tail_prob, mut excess) = (0.0, 0.0);
    for k in 1..=stages {
        let p = (2f64).powi(-(k as i32));
        let survive = ((-p).ln_1p() * y).exp();
        tail_prob += survive;
        excess += survive / p;
    }
    let x = x as f64;
    tail_prob.min(1.0) * x.log2() + excess / (x * std::f64::consts::LN_2)
}

/// Which estimator a calibration is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    Entropy,
    MutualInformation { m2: u64 },
}

/// Accuracy targets and the Monte Carlo budget used for `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub c: f64,
    pub beta: f64,
    pub delta: f64,
    pub mc_alpha: f64,
    pub mc_delta: f64,
    pub mc_samples: u64,
}

/// All derived constants of one estimator instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub variant: Variant,
    pub n: u64,
    #[serde(rename = "B")]
    pub b: u32,
    #[serde(rename = "M")]
    pub m: u32,
    pub mu: f64,
    pub eta: f64,
    pub a: f64,
    pub s_bias: u64,
    /// `None` for hand-built calibrations (see [`Calibration::from_parts`]).
    pub targets: Option<Targets>,
}

/// Tolerance used for `mu` everywhere.
pub const MU_TOLERANCE: f64 = 1e-15;

/// `min{k : ceil(size) <= 2^k}`.
pub fn window_exponent(size: f64) -> u32 {
    let target = ceil_snapped(size);
    if target <= 1.0 {
        return 0;
    }
    if target < 9.0e15 {
        (target as u64).next_power_of_two().trailing_zeros()
    } else {
        target.log2().ceil() as u32
    }
}

fn check_targets(n: u64, c: f64, beta: f64, delta: f64) -> Result<()> {
    if n < 2 {
        return Err(domain("n", n as f64, "alphabet needs at least two symbols"));
    }
    if !(c > 1.0) || !c.is_finite() {
        return Err(domain("c", c, "overhead c must exceed 1"));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(domain("beta", beta, "beta must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain("delta", delta, "delta must lie in (0, 1)"));
    }
    Ok(())
}

/// Constants that do not need randomness: `(B, M, s_bias)`.
pub fn structural(n: u64, c: f64, beta: f64, delta: f64, variant: Variant) -> Result<(u32, u32, u64)> {
    check_targets(n, c, beta, delta)?;
    let (size, factor) = match variant {
        Variant::Entropy => ((n as f64).powf(c), 4.0),
        Variant::MutualInformation { m2 } => {
            if m2 < 2 {
                return Err(domain("m2", m2 as f64, "alphabet needs at least two symbols"));
            }
            ((n as f64 * m2 as f64).powf(c), 36.0)
        }
    };
    let b = window_exponent(size);
    let m = b + 1;
    let s_bias = ceil_snapped(factor * f64::from(m).powi(2) / (beta * beta * delta)) as u64 + 1;
    Ok((b, m, s_bias))
}

/// Full calibration; `eta` by Monte Carlo with `alpha = beta / 10` and
/// failure probability `delta / 10`.
pub fn calibrate(
    n: u64,
    c: f64,
    beta: f64,
    delta: f64,
    variant: Variant,
    src: &mut RandomSource,
) -> Result<Calibration> {
    let (b, m, s_bias) = structural(n, c, beta, delta, variant)?;
    let (mc_alpha, mc_delta) = (beta / 10.0, delta / 10.0);
    let mc_samples = eta_sample_count(m, mc_alpha, mc_delta)?;
    let eta = eta_from_samples(m, mc_samples, src);
    let mut cal = Calibration::from_parts(variant, n, m, s_bias, eta)?;
    cal.b = b;
    cal.targets = Some(Targets {
        c,
        beta,
        delta,
        mc_alpha,
        mc_delta,
        mc_samples,
    });
    Ok(cal)
}

impl Calibration {
    /// Calibration with explicit `M`, `s_bias` and `eta`, for small machines
    /// outside the parameter ranges `calibrate` produces.
    pub fn from_parts(variant: Variant, n: u64, m: u32, s_bias: u64, eta: f64) -> Result<Self> {
        if n < 1 {
            return Err(domain("n", n as f64, "alphabet must be nonempty"));
        }
        if let Variant::MutualInformation { m2 } = variant {
            if m2 < 1 {
                return Err(domain("m2", m2 as f64, "alphabet must be nonempty"));
            }
        }
        if m < 2 {
            return Err(domain("M", f64::from(m), "need M >= 2"));
        }
        if s_bias < 2 {
            return Err(domain("s_bias", s_bias as f64, "need at least two states"));
        }
        let mu = mu(MU_TOLERANCE)?;
        let mf = f64::from(m);
        let a = match variant {
            Variant::Entropy => 1.0 - (mu + eta) / (2.0 * mf),
            Variant::MutualInformation { .. } => 2.0 / 3.0 - (mu + eta) / (6.0 * mf),
        };
        Ok(Self {
            variant,
            n,
            b: m - 1,
            m,
            mu,
            eta,
            a,
            s_bias,
            targets: None,
        })
    }

    pub fn is_entropy(&self) -> bool {
        self.variant == Variant::Entropy
    }

    /// Second alphabet size (1 for the entropy variant).
    pub fn m2(&self) -> u64 {
        match self.variant {
            Variant::Entropy => 1,
            Variant::MutualInformation { m2 } => m2,
        }
    }

    /// Cap of the symbol counters, `2M`.
    pub fn counter_cap(&self) -> u32 {
        2 * self.m
    }

    /// Scale `2M` (entropy) or `6M` (mutual information) turning `theta` into
    /// an estimate.
    pub fn scale(&self) -> f64 {
        match self.variant {
            Variant::Entropy => 2.0 * f64::from(self.m),
            Variant::MutualInformation { .. } => 6.0 * f64::from(self.m),
        }
    }

    /// `a - (C - (mu + eta)) / scale`, evaluated literally.
    pub fn theta(&self, statistic: f64) -> f64 {
        self.a - (statistic - (self.mu + self.eta)) / self.scale()
    }

    /// The same parameter as an exact ratio: `(2M - C) / (2M)` or
    /// `(4M - C) / (6M)`.
    pub fn theta_ratio(&self, statistic: i64) -> (u64, u64) {
        let m = i64::from(self.m);
        let (num, den) = match self.variant {
            Variant::Entropy => (2 * m - statistic, 2 * m),
            Variant::MutualInformation { .. } => (4 * m - statistic, 6 * m),
        };
        (num.clamp(0, den) as u64, den as u64)
    }

    /// `scale * (theta_hat - a)`.
    pub fn estimate_from_theta(&self, theta_hat: f64) -> f64 {
        self.scale() * (theta_hat - self.a)
    }

    /// Largest meaningful estimate: `log2 n`, or `log2 min(n, m2)`.
    pub fn estimate_ceiling(&self) -> f64 {
        match self.variant {
            Variant::Entropy => (self.n as f64).log2(),
            Variant::MutualInformation { m2 } => (self.n.min(m2) as f64).log2(),
        }
    }

    /// Number of composite machine states: `n M 2M s_bias` or
    /// `n m2 M (2M)^3 s_bias`.
    pub fn state_count(&self) -> u128 {
        let m = u128::from(self.m);
        let cap = 2 * m;
        let base = u128::from(self.n) * m * u128::from(self.s_bias);
        match self.variant {
            Variant::Entropy => base * cap,
            Variant::MutualInformation { m2 } => base * u128::from(m2) * cap * cap * cap,
        }
    }
}
