//! Closed-form guarantees: bias envelopes, state-count upper and lower
//! bounds, and the sample complexity of the entropy estimator.
//!
//! Logarithms are base 2 unless written `ln`. Quantities that can overflow
//! are assembled from logarithms.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::num::{ceil_snapped, log2_inv_ceil};

/// `C` in the second term of [`psi`]: `2 (e + 1) 10^8`.
pub const PSI_CONSTANT: f64 = 2.0 * (std::f64::consts::E + 1.0) * 1e8;

fn check_n(n: u64) -> Result<f64> {
    if n < 2 {
        return Err(domain("n", n as f64, "alphabet needs at least two symbols"));
    }
    Ok((n as f64).log2())
}

fn check_accuracy(c: f64, beta: f64, delta: f64) -> Result<()> {
    if !(c > 1.0 && c.is_finite()) {
        return Err(domain("c", c, "overhead c must exceed 1"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(domain("beta", beta, "beta must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain("delta", delta, "delta must lie in (0, 1)"));
    }
    Ok(())
}

/// `v_n(alpha) = sqrt(2 c alpha^3 / log n) + alpha / log n`.
pub fn v(n: u64, c: f64, alpha: f64) -> Result<f64> {
    let l = check_n(n)?;
    if !(alpha >= 0.0) {
        return Err(domain("alpha", alpha, "alpha must be nonnegative"));
    }
    Ok((2.0 * c * alpha.powi(3) / l).sqrt() + alpha / l)
}

/// The three terms of the counting-phase bias envelope and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psi {
    pub first: f64,
    pub second: f64,
    pub third: f64,
    pub total: f64,
}

/// `psi_c(n) = (e + 1) n^(-(c - 1) + v(1)) + min{1, C n^(-(c - 1)/2 + v(1/2))}
///  + n^-c 100 (c log n + 2) / (1 - n^-c / 2)^2`.
pub fn psi(n: u64, c: f64) -> Result<Psi> {
    let l = check_n(n)?;
    if !(c > 1.0 && c.is_finite()) {
        return Err(domain("c", c, "overhead c must exceed 1"));
    }
    let ln_n = (n as f64).ln();
    let e = std::f64::consts::E;
    let first = ((e + 1.0).ln() + (-(c - 1.0) + v(n, c, 1.0)?) * ln_n).exp();
    let second_ln = PSI_CONSTANT.ln() + (-(c - 1.0) / 2.0 + v(n, c, 0.5)?) * ln_n;
    let second = if second_ln >= 0.0 { 1.0 } else { second_ln.exp() };
    let n_pow = (-c * ln_n).exp();
    let third = n_pow * 100.0 * (c * l + 2.0) / (1.0 - 0.5 * n_pow).powi(2);
    Ok(Psi {
        first,
        second,
        third,
        total: first + second + third,
    })
}

/// States sufficient for entropy estimation:
/// `n (8 (c log n + 2)^4 / (beta^2 delta) + 4 (c log n + 2)^2)`.
pub fn upper_bound_states(n: u64, c: f64, beta: f64, delta: f64) -> Result<f64> {
    let l = check_n(n)?;
    check_accuracy(c, beta, delta)?;
    let w = c * l + 2.0;
    Ok(n as f64 * (8.0 * w.powi(4) / (beta * beta * delta) + 4.0 * w.powi(2)))
}

/// The two branches of the state lower bound and their maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    /// `log n / (2 eps)`.
    pub resolution: f64,
    /// `n (1 - 2 sqrt(eps ln 2))`, only when `eps < 1 / (4 ln 2)`.
    pub uniformity: Option<f64>,
    /// Ceiling of the larger branch.
    pub states: u64,
}

/// States necessary for `eps`-accurate entropy estimation.
pub fn lower_bound_states(n: u64, eps: f64) -> Result<LowerBound> {
    let l = check_n(n)?;
    if !(eps > 0.0) {
        return Err(domain("eps", eps, "eps must be positive"));
    }
    let ln2 = std::f64::consts::LN_2;
    let resolution = l / (2.0 * eps);
    let uniformity = (eps < 1.0 / (4.0 * ln2)).then(|| n as f64 * (1.0 - 2.0 * (eps * ln2).sqrt()));
    let best = uniformity.map_or(resolution, |u| u.max(resolution));
    Ok(LowerBound {
        resolution,
        uniformity,
        states: ceil_snapped(best) as u64,
    })
}

/// Bias-machine updates, window length and total samples that suffice for
/// an `(beta, delta)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexity {
    /// `X = 4 (c log n + 2)^2 / (beta^2 delta) + 1`, the bias machine size.
    pub machine_states: f64,
    /// `k = 4 ceil(log(1/delta)) X log X`, its delta-mixing time bound.
    pub k: f64,
    /// `m = 4 n^c ln(5k / delta)`, the per-window sample bound.
    pub m: f64,
    /// `L = k m`.
    pub l: f64,
}

pub fn sample_complexity(n: u64, c: f64, beta: f64, delta: f64) -> Result<SampleComplexity> {
    let l = check_n(n)?;
    check_accuracy(c, beta, delta)?;
    let w = c * l + 2.0;
    let x = 4.0 * w * w / (beta * beta * delta) + 1.0;
    let k = ceil_snapped(4.0 * log2_inv_ceil(delta) as f64 * x * x.log2());
    let m = ceil_snapped(4.0 * (n as f64).powf(c) * (5.0 * k / delta).ln());
    Ok(SampleComplexity {
        machine_states: x,
        k,
        m,
        l: k * m,
    })
}

/// States sufficient for mutual-information estimation:
/// `n m (288 (c log nm + 2)^6 / (beta^2 delta) + 16 (c log nm + 2)^4)`.
pub fn mi_upper_bound_states(n: u64, m2: u64, c: f64, beta: f64, delta: f64) -> Result<f64> {
    check_n(n)?;
    check_n(m2)?;
    check_accuracy(c, beta, delta)?;
    let nm = n as f64 * m2 as f64;
    let w = c * nm.log2() + 2.0;
    Ok(nm * (288.0 * w.powi(6) / (beta * beta * delta) + 16.0 * w.powi(4)))
}

/// `n m / (log^3 n log^3 m)`: the order of the mutual-information lower
/// bound, with its unknown constant set to 1.
pub fn mi_lower_bound_order(n: u64, m2: u64) -> Result<f64> {
    let (ln, lm) = (check_n(n)?, check_n(m2)?);
    Ok(n as f64 * m2 as f64 / (ln.powi(3) * lm.powi(3)))
}

/// A value known only up to an unspecified constant factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderOnly {
    pub value: f64,
    pub order_only: bool,
}

/// Everything computable for one parameter set. Fields needing `c`, `beta`,
/// `delta` or `eps` are `None` when those were not supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: u64,
    pub m2: Option<u64>,
    pub c: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub eps: Option<f64>,
    /// `(v_n(1), v_n(1/2))`.
    pub v: Option<(f64, f64)>,
    pub psi: Option<Psi>,
    pub upper_bound_states: Option<f64>,
    pub lower_bound_states: Option<LowerBound>,
    pub sample_complexity: Option<SampleComplexity>,
    pub mi_upper_bound_states: Option<f64>,
    pub mi_lower_bound_states: Option<OrderOnly>,
}

/// Evaluates every bound whose inputs are present.
pub fn bound_report(
    n: u64,
    m2: Option<u64>,
    c: Option<f64>,
    beta: Option<f64>,
    delta: Option<f64>,
    eps: Option<f64>,
) -> Result<BoundReport> {
    check_n(n)?;
    let mut r = BoundReport {
        n,
        m2,
        c,
        beta,
        delta,
        eps,
        v: None,
        psi: None,
        upper_bound_states: None,
        lower_bound_states: None,
        sample_complexity: None,
        mi_upper_bound_states: None,
        mi_lower_bound_states: None,
    };
    if let Some(c) = c {
        r.v = Some((v(n, c, 1.0)?, v(n, c, 0.5)?));
        r.psi = Some(psi(n, c)?);
    }
    if let Some(eps) = eps {
        r.lower_bound_states = Some(lower_bound_states(n, eps)?);
    }
    if let (Some(c), Some(beta), Some(delta)) = (c, beta, delta) {
        r.upper_bound_states = Some(upper_bound_states(n, c, beta, delta)?);
        r.sample_complexity = Some(sample_complexity(n, c, beta, delta)?);
        if let Some(m2) = m2 {
            r.mi_upper_bound_states = Some(mi_upper_bound_states(n, m2, c, beta, delta)?);
        }
    }
    if let Some(m2) = m2 {
        r.mi_lower_bound_states = Some(OrderOnly {
            value: mi_lower_bound_order(n, m2)?,
            order_only: true,
        });
    }
    Ok(r)
}
