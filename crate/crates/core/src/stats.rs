//! Goodness-of-fit and interval helpers used by tests, the harness and the
//! acceptance suite.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Cells whose expected count falls below this are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

/// Result of a chi-square test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_square_tail(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64)
        .map(|d| d.sf(statistic))
        .unwrap_or(f64::NAN)
}

/// Goodness of fit of `observed` counts against the probabilities `expected`.
///
/// Adjacent cells are pooled left to right until each pooled cell expects at
/// least [`MIN_EXPECTED`] observations; a short remainder joins the last cell.
/// Probability mass missing from `expected` (a truncated law) is treated as an
/// extra cell with zero observations.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), expected.len());
    let total: u64 = observed.iter().sum();
    let total = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected) {
        obs += o as f64;
        exp += p * total;
        if exp >= MIN_EXPECTED {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    let missing = (1.0 - expected.iter().sum::<f64>()).max(0.0) * total;
    exp += missing;
    if exp > 0.0 || obs > 0.0 {
        match cells.last_mut() {
            Some(last) if exp < MIN_EXPECTED => {
                last.0 += obs;
                last.1 += exp;
            }
            _ => cells.push((obs, exp)),
        }
    }
    let statistic = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let dof = cells.len().saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_square_tail(statistic, dof),
    }
}

/// Two-sample chi-square test of homogeneity between two count histograms over
/// the same categories. Sparse categories are pooled as in [`chi_square_gof`].
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> ChiSquare {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let (na, nb) = (
        a.iter().sum::<u64>() as f64,
        b.iter().sum::<u64>() as f64,
    );
    let n = na + nb;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut ca, mut cb) = (0.0, 0.0);
    for i in 0..len {
        ca += get(a, i);
        cb += get(b, i);
        let pooled = ca + cb;
        if pooled * na.min(nb) / n >= MIN_EXPECTED {
            cells.push((ca, cb));
            ca = 0.0;
            cb = 0.0;
        }
    }
    if ca + cb > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => cells.push((ca, cb)),
        }
    }
    let mut statistic = 0.0;
    for &(oa, ob) in &cells {
        let col = oa + ob;
        let ea = col * na / n;
        let eb = col * nb / n;
        if ea > 0.0 {
            statistic += (oa - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            statistic += (ob - eb).powi(2) / eb;
        }
    }
    let dof = cells.len().saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_square_tail(statistic, dof),
    }
}

/// A proportion with its Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95% confidence.
pub fn wilson(successes: u64, trials: u64) -> Proportion {
    wilson_z(successes, trials, Z95)
}

pub fn wilson_z(successes: u64, trials: u64, z: f64) -> Proportion {
    assert!(trials > 0 && successes <= trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Proportion {
        successes,
        trials,
        estimate: p,
        lower: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        upper: if successes == trials { 1.0 } else { (centre + half).min(1.0) },
    }
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Sample mean and (unbiased) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
