//! The randomized bias-estimation machine and its chain analysis.
//!
//! An `S`-state machine watches a stream of bits with unknown bias `p`. In
//! state `s` it draws `B ~ Bernoulli((s - 1) / (S - 1))`; a 1 input moves it up
//! unless `B = 1`, a 0 input moves it down only if `B = 1`. Under i.i.d. input
//! the state is a birth-death chain whose stationary law is
//! `Binomial(S - 1, p)` shifted by one, so `(s - 1) / (S - 1)` estimates `p`
//! with mean squared error `p (1 - p) / (S - 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::error::{domain, Result};
use crate::num::log2_inv_ceil;
use crate::rng::{BitSource, RandomSource};

/// `S`-state bias estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BiasMachine {
    states: u64,
    state: u64,
}

impl BiasMachine {
    /// Machine with `states >= 2` states, starting in state 1.
    pub fn new(states: u64) -> Result<Self> {
        Self::with_state(states, 1)
    }

    pub fn with_state(states: u64, state: u64) -> Result<Self> {
        if states < 2 {
            return Err(domain("S", states as f64, "need at least two states"));
        }
        if !(1..=states).contains(&state) {
            return Err(domain("state", state as f64, "state must lie in [1, S]"));
        }
        Ok(Self { states, state })
    }

    #[inline]
    pub fn states(&self) -> u64 {
        self.states
    }

    #[inline]
    pub fn state(&self) -> u64 {
        self.state
    }

    /// Consumes one input bit.
    #[inline]
    pub fn step<R: BitSource + ?Sized>(&mut self, x: bool, src: &mut R) {
        let b = src.bernoulli_ratio(self.state - 1, self.states - 1);
        match (x, b) {
            (true, false) => self.state += 1,
            (false, true) => self.state -= 1,
            _ => {}
        }
    }

    /// Current estimate `(s - 1) / (S - 1)`.
    #[inline]
    pub fn estimate(&self) -> f64 {
        (self.state - 1) as f64 / (self.states - 1) as f64
    }
}

fn check_chain(states: u64, p: f64) -> Result<()> {
    if states < 2 {
        return Err(domain("S", states as f64, "need at least two states"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(domain("p", p, "probability must lie in [0, 1]"));
    }
    Ok(())
}

/// Up/down probabilities out of state `k` (1-based).
#[inline]
fn rates(states: u64, p: f64, k: u64) -> (f64, f64) {
    let span = (states - 1) as f64;
    let up = (states - k) as f64 * p / span;
    let down = (k - 1) as f64 * (1.0 - p) / span;
    (up, down)
}

/// Dense transition matrix of the machine under Bernoulli(`p`) input.
/// Row and column `i` correspond to state `i + 1`.
pub fn transition_matrix(states: u64, p: f64) -> Result<Vec<Vec<f64>>> {
    check_chain(states, p)?;
    let s = states as usize;
    let mut rows = vec![vec![0.0; s]; s];
    for (i, row) in rows.iter_mut().enumerate() {
        let (up, down) = rates(states, p, i as u64 + 1);
        if i + 1 < s {
            row[i + 1] = up;
        }
        if i > 0 {
            row[i - 1] = down;
        }
        row[i] = 1.0 - up - down;
    }
    Ok(rows)
}

/// `Binomial(S - 1, p)` over states `1..=S`.
pub fn stationary_exact(states: u64, p: f64) -> Result<Vec<f64>> {
    check_chain(states, p)?;
    let s = states as usize;
    let mut pi = vec![0.0; s];
    if p == 0.0 {
        pi[0] = 1.0;
        return Ok(pi);
    }
    if p == 1.0 {
        pi[s - 1] = 1.0;
        return Ok(pi);
    }
    let law = Binomial::new(p, states - 1).expect("validated parameters");
    for (k, slot) in pi.iter_mut().enumerate() {
        *slot = law.pmf(k as u64);
    }
    Ok(pi)
}

/// Fixed point of a row-stochastic matrix, `pi P = pi` with `sum pi = 1`,
/// by Gaussian elimination with partial pivoting.
pub fn stationary_solve(matrix: &[Vec<f64>]) -> Vec<f64> {
    let s = matrix.len();
    // Rows of (P^T - I), last equation replaced by normalization.
    let mut a: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| matrix[j][i] - if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut b = vec![0.0; s];
    a[s - 1] = vec![1.0; s];
    b[s - 1] = 1.0;
    for col in 0..s {
        let pivot = (col..s)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("nonempty range");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        let (top, bottom) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (r, row) in bottom.iter_mut().enumerate() {
            let f = row[col] / d;
            if f != 0.0 {
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
                b[col + 1 + r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; s];
    for r in (0..s).rev() {
        let tail: f64 = (r + 1..s).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    x
}

/// Transition matrix together with its stationary law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainAnalysis {
    pub states: u64,
    pub p: f64,
    pub matrix: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
}

impl ChainAnalysis {
    pub fn new(states: u64, p: f64) -> Result<Self> {
        Ok(Self {
            states,
            p,
            matrix: transition_matrix(states, p)?,
            stationary: stationary_exact(states, p)?,
        })
    }
}

/// Stationary mean squared error `p (1 - p) / (S - 1)`.
pub fn mse_stationary(states: u64, p: f64) -> Result<f64> {
    check_chain(states, p)?;
    Ok(p * (1.0 - p) / (states - 1) as f64)
}

/// Worst-case total variation distance to stationarity after each of
/// `0..=t_max` steps, maximized over the starting state.
///
/// All `S` start distributions are stepped through the tridiagonal kernel at
/// once, i.e. the rows of `P^t` are computed exactly. Cost `O(S^2 t_max)`.
pub fn tv_profile(states: u64, p: f64, t_max: u64) -> Result<Vec<f64>> {
    let pi = stationary_exact(states, p)?;
    let s = states as usize;
    let kernel: Vec<(f64, f64)> = (1..=states).map(|k| rates(states, p, k)).collect();
    let mut rows: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            let mut r = vec![0.0; s];
            r[i] = 1.0;
            r
        })
        .collect();
    let mut next = vec![0.0; s];
    let worst = |rows: &[Vec<f64>]| {
        rows.iter()
            .map(|r| 0.5 * r.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mut out = Vec::with_capacity(t_max as usize + 1);
    out.push(worst(&rows));
    for _ in 0..t_max {
        for row in rows.iter_mut() {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (j, &mass) in row.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let (up, down) = kernel[j];
                next[j] += mass * (1.0 - up - down);
                if up > 0.0 {
                    next[j + 1] += mass * up;
                }
                if down > 0.0 {
                    next[j - 1] += mass * down;
                }
            }
            row.copy_from_slice(&next);
        }
        out.push(worst(&rows));
    }
    Ok(out)
}

/// Summary of a coupling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub states: u64,
    pub p: f64,
    pub trials: u64,
    pub mean: f64,
    pub std_dev: f64,
    pub max: u64,
    /// Whether the gap between the chains ever widened (it must not).
    pub gap_increased: bool,
}

/// One run of the monotone coupling from `X_0 = 1`, `Y_0 = S`.
///
/// Both chains read one shared uniform `U` per step: a chain in state `k`
/// moves up when `U <= up(k)` and down when `U > 1 - down(k)`. Returns the
/// coalescence time and whether the gap ever grew.
pub fn coupling_run<R: BitSource + ?Sized>(states: u64, p: f64, src: &mut R) -> (u64, bool) {
    let (mut x, mut y) = (1u64, states);
    let mut t = 0u64;
    let mut grew = false;
    let moved = |k: u64, u: f64| {
        let (up, down) = rates(states, p, k);
        if u <= up {
            k + 1
        } else if u > 1.0 - down {
            k - 1
        } else {
            k
        }
    };
    while x != y {
        let u = src.uniform_open01();
        let (nx, ny) = (moved(x, u), moved(y, u));
        grew |= ny < nx || ny - nx > y - x;
        x = nx;
        y = ny;
        t += 1;
    }
    (t, grew)
}

/// Mean coalescence time of the coupling over `trials` independent runs.
///
/// Runs are parallel; each uses its own stream split from one family seed
/// drawn from `src`, so the result does not depend on thread count.
pub fn coupling_time_sim(
    states: u64,
    p: f64,
    trials: u64,
    src: &mut RandomSource,
) -> Result<CouplingSummary> {
    check_chain(states, p)?;
    if trials == 0 {
        return Err(domain("trials", 0.0, "need at least one trial"));
    }
    let family = src.fresh_seed();
    let runs: Vec<(u64, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| coupling_run(states, p, &mut RandomSource::split(family, i)))
        .collect();
    let times: Vec<f64> = runs.iter().map(|r| r.0 as f64).collect();
    let (mean, std_dev) = crate::stats::mean_std(&times);
    Ok(CouplingSummary {
        states,
        p,
        trials,
        mean,
        std_dev,
        max: runs.iter().map(|r| r.0).max().unwrap_or(0),
        gap_increased: runs.iter().any(|r| r.1),
    })
}

/// Mixing-time bounds `(ln 2 (S - 1) log2 (S - 1), 4 S log2 S)`.
pub fn mixing_bounds(states: u64) -> Result<(f64, f64)> {
    if states < 2 {
        return Err(domain("S", states as f64, "need at least two states"));
    }
    let s = states as f64;
    let lower = std::f64::consts::LN_2 * (s - 1.0) * (s - 1.0).log2();
    let upper = 4.0 * s * s.log2();
    Ok((lower, upper))
}

/// `ceil(log2(1 / delta)) * ceil(4 S log2 S)` steps, enough to be within
/// total variation `delta` of stationarity.
pub fn delta_mixing_bound(states: u64, delta: f64) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain("delta", delta, "delta must lie in (0, 1)"));
    }
    let (_, upper) = mixing_bounds(states)?;
    Ok(log2_inv_ceil(delta) * crate::num::ceil_snapped(upper) as u64)
}

/// States of `samples` independent machines after `steps` Bernoulli(`p`)
/// inputs each, all started in state 1. Parallel over machines.
pub fn stationary_samples(
    states: u64,
    p: f64,
    steps: u64,
    samples: u64,
    src: &mut RandomSource,
) -> Result<Vec<u64>> {
    check_chain(states, p)?;
    let family = src.fresh_seed();
    Ok((0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::split(family, i);
            let mut m = BiasMachine::new(states).expect("validated");
            for _ in 0..steps {
                let x = rng.bernoulli(p).expect("validated");
                m.step(x, &mut rng);
            }
            m.state()
        })
        .collect())
}
