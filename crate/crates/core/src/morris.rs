//! Base-2 Morris approximate counters.
//!
//! A counter in state `s` advances to `s + 1` with probability `2^-s` on each
//! increment and stays put otherwise, so after `m` increments its state is
//! close to `log2 m`. Counters start in state 1 and may carry a cap; reaching
//! the cap is how the estimators detect a window that ran too long.
//!
//! [`exact_law`] computes the finite-`m` distribution of the state by dynamic
//! programming and serves as the oracle for the sampled paths.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::BitSource;

/// Approximate counter with state `>= 1` and an optional cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MorrisCounter {
    state: u32,
    cap: Option<u32>,
}

/// How a batch of increments ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advance {
    /// All requested increments were applied.
    Completed,
    /// The counter reached its cap with `remaining` increments still unapplied.
    Saturated { remaining: u64 },
}

impl Default for MorrisCounter {
    fn default() -> Self {
        Self::new()
    }
}

impl MorrisCounter {
    /// Unbounded counter in state 1.
    pub fn new() -> Self {
        Self {
            state: 1,
            cap: None,
        }
    }

    /// Counter in state 1 that never exceeds `cap` (`cap >= 2`).
    pub fn with_cap(cap: u32) -> Result<Self> {
        Self::with_state(1, Some(cap))
    }

    /// Counter in an explicit state, validated against the cap.
    pub fn with_state(state: u32, cap: Option<u32>) -> Result<Self> {
        if let Some(c) = cap {
            if c < 2 {
                return Err(domain("cap", c as f64, "cap must be at least 2"));
            }
            if state > c {
                return Err(domain("state", state as f64, "state exceeds cap"));
            }
        }
        if state == 0 {
            return Err(domain("state", 0.0, "states start at 1"));
        }
        Ok(Self { state, cap })
    }

    #[inline]
    pub fn state(&self) -> u32 {
        self.state
    }

    pub fn cap(&self) -> Option<u32> {
        self.cap
    }

    #[inline]
    pub fn is_saturated(&self) -> bool {
        self.cap == Some(self.state)
    }

    /// Back to state 1.
    #[inline]
    pub fn reset(&mut self) {
        self.state = 1;
    }

    /// One increment. Returns whether the state advanced.
    ///
    /// A counter sitting at its cap refuses with [`Error::Saturated`]; callers
    /// decide what saturation means.
    pub fn increment<R: BitSource + ?Sized>(&mut self, src: &mut R) -> Result<bool> {
        if let Some(cap) = self.cap {
            if self.state >= cap {
                return Err(Error::Saturated { cap });
            }
        }
        let advanced = src.bernoulli_dyadic(self.state);
        self.state += u32::from(advanced);
        Ok(advanced)
    }

    /// Applies `k` increments at once.
    ///
    /// The number of increments spent in state `s` is Geometric(2^-s), so the
    /// counter jumps state by state instead of flipping `k` coins. The result
    /// has the same law as `k` calls to [`increment`](Self::increment); the
    /// cost is one draw per state visited. Stops as soon as the cap is reached.
    pub fn increment_many<R: BitSource + ?Sized>(&mut self, k: u64, src: &mut R) -> Advance {
        if k == 0 {
            return Advance::Completed;
        }
        if self.is_saturated() {
            return Advance::Saturated { remaining: k };
        }
        let mut remaining = k;
        loop {
            let dwell = src.geometric_dyadic(self.state);
            if dwell > remaining {
                return Advance::Completed;
            }
            remaining -= dwell;
            self.state += 1;
            if self.is_saturated() {
                return Advance::Saturated { remaining };
            }
        }
    }
}

/// Distribution of a counter's state after `increments` increments.
///
/// `probs[s - 1]` is the probability of state `s` for `s` in `1..=s_max`.
/// The top state is absorbing: its mass is the probability that the counter
/// reached `s_max` at some point (the "would-saturate" mass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorrisLaw {
    pub increments: u64,
    pub probs: Vec<f64>,
}

impl MorrisLaw {
    pub fn s_max(&self) -> u32 {
        self.probs.len() as u32
    }

    /// P(state = s); zero outside `1..=s_max`.
    pub fn prob(&self, s: u32) -> f64 {
        if s == 0 {
            return 0.0;
        }
        self.probs.get(s as usize - 1).copied().unwrap_or(0.0)
    }

    /// Mass absorbed at the top state.
    pub fn saturation_mass(&self) -> f64 {
        *self.probs.last().expect("law has at least two states")
    }

    /// E[state], counting absorbed mass at `s_max`.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// E[state | state < s_max] together with P(state < s_max).
    pub fn mean_unsaturated(&self) -> (f64, f64) {
        let below = &self.probs[..self.probs.len() - 1];
        let mass: f64 = below.iter().sum();
        let m: f64 = below
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum();
        (m / mass, mass)
    }
}

/// Exact law of the counter state after `m` increments, tracked on states
/// `1..=s_max` with `s_max` absorbing.
///
/// `P_{t+1}(s) = P_t(s) (1 - 2^-s) + P_t(s - 1) 2^-(s - 1)`.
pub fn exact_law(m: u64, s_max: u32) -> Result<MorrisLaw> {
    if s_max < 2 {
        return Err(domain("s_max", s_max as f64, "need at least two states"));
    }
    let top = s_max as usize;
    let mut probs = vec![0.0f64; top];
    probs[0] = 1.0;
    let up: Vec<f64> = (1..=top).map(|s| (2f64).powi(-(s as i32))).collect();
    let mut reach = 1usize; // highest state with nonzero mass
    for _ in 0..m {
        let hi = (reach + 1).min(top);
        // Top state absorbs.
        if hi == top {
            probs[top - 1] += probs[top - 2] * up[top - 2];
        }
        for s in (1..hi.min(top - 1)).rev() {
            let idx = s; // state s + 1
            probs[idx] = probs[idx] * (1.0 - up[idx]) + probs[idx - 1] * up[idx - 1];
        }
        probs[0] *= 1.0 - up[0];
        reach = hi;
    }
    Ok(MorrisLaw {
        increments: m,
        probs,
    })
}

/// State ceiling used for "uncapped" exact laws: ⌈log2 m⌉ + 64.
pub fn uncapped_ceiling(m: u64) -> u32 {
    let log = if m <= 1 {
        0
    } else {
        64 - (m - 1).leading_zeros()
    };
    log + 64
}

/// E[C_m] for an unbounded counter, from the exact law.
pub fn expected_state(m: u64) -> f64 {
    exact_law(m, uncapped_ceiling(m))
        .expect("ceiling is at least 64")
        .mean()
}

/// Explicit bound on the residual term of the counter mean:
/// `min{1, 2^sqrt(16 log m) (log m)^4.5 / (2m)}`, logs base 2.
pub fn phi_bound(m: u64) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    let l = (m as f64).log2();
    let log2_value = (16.0 * l).sqrt() + 4.5 * l.log2() - 1.0 - l;
    if log2_value >= 0.0 {
        1.0
    } else {
        (2f64).powf(log2_value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSource, ScriptedBits};
    use crate::stats::chi_square_gof;

    /// Law by enumerating every success/failure path of `m` increments.
    fn enumerate_paths(m: u32) -> Vec<f64> {
        let mut law = vec![0.0; m as usize + 2];
        for mask in 0u32..(1 << m) {
            let (mut s, mut p) = (1u32, 1.0f64);
            for step in 0..m {
                let up = (2f64).powi(-(s as i32));
                if mask >> step & 1 == 1 {
                    p *= up;
                    s += 1;
                } else {
                    p *= 1.0 - up;
                }
            }
            law[s as usize] += p;
        }
        law
    }

    #[test]
    fn increment_probabilities() {
        // From state 1 a success word advances, a failure word does not.
        let mut c = MorrisCounter::new();
        assert!(c.increment(&mut ScriptedBits::new(vec![1])).unwrap());
        assert_eq!(c.state(), 2);
        let mut c = MorrisCounter::with_state(5, None).unwrap();
        assert!(!c.increment(&mut ScriptedBits::new(vec![u64::MAX])).unwrap());
        assert_eq!(c.state(), 5);
        // The threshold for state 5 is exactly 2^59.
        assert!(c.increment(&mut ScriptedBits::new(vec![(1 << 59) - 1])).unwrap());
        let mut c = MorrisCounter::with_state(5, None).unwrap();
        assert!(!c.increment(&mut ScriptedBits::new(vec![1 << 59])).unwrap());
    }

    #[test]
    fn empirical_step_rates() {
        let mut src = RandomSource::new(11);
        for (state, p) in [(1u32, 0.5), (5, 1.0 / 32.0)] {
            let trials = 200_000;
            let mut hits = 0;
            for _ in 0..trials {
                let mut c = MorrisCounter::with_state(state, None).unwrap();
                hits += u32::from(c.increment(&mut src).unwrap());
            }
            let rate = hits as f64 / trials as f64;
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((rate - p).abs() < 4.0 * sd, "state {state}: {rate}");
        }
    }

    #[test]
    fn saturated_counter_refuses() {
        let mut c = MorrisCounter::with_state(4, Some(4)).unwrap();
        assert_eq!(
            c.increment(&mut RandomSource::new(0)),
            Err(Error::Saturated { cap: 4 })
        );
        assert_eq!(
            c.increment_many(3, &mut RandomSource::new(0)),
            Advance::Saturated { remaining: 3 }
        );
        assert!(MorrisCounter::with_cap(1).is_err());
        assert!(MorrisCounter::with_state(5, Some(4)).is_err());
    }

    #[test]
    fn increment_many_zero_is_identity() {
        let mut c = MorrisCounter::with_state(3, Some(8)).unwrap();
        assert_eq!(
            c.increment_many(0, &mut RandomSource::new(0)),
            Advance::Completed
        );
        assert_eq!(c.state(), 3);
    }

    #[test]
    fn increment_many_reports_budget_left_at_cap() {
        // Success words make every dwell time 1.
        let mut c = MorrisCounter::with_cap(4).unwrap();
        let mut src = ScriptedBits::new(vec![u64::MAX]);
        // uniform_open01(u64::MAX) == 1 so every geometric is 1.
        assert_eq!(c.increment_many(10, &mut src), Advance::Saturated { remaining: 7 });
        assert_eq!(c.state(), 4);
    }

    #[test]
    fn exact_law_small_cases() {
        let l0 = exact_law(0, 8).unwrap();
        assert_eq!(l0.prob(1), 1.0);
        let l1 = exact_law(1, 8).unwrap();
        assert_eq!((l1.prob(1), l1.prob(2)), (0.5, 0.5));
        for m in 1..=10 {
            let dp = exact_law(m as u64, 40).unwrap();
            let brute = enumerate_paths(m);
            for s in 1..=(m + 1) {
                assert!((dp.prob(s) - brute[s as usize]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn capped_law_tracks_saturation() {
        // cap 3 after 2 increments: reaching 3 needs two successes (1/2 * 1/4).
        let l = exact_law(2, 3).unwrap();
        assert!((l.saturation_mass() - 0.125).abs() < 1e-15);
        assert!((l.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // Once absorbed, mass stays at the cap.
        let l = exact_law(50, 3).unwrap();
        let brute = enumerate_paths(12);
        let reach_by_12: f64 = brute[3..].iter().sum();
        assert!(l.saturation_mass() > reach_by_12);
    }

    #[test]
    fn sampled_law_matches_dp() {
        let mut src = RandomSource::new(2024);
        for m in [1u64, 7, 100, 1000, 10_000] {
            let s_max = uncapped_ceiling(m);
            let law = exact_law(m, s_max).unwrap();
            let runs = 100_000;
            let mut hist = vec![0u64; s_max as usize];
            for _ in 0..runs {
                let mut c = MorrisCounter::new();
                c.increment_many(m, &mut src);
                hist[c.state() as usize - 1] += 1;
            }
            let r = chi_square_gof(&hist, &law.probs);
            assert!(r.p_value > 1e-3, "m = {m}: {r:?}");
        }
    }

    #[test]
    fn single_step_batch_matches_increment() {
        let mut src = RandomSource::new(5);
        let runs = 100_000;
        let mut hist = [0u64; 2];
        for _ in 0..runs {
            let mut c = MorrisCounter::new();
            c.increment_many(1, &mut src);
            hist[c.state() as usize - 1] += 1;
        }
        let r = chi_square_gof(&hist, &[0.5, 0.5]);
        assert!(r.p_value > 1e-3, "{r:?}");
    }

    #[test]
    fn expected_state_values() {
        assert!((expected_state(1) - 1.5).abs() < 1e-15);
        let mut prev = expected_state(1);
        for m in [2u64, 3, 5, 10, 50, 200, 1000] {
            let e = expected_state(m);
            assert!(e > prev);
            prev = e;
        }
        let d = expected_state(1 << 11) - expected_state(1 << 10);
        assert!((d - 1.0).abs() < 3e-5 + phi_bound(1 << 10) + phi_bound(1 << 11));
        // The actual log-increment is much tighter than the bound.
        assert!((d - 1.0).abs() < 3e-3, "{d}");
    }

    #[test]
    fn phi_bound_values() {
        assert_eq!(phi_bound(1), 0.0);
        assert_eq!(phi_bound(2), 1.0);
        // Still saturated at 2^40 (the raw ratio is about 304).
        assert_eq!(phi_bound(1 << 40), 1.0);
        assert!(phi_bound(u64::MAX) < 1.0);
    }

    #[test]
    fn truncation_gap_is_tail_bounded() {
        let m = 4000u64;
        let full = exact_law(m, uncapped_ceiling(m)).unwrap();
        let mut last_gap = f64::INFINITY;
        for cap in [10u32, 12, 14, 16, 18] {
            let capped = exact_law(m, cap).unwrap();
            let gap = (full.mean() - capped.mean()).abs();
            let tail: f64 = (cap..=full.s_max()).map(|s| full.prob(s)).sum();
            let tail_mean: f64 = (cap..=full.s_max())
                .map(|s| s as f64 * full.prob(s))
                .sum::<f64>()
                / tail.max(f64::MIN_POSITIVE);
            assert!(gap <= tail * tail_mean + 1e-15, "cap {cap}");
            assert!(gap <= last_gap);
            assert!((capped.saturation_mass() - tail).abs() < 1e-12);
            last_gap = gap;
        }
    }
}
