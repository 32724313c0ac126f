//! Window-level sampling for the accelerated estimators.
//!
//! A window starts when the clock leaves state 1. While the clock sits in
//! state 1 (`tau_1 ~ Geo(1/2)` samples) each sample overwrites the test
//! symbol, so the test symbol is the last of them. The remaining
//! `N' = tau_2 + ... + tau_{M-1}` samples are compared against it, and the
//! last of those moves the clock to `M`.
//!
//! [`WindowTables`] precomputes two exact laws so that a window costs a few
//! table lookups instead of dozens of geometric draws:
//!
//! * the law of `N'`, inverted through a guide table;
//! * the law of a capped Morris counter after `K` increments, one CDF row per
//!   `K` up to [`MORRIS_ROWS`].
//!
//! Both are sampled by inverting the CDF at a uniform with 53-bit resolution.
//! The `N'` table drops tail mass below `e^-45` per stage, which that
//! resolution cannot see. Outside the tables the samplers fall back to direct
//! geometric draws.

use crate::morris::{Advance, MorrisCounter};
use crate::rng::BitSource;

/// Number of `K` values with a tabulated counter law.
pub const MORRIS_ROWS: usize = 1 << 14;

/// Largest clock cap `M` for which the `N'` law is tabulated.
pub const CLOCK_TABLE_MAX_M: u32 = 18;

/// Each stage `k` of the clock is tabulated up to `45 * 2^k` steps.
const STAGE_TAIL_FACTOR: u64 = 45;

#[derive(Debug, Clone)]
struct ClockTable {
    offset: u64,
    cdf: Vec<f64>,
    guide: Vec<u32>,
}

impl ClockTable {
    fn new(m: u32) -> Self {
        let offset = u64::from(m.saturating_sub(2));
        let len: u64 = (2..m).map(|k| STAGE_TAIL_FACTOR << k).sum::<u64>() + 1;
        let len = len as usize;
        // pmf of N' shifted by its minimum (each geometric starts at 1).
        let mut pmf = vec![0.0f64; len];
        pmf[0] = 1.0;
        let mut next = vec![0.0f64; len];
        let mut reach = 1usize;
        for k in 2..m {
            let p = (2f64).powi(-(k as i32));
            reach += (STAGE_TAIL_FACTOR << k) as usize;
            // Shifted geometric: f(n) = (1 - p) f(n - 1) + p g(n).
            // Values below the normal range are flushed; subnormal arithmetic
            // is orders of magnitude slower and the mass is invisible anyway.
            next[0] = p * pmf[0];
            for n in 1..reach {
                let v = (1.0 - p) * next[n - 1] + p * pmf[n];
                next[n] = if v < f64::MIN_POSITIVE { 0.0 } else { v };
            }
            std::mem::swap(&mut pmf, &mut next);
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().expect("nonempty") = 1.0;
        let buckets = (len / 4).max(1);
        let mut guide = Vec::with_capacity(buckets);
        let mut i = 0usize;
        for g in 0..buckets {
            let level = g as f64 / buckets as f64;
            while cdf[i] < level {
                i += 1;
            }
            guide.push(i as u32);
        }
        Self { offset, cdf, guide }
    }

    #[inline]
    fn sample<R: BitSource + ?Sized>(&self, src: &mut R) -> u64 {
        let u = src.uniform_open01();
        let g = ((u * self.guide.len() as f64) as usize).min(self.guide.len() - 1);
        let lo = self.guide[g] as usize;
        let hi = self.guide.get(g + 1).map_or(self.cdf.len(), |&h| h as usize + 1);
        let i = lo + self.cdf[lo..hi].partition_point(|&c| c < u);
        self.offset + i as u64
    }
}

/// Exact window-level laws for one `(M, cap)` pair.
#[derive(Debug, Clone)]
pub struct WindowTables {
    m: u32,
    cap: u32,
    clock: Option<ClockTable>,
    /// `rows[k * cap + s - 1] = P(counter <= s after k increments)`.
    rows: Vec<f64>,
}

impl WindowTables {
    /// Tables for a clock with cap `m` and counters with cap `cap`.
    pub fn new(m: u32, cap: u32) -> Self {
        assert!(m >= 2 && cap >= 2);
        let clock = (m <= CLOCK_TABLE_MAX_M).then(|| ClockTable::new(m));
        let c = cap as usize;
        let mut rows = Vec::with_capacity(MORRIS_ROWS * c);
        let mut law = vec![0.0f64; c];
        law[0] = 1.0;
        let up: Vec<f64> = (1..=c).map(|s| (2f64).powi(-(s as i32))).collect();
        for _ in 0..MORRIS_ROWS {
            let mut acc = 0.0;
            rows.extend(law.iter().map(|p| {
                acc += p;
                acc
            }));
            *rows.last_mut().expect("nonempty") = 1.0;
            law[c - 1] += law[c - 2] * up[c - 2];
            for i in (1..c - 1).rev() {
                law[i] = law[i] * (1.0 - up[i]) + law[i - 1] * up[i - 1];
            }
            law[0] *= 1.0 - up[0];
        }
        Self {
            m,
            cap,
            clock,
            rows,
        }
    }

    pub fn clock_cap(&self) -> u32 {
        self.m
    }

    pub fn counter_cap(&self) -> u32 {
        self.cap
    }

    /// `(tau_1, N')` for one window.
    #[inline]
    pub fn clock_phases<R: BitSource + ?Sized>(&self, src: &mut R) -> (u64, u64) {
        match &self.clock {
            Some(t) => (src.geometric_dyadic(1), t.sample(src)),
            None => clock_phases(self.m, src),
        }
    }

    /// State of a fresh capped counter after `k` increments, and if it
    /// saturated, which increment took it to the cap.
    #[inline]
    pub fn counter_after<R: BitSource + ?Sized>(&self, k: u64, src: &mut R) -> (u32, Option<u64>) {
        if k as usize >= MORRIS_ROWS {
            let mut c = MorrisCounter::with_cap(self.cap).expect("cap >= 2");
            return match c.increment_many(k, src) {
                Advance::Completed => (c.state(), None),
                Advance::Saturated { remaining } => (c.state(), Some(k - remaining)),
            };
        }
        let c = self.cap as usize;
        let row = &self.rows[k as usize * c..(k as usize + 1) * c];
        let u = src.uniform_open01();
        let s = row.partition_point(|&v| v < u) + 1;
        if s < c {
            return (s as u32, None);
        }
        (self.cap, Some(self.hitting_time(k, src)))
    }

    /// The increment `t <= k` at which the counter first reached the cap,
    /// given that it did: `P(T = t)` is proportional to the mass one below
    /// the cap after `t - 1` increments times `2^-(cap - 1)`.
    fn hitting_time<R: BitSource + ?Sized>(&self, k: u64, src: &mut R) -> u64 {
        let c = self.cap as usize;
        let below = |t: usize| {
            let row = &self.rows[t * c..(t + 1) * c];
            row[c - 2] - if c >= 3 { row[c - 3] } else { 0.0 }
        };
        let total: f64 = (0..k as usize).map(below).sum();
        let mut u = src.uniform_open01() * total;
        for t in 0..k as usize {
            u -= below(t);
            if u <= 0.0 {
                return t as u64 + 1;
            }
        }
        k
    }
}

/// `(tau_1, N')` for a clock with cap `m`, by direct geometric draws.
#[inline]
pub fn clock_phases<R: BitSource + ?Sized>(m: u32, src: &mut R) -> (u64, u64) {
    let tau1 = src.geometric_dyadic(1);
    let rest = (2..m).map(|k| src.geometric_dyadic(k)).sum();
    (tau1, rest)
}

/// Position (1-based, among `total` compared samples) of the `j`-th match,
/// when `matches` matching positions are placed uniformly at random.
pub(crate) fn position_of_match<R: BitSource + ?Sized>(
    total: u64,
    matches: u64,
    j: u64,
    src: &mut R,
) -> u64 {
    debug_assert!(1 <= j && j <= matches && matches <= total);
    let (mut left, mut slots, mut seen) = (matches, total, 0u64);
    let mut pos = 0u64;
    loop {
        pos += 1;
        if src.bernoulli_ratio(left, slots) {
            seen += 1;
            left -= 1;
            if seen == j {
                return pos;
            }
        }
        slots -= 1;
    }
}

/// Arranges category counts uniformly at random and returns the category of
/// each position, in order.
pub(crate) fn arrange<R: BitSource + ?Sized>(counts: &[u64], src: &mut R) -> Vec<usize> {
    let total: u64 = counts.iter().sum();
    let mut left = counts.to_vec();
    let mut slots = total;
    let mut out = Vec::with_capacity(total as usize);
    while slots > 0 {
        let mut u = src.uniform_below(slots);
        let cat = left
            .iter()
            .position(|&c| {
                if u < c {
                    true
                } else {
                    u -= c;
                    false
                }
            })
            .expect("counts cover every slot");
        left[cat] -= 1;
        slots -= 1;
        out.push(cat);
    }
    out
}
