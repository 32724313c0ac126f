//! Finite-state entropy estimator.
//!
//! The machine is the product of four components:
//!
//! * a test symbol `x_test` in `[n]`;
//! * a clock, a Morris counter capped at `M`, whose run from state 1 to `M`
//!   delimits a window of roughly `n^c` samples;
//! * a symbol counter, a Morris counter capped at `2M`, counting occurrences
//!   of `x_test` inside the window, so its state tracks `log2 N_x`;
//! * a bias machine with `s_bias` states.
//!
//! At the end of each window the bias machine receives one bit with success
//! probability `theta = 1 - C / (2M)`, where `C` is the symbol counter. Since
//! `E[C] ~ log2 N_x + mu ~ log2 N + mu - log2 p(x)`, the mean of `theta` is
//! affine in `H(p)` and `2M (theta_hat - a)` estimates it.
//!
//! While the clock is in state 1 each sample replaces `x_test` and clears the
//! symbol counter, and the clock still attempts its increment, so the test
//! symbol is the last sample seen before the clock leaves state 1. A window in
//! which the symbol counter reaches `2M` is abandoned: the clock returns to 1
//! and the bias machine is left alone.
//!
//! [`run_accelerated`] simulates whole windows from their exact law instead of
//! sample by sample; the bits it feeds to the bias machine have the same
//! distribution as those of [`EntropyMachine::feed`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::BiasMachine;
use crate::calibration::Calibration;
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::morris::MorrisCounter;
use crate::rng::{BitSource, RandomSource};
use crate::window::{position_of_match, WindowTables};

/// What a single step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowEvent {
    /// The window is still open (or has just started).
    Continue,
    /// A counter reached its cap; the window was abandoned.
    Aborted,
    /// The window closed and one bit was fed to the bias machine.
    Completed {
        /// Counter statistic `C` (entropy) or `C_MI` (mutual information).
        statistic: i64,
        /// Success probability of the bit, `num / den`.
        theta: (u64, u64),
        bit: bool,
    },
}

/// Bookkeeping for a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MachineReport {
    /// Bits fed to the bias machine.
    pub increments: u64,
    /// Samples consumed.
    pub samples: u64,
    /// Windows abandoned because a counter saturated.
    pub aborted_windows: u64,
    pub estimate_raw: f64,
    pub estimate_clamped: f64,
}

/// Outcome of one simulated window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSample {
    Completed { counter: u32, samples: u64 },
    Aborted { samples: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMachine {
    cal: Calibration,
    x_test: usize,
    clock: MorrisCounter,
    counter: MorrisCounter,
    bias: BiasMachine,
    report: MachineReport,
}

/// The four components of a machine state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EntropyState {
    pub x_test: usize,
    pub clock: u32,
    pub counter: u32,
    pub bias: u64,
}

impl EntropyMachine {
    /// Fresh machine: every counter in state 1, test symbol 0.
    pub fn new(cal: Calibration) -> Result<Self> {
        if !cal.is_entropy() {
            return Err(Error::VariantMismatch { expected: "entropy" });
        }
        Self::from_state(
            cal,
            EntropyState {
                x_test: 0,
                clock: 1,
                counter: 1,
                bias: 1,
            },
        )
    }

    pub fn from_state(cal: Calibration, s: EntropyState) -> Result<Self> {
        if s.x_test as u64 >= cal.n {
            return Err(Error::SymbolOutOfRange {
                symbol: s.x_test,
                alphabet: cal.n as usize,
            });
        }
        Ok(Self {
            x_test: s.x_test,
            clock: MorrisCounter::with_state(s.clock, Some(cal.m))?,
            counter: MorrisCounter::with_state(s.counter, Some(cal.counter_cap()))?,
            bias: BiasMachine::with_state(cal.s_bias, s.bias)?,
            report: MachineReport::default(),
            cal,
        })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.cal
    }

    pub fn state(&self) -> EntropyState {
        EntropyState {
            x_test: self.x_test,
            clock: self.clock.state(),
            counter: self.counter.state(),
            bias: self.bias.state(),
        }
    }

    pub fn bias(&self) -> &BiasMachine {
        &self.bias
    }

    /// Number of composite states, `n M 2M s_bias`.
    pub fn state_count(&self) -> u128 {
        self.cal.state_count()
    }

    /// Position of the current state in `[0, n M 2M s_bias)`.
    pub fn state_index(&self) -> u128 {
        let m = u128::from(self.cal.m);
        let cap = 2 * m;
        let s = u128::from(self.cal.s_bias);
        ((self.x_test as u128 * m + u128::from(self.clock.state() - 1)) * cap
            + u128::from(self.counter.state() - 1))
            * s
            + u128::from(self.bias.state() - 1)
    }

    /// Inverse of [`state_index`](Self::state_index).
    pub fn decode(cal: &Calibration, index: u128) -> Result<EntropyState> {
        if index >= cal.state_count() {
            return Err(crate::error::domain(
                "index",
                index as f64,
                "index exceeds the state count",
            ));
        }
        let m = u128::from(cal.m);
        let cap = 2 * m;
        let s = u128::from(cal.s_bias);
        let bias = index % s;
        let rest = index / s;
        let counter = rest % cap;
        let rest = rest / cap;
        let clock = rest % m;
        let x_test = rest / m;
        Ok(EntropyState {
            x_test: x_test as usize,
            clock: clock as u32 + 1,
            counter: counter as u32 + 1,
            bias: bias as u64 + 1,
        })
    }

    pub fn from_index(cal: Calibration, index: u128) -> Result<Self> {
        let s = Self::decode(&cal, index)?;
        Self::from_state(cal, s)
    }

    /// One input symbol.
    pub fn feed<R: BitSource + ?Sized>(&mut self, x: usize, src: &mut R) -> Result<WindowEvent> {
        if x as u64 >= self.cal.n {
            return Err(Error::SymbolOutOfRange {
                symbol: x,
                alphabet: self.cal.n as usize,
            });
        }
        self.report.samples += 1;
        if self.clock.state() == 1 {
            self.x_test = x;
            self.counter.reset();
            self.clock.increment(src)?;
        } else {
            self.clock.increment(src)?;
            if x == self.x_test {
                self.counter.increment(src)?;
            }
            if self.counter.is_saturated() {
                self.clock.reset();
                self.report.aborted_windows += 1;
                return Ok(WindowEvent::Aborted);
            }
        }
        if self.clock.is_saturated() {
            self.clock.reset();
            return Ok(self.close_window(self.counter.state(), src));
        }
        Ok(WindowEvent::Continue)
    }

    fn close_window<R: BitSource + ?Sized>(&mut self, counter: u32, src: &mut R) -> WindowEvent {
        let statistic = i64::from(counter);
        let (num, den) = self.cal.theta_ratio(statistic);
        let bit = src.bernoulli_ratio(num, den);
        self.bias.step(bit, src);
        self.report.increments += 1;
        WindowEvent::Completed {
            statistic,
            theta: (num, den),
            bit,
        }
    }

    /// Feeds `samples` draws from `dist`, one at a time.
    pub fn run_faithful<R: BitSource + ?Sized>(
        &mut self,
        dist: &DiscreteDistribution,
        samples: u64,
        src: &mut R,
    ) -> Result<()> {
        for _ in 0..samples {
            let x = dist.sample(src);
            self.feed(x, src)?;
        }
        Ok(())
    }

    /// Tables for [`run_windows`](Self::run_windows); build once, share
    /// across machines with the same calibration.
    pub fn tables(&self) -> WindowTables {
        WindowTables::new(self.cal.m, self.cal.counter_cap())
    }

    /// Simulates windows until `k` more bits have reached the bias machine.
    ///
    /// Expects the clock in state 1 (between windows), which is where every
    /// fresh machine and every completed window leaves it.
    pub fn run_windows<R: BitSource + ?Sized>(
        &mut self,
        dist: &DiscreteDistribution,
        k: u64,
        tables: &WindowTables,
        src: &mut R,
    ) -> Result<()> {
        check_tables(&self.cal, tables)?;
        if dist.n() != self.cal.n {
            return Err(crate::error::domain(
                "n",
                dist.n() as f64,
                "distribution alphabet differs from the calibration",
            ));
        }
        let target = self.report.increments + k;
        while self.report.increments < target {
            match sample_window(dist, tables, src) {
                WindowSample::Completed { counter, samples } => {
                    self.report.samples += samples;
                    self.counter = MorrisCounter::with_state(counter, Some(self.cal.counter_cap()))
                        .expect("counter below cap");
                    self.close_window(counter, src);
                }
                WindowSample::Aborted { samples } => {
                    self.report.samples += samples;
                    self.report.aborted_windows += 1;
                    self.counter = MorrisCounter::with_state(self.cal.counter_cap(), Some(self.cal.counter_cap()))
                        .expect("cap is a valid state");
                }
            }
        }
        Ok(())
    }

    /// `2M (theta_hat - a)`.
    pub fn estimate_raw(&self) -> f64 {
        self.cal.estimate_from_theta(self.bias.estimate())
    }

    /// Raw estimate clamped to `[0, log2 n]`.
    pub fn estimate(&self) -> f64 {
        self.estimate_raw().clamp(0.0, self.cal.estimate_ceiling())
    }

    pub fn report(&self) -> MachineReport {
        MachineReport {
            estimate_raw: self.estimate_raw(),
            estimate_clamped: self.estimate(),
            ..self.report
        }
    }
}

/// One window drawn from its exact law.
///
/// `x_test ~ dist`; `N'` compared samples follow the clock phases; the number
/// of matches is `Binomial(N', p(x_test))`; the symbol counter advances once
/// per match. If it reaches `2M` the window is abandoned at the position of
/// the saturating match.
pub fn sample_window<R: BitSource + ?Sized>(
    dist: &DiscreteDistribution,
    tables: &WindowTables,
    src: &mut R,
) -> WindowSample {
    let (tau1, compared) = tables.clock_phases(src);
    let x = dist.sample(src);
    let matches = src.binomial(compared, dist.prob(x));
    match tables.counter_after(matches, src) {
        (counter, None) => WindowSample::Completed {
            counter,
            samples: tau1 + compared,
        },
        (_, Some(j)) => WindowSample::Aborted {
            samples: tau1 + position_of_match(compared, matches, j, src),
        },
    }
}

pub(crate) fn check_tables(cal: &Calibration, tables: &WindowTables) -> Result<()> {
    if tables.clock_cap() != cal.m || tables.counter_cap() != cal.counter_cap() {
        return Err(crate::error::domain(
            "M",
            f64::from(tables.clock_cap()),
            "window tables built for a different calibration",
        ));
    }
    Ok(())
}

/// Runs a fresh machine for `k` bias-machine updates in window mode.
pub fn run_accelerated(
    cal: &Calibration,
    dist: &DiscreteDistribution,
    k: u64,
    src: &mut RandomSource,
) -> Result<(EntropyMachine, MachineReport)> {
    let mut machine = EntropyMachine::new(cal.clone())?;
    let tables = machine.tables();
    machine.run_windows(dist, k, &tables, src)?;
    let report = machine.report();
    Ok((machine, report))
}

/// Monte Carlo mean of `theta` over completed windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaOracle {
    pub theta: f64,
    pub windows: u64,
    pub aborted: u64,
    /// `2M (theta - a) - H(p)`, when `H(p)` was supplied.
    pub bias: Option<f64>,
}

impl ThetaOracle {
    /// The limit the estimator converges to: `scale (theta - a)`.
    pub fn target(&self, cal: &Calibration) -> f64 {
        cal.estimate_from_theta(self.theta)
    }
}

const ORACLE_CHUNK: u64 = 1 << 14;

/// Averages `theta = 1 - C / (2M)` over `windows` completed windows.
/// Deterministic for a given source state regardless of thread count.
pub fn theta_oracle(
    cal: &Calibration,
    dist: &DiscreteDistribution,
    windows: u64,
    entropy: Option<f64>,
    src: &mut RandomSource,
) -> Result<ThetaOracle> {
    if !cal.is_entropy() {
        return Err(Error::VariantMismatch { expected: "entropy" });
    }
    if windows == 0 {
        return Err(crate::error::domain("windows", 0.0, "need at least one window"));
    }
    let tables = WindowTables::new(cal.m, cal.counter_cap());
    let family = src.fresh_seed();
    let chunks = windows.div_ceil(ORACLE_CHUNK);
    let parts: Vec<(u64, u64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = RandomSource::split(family, chunk);
            let want = ORACLE_CHUNK.min(windows - chunk * ORACLE_CHUNK);
            let (mut sum, mut done, mut aborted) = (0u64, 0u64, 0u64);
            while done < want {
                match sample_window(dist, &tables, &mut rng) {
                    WindowSample::Completed { counter, .. } => {
                        sum += cal.theta_ratio(i64::from(counter)).0;
                        done += 1;
                    }
                    WindowSample::Aborted { .. } => aborted += 1,
                }
            }
            (sum, done, aborted)
        })
        .collect();
    let (sum, done, aborted) = parts
        .iter()
        .fold((0u64, 0u64, 0u64), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    let theta = sum as f64 / (done as f64 * f64::from(cal.counter_cap()));
    Ok(ThetaOracle {
        theta,
        windows: done,
        aborted,
        bias: entropy.map(|h| cal.estimate_from_theta(theta) - h),
    })
}
