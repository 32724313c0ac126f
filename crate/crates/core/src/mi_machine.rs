//! Finite-state mutual-information estimator.
//!
//! Same window structure as the entropy machine, over pairs `(x, y)`. Inside a
//! window three Morris counters (cap `2M`) count samples matching the test
//! pair in `x`, in `y`, and in both. Their combination
//! `C_MI = C_x + C_y - C_xy` tracks `log2 N_x + log2 N_y - log2 N_xy + mu`,
//! whose mean is affine in `-I(X; Y)`. The bias machine receives bits with
//! success probability `(4M - C_MI) / (6M)`, and `6M (theta_hat - a)`
//! estimates `I(X; Y)`.
//!
//! A window is abandoned as soon as any of the three counters reaches `2M`.

use rayon::prelude::*;

use crate::bias::BiasMachine;
use crate::calibration::Calibration;
use crate::distribution::JointDistribution;
use crate::entropy_machine::{check_tables, MachineReport, ThetaOracle, WindowEvent};
use crate::error::{domain, Error, Result};
use crate::morris::MorrisCounter;
use crate::rng::{BitSource, RandomSource};
use crate::window::{arrange, WindowTables};

#[derive(Debug, Clone, PartialEq)]
pub struct MiMachine {
    cal: Calibration,
    m2: u64,
    pair_test: (usize, usize),
    clock: MorrisCounter,
    cx: MorrisCounter,
    cy: MorrisCounter,
    cxy: MorrisCounter,
    bias: BiasMachine,
    report: MachineReport,
}

/// The components of an MI machine state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MiState {
    pub pair_test: (usize, usize),
    pub clock: u32,
    pub cx: u32,
    pub cy: u32,
    pub cxy: u32,
    pub bias: u64,
}

/// Outcome of one simulated window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiWindowSample {
    Completed { cx: u32, cy: u32, cxy: u32, samples: u64 },
    Aborted { samples: u64 },
}

impl MiMachine {
    pub fn new(cal: Calibration) -> Result<Self> {
        Self::from_state(
            cal,
            MiState {
                pair_test: (0, 0),
                clock: 1,
                cx: 1,
                cy: 1,
                cxy: 1,
                bias: 1,
            },
        )
    }

    pub fn from_state(cal: Calibration, s: MiState) -> Result<Self> {
        if cal.is_entropy() {
            return Err(Error::VariantMismatch {
                expected: "mutual-information",
            });
        }
        let m2 = cal.m2();
        check_pair(&cal, s.pair_test)?;
        let cap = Some(cal.counter_cap());
        Ok(Self {
            m2,
            pair_test: s.pair_test,
            clock: MorrisCounter::with_state(s.clock, Some(cal.m))?,
            cx: MorrisCounter::with_state(s.cx, cap)?,
            cy: MorrisCounter::with_state(s.cy, cap)?,
            cxy: MorrisCounter::with_state(s.cxy, cap)?,
            bias: BiasMachine::with_state(cal.s_bias, s.bias)?,
            report: MachineReport::default(),
            cal,
        })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.cal
    }

    pub fn state(&self) -> MiState {
        MiState {
            pair_test: self.pair_test,
            clock: self.clock.state(),
            cx: self.cx.state(),
            cy: self.cy.state(),
            cxy: self.cxy.state(),
            bias: self.bias.state(),
        }
    }

    pub fn bias(&self) -> &BiasMachine {
        &self.bias
    }

    /// Number of composite states, `n m2 M (2M)^3 s_bias`.
    pub fn state_count(&self) -> u128 {
        self.cal.state_count()
    }

    /// Position of the current state in `[0, state_count)`.
    pub fn state_index(&self) -> u128 {
        let m = u128::from(self.cal.m);
        let cap = 2 * m;
        let pair = self.pair_test.0 as u128 * u128::from(self.m2) + self.pair_test.1 as u128;
        let mut idx = pair * m + u128::from(self.clock.state() - 1);
        for c in [&self.cx, &self.cy, &self.cxy] {
            idx = idx * cap + u128::from(c.state() - 1);
        }
        idx * u128::from(self.cal.s_bias) + u128::from(self.bias.state() - 1)
    }

    /// Inverse of [`state_index`](Self::state_index).
    pub fn decode(cal: &Calibration, index: u128) -> Result<MiState> {
        if index >= cal.state_count() {
            return Err(domain("index", index as f64, "index exceeds the state count"));
        }
        let m = u128::from(cal.m);
        let cap = 2 * m;
        let s = u128::from(cal.s_bias);
        let mut rest = index;
        let bias = rest % s;
        rest /= s;
        let cxy = rest % cap;
        rest /= cap;
        let cy = rest % cap;
        rest /= cap;
        let cx = rest % cap;
        rest /= cap;
        let clock = rest % m;
        let pair = rest / m;
        let m2 = u128::from(cal.m2());
        Ok(MiState {
            pair_test: ((pair / m2) as usize, (pair % m2) as usize),
            clock: clock as u32 + 1,
            cx: cx as u32 + 1,
            cy: cy as u32 + 1,
            cxy: cxy as u32 + 1,
            bias: bias as u64 + 1,
        })
    }

    pub fn from_index(cal: Calibration, index: u128) -> Result<Self> {
        let s = Self::decode(&cal, index)?;
        Self::from_state(cal, s)
    }

    /// One input pair.
    pub fn feed<R: BitSource + ?Sized>(
        &mut self,
        pair: (usize, usize),
        src: &mut R,
    ) -> Result<WindowEvent> {
        check_pair(&self.cal, pair)?;
        self.report.samples += 1;
        if self.clock.state() == 1 {
            self.pair_test = pair;
            self.cx.reset();
            self.cy.reset();
            self.cxy.reset();
            self.clock.increment(src)?;
        } else {
            self.clock.increment(src)?;
            let (hit_x, hit_y) = (pair.0 == self.pair_test.0, pair.1 == self.pair_test.1);
            if hit_x {
                self.cx.increment(src)?;
            }
            if hit_y {
                self.cy.increment(src)?;
            }
            if hit_x && hit_y {
                self.cxy.increment(src)?;
            }
            if self.cx.is_saturated() || self.cy.is_saturated() || self.cxy.is_saturated() {
                self.clock.reset();
                self.report.aborted_windows += 1;
                return Ok(WindowEvent::Aborted);
            }
        }
        if self.clock.is_saturated() {
            self.clock.reset();
            let s = self.state();
            return Ok(self.close_window(s.cx, s.cy, s.cxy, src));
        }
        Ok(WindowEvent::Continue)
    }

    fn close_window<R: BitSource + ?Sized>(&mut self, cx: u32, cy: u32, cxy: u32, src: &mut R) -> WindowEvent {
        let statistic = i64::from(cx) + i64::from(cy) - i64::from(cxy);
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

    /// Feeds `samples` draws from `joint`, one at a time.
    pub fn run_faithful<R: BitSource + ?Sized>(
        &mut self,
        joint: &JointDistribution,
        samples: u64,
        src: &mut R,
    ) -> Result<()> {
        for _ in 0..samples {
            let pair = joint.sample(src);
            self.feed(pair, src)?;
        }
        Ok(())
    }

    /// Tables for [`run_windows`](Self::run_windows).
    pub fn tables(&self) -> WindowTables {
        WindowTables::new(self.cal.m, self.cal.counter_cap())
    }

    /// Simulates windows until `k` more bits have reached the bias machine.
    pub fn run_windows<R: BitSource + ?Sized>(
        &mut self,
        joint: &JointDistribution,
        k: u64,
        tables: &WindowTables,
        src: &mut R,
    ) -> Result<()> {
        check_tables(&self.cal, tables)?;
        if joint.n() != self.cal.n || joint.m2() != self.m2 {
            return Err(domain(
                "n",
                joint.n() as f64,
                "joint alphabet differs from the calibration",
            ));
        }
        let target = self.report.increments + k;
        let cap = Some(self.cal.counter_cap());
        while self.report.increments < target {
            match sample_mi_window(joint, tables, src) {
                MiWindowSample::Completed { cx, cy, cxy, samples } => {
                    self.report.samples += samples;
                    self.cx = MorrisCounter::with_state(cx, cap).expect("below cap");
                    self.cy = MorrisCounter::with_state(cy, cap).expect("below cap");
                    self.cxy = MorrisCounter::with_state(cxy, cap).expect("below cap");
                    self.close_window(cx, cy, cxy, src);
                }
                MiWindowSample::Aborted { samples } => {
                    self.report.samples += samples;
                    self.report.aborted_windows += 1;
                }
            }
        }
        Ok(())
    }

    /// `6M (theta_hat - a)`.
    pub fn estimate_raw(&self) -> f64 {
        self.cal.estimate_from_theta(self.bias.estimate())
    }

    /// Raw estimate clamped to `[0, log2 min(n, m2)]`.
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

fn check_pair(cal: &Calibration, pair: (usize, usize)) -> Result<()> {
    if pair.0 as u64 >= cal.n {
        return Err(Error::SymbolOutOfRange {
            symbol: pair.0,
            alphabet: cal.n as usize,
        });
    }
    if pair.1 as u64 >= cal.m2() {
        return Err(Error::SymbolOutOfRange {
            symbol: pair.1,
            alphabet: cal.m2() as usize,
        });
    }
    Ok(())
}

/// One MI window drawn from its exact law.
///
/// The `N'` compared samples split multinomially into "both match", "only x",
/// "only y" and "neither". Each counter then advances once per relevant
/// match. If any counter saturates, the match categories are laid out in a
/// uniformly random order to find the first saturating sample.
pub fn sample_mi_window<R: BitSource + ?Sized>(
    joint: &JointDistribution,
    tables: &WindowTables,
    src: &mut R,
) -> MiWindowSample {
    let (tau1, compared) = tables.clock_phases(src);
    let (x, y) = joint.sample(src);
    let [p_both, p_x, p_y, _] = joint.match_probs(x, y);
    let both = src.binomial(compared, p_both);
    let rest = compared - both;
    let left = 1.0 - p_both;
    let x_only = if left > 0.0 {
        src.binomial(rest, (p_x / left).min(1.0))
    } else {
        0
    };
    let left2 = left - p_x;
    let y_only = if left2 > 0.0 {
        src.binomial(rest - x_only, (p_y / left2).min(1.0))
    } else {
        0
    };
    let (cx, sat_x) = tables.counter_after(both + x_only, src);
    let (cy, sat_y) = tables.counter_after(both + y_only, src);
    let (cxy, sat_xy) = tables.counter_after(both, src);
    if sat_x.is_none() && sat_y.is_none() && sat_xy.is_none() {
        return MiWindowSample::Completed {
            cx,
            cy,
            cxy,
            samples: tau1 + compared,
        };
    }
    // Categories: 0 both, 1 x only, 2 y only, 3 neither.
    let order = arrange(&[both, x_only, y_only, rest - x_only - y_only], src);
    let (mut nx, mut ny, mut nxy) = (0u64, 0u64, 0u64);
    for (i, &cat) in order.iter().enumerate() {
        nx += u64::from(cat == 0 || cat == 1);
        ny += u64::from(cat == 0 || cat == 2);
        nxy += u64::from(cat == 0);
        if Some(nx) == sat_x || Some(ny) == sat_y || Some(nxy) == sat_xy {
            return MiWindowSample::Aborted {
                samples: tau1 + i as u64 + 1,
            };
        }
    }
    unreachable!("a saturating match lies inside the window")
}

/// Runs a fresh MI machine for `k` bias-machine updates in window mode.
pub fn run_accelerated(
    cal: &Calibration,
    joint: &JointDistribution,
    k: u64,
    src: &mut RandomSource,
) -> Result<(MiMachine, MachineReport)> {
    let mut machine = MiMachine::new(cal.clone())?;
    let tables = machine.tables();
    machine.run_windows(joint, k, &tables, src)?;
    let report = machine.report();
    Ok((machine, report))
}

const ORACLE_CHUNK: u64 = 1 << 14;

/// Averages `theta = (4M - C_MI) / (6M)` over `windows` completed windows.
/// `bias` is `6M (theta - a) - I` when `I` is supplied.
pub fn theta_oracle(
    cal: &Calibration,
    joint: &JointDistribution,
    windows: u64,
    information: Option<f64>,
    src: &mut RandomSource,
) -> Result<ThetaOracle> {
    if cal.is_entropy() {
        return Err(Error::VariantMismatch {
            expected: "mutual-information",
        });
    }
    if windows == 0 {
        return Err(domain("windows", 0.0, "need at least one window"));
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
                match sample_mi_window(joint, &tables, &mut rng) {
                    MiWindowSample::Completed { cx, cy, cxy, .. } => {
                        let stat = i64::from(cx) + i64::from(cy) - i64::from(cxy);
                        sum += cal.theta_ratio(stat).0;
                        done += 1;
                    }
                    MiWindowSample::Aborted { .. } => aborted += 1,
                }
            }
            (sum, done, aborted)
        })
        .collect();
    let (sum, done, aborted) = parts
        .iter()
        .fold((0u64, 0u64, 0u64), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    let theta = sum as f64 / (done as f64 * 6.0 * f64::from(cal.m));
    Ok(ThetaOracle {
        theta,
        windows: done,
        aborted,
        bias: information.map(|i| cal.estimate_from_theta(theta) - i),
    })
}
