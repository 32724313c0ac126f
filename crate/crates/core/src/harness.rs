//! Experiment drivers: repeated independent runs of the estimators, the
//! window-length tail experiment, and the uniformity tester built from the
//! entropy estimator.
//!
//! Every driver takes explicit seeds and returns the same report for the same
//! seeds regardless of how many threads rayon uses.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::distribution::{DiscreteDistribution, JointDistribution};
use crate::entropy_machine::{self, EntropyMachine, ThetaOracle};
use crate::error::{domain, Error, Result};
use crate::mi_machine::{self, MiMachine};
use crate::rng::RandomSource;
use crate::stats::{mean_std, median, wilson, Proportion};
use crate::window::{clock_phases, WindowTables};

/// Input stream for a batch of runs.
#[derive(Debug, Clone, Copy)]
pub enum Workload<'a> {
    Entropy(&'a DiscreteDistribution),
    MutualInformation(&'a JointDistribution),
}

impl Workload<'_> {
    /// `H(p)` or `I(X; Y)`.
    pub fn truth(&self) -> f64 {
        match self {
            Workload::Entropy(d) => d.entropy(),
            Workload::MutualInformation(j) => j.mutual_information(),
        }
    }

    fn check(&self, cal: &Calibration) -> Result<()> {
        match (self, cal.is_entropy()) {
            (Workload::Entropy(_), true) | (Workload::MutualInformation(_), false) => Ok(()),
            (Workload::Entropy(_), false) => Err(Error::VariantMismatch {
                expected: "mutual-information",
            }),
            (Workload::MutualInformation(_), true) => Err(Error::VariantMismatch { expected: "entropy" }),
        }
    }
}

/// `theta` averaged over `windows` completed windows, with the bias
/// `scale (theta - a) - truth`.
pub fn oracle(cal: &Calibration, work: Workload<'_>, windows: u64, src: &mut RandomSource) -> Result<ThetaOracle> {
    work.check(cal)?;
    let truth = Some(work.truth());
    match work {
        Workload::Entropy(d) => entropy_machine::theta_oracle(cal, d, windows, truth, src),
        Workload::MutualInformation(j) => mi_machine::theta_oracle(cal, j, windows, truth, src),
    }
}

/// `count` seeds derived from `master`.
pub fn trial_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut src = RandomSource::new(master);
    (0..count).map(|_| src.fresh_seed()).collect()
}

/// What to run and how to score it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    /// Bias-machine updates per run.
    pub increments: u64,
    /// A run errs when `|estimate - target| > eps`.
    pub eps: f64,
    /// Value the estimates are compared with; usually `H(p)`, or the
    /// estimator's limit `scale (theta - a)` to isolate the bias machine.
    pub target: f64,
    /// Score clamped estimates (the default output of the machines) or raw.
    pub clamped: bool,
}

/// One finished run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub estimate_raw: f64,
    pub estimate_clamped: f64,
    pub samples: u64,
    pub aborted_windows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub config: TrialConfig,
    pub truth: f64,
    pub trials: Vec<Trial>,
    pub errors: u64,
    /// Fraction of runs with `|estimate - target| > eps`, with its Wilson 95%
    /// interval.
    pub error_probability: Proportion,
    pub mean_error: f64,
    pub std_error: f64,
    /// Median of `|estimate - target|`.
    pub median_abs_error: f64,
    pub samples: u64,
    /// Not serialized, so reports stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrialReport {
    /// The scored estimate of each run.
    pub fn estimates(&self) -> Vec<f64> {
        self.trials
            .iter()
            .map(|t| if self.config.clamped { t.estimate_clamped } else { t.estimate_raw })
            .collect()
    }
}

/// Runs one fresh accelerated machine per seed, in parallel.
pub fn run_trials(cal: &Calibration, work: Workload<'_>, config: TrialConfig, seeds: &[u64]) -> Result<TrialReport> {
    work.check(cal)?;
    if seeds.is_empty() {
        return Err(domain("trials", 0.0, "need at least one trial"));
    }
    if !(config.eps >= 0.0) {
        return Err(domain("eps", config.eps, "eps must be nonnegative"));
    }
    let start = Instant::now();
    let tables = WindowTables::new(cal.m, cal.counter_cap());
    let trials = seeds
        .par_iter()
        .map(|&seed| {
            let mut src = RandomSource::new(seed);
            let report = match work {
                Workload::Entropy(d) => {
                    let mut machine = EntropyMachine::new(cal.clone())?;
                    machine.run_windows(d, config.increments, &tables, &mut src)?;
                    machine.report()
                }
                Workload::MutualInformation(j) => {
                    let mut machine = MiMachine::new(cal.clone())?;
                    machine.run_windows(j, config.increments, &tables, &mut src)?;
                    machine.report()
                }
            };
            Ok(Trial {
                seed,
                estimate_raw: report.estimate_raw,
                estimate_clamped: report.estimate_clamped,
                samples: report.samples,
                aborted_windows: report.aborted_windows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = TrialReport {
        config,
        truth: work.truth(),
        trials,
        errors: 0,
        error_probability: wilson(0, 1),
        mean_error: 0.0,
        std_error: 0.0,
        median_abs_error: 0.0,
        samples: 0,
        wall_clock_secs: 0.0,
    };
    let errors: Vec<f64> = report.estimates().iter().map(|e| e - config.target).collect();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    report.errors = abs.iter().filter(|&&e| e > config.eps).count() as u64;
    report.error_probability = wilson(report.errors, seeds.len() as u64);
    (report.mean_error, report.std_error) = mean_std(&errors);
    report.median_abs_error = median(&abs);
    report.samples = report.trials.iter().map(|t| t.samples).sum();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    /// `Pr(N < m)`.
    Lower,
    /// `Pr(N > m)`.
    Upper,
}

/// One row of the window-length tail experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub tail: Tail,
    /// `l` for the lower tail (`m = 2^l`), `alpha` for the upper
    /// (`m = alpha 4 2^(M-1)`).
    pub parameter: f64,
    pub m: f64,
    pub empirical: Proportion,
    pub bound: f64,
    /// Standard deviation of a frequency whose true value is `min(bound, 1)`.
    pub sigma: f64,
    /// `empirical <= bound + 3 sigma`.
    pub within: bool,
}

/// Lower-tail bound `e 2^(-(M - l - 1)^2 / 2)` on `Pr(N < 2^l)`.
pub fn lower_tail_bound(m: u32, l: u32) -> f64 {
    let gap = f64::from(m) - f64::from(l) - 1.0;
    std::f64::consts::E * (-gap * gap / 2.0).exp2()
}

/// Upper-tail bound `5 e^-alpha` on `Pr(N > alpha 4 2^(M-1))`.
pub fn upper_tail_bound(alpha: f64) -> f64 {
    5.0 * (-alpha).exp()
}

fn tail_row(tail: Tail, parameter: f64, m: f64, hits: u64, trials: u64, bound: f64) -> TailRow {
    let b = bound.min(1.0);
    let sigma = (b * (1.0 - b) / trials as f64).sqrt();
    let empirical = wilson(hits, trials);
    TailRow {
        tail,
        parameter,
        m,
        within: empirical.estimate <= bound + 3.0 * sigma,
        empirical,
        bound,
        sigma,
    }
}

/// Draws the window length `N` (clock run from 1 to `M`) `trials` times and
/// compares its tails with the analytic bounds. The clock's target scale
/// `n^c` is taken as `2^(M-1)`.
///
/// Lower-tail rows cover `l` in `M-6 ..= M-1` (clipped at 1); upper-tail
/// rows cover `alpha` in `1 ..= 4`.
pub fn tail_experiment(m: u32, trials: u64, src: &mut RandomSource) -> Result<Vec<TailRow>> {
    if !(2..=60).contains(&m) {
        return Err(domain("M", f64::from(m), "need 2 <= M <= 60"));
    }
    if trials == 0 {
        return Err(domain("trials", 0.0, "need at least one trial"));
    }
    let ells: Vec<u32> = (m.saturating_sub(6).max(1)..m).collect();
    let alphas = [1.0, 2.0, 3.0, 4.0];
    let scale = (f64::from(m) - 1.0).exp2();
    let family = src.fresh_seed();
    const CHUNK: u64 = 1 << 15;
    let counts = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut rng = RandomSource::split(family, chunk);
            let mut lower = vec![0u64; ells.len()];
            let mut upper = [0u64; 4];
            for _ in 0..CHUNK.min(trials - chunk * CHUNK) {
                let (tau1, rest) = clock_phases(m, &mut rng);
                let n = (tau1 + rest) as f64;
                for (c, &l) in lower.iter_mut().zip(&ells) {
                    *c += u64::from(n < f64::from(l).exp2());
                }
                for (c, &a) in upper.iter_mut().zip(&alphas) {
                    *c += u64::from(n > a * 4.0 * scale);
                }
            }
            (lower, upper)
        })
        .reduce(
            || (vec![0u64; ells.len()], [0u64; 4]),
            |mut x, y| {
                x.0.iter_mut().zip(&y.0).for_each(|(a, b)| *a += b);
                x.1.iter_mut().zip(&y.1).for_each(|(a, b)| *a += b);
                x
            },
        );
    let mut rows: Vec<TailRow> = ells
        .iter()
        .zip(&counts.0)
        .map(|(&l, &hits)| tail_row(Tail::Lower, f64::from(l), f64::from(l).exp2(), hits, trials, lower_tail_bound(m, l)))
        .collect();
    rows.extend(
        alphas
            .iter()
            .zip(&counts.1)
            .map(|(&a, &hits)| tail_row(Tail::Upper, a, a * 4.0 * scale, hits, trials, upper_tail_bound(a))),
    );
    Ok(rows)
}

/// Outcome of the uniformity tester on one input distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub eps: f64,
    /// Declare "uniform" when the clamped estimate exceeds `log2 n - eps`.
    pub threshold: f64,
    pub entropy: f64,
    pub tv_from_uniform: f64,
    /// `sqrt(eps ln 2)`: inputs farther than this from uniform have entropy
    /// below the threshold.
    pub separation: f64,
    pub accepted: u64,
    pub accept_rate: Proportion,
    pub estimates: Vec<f64>,
}

/// Runs the entropy estimator once per seed and thresholds each clamped
/// estimate at `log2 n - eps`.
pub fn uniformity_reduction(
    cal: &Calibration,
    dist: &DiscreteDistribution,
    eps: f64,
    increments: u64,
    seeds: &[u64],
) -> Result<UniformityReport> {
    if !(eps >= 0.0) {
        return Err(domain("eps", eps, "eps must be nonnegative"));
    }
    let log_n = (dist.n() as f64).log2();
    let config = TrialConfig {
        increments,
        eps,
        target: log_n,
        clamped: true,
    };
    let trials = run_trials(cal, Workload::Entropy(dist), config, seeds)?;
    let threshold = log_n - eps;
    let estimates = trials.estimates();
    let accepted = estimates.iter().filter(|&&h| h > threshold).count() as u64;
    Ok(UniformityReport {
        eps,
        threshold,
        entropy: dist.entropy(),
        tv_from_uniform: dist.tv_distance(&DiscreteDistribution::uniform(dist.n())?),
        separation: (eps * std::f64::consts::LN_2).sqrt(),
        accepted,
        accept_rate: wilson(accepted, seeds.len() as u64),
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::Variant;

    fn small() -> Calibration {
        Calibration::from_parts(Variant::Entropy, 8, 5, 40, 1.0).unwrap()
    }

    #[test]
    fn max_range_never_errs() {
        let cal = small();
        let d = DiscreteDistribution::uniform(8).unwrap();
        let config = TrialConfig {
            increments: 50,
            eps: 3.0,
            target: 3.0,
            clamped: true,
        };
        let r = run_trials(&cal, Workload::Entropy(&d), config, &trial_seeds(1, 6)).unwrap();
        assert_eq!(r.errors, 0);
        assert_eq!(r.error_probability.estimate, 0.0);
        assert_eq!(r.trials.len(), 6);
    }

    #[test]
    fn single_trial_and_mismatch() {
        let cal = small();
        let d = DiscreteDistribution::uniform(8).unwrap();
        let config = TrialConfig {
            increments: 10,
            eps: 0.1,
            target: 3.0,
            clamped: false,
        };
        let r = run_trials(&cal, Workload::Entropy(&d), config, &[9]).unwrap();
        assert_eq!(r.std_error, 0.0);
        assert!(r.error_probability.lower <= r.error_probability.estimate);
        assert!(run_trials(&cal, Workload::Entropy(&d), config, &[]).is_err());
        let j = JointDistribution::identity(&d).unwrap();
        assert!(run_trials(&cal, Workload::MutualInformation(&j), config, &[1]).is_err());
    }

    #[test]
    fn vacuous_lower_tail() {
        assert!(lower_tail_bound(16, 15) >= 1.0);
        assert!((lower_tail_bound(16, 10) - std::f64::consts::E * (-12.5f64).exp2()).abs() < 1e-15);
        assert!((upper_tail_bound(3.0) - 0.2489).abs() < 1e-4);
    }

    #[test]
    fn tail_rows_shape() {
        let rows = tail_experiment(8, 2000, &mut RandomSource::new(3)).unwrap();
        assert_eq!(rows.len(), 6 + 4);
        assert!(rows.iter().all(|r| r.within));
        // Pr(N < 2^(M-1)) can only grow with l.
        let lower: Vec<f64> = rows.iter().filter(|r| r.tail == Tail::Lower).map(|r| r.empirical.estimate).collect();
        assert!(lower.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn zero_eps_rejects_everything_inexact() {
        let cal = small();
        let d = DiscreteDistribution::two_level(8, 0.5, 0.9).unwrap();
        let r = uniformity_reduction(&cal, &d, 0.0, 20, &trial_seeds(4, 5)).unwrap();
        assert_eq!(r.threshold, 3.0);
        assert_eq!(r.accepted, 0);
    }
}
