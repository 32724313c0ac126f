use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use morris_entropy::bias::{coupling_time_sim, delta_mixing_bound, mixing_bounds, tv_profile};
use morris_entropy::bounds::bound_report;
use morris_entropy::calibration::{calibrate, Calibration, Variant};
use morris_entropy::distribution::{DiscreteDistribution, JointDistribution};
use morris_entropy::entropy_machine::{EntropyMachine, MachineReport};
use morris_entropy::harness::{oracle, run_trials, tail_experiment, trial_seeds, uniformity_reduction, TrialConfig, Workload};
use morris_entropy::mi_machine::MiMachine;
use morris_entropy::morris::{exact_law, uncapped_ceiling};
use morris_entropy::rng::RandomSource;
use morris_entropy::window::WindowTables;

mod output;

use output::{Format, Output, Row};

/// Finite-state estimation of entropy and mutual information with Morris
/// counters and a bias-estimation machine.
#[derive(Parser, Debug, Serialize)]
#[command(name = "morris-entropy", version)]
struct Cli {
    /// Seed for every random choice; identical flags and seed give identical output.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output format [default: csv for morris-law and bias-mix, json otherwise].
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads. Changes wall-clock time only, never results.
    #[arg(long, global = true)]
    #[serde(skip)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// The accuracy targets shared by the estimators.
#[derive(Args, Debug, Clone, Copy, Serialize)]
struct Accuracy {
    /// Alphabet size n.
    #[arg(long)]
    n: u64,
    /// Overhead exponent c > 1; a window holds about n^c samples.
    #[arg(long)]
    c: f64,
    /// Additive accuracy β (beta).
    #[arg(long)]
    beta: f64,
    /// Failure probability δ (delta).
    #[arg(long)]
    delta: f64,
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
#[group(required = true, multiple = false)]
struct Budget {
    /// Run until the bias machine has received k updates.
    #[arg(long)]
    increments: Option<u64>,
    /// Run until t input samples have been consumed.
    #[arg(long)]
    samples: Option<u64>,
}

const DIST_HELP: &str = "uniform | point:I | zipf:S | two-level:F:W | dirichlet:SEED | pmf:P1,P2,...";
const JOINT_HELP: &str = "independent | identity | channel:E | pmf:P11,P12,... (row-major, n x m2)";

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Derive B, M, μ, η, a and s_bias for the given targets.
    Calibrate {
        #[command(flatten)]
        #[serde(flatten)]
        acc: Accuracy,
        /// Calibrate the mutual-information estimator.
        #[arg(long, requires = "m2")]
        mi: bool,
        /// Second alphabet size m (with --mi).
        #[arg(long, requires = "mi")]
        m2: Option<u64>,
    },
    /// Run the entropy estimator; JSON lines {t, k, estimate_raw, estimate_clamped, state_index}.
    Estimate {
        #[arg(long, help = DIST_HELP)]
        dist: String,
        #[command(flatten)]
        #[serde(flatten)]
        acc: Accuracy,
        #[command(flatten)]
        #[serde(flatten)]
        budget: Budget,
        /// Feed samples one at a time instead of drawing whole windows.
        #[arg(long)]
        faithful: bool,
        /// Number of evenly spaced progress lines.
        #[arg(long, default_value_t = 100)]
        points: u64,
    },
    /// Run the mutual-information estimator; same output as `estimate`.
    EstimateMi {
        #[arg(long, help = JOINT_HELP)]
        joint: String,
        #[command(flatten)]
        #[serde(flatten)]
        acc: Accuracy,
        /// Second alphabet size m.
        #[arg(long)]
        m2: u64,
        #[command(flatten)]
        #[serde(flatten)]
        budget: Budget,
        #[arg(long)]
        faithful: bool,
        #[arg(long, default_value_t = 100)]
        points: u64,
    },
    /// Evaluate the state, bias and sample-complexity bounds.
    Bounds {
        /// Alphabet size n.
        #[arg(long)]
        n: u64,
        /// Second alphabet size m, for the mutual-information bounds.
        #[arg(long)]
        m2: Option<u64>,
        /// Overhead exponent c.
        #[arg(long)]
        c: Option<f64>,
        /// Additive accuracy β (beta).
        #[arg(long)]
        beta: Option<f64>,
        /// Failure probability δ (delta).
        #[arg(long)]
        delta: Option<f64>,
        /// Accuracy ε (eps) for the state lower bound.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Window-length tails against their analytic bounds.
    BenchTails {
        /// Clock cap M.
        #[arg(long, default_value_t = 16)]
        m: u32,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
    },
    /// Mixing of the bias machine over a grid of sizes.
    BenchMixing {
        /// Machine sizes S.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
        states: Vec<u64>,
        /// Input probabilities p.
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.7,1")]
        p: Vec<f64>,
        /// Coupling runs per cell.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
    },
    /// Repeated independent runs; error probability with a Wilson interval.
    Trials {
        #[arg(long, help = DIST_HELP, required_unless_present = "joint", conflicts_with = "joint")]
        dist: Option<String>,
        #[arg(long, help = JOINT_HELP, requires = "m2")]
        joint: Option<String>,
        /// Second alphabet size m (with --joint).
        #[arg(long)]
        m2: Option<u64>,
        #[command(flatten)]
        #[serde(flatten)]
        acc: Accuracy,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Updates per run [default: δ-mixing bound of the bias machine].
        #[arg(long)]
        increments: Option<u64>,
        /// A run errs when |estimate - target| > ε (eps) [default: β].
        #[arg(long)]
        eps: Option<f64>,
        /// Target the estimator's limit from a θ oracle instead of the true value.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 1_000_000)]
        oracle_windows: u64,
        /// Score raw estimates instead of clamped ones.
        #[arg(long)]
        raw: bool,
    },
    /// Uniformity tester: declare uniform when the estimate exceeds log2 n - ε.
    Uniformity {
        #[arg(long, help = DIST_HELP)]
        dist: String,
        #[command(flatten)]
        #[serde(flatten)]
        acc: Accuracy,
        /// Threshold gap ε (eps).
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Updates per run [default: δ-mixing bound of the bias machine].
        #[arg(long)]
        increments: Option<u64>,
    },
    /// Exact law of a Morris counter after m increments.
    MorrisLaw {
        /// Number of increments m.
        #[arg(long)]
        m: u64,
        /// Top (absorbing) state [default: ceil(log2 m) + 64].
        #[arg(long)]
        cap: Option<u32>,
    },
    /// Distance to stationarity of one bias machine, plus a coupling summary.
    BiasMix {
        /// Machine size S.
        #[arg(long)]
        states: u64,
        /// Input probability p.
        #[arg(long)]
        p: f64,
        /// Coupling runs.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Last step of the profile [default: ceil(4 S log2 S)].
        #[arg(long)]
        t_max: Option<u64>,
    },
}

#[derive(Debug)]
enum CliError {
    Lib(morris_entropy::Error),
    Output(String),
}

impl From<morris_entropy::Error> for CliError {
    fn from(e: morris_entropy::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl CliError {
    fn to_json(&self) -> Value {
        use morris_entropy::Error as E;
        let (kind, message) = match self {
            CliError::Output(m) => ("output", m.clone()),
            CliError::Lib(e) => {
                let kind = match e {
                    E::Domain { .. } => "domain",
                    E::Saturated { .. } => "saturated",
                    E::SymbolOutOfRange { .. } => "symbol-out-of-range",
                    E::VariantMismatch { .. } => "variant-mismatch",
                    E::Intractable { .. } => "intractable",
                    E::Spec { .. } => "spec",
                };
                (kind, e.to_string())
            }
        };
        json!({ "error": { "kind": kind, "message": message } })
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

/// Composite state indices can exceed `u64`; those are written as strings.
fn index_value(i: u128) -> Value {
    u64::try_from(i).map_or_else(|_| Value::String(i.to_string()), Value::from)
}

/// Stream derived from the run seed; each purpose gets its own.
fn stream(seed: u64, purpose: u64) -> RandomSource {
    RandomSource::split(seed, purpose)
}

const CALIBRATION: u64 = 0;
const RUN: u64 = 1;
const ORACLE: u64 = 2;
const TRIALS: u64 = 3;

fn calibrated(acc: Accuracy, variant: Variant, seed: u64) -> CliResult<Calibration> {
    Ok(calibrate(acc.n, acc.c, acc.beta, acc.delta, variant, &mut stream(seed, CALIBRATION))?)
}

enum Runner {
    Entropy(EntropyMachine, DiscreteDistribution),
    Mi(MiMachine, JointDistribution),
}

impl Runner {
    fn feed_one(&mut self, src: &mut RandomSource) -> CliResult {
        match self {
            Runner::Entropy(m, d) => m.feed(d.sample(src), src).map(drop)?,
            Runner::Mi(m, j) => m.feed(j.sample(src), src).map(drop)?,
        }
        Ok(())
    }

    fn windows(&mut self, k: u64, tables: &WindowTables, src: &mut RandomSource) -> CliResult {
        match self {
            Runner::Entropy(m, d) => m.run_windows(d, k, tables, src)?,
            Runner::Mi(m, j) => m.run_windows(j, k, tables, src)?,
        }
        Ok(())
    }

    fn report(&self) -> MachineReport {
        match self {
            Runner::Entropy(m, _) => m.report(),
            Runner::Mi(m, _) => m.report(),
        }
    }

    fn index(&self) -> u128 {
        match self {
            Runner::Entropy(m, _) => m.state_index(),
            Runner::Mi(m, _) => m.state_index(),
        }
    }

    fn row(&self) -> Row {
        let r = self.report();
        vec![
            ("t", r.samples.into()),
            ("k", r.increments.into()),
            ("estimate_raw", r.estimate_raw.into()),
            ("estimate_clamped", r.estimate_clamped.into()),
            ("state_index", index_value(self.index())),
        ]
    }
}

/// Runs to the budget, writing a progress row at `points` evenly spaced
/// checkpoints.
fn drive(
    mut runner: Runner,
    cal: &Calibration,
    budget: Budget,
    faithful: bool,
    points: u64,
    seed: u64,
    out: &mut Output,
) -> CliResult {
    let (total, by_samples) = match (budget.increments, budget.samples) {
        (Some(k), _) => (k, false),
        (None, Some(t)) => (t, true),
        (None, None) => unreachable!("clap requires one budget"),
    };
    let progress = |r: &Runner| {
        let rep = r.report();
        if by_samples {
            rep.samples
        } else {
            rep.increments
        }
    };
    let points = points.clamp(1, total.max(1));
    let checkpoint = |i: u64| (u128::from(total) * u128::from(i) / u128::from(points)) as u64;
    let tables = WindowTables::new(cal.m, cal.counter_cap());
    let mut src = stream(seed, RUN);
    if total == 0 {
        return Ok(out.row(runner.row())?);
    }
    let mut i = 1;
    while progress(&runner) < total {
        if faithful {
            runner.feed_one(&mut src)?;
        } else if by_samples {
            runner.windows(1, &tables, &mut src)?;
        } else {
            runner.windows(checkpoint(i) - progress(&runner), &tables, &mut src)?;
        }
        let now = progress(&runner);
        if now >= checkpoint(i) {
            out.row(runner.row())?;
            while i <= points && checkpoint(i) <= now {
                i += 1;
            }
        }
    }
    Ok(())
}

const ESTIMATE_COLUMNS: [&str; 5] = ["t", "k", "estimate_raw", "estimate_clamped", "state_index"];

fn run(cli: &Cli, out: &mut Output) -> CliResult {
    let args = to_value(cli);
    let seed = cli.seed;
    let config = |extra: Option<(&str, Value)>| {
        let mut c = json!({ "args": args.clone() });
        if let Some((k, v)) = extra {
            c[k] = v;
        }
        c
    };
    match &cli.command {
        Command::Calibrate { acc, mi, m2 } => {
            let variant = match (mi, m2) {
                (true, Some(m2)) => Variant::MutualInformation { m2: *m2 },
                _ => Variant::Entropy,
            };
            let cal = calibrated(*acc, variant, seed)?;
            out.document(&config(None), &to_value(&cal))?;
        }
        Command::Estimate {
            dist,
            acc,
            budget,
            faithful,
            points,
        } => {
            let d = DiscreteDistribution::parse(dist, acc.n)?;
            let cal = calibrated(*acc, Variant::Entropy, seed)?;
            out.start_table(&config(Some(("calibration", to_value(&cal)))), &ESTIMATE_COLUMNS)?;
            let runner = Runner::Entropy(EntropyMachine::new(cal.clone())?, d);
            drive(runner, &cal, *budget, *faithful, *points, seed, out)?;
        }
        Command::EstimateMi {
            joint,
            acc,
            m2,
            budget,
            faithful,
            points,
        } => {
            let j = JointDistribution::parse(joint, acc.n, *m2)?;
            let cal = calibrated(*acc, Variant::MutualInformation { m2: *m2 }, seed)?;
            out.start_table(&config(Some(("calibration", to_value(&cal)))), &ESTIMATE_COLUMNS)?;
            let runner = Runner::Mi(MiMachine::new(cal.clone())?, j);
            drive(runner, &cal, *budget, *faithful, *points, seed, out)?;
        }
        Command::Bounds {
            n,
            m2,
            c,
            beta,
            delta,
            eps,
        } => {
            let report = bound_report(*n, *m2, *c, *beta, *delta, *eps)?;
            out.document(&config(None), &to_value(&report))?;
        }
        Command::BenchTails { m, trials } => {
            let rows = tail_experiment(*m, *trials, &mut stream(seed, RUN))?;
            let columns = ["tail", "parameter", "m", "empirical", "ci_lower", "ci_upper", "bound", "sigma", "within"];
            out.start_table(&config(None), &columns)?;
            for r in rows {
                out.row(vec![
                    ("tail", to_value(&r.tail)),
                    ("parameter", r.parameter.into()),
                    ("m", r.m.into()),
                    ("empirical", r.empirical.estimate.into()),
                    ("ci_lower", r.empirical.lower.into()),
                    ("ci_upper", r.empirical.upper.into()),
                    ("bound", r.bound.into()),
                    ("sigma", r.sigma.into()),
                    ("within", r.within.into()),
                ])?;
            }
        }
        Command::BenchMixing { states, p, trials } => {
            let columns = [
                "states",
                "p",
                "t_bound",
                "tv_at_bound",
                "mixing_lower",
                "coupling_mean",
                "coupling_std",
                "coupon_collector",
            ];
            out.start_table(&config(None), &columns)?;
            let mut src = stream(seed, RUN);
            for &s in states {
                let (lower, upper) = mixing_bounds(s)?;
                let t = upper.ceil() as u64;
                let coupon = (s - 1) as f64 * (1..s).map(|i| 1.0 / i as f64).sum::<f64>();
                for &prob in p {
                    let tv = *tv_profile(s, prob, t)?.last().expect("profile has t + 1 entries");
                    let sim = coupling_time_sim(s, prob, *trials, &mut src)?;
                    out.row(vec![
                        ("states", s.into()),
                        ("p", prob.into()),
                        ("t_bound", t.into()),
                        ("tv_at_bound", tv.into()),
                        ("mixing_lower", lower.into()),
                        ("coupling_mean", sim.mean.into()),
                        ("coupling_std", sim.std_dev.into()),
                        ("coupon_collector", coupon.into()),
                    ])?;
                }
            }
        }
        Command::Trials {
            dist,
            joint,
            m2,
            acc,
            trials,
            increments,
            eps,
            oracle: use_oracle,
            oracle_windows,
            raw,
        } => {
            let (d, j);
            let (work, variant) = match (dist, joint, m2) {
                (Some(spec), _, _) => {
                    d = DiscreteDistribution::parse(spec, acc.n)?;
                    (Workload::Entropy(&d), Variant::Entropy)
                }
                (None, Some(spec), Some(m2)) => {
                    j = JointDistribution::parse(spec, acc.n, *m2)?;
                    (Workload::MutualInformation(&j), Variant::MutualInformation { m2: *m2 })
                }
                _ => unreachable!("clap requires --dist or --joint with --m2"),
            };
            let cal = calibrated(*acc, variant, seed)?;
            let k = match increments {
                Some(k) => *k,
                None => delta_mixing_bound(cal.s_bias, acc.delta)?,
            };
            let theta = if *use_oracle {
                Some(oracle(&cal, work, *oracle_windows, &mut stream(seed, ORACLE))?)
            } else {
                None
            };
            let target = theta.map_or(work.truth(), |o| o.target(&cal));
            let trial_config = TrialConfig {
                increments: k,
                eps: eps.unwrap_or(acc.beta),
                target,
                clamped: !raw,
            };
            let seeds = trial_seeds(stream(seed, TRIALS).fresh_seed(), *trials);
            let report = run_trials(&cal, work, trial_config, &seeds)?;
            eprintln!("trials finished in {:.1}s", report.wall_clock_secs);
            out.document(
                &config(Some(("calibration", to_value(&cal)))),
                &json!({ "oracle": theta, "report": report }),
            )?;
        }
        Command::Uniformity {
            dist,
            acc,
            eps,
            trials,
            increments,
        } => {
            let d = DiscreteDistribution::parse(dist, acc.n)?;
            let cal = calibrated(*acc, Variant::Entropy, seed)?;
            let k = match increments {
                Some(k) => *k,
                None => delta_mixing_bound(cal.s_bias, acc.delta)?,
            };
            let seeds = trial_seeds(stream(seed, TRIALS).fresh_seed(), *trials);
            let report = uniformity_reduction(&cal, &d, *eps, k, &seeds)?;
            out.document(
                &config(Some(("calibration", to_value(&cal)))),
                &json!({ "increments": k, "report": report }),
            )?;
        }
        Command::MorrisLaw { m, cap } => {
            let law = exact_law(*m, cap.unwrap_or_else(|| uncapped_ceiling(*m)))?;
            out.start_table(&config(None), &["state", "probability"])?;
            for s in 1..=law.s_max() {
                out.row(vec![("state", s.into()), ("probability", law.prob(s).into())])?;
            }
            out.summary("mean", &law.mean().into())?;
        }
        Command::BiasMix { states, p, trials, t_max } => {
            let t_max = match t_max {
                Some(t) => *t,
                None => mixing_bounds(*states)?.1.ceil() as u64,
            };
            let profile = tv_profile(*states, *p, t_max)?;
            let sim = coupling_time_sim(*states, *p, *trials, &mut stream(seed, RUN))?;
            out.start_table(&config(None), &["t", "tv"])?;
            for (t, tv) in profile.iter().enumerate() {
                out.row(vec![("t", (t as u64).into()), ("tv", (*tv).into())])?;
            }
            out.summary("coupling", &to_value(&sim))?;
        }
    }
    Ok(out.finish()?)
}

fn default_format(command: &Command) -> Format {
    match command {
        Command::MorrisLaw { .. } | Command::BiasMix { .. } => Format::Csv,
        _ => Format::Json,
    }
}

fn main() -> ExitCode {
    let mut cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = json!({ "error": { "kind": "usage", "message": e.render().to_string().trim_end() } });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    cli.format.get_or_insert(default_format(&cli.command));
    if let Some(t) = cli.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let sink: Box<dyn Write> = match &cli.output {
        Some(path) => match File::create(path) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => {
                let err = CliError::Output(format!("cannot write {}: {e}", path.display()));
                eprintln!("{}", err.to_json());
                return ExitCode::FAILURE;
            }
        },
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut out = Output::new(sink, cli.format.expect("resolved above"));
    match run(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
