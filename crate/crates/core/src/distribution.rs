//! Input distributions over `[n]` and `[n] x [m2]`, with exact entropy and
//! mutual information.
//!
//! Symbols are `0..n`. Sampling inverts a cumulative table by binary search.
//!
//! Textual specs (used by the CLI) name a family and its parameters; the
//! alphabet size is supplied separately:
//!
//! | spec | distribution |
//! |------|--------------|
//! | `uniform` | uniform over `[n]` |
//! | `point:I` | all mass on symbol `I` |
//! | `zipf:S` | `p(i)` proportional to `(i + 1)^-S` |
//! | `two-level:F:W` | a fraction `F` of the symbols share mass `W` evenly, the rest share `1 - W` |
//! | `dirichlet:SEED` | a draw from the flat Dirichlet |
//! | `pmf:P0,P1,...` | explicit probabilities |
//!
//! Joint specs: `independent` (uniform x uniform), `identity` (`X = Y`
//! uniform), `channel:E` (uniform `X`, `Y = X` with probability `1 - E`,
//! otherwise uniform over the other symbols) and `pmf:...` (row-major).

use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::rng::{BitSource, RandomSource};

/// Sum-to-one tolerance for explicit probability vectors.
const NORMALIZATION_TOL: f64 = 1e-9;

/// `-sum p log2 p` with `0 log 0 = 0`.
pub fn entropy_bits(pmf: &[f64]) -> f64 {
    pmf.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = pmf
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    // Pin the top so every uniform in (0, 1] finds a symbol.
    if let Some(last_positive) = pmf.iter().rposition(|&p| p > 0.0) {
        for v in &mut cdf[last_positive..] {
            *v = 1.0;
        }
    }
    cdf
}

fn validate_pmf(pmf: &[f64]) -> Result<Vec<f64>> {
    if pmf.is_empty() {
        return Err(domain("n", 0.0, "alphabet must be nonempty"));
    }
    if let Some(&bad) = pmf.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(domain("p", bad, "probabilities must be finite and nonnegative"));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(domain("sum(p)", total, "probabilities must sum to 1"));
    }
    Ok(pmf.iter().map(|p| p / total).collect())
}

/// Inverse-CDF lookup for a uniform in `(0, 1]`.
#[inline]
fn lookup(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c < u)
}

/// A distribution over `[n]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    pmf: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl DiscreteDistribution {
    /// From explicit probabilities summing to 1 within `1e-9`.
    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        let pmf = validate_pmf(&pmf)?;
        let cdf = cumulative(&pmf);
        Ok(Self { pmf, cdf })
    }

    pub fn uniform(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(domain("n", 0.0, "alphabet must be nonempty"));
        }
        Self::from_pmf(vec![1.0 / n as f64; n as usize])
    }

    pub fn point(n: u64, symbol: u64) -> Result<Self> {
        if symbol >= n {
            return Err(Error::SymbolOutOfRange {
                symbol: symbol as usize,
                alphabet: n as usize,
            });
        }
        let mut pmf = vec![0.0; n as usize];
        pmf[symbol as usize] = 1.0;
        Self::from_pmf(pmf)
    }

    pub fn zipf(n: u64, s: f64) -> Result<Self> {
        if n == 0 {
            return Err(domain("n", 0.0, "alphabet must be nonempty"));
        }
        if !(s >= 0.0) || !s.is_finite() {
            return Err(domain("s", s, "zipf exponent must be finite and nonnegative"));
        }
        let weights: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-s)).collect();
        let total: f64 = weights.iter().sum();
        Self::from_pmf(weights.iter().map(|w| w / total).collect())
    }

    /// The first `round(high_frac * n)` symbols share `mass` evenly, the rest
    /// share `1 - mass`.
    pub fn two_level(n: u64, high_frac: f64, mass: f64) -> Result<Self> {
        if !(high_frac > 0.0 && high_frac < 1.0) {
            return Err(domain("high_frac", high_frac, "fraction must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&mass) {
            return Err(domain("mass", mass, "mass must lie in [0, 1]"));
        }
        let high = (high_frac * n as f64).round() as u64;
        if high == 0 || high >= n {
            return Err(domain("high_frac", high_frac, "both levels need at least one symbol"));
        }
        let (hi, lo) = (mass / high as f64, (1.0 - mass) / (n - high) as f64);
        Self::from_pmf((0..n).map(|i| if i < high { hi } else { lo }).collect())
    }

    /// A draw from the flat Dirichlet over `[n]`, seeded.
    pub fn dirichlet_random(n: u64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(domain("n", 0.0, "alphabet must be nonempty"));
        }
        let mut src = RandomSource::new(seed);
        let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut src)).collect();
        let total: f64 = draws.iter().sum();
        Self::from_pmf(draws.iter().map(|d| d / total).collect())
    }

    /// Parses a spec (see the module docs) over an alphabet of size `n`.
    pub fn parse(spec: &str, n: u64) -> Result<Self> {
        let bad = |reason: &str| Error::Spec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let mut parts = spec.split(':');
        let family = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64> {
            args.get(i)
                .ok_or_else(|| bad("missing parameter"))?
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(&e.to_string()))
        };
        let int = |i: usize| -> Result<u64> {
            args.get(i)
                .ok_or_else(|| bad("missing parameter"))?
                .trim()
                .parse::<u64>()
                .map_err(|e| bad(&e.to_string()))
        };
        let arity = |k: usize| {
            if args.len() == k {
                Ok(())
            } else {
                Err(bad(&format!("expected {k} parameter(s)")))
            }
        };
        match family {
            "uniform" => arity(0).and_then(|_| Self::uniform(n)),
            "point" => arity(1).and_then(|_| Self::point(n, int(0)?)),
            "zipf" => arity(1).and_then(|_| Self::zipf(n, num(0)?)),
            "two-level" => arity(2).and_then(|_| Self::two_level(n, num(0)?, num(1)?)),
            "dirichlet" => arity(1).and_then(|_| Self::dirichlet_random(n, int(0)?)),
            "pmf" => {
                arity(1)?;
                let pmf = parse_list(args[0]).map_err(|e| bad(&e))?;
                if pmf.len() as u64 != n {
                    return Err(bad(&format!("{} probabilities for n = {n}", pmf.len())));
                }
                Self::from_pmf(pmf)
            }
            _ => Err(bad("unknown family")),
        }
    }

    pub fn n(&self) -> u64 {
        self.pmf.len() as u64
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    #[inline]
    pub fn prob(&self, x: usize) -> f64 {
        self.pmf[x]
    }

    #[inline]
    pub fn sample<R: BitSource + ?Sized>(&self, src: &mut R) -> usize {
        lookup(&self.cdf, src.uniform_open01())
    }

    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.pmf)
    }

    /// Total variation distance to another distribution on the same alphabet.
    pub fn tv_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.n(), other.n());
        0.5 * self
            .pmf
            .iter()
            .zip(&other.pmf)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

/// `H(p)` in bits.
pub fn entropy_exact(d: &DiscreteDistribution) -> f64 {
    d.entropy()
}

/// A distribution over `[n] x [m2]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDistribution {
    n: u64,
    m2: u64,
    /// Row-major: `pmf[x * m2 + y]`.
    pmf: Vec<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl JointDistribution {
    pub fn from_pmf(n: u64, m2: u64, pmf: Vec<f64>) -> Result<Self> {
        if n == 0 || m2 == 0 {
            return Err(domain("n", 0.0, "alphabets must be nonempty"));
        }
        if pmf.len() as u64 != n * m2 {
            return Err(domain("len", pmf.len() as f64, "joint pmf must have n * m2 entries"));
        }
        let pmf = validate_pmf(&pmf)?;
        let (nu, mu) = (n as usize, m2 as usize);
        let px = (0..nu).map(|x| pmf[x * mu..(x + 1) * mu].iter().sum()).collect();
        let py = (0..mu).map(|y| (0..nu).map(|x| pmf[x * mu + y]).sum()).collect();
        let cdf = cumulative(&pmf);
        Ok(Self {
            n,
            m2,
            pmf,
            px,
            py,
            cdf,
        })
    }

    /// Independent `X ~ px`, `Y ~ py`.
    pub fn product(px: &DiscreteDistribution, py: &DiscreteDistribution) -> Result<Self> {
        let pmf = px
            .pmf()
            .iter()
            .flat_map(|a| py.pmf().iter().map(move |b| a * b))
            .collect();
        Self::from_pmf(px.n(), py.n(), pmf)
    }

    /// `X ~ d` and `Y = X`.
    pub fn identity(d: &DiscreteDistribution) -> Result<Self> {
        let n = d.n() as usize;
        let mut pmf = vec![0.0; n * n];
        for x in 0..n {
            pmf[x * n + x] = d.prob(x);
        }
        Self::from_pmf(d.n(), d.n(), pmf)
    }

    /// Uniform `X`; `Y = X` with probability `1 - eps`, otherwise uniform over
    /// the remaining `n - 1` symbols.
    pub fn symmetric_channel(n: u64, eps: f64) -> Result<Self> {
        if n < 2 {
            return Err(domain("n", n as f64, "channel needs at least two symbols"));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(domain("eps", eps, "crossover must lie in [0, 1]"));
        }
        let nu = n as usize;
        let (stay, cross) = ((1.0 - eps) / n as f64, eps / (n as f64 * (n - 1) as f64));
        let pmf = (0..nu * nu)
            .map(|i| if i / nu == i % nu { stay } else { cross })
            .collect();
        Self::from_pmf(n, n, pmf)
    }

    /// Parses a joint spec (see the module docs).
    pub fn parse(spec: &str, n: u64, m2: u64) -> Result<Self> {
        let bad = |reason: &str| Error::Spec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let (family, arg) = match spec.split_once(':') {
            Some((f, a)) => (f, Some(a)),
            None => (spec, None),
        };
        let square = || {
            if n == m2 {
                Ok(())
            } else {
                Err(bad("needs n = m2"))
            }
        };
        match (family, arg) {
            ("independent", None) => {
                Self::product(&DiscreteDistribution::uniform(n)?, &DiscreteDistribution::uniform(m2)?)
            }
            ("identity", None) => {
                square()?;
                Self::identity(&DiscreteDistribution::uniform(n)?)
            }
            ("channel", Some(a)) => {
                square()?;
                let eps = a.trim().parse::<f64>().map_err(|e| bad(&e.to_string()))?;
                Self::symmetric_channel(n, eps)
            }
            ("pmf", Some(a)) => Self::from_pmf(n, m2, parse_list(a).map_err(|e| bad(&e))?),
            _ => Err(bad("unknown family or wrong parameter count")),
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m2(&self) -> u64 {
        self.m2
    }

    #[inline]
    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.pmf[x * self.m2 as usize + y]
    }

    pub fn marginal_x(&self) -> &[f64] {
        &self.px
    }

    pub fn marginal_y(&self) -> &[f64] {
        &self.py
    }

    #[inline]
    pub fn sample<R: BitSource + ?Sized>(&self, src: &mut R) -> (usize, usize) {
        let i = lookup(&self.cdf, src.uniform_open01());
        let m = self.m2 as usize;
        (i / m, i % m)
    }

    /// Probabilities that a fresh pair matches `(x, y)` in both coordinates,
    /// only in `x`, only in `y`, or in neither.
    pub fn match_probs(&self, x: usize, y: usize) -> [f64; 4] {
        let both = self.prob(x, y);
        let x_only = (self.px[x] - both).max(0.0);
        let y_only = (self.py[y] - both).max(0.0);
        let neither = (1.0 - both - x_only - y_only).max(0.0);
        [both, x_only, y_only, neither]
    }

    /// `I(X; Y) = H(X) + H(Y) - H(X, Y)` in bits.
    pub fn mutual_information(&self) -> f64 {
        (entropy_bits(&self.px) + entropy_bits(&self.py) - entropy_bits(&self.pmf)).max(0.0)
    }
}

/// `I(X; Y)` in bits.
pub fn mi_exact(j: &JointDistribution) -> f64 {
    j.mutual_information()
}
