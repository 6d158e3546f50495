//! Generalized factorial sequences and the normalization series
//! `N(λ) = Σ λ^k / x_k!` behind every nonlinear coherent state.
//!
//! All factorial-like quantities live in log space. Infinite sequences are
//! stored up to a finite `n_max` and flagged as truncated; their series are
//! accepted only when a geometric majorant bounds the discarded tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_pow, CompensatedSum};

/// Default basis cutoff for truncated infinite families.
pub const DEFAULT_NMAX: usize = 256;
/// Default relative tail tolerance for truncated series.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

const RADIUS_WINDOW: usize = 10;
const RADIUS_STABLE_TOL: f64 = 1e-6;
const RADIUS_GROWTH_THRESHOLD: f64 = 0.1;

/// Whether the stored terms are the whole sequence or a truncation of an
/// infinite one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    Finite,
    Truncated,
}

/// Closed-form families with known radius and moment measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    Explicit,
    /// `x_n = n`
    Poisson,
    /// `x_n = n / (N - n + 1)`, `n = 1..=N`
    Su2 { trials: usize },
    /// `x_n = n / (m + n + 1)`
    Su11 { successes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorialSequence {
    kind: SequenceKind,
    cutoff: Cutoff,
    values: Vec<f64>,
    log_factorials: Vec<f64>,
}

impl FactorialSequence {
    /// Builds a sequence from `x_1..x_n`. Every term must be positive.
    pub fn explicit(values: Vec<f64>, cutoff: Cutoff) -> Result<Self> {
        Self::build(SequenceKind::Explicit, cutoff, values)
    }

    pub fn poisson(n_max: usize) -> Self {
        let values = (1..=n_max).map(|n| n as f64).collect();
        Self::build(SequenceKind::Poisson, Cutoff::Truncated, values).expect("positive terms")
    }

    pub fn su2(trials: usize) -> Self {
        let values = (1..=trials)
            .map(|n| n as f64 / (trials - n + 1) as f64)
            .collect();
        Self::build(SequenceKind::Su2 { trials }, Cutoff::Finite, values).expect("positive terms")
    }

    pub fn su11(successes: usize, n_max: usize) -> Result<Self> {
        if successes == 0 {
            return Err(Error::OutOfRange("negative-binomial order m must be >= 1".into()));
        }
        let values = (1..=n_max)
            .map(|n| n as f64 / (successes + n + 1) as f64)
            .collect();
        Self::build(SequenceKind::Su11 { successes }, Cutoff::Truncated, values)
    }

    fn build(kind: SequenceKind, cutoff: Cutoff, values: Vec<f64>) -> Result<Self> {
        let mut log_factorials = Vec::with_capacity(values.len() + 1);
        log_factorials.push(0.0);
        let mut acc = CompensatedSum::new();
        for (i, &x) in values.iter().enumerate() {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::NonPositiveTerm { index: i + 1, value: x });
            }
            acc.add(x.ln());
            log_factorials.push(acc.value());
        }
        Ok(Self { kind, cutoff, values, log_factorials })
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    /// Largest stored index.
    pub fn n_max(&self) -> usize {
        self.values.len()
    }

    /// `x_n` for `n >= 1`; `x_0 = 0` by convention.
    pub fn term(&self, n: usize) -> Result<f64> {
        match n {
            0 => Ok(0.0),
            n if n <= self.n_max() => Ok(self.values[n - 1]),
            n => Err(Error::IndexOutOfRange { index: n, max: self.n_max() }),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_factorials(&self) -> &[f64] {
        &self.log_factorials
    }

    /// `log(x_1 x_2 ... x_n)`, zero for `n = 0`.
    pub fn generalized_log_factorial(&self, n: usize) -> Result<f64> {
        self.log_factorials
            .get(n)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: n, max: self.n_max() })
    }

    pub fn radius_of_convergence(&self) -> RadiusEstimate {
        match self.kind {
            SequenceKind::Poisson | SequenceKind::Su2 { .. } => RadiusEstimate::exact(Radius::Infinite),
            SequenceKind::Su11 { .. } => RadiusEstimate::exact(Radius::Finite(1.0)),
            SequenceKind::Explicit => match self.cutoff {
                Cutoff::Finite => RadiusEstimate::exact(Radius::Infinite),
                Cutoff::Truncated => estimate_radius(&self.values),
            },
        }
    }

    /// Checks `0 <= λ < L`.
    pub fn check_domain(&self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::OutOfDomain { value: lambda, reason: "lambda must be finite and >= 0".into() });
        }
        if let Radius::Finite(l) = self.radius_of_convergence().radius {
            if lambda >= l {
                return Err(Error::OutOfDomain {
                    value: lambda,
                    reason: format!("lambda must be below the radius of convergence {l}"),
                });
            }
        }
        Ok(())
    }

    /// Log-terms `k log λ - log x_k!` for `k = 0..=n`.
    pub fn ln_terms(&self, lambda: f64, n: usize) -> Vec<f64> {
        self.log_factorials[..=n]
            .iter()
            .enumerate()
            .map(|(k, lf)| ln_pow(lambda, k as f64) - lf)
            .collect()
    }

    /// `N(λ) = Σ_k λ^k / x_k!` with a certified tail.
    pub fn normalization(&self, lambda: f64, trunc: SeriesTruncation) -> Result<NormalizationValue> {
        self.check_domain(lambda)?;
        let n = trunc.n_max.min(self.n_max());
        let lt = self.ln_terms(lambda, n);
        let exact = self.cutoff == Cutoff::Finite && n == self.n_max();
        let (log_value, tail) = log_sum_exp_with_tail(&lt, |last| {
            if exact || lambda == 0.0 {
                return Some(0.0);
            }
            let ratio = lambda / self.values.get(n.wrapping_sub(1)).copied().unwrap_or(f64::INFINITY);
            (ratio < 1.0).then(|| last * ratio / (1.0 - ratio))
        });
        let value = log_value.exp();
        match tail {
            Some(t) if t <= trunc.tail_tol => Ok(NormalizationValue { value, log_value, terms_used: n + 1 }),
            Some(t) => Err(Error::TailNotConverged { terms: n + 1, tail: t, tol: trunc.tail_tol }),
            None => Err(Error::TailNotConverged { terms: n + 1, tail: f64::INFINITY, tol: trunc.tail_tol }),
        }
    }

    /// `P(n, λ) = λ^n / (x_n! N(λ))` for `n = 0..=n_used`.
    pub fn probabilities(&self, lambda: f64, trunc: SeriesTruncation) -> Result<Vec<f64>> {
        let norm = self.normalization(lambda, trunc)?;
        let lt = self.ln_terms(lambda, norm.terms_used - 1);
        Ok(lt.into_iter().map(|l| (l - norm.log_value).exp()).collect())
    }
}

/// `log Σ exp(l_k)` in compensated arithmetic, plus the tail bound relative
/// to the sum. `tail_of_last` maps the last term to a bound on everything
/// after it (both in a common scale), or `None` if the majorant diverges.
pub(crate) fn log_sum_exp_with_tail(log_terms: &[f64], tail_of_last: impl Fn(f64) -> Option<f64>) -> (f64, Option<f64>) {
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: CompensatedSum = log_terms.iter().map(|l| (l - max).exp()).collect();
    let sum = sum.value();
    let last = log_terms.last().map(|l| (l - max).exp()).unwrap_or(0.0);
    (max + sum.ln(), tail_of_last(last).map(|t| t / sum))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Finite(f64),
    Infinite,
}

impl Radius {
    pub fn as_f64(self) -> f64 {
        match self {
            Radius::Finite(l) => l,
            Radius::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusEstimate {
    pub radius: Radius,
    /// Set when the stored terms have not stabilized and the value is extrapolated.
    pub estimated: bool,
}

impl RadiusEstimate {
    fn exact(radius: Radius) -> Self {
        Self { radius, estimated: false }
    }
}

/// Ratio-test radius `L = limsup x_n` from the stored terms.
///
/// When the last ten terms agree to 1e-6 the limsup over that window is
/// returned. Otherwise a growth exponent `n Δx_n / x_n` above 0.1 is read as
/// divergence, and anything slower is extrapolated with a `L + c/n` model.
pub fn estimate_radius(values: &[f64]) -> RadiusEstimate {
    let Some(&last) = values.last() else {
        return RadiusEstimate::exact(Radius::Infinite);
    };
    let n = values.len();
    let window = &values[n.saturating_sub(RADIUS_WINDOW)..];
    let first = window[0];
    let sup = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if ((last - first) / last).abs() <= RADIUS_STABLE_TOL {
        return RadiusEstimate::exact(Radius::Finite(sup));
    }
    if n < 2 {
        return RadiusEstimate { radius: Radius::Finite(sup), estimated: true };
    }
    let growth = n as f64 * (last - values[n - 2]) / last;
    if growth > RADIUS_GROWTH_THRESHOLD {
        return RadiusEstimate { radius: Radius::Infinite, estimated: true };
    }
    let monotone = window.windows(2).all(|w| w[1] >= w[0]) || window.windows(2).all(|w| w[1] <= w[0]);
    let radius = if monotone && window.len() >= 2 {
        let n2 = n as f64;
        let n1 = (n - window.len() + 1) as f64;
        (n2 * last - n1 * first) / (n2 - n1)
    } else {
        sup
    };
    RadiusEstimate { radius: Radius::Finite(radius), estimated: true }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTruncation {
    pub n_max: usize,
    pub tail_tol: f64,
}

impl SeriesTruncation {
    pub fn new(n_max: usize, tail_tol: f64) -> Result<Self> {
        if !(tail_tol > 0.0) {
            return Err(Error::InvalidInput(format!("tail tolerance must be positive, got {tail_tol}")));
        }
        Ok(Self { n_max, tail_tol })
    }
}

impl Default for SeriesTruncation {
    fn default() -> Self {
        Self { n_max: usize::MAX, tail_tol: DEFAULT_TAIL_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationValue {
    pub value: f64,
    pub log_value: f64,
    pub terms_used: usize,
}

/// JSON form: `{"kind": "explicit", "values": [...]}` or
/// `{"kind": "builtin", "name": "poisson|su2|su11", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SequenceSpec {
    Explicit {
        values: Vec<f64>,
        #[serde(default)]
        truncated: bool,
    },
    Builtin {
        name: String,
        #[serde(default)]
        params: serde_json::Map<String, serde_json::Value>,
    },
}

impl SequenceSpec {
    pub fn build(&self, default_nmax: usize) -> Result<FactorialSequence> {
        match self {
            SequenceSpec::Explicit { values, truncated } => {
                let cutoff = if *truncated { Cutoff::Truncated } else { Cutoff::Finite };
                FactorialSequence::explicit(values.clone(), cutoff)
            }
            SequenceSpec::Builtin { name, params } => {
                let n_max = param_usize(params, &["n_max"])?.unwrap_or(default_nmax);
                match name.as_str() {
                    "poisson" => Ok(FactorialSequence::poisson(n_max)),
                    "su2" => {
                        let n = param_usize(params, &["N", "trials"])?
                            .ok_or_else(|| Error::InvalidInput("su2 sequence needs params.N".into()))?;
                        Ok(FactorialSequence::su2(n))
                    }
                    "su11" => {
                        let m = param_usize(params, &["m", "successes"])?
                            .ok_or_else(|| Error::InvalidInput("su11 sequence needs params.m".into()))?;
                        FactorialSequence::su11(m, n_max)
                    }
                    other => Err(Error::InvalidInput(format!("unknown builtin sequence '{other}'"))),
                }
            }
        }
    }
}

pub(crate) fn param_usize(params: &serde_json::Map<String, serde_json::Value>, keys: &[&str]) -> Result<Option<usize>> {
    for k in keys {
        if let Some(v) = params.get(*k) {
            return v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| Error::InvalidInput(format!("parameter '{k}' must be a non-negative integer")));
        }
    }
    Ok(None)
}
