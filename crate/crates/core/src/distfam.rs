//! Discrete families `P(n, λ)`, their continuous duals `Ψ_n(λ)`, prior
//! measures, and the two duality conditions (`c_n` and `Σ P/c_n`).
//!
//! The negative binomial family ships only the Lebesgue prior `dκ = dλ` on
//! `[0, 1]`. Other priors derived for it elsewhere in the literature differ;
//! no attempt is made to reconcile them.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::roi::quadrature::{gauss_laguerre, gauss_legendre, integrate_adaptive, Interval};
use crate::roi::RadialMeasure;
use crate::seqcore::{param_usize, FactorialSequence, SequenceKind, SequenceSpec, SeriesTruncation, DEFAULT_TAIL_TOL};
use crate::special::{ln_binomial, ln_factorial, ln_gamma, ln_pow, CompensatedSum};

/// Relative target handed to the adaptive integrator for `c_n` and posterior
/// evidence. The Kronrod error estimate is pessimistic, so realized accuracy
/// is well inside the 1e-9 contract.
pub const CN_REL_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// closed-form densities

pub fn pmf_poisson(n: usize, lambda: f64) -> Result<f64> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::NegativeParameter(lambda));
    }
    Ok((ln_pow(lambda, n as f64) - lambda - ln_factorial(n as u64)).exp())
}

pub fn pmf_binomial(n: usize, trials: usize, p: f64) -> Result<f64> {
    if n > trials {
        return Err(Error::OutOfRange(format!("n = {n} exceeds N = {trials}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("p = {p} not in [0, 1]")));
    }
    let l = ln_binomial(trials as u64, n as u64) + ln_pow(p, n as f64) + ln_pow(1.0 - p, (trials - n) as f64);
    Ok(l.exp())
}

/// `λ = p / (1 - p)`.
pub fn reparam_binomial_lambda(p: f64) -> Result<f64> {
    if p == 1.0 {
        return Err(Error::Singular(p));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("p = {p} not in [0, 1)")));
    }
    Ok(p / (1.0 - p))
}

/// `p = λ / (1 + λ)`.
pub fn reparam_binomial_p(lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::NegativeParameter(lambda));
    }
    if lambda.is_infinite() {
        return Ok(1.0);
    }
    Ok(lambda / (1.0 + lambda))
}

pub fn pmf_negbinomial(m: usize, n: usize, lambda: f64) -> Result<f64> {
    if m < 1 {
        return Err(Error::OutOfRange(format!("m = {m} must be at least 1")));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::OutOfRange(format!("lambda = {lambda} not in (0, 1)")));
    }
    Ok(ln_negbinomial(m, n, lambda).exp())
}

fn ln_negbinomial(m: usize, n: usize, lambda: f64) -> f64 {
    let (mf, nf) = (m as f64, n as f64);
    ln_gamma(mf + nf) - ln_factorial(n as u64) - ln_gamma(mf) + ln_pow(lambda, mf) + ln_pow(1.0 - lambda, nf)
}

/// Gamma density `λ^{n-1} e^{-λ} / Γ(n)`.
pub fn pdf_gamma(n: usize, lambda: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::OutOfRange(format!("gamma shape n = {n} must be at least 1")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::OutOfRange(format!("lambda = {lambda} must be >= 0")));
    }
    Ok((ln_pow(lambda, (n - 1) as f64) - lambda - ln_factorial((n - 1) as u64)).exp())
}

/// Beta density `λ^{m-1}(1-λ)^{n-1} / B(m, n)`.
pub fn pdf_beta(lambda: f64, m: usize, n: usize) -> Result<f64> {
    if m < 1 || n < 1 {
        return Err(Error::OutOfRange(format!("beta shapes ({m}, {n}) must be at least 1")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::OutOfRange(format!("lambda = {lambda} not in [0, 1]")));
    }
    Ok(ln_beta_pdf(lambda, m as f64, n as f64).exp())
}

fn ln_beta_pdf(lambda: f64, a: f64, b: f64) -> f64 {
    ln_pow(lambda, a - 1.0) + ln_pow(1.0 - lambda, b - 1.0) - crate::special::ln_beta(a, b)
}

/// Beta density of the first kind, `(N+1)!/((N-n)! n!) λ^n / (1+λ)^{N+2}`.
pub fn pdf_beta_first_kind(lambda: f64, n: usize, trials: usize) -> Result<f64> {
    if n > trials {
        return Err(Error::OutOfRange(format!("n = {n} exceeds N = {trials}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::OutOfRange(format!("lambda = {lambda} must be >= 0")));
    }
    Ok(ln_beta_first_kind(lambda, n, trials).exp())
}

fn ln_beta_first_kind(lambda: f64, n: usize, trials: usize) -> f64 {
    let c = ln_factorial(trials as u64 + 1) - ln_factorial((trials - n) as u64) - ln_factorial(n as u64);
    if lambda.is_infinite() {
        return f64::NEG_INFINITY;
    }
    c + ln_pow(lambda, n as f64) - (trials as f64 + 2.0) * lambda.ln_1p()
}

// ---------------------------------------------------------------------------
// discrete families

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    Poisson,
    /// Binomial in the odds `λ = p/q`: `C(N,n) λ^n / (1+λ)^N`.
    BinomialLambda { trials: usize },
    /// Binomial in the success probability `p`.
    BinomialP { trials: usize },
    /// `Γ(m+n)/(n! Γ(m)) λ^m (1-λ)^n` on `[0, 1]`.
    NegativeBinomial { successes: usize },
    /// `λ^n / (x_n! N(λ))`.
    Nonlinear(FactorialSequence),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFamily {
    kind: FamilyKind,
    n_max: usize,
}

impl DiscreteFamily {
    pub fn poisson(n_max: usize) -> Self {
        Self { kind: FamilyKind::Poisson, n_max }
    }

    pub fn binomial_lambda(trials: usize) -> Self {
        Self { kind: FamilyKind::BinomialLambda { trials }, n_max: trials }
    }

    pub fn binomial_p(trials: usize) -> Self {
        Self { kind: FamilyKind::BinomialP { trials }, n_max: trials }
    }

    pub fn negative_binomial(successes: usize, n_max: usize) -> Result<Self> {
        if successes < 1 {
            return Err(Error::OutOfRange(format!("m = {successes} must be at least 1")));
        }
        Ok(Self { kind: FamilyKind::NegativeBinomial { successes }, n_max })
    }

    /// Family `P(n, λ) = λ^n / (x_n! N(λ))` on `[0, L)`.
    pub fn from_nonlinear(seq: FactorialSequence) -> Self {
        let n_max = seq.n_max();
        Self { kind: FamilyKind::Nonlinear(seq), n_max }
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    /// Last index of the (possibly truncated) range `0..=n_max`.
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn is_finite(&self) -> bool {
        match &self.kind {
            FamilyKind::BinomialLambda { .. } | FamilyKind::BinomialP { .. } => true,
            FamilyKind::Nonlinear(s) => s.cutoff() == crate::seqcore::Cutoff::Finite,
            _ => false,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            FamilyKind::Poisson => "poisson".into(),
            FamilyKind::BinomialLambda { trials } => format!("binomial(N={trials}, lambda)"),
            FamilyKind::BinomialP { trials } => format!("binomial(N={trials}, p)"),
            FamilyKind::NegativeBinomial { successes } => format!("negbinomial(m={successes})"),
            FamilyKind::Nonlinear(s) => match s.kind() {
                SequenceKind::Poisson => "nonlinear(poisson)".into(),
                SequenceKind::Su2 { trials } => format!("nonlinear(su2, N={trials})"),
                SequenceKind::Su11 { successes } => format!("nonlinear(su11, m={successes})"),
                SequenceKind::Explicit => format!("nonlinear(explicit, {} terms)", s.n_max()),
            },
        }
    }

    /// Parameter interval `[a, b]`; for sequence families `b` is the radius of
    /// convergence (excluded).
    pub fn param_interval(&self) -> Interval {
        match &self.kind {
            FamilyKind::Poisson | FamilyKind::BinomialLambda { .. } => Interval::half_line(),
            FamilyKind::BinomialP { .. } | FamilyKind::NegativeBinomial { .. } => Interval::unit(),
            FamilyKind::Nonlinear(s) => Interval { lo: 0.0, hi: s.radius_of_convergence().radius.as_f64() },
        }
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        let iv = self.param_interval();
        let open_top = matches!(self.kind, FamilyKind::Nonlinear(_)) && iv.is_bounded();
        if lambda.is_nan() || lambda < iv.lo || lambda > iv.hi || (open_top && lambda >= iv.hi) || lambda.is_infinite() {
            if lambda < 0.0 {
                return Err(Error::NegativeParameter(lambda));
            }
            return Err(Error::OutOfDomain {
                value: lambda,
                reason: format!("{} is defined on [{}, {}]", self.name(), iv.lo, iv.hi),
            });
        }
        Ok(())
    }

    fn check_index(&self, n: usize) -> Result<()> {
        let limited = match &self.kind {
            FamilyKind::Nonlinear(_) => true,
            _ => self.is_finite(),
        };
        if limited && n > self.n_max {
            return Err(Error::IndexOutOfRange { index: n, max: self.n_max });
        }
        Ok(())
    }

    /// `ln P(n, λ)`; `-∞` where the mass vanishes.
    pub fn ln_pmf(&self, n: usize, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        self.check_index(n)?;
        let nf = n as f64;
        Ok(match &self.kind {
            FamilyKind::Poisson => ln_pow(lambda, nf) - lambda - ln_factorial(n as u64),
            FamilyKind::BinomialLambda { trials } => {
                ln_binomial(*trials as u64, n as u64) + ln_pow(lambda, nf) - *trials as f64 * lambda.ln_1p()
            }
            FamilyKind::BinomialP { trials } => {
                ln_binomial(*trials as u64, n as u64) + ln_pow(lambda, nf) + ln_pow(1.0 - lambda, (trials - n) as f64)
            }
            FamilyKind::NegativeBinomial { successes } => ln_negbinomial(*successes, n, lambda),
            FamilyKind::Nonlinear(s) => {
                ln_pow(lambda, nf) - s.generalized_log_factorial(n)? - ln_sequence_normalizer(s, lambda)?
            }
        })
    }

    pub fn pmf(&self, n: usize, lambda: f64) -> Result<f64> {
        self.ln_pmf(n, lambda).map(f64::exp)
    }

    /// `P(n, λ)` for `n = 0..=n_max`.
    pub fn pmf_vector(&self, lambda: f64) -> Result<Vec<f64>> {
        (0..=self.n_max).map(|n| self.pmf(n, lambda)).collect()
    }

    /// Sequence whose nonlinear coherent states carry this family.
    pub fn sequence(&self) -> Result<FactorialSequence> {
        Ok(match &self.kind {
            FamilyKind::Poisson => FactorialSequence::poisson(self.n_max),
            FamilyKind::BinomialLambda { trials } | FamilyKind::BinomialP { trials } => FactorialSequence::su2(*trials),
            FamilyKind::NegativeBinomial { successes } => FactorialSequence::su11(*successes, self.n_max)?,
            FamilyKind::Nonlinear(s) => s.clone(),
        })
    }

    /// The sequence variable: `λ` itself, the odds `p/(1-p)` for the
    /// p-binomial, and `1 - λ` for the negative binomial.
    pub fn nonlinear_variable(&self, lambda: f64) -> f64 {
        match &self.kind {
            FamilyKind::BinomialP { .. } => lambda / (1.0 - lambda),
            FamilyKind::NegativeBinomial { .. } => 1.0 - lambda,
            _ => lambda,
        }
    }

    /// The prior the built-in duality uses.
    pub fn canonical_prior(&self) -> Result<PriorMeasure> {
        Ok(match &self.kind {
            FamilyKind::Poisson => PriorMeasure::uniform(Interval::half_line()),
            FamilyKind::BinomialLambda { trials } => PriorMeasure::binomial_lambda(*trials),
            FamilyKind::BinomialP { .. } | FamilyKind::NegativeBinomial { .. } => PriorMeasure::uniform(Interval::unit()),
            FamilyKind::Nonlinear(s) => match s.kind() {
                SequenceKind::Poisson => PriorMeasure::uniform(Interval::half_line()),
                SequenceKind::Su2 { trials } => PriorMeasure::binomial_lambda(trials),
                SequenceKind::Su11 { successes } => PriorMeasure::su11(successes),
                SequenceKind::Explicit => {
                    return Err(Error::InvalidInput(
                        "explicit sequences have no canonical prior; supply one".into(),
                    ))
                }
            },
        })
    }
}

/// `ln N(λ)` for a sequence, closed form for the built-ins.
pub(crate) fn ln_sequence_normalizer(seq: &FactorialSequence, lambda: f64) -> Result<f64> {
    Ok(match seq.kind() {
        SequenceKind::Poisson => lambda,
        SequenceKind::Su2 { trials } => trials as f64 * lambda.ln_1p(),
        SequenceKind::Su11 { successes } => -(successes as f64 + 2.0) * (-lambda).ln_1p(),
        SequenceKind::Explicit => seq.normalization(lambda, SeriesTruncation::default())?.log_value,
    })
}

// ---------------------------------------------------------------------------
// priors

#[derive(Clone)]
pub enum PriorDensity {
    Constant(f64),
    /// `(N+1)/(1+λ)^2`
    BinomialLambda { trials: usize },
    /// `(m+1)/(1-λ)^2` on `[0, 1)`
    Su11 { successes: usize },
    /// Piecewise-linear through `(x_i, y_i)`, zero outside.
    Table { x: Vec<f64>, y: Vec<f64> },
    Expr { source: String, expr: meval::Expr },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for PriorDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorDensity::Constant(c) => write!(f, "Constant({c})"),
            PriorDensity::BinomialLambda { trials } => write!(f, "BinomialLambda({trials})"),
            PriorDensity::Su11 { successes } => write!(f, "Su11({successes})"),
            PriorDensity::Table { x, .. } => write!(f, "Table({} points)", x.len()),
            PriorDensity::Expr { source, .. } => write!(f, "Expr({source:?})"),
            PriorDensity::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Density of `dκ` with respect to Lebesgue measure, plus its support.
#[derive(Debug, Clone)]
pub struct PriorMeasure {
    density: PriorDensity,
    support: Interval,
    name: String,
}

impl PriorMeasure {
    /// `dκ = dλ` on `support`.
    pub fn uniform(support: Interval) -> Self {
        Self { density: PriorDensity::Constant(1.0), support, name: "uniform".into() }
    }

    pub fn binomial_lambda(trials: usize) -> Self {
        Self {
            density: PriorDensity::BinomialLambda { trials },
            support: Interval::half_line(),
            name: format!("(N+1)/(1+lambda)^2, N={trials}"),
        }
    }

    pub fn su11(successes: usize) -> Self {
        Self {
            density: PriorDensity::Su11 { successes },
            support: Interval::unit(),
            name: format!("(m+1)/(1-lambda)^2, m={successes}"),
        }
    }

    pub fn table(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { left: x.len(), right: y.len() });
        }
        if x.len() < 2 {
            return Err(Error::InvalidInput("a prior table needs at least two points".into()));
        }
        if x.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("prior table abscissae must be strictly increasing".into()));
        }
        if y.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("prior table densities must be finite and >= 0".into()));
        }
        let support = Interval::new(x[0], x[x.len() - 1])?;
        Ok(Self { density: PriorDensity::Table { x, y }, support, name: "table".into() })
    }

    /// Density given as an expression in `lambda`.
    pub fn expr(source: &str, support: Interval) -> Result<Self> {
        let expr = meval::Expr::from_str(source)
            .map_err(|e| Error::InvalidInput(format!("cannot parse prior density '{source}': {e}")))?;
        let prior = Self {
            density: PriorDensity::Expr { source: source.to_string(), expr },
            support,
            name: format!("density-expr: {source}"),
        };
        // reject unknown variables early
        let probe = if support.is_bounded() { 0.5 * (support.lo + support.hi) } else { support.lo + 1.0 };
        let mut ctx = meval::Context::new();
        ctx.var("lambda", probe);
        if let PriorDensity::Expr { expr, .. } = &prior.density {
            expr.eval_with_context(ctx)
                .map_err(|e| Error::InvalidInput(format!("cannot evaluate prior density '{source}': {e}")))?;
        }
        Ok(prior)
    }

    pub fn custom(name: &str, support: Interval, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { density: PriorDensity::Custom(Arc::new(f)), support, name: name.to_string() }
    }

    /// Generic prior `Π(λ) = 2π N(λ) dρ̄/dλ` of a sequence family whose
    /// moment measure is `radial`.
    pub fn from_radial(seq: &FactorialSequence, radial: &RadialMeasure) -> Self {
        let seq = seq.clone();
        let radial = radial.clone();
        let support = radial.support();
        let name = format!("2 pi N(lambda) rho'({})", radial.name());
        Self::custom(&name, support, move |l| match ln_sequence_normalizer(&seq, l) {
            Ok(ln) => 2.0 * PI * ln.exp() * radial.density(l),
            Err(_) => f64::NAN,
        })
    }

    pub fn with_support(mut self, support: Interval) -> Self {
        self.support = support;
        self
    }

    pub fn support(&self) -> Interval {
        self.support
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn density_kind(&self) -> &PriorDensity {
        &self.density
    }

    /// `Π(λ)`; zero outside the support.
    pub fn density(&self, lambda: f64) -> f64 {
        if !self.support.contains(lambda) {
            return 0.0;
        }
        match &self.density {
            PriorDensity::Constant(c) => *c,
            PriorDensity::BinomialLambda { trials } => (*trials as f64 + 1.0) / (1.0 + lambda).powi(2),
            PriorDensity::Su11 { successes } => (*successes as f64 + 1.0) / (1.0 - lambda).powi(2),
            PriorDensity::Table { x, y } => {
                let i = x.partition_point(|&v| v <= lambda).clamp(1, x.len() - 1);
                let t = (lambda - x[i - 1]) / (x[i] - x[i - 1]);
                y[i - 1] + t * (y[i] - y[i - 1])
            }
            PriorDensity::Expr { expr, .. } => {
                let mut ctx = meval::Context::new();
                ctx.var("lambda", lambda);
                expr.eval_with_context(ctx).unwrap_or(f64::NAN)
            }
            PriorDensity::Custom(f) => f(lambda),
        }
    }
}

fn check_prior_support(family: &DiscreteFamily, prior: &PriorMeasure) -> Result<Interval> {
    let fam = family.param_interval();
    let sup = prior.support();
    if !fam.contains_interval(&sup) {
        return Err(Error::OutOfRange(format!(
            "prior support [{}, {}] is not inside the parameter interval [{}, {}] of {}",
            sup.lo,
            sup.hi,
            fam.lo,
            fam.hi,
            family.name()
        )));
    }
    Ok(sup)
}

/// Integrand `P(n, λ) Π(λ)`, NaN where either factor fails.
fn likelihood_times_prior<'a>(family: &'a DiscreteFamily, prior: &'a PriorMeasure, n: usize) -> impl Fn(f64) -> f64 + 'a {
    move |l| {
        let pi = prior.density(l);
        if pi == 0.0 {
            return 0.0;
        }
        match family.ln_pmf(n, l) {
            Ok(lp) if lp == f64::NEG_INFINITY => 0.0,
            Ok(lp) => lp.exp() * pi,
            Err(_) => f64::NAN,
        }
    }
}

/// `c_n = ∫ P(n, λ) dκ(λ)` by adaptive Gauss–Kronrod.
pub fn compute_cn(family: &DiscreteFamily, prior: &PriorMeasure, n: usize) -> Result<f64> {
    let sup = check_prior_support(family, prior)?;
    family.check_index(n)?;
    let v = integrate_adaptive(likelihood_times_prior(family, prior, n), sup.lo, sup.hi, CN_REL_TOL)?;
    if !v.is_finite() {
        return Err(Error::DivergentIntegral(format!("c_{n} is not finite")));
    }
    if !(v > 0.0) {
        return Err(Error::ZeroEvidence(n));
    }
    Ok(v)
}

/// `c_n` for `n = 0..=family.n_max()`.
pub fn compute_c(family: &DiscreteFamily, prior: &PriorMeasure, exec: Exec) -> Result<Vec<f64>> {
    check_prior_support(family, prior)?;
    exec.map(family.n_max() + 1, |n| compute_cn(family, prior, n)).into_iter().collect()
}

// ---------------------------------------------------------------------------
// convergence condition

/// Sum of a positive series with a geometric tail bound from the ratio of
/// its last two terms. Returns `(sum, tail / sum)`; the tail is infinite if
/// the terms are not decreasing at the cut.
/// Exact `c_n` where a closed form is known: `1` for Poisson and the
/// λ-binomial under their canonical priors, `1/(N+1)` for the p-binomial and
/// `m/((m+n+1)(m+n))` for the negative binomial, both under a flat prior on
/// `[0, 1]`.
pub fn closed_form_c(family: &DiscreteFamily, prior: &PriorMeasure) -> Option<Vec<f64>> {
    let flat = matches!(prior.density_kind(), PriorDensity::Constant(v) if *v == 1.0);
    let len = family.n_max() + 1;
    match family.kind() {
        FamilyKind::Poisson if flat && prior.support() == Interval::half_line() => Some(vec![1.0; len]),
        FamilyKind::BinomialLambda { trials }
            if matches!(prior.density_kind(), PriorDensity::BinomialLambda { trials: t } if t == trials) =>
        {
            Some(vec![1.0; len])
        }
        FamilyKind::BinomialP { trials } if flat && prior.support() == Interval::unit() => {
            Some(vec![1.0 / (*trials as f64 + 1.0); len])
        }
        FamilyKind::NegativeBinomial { successes } if flat && prior.support() == Interval::unit() => {
            let m = *successes as f64;
            Some((0..len).map(|n| m / ((m + n as f64 + 1.0) * (m + n as f64))).collect())
        }
        _ => None,
    }
}

pub(crate) fn sum_with_ratio_tail(terms: &[f64], exact: bool) -> (f64, f64) {
    let s: CompensatedSum = terms.iter().copied().collect();
    let sum = s.value();
    if exact {
        return (sum, 0.0);
    }
    let k = terms.len();
    let tail = match k {
        0 => f64::INFINITY,
        1 => {
            if terms[0] == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        _ => {
            let (a, b) = (terms[k - 2], terms[k - 1]);
            if b == 0.0 {
                0.0
            } else {
                let r = b / a;
                if r < 1.0 {
                    b * r / (1.0 - r)
                } else {
                    f64::INFINITY
                }
            }
        }
    };
    (sum, tail / sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSample {
    pub lambda: f64,
    /// `Σ_n P(n, λ) / c_n`, truncated.
    pub value: f64,
    /// Tail bound relative to `value`.
    pub tail: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityCertificate {
    pub c: Vec<f64>,
    pub c_valid: bool,
    pub samples: Vec<ConvergenceSample>,
    pub tail_tol: f64,
    pub status: CertStatus,
}

impl DualityCertificate {
    pub fn passed(&self) -> bool {
        self.status == CertStatus::Pass
    }
}

/// `N(λ) = Σ_n P(n, λ) / c_n` with tail control.
pub fn dual_normalizer(family: &DiscreteFamily, c: &[f64], lambda: f64) -> Result<(f64, f64)> {
    if c.is_empty() {
        return Err(Error::InvalidInput("empty c_n list".into()));
    }
    if family.is_finite() && c.len() != family.n_max() + 1 {
        return Err(Error::DimensionMismatch { left: c.len(), right: family.n_max() + 1 });
    }
    let terms: Vec<f64> = c.iter().enumerate().map(|(n, cn)| Ok(family.pmf(n, lambda)? / cn)).collect::<Result<_>>()?;
    Ok(sum_with_ratio_tail(&terms, family.is_finite()))
}

/// Checks `c_n > 0` and `Σ P(n, λ)/c_n < ∞` on `lambda_grid`.
pub fn check_convergence(family: &DiscreteFamily, c: &[f64], lambda_grid: &[f64]) -> DualityCertificate {
    let c_valid = !c.is_empty() && c.iter().all(|v| v.is_finite() && *v > 0.0);
    let samples: Vec<ConvergenceSample> = lambda_grid
        .iter()
        .map(|&lambda| match dual_normalizer(family, c, lambda) {
            Ok((value, tail)) => ConvergenceSample {
                lambda,
                value,
                tail,
                ok: value.is_finite() && tail <= DEFAULT_TAIL_TOL,
            },
            Err(_) => ConvergenceSample { lambda, value: f64::NAN, tail: f64::INFINITY, ok: false },
        })
        .collect();
    let ok = c_valid && samples.iter().all(|s| s.ok);
    DualityCertificate {
        c: c.to_vec(),
        c_valid,
        samples,
        tail_tol: DEFAULT_TAIL_TOL,
        status: if ok { CertStatus::Pass } else { CertStatus::Fail },
    }
}

// ---------------------------------------------------------------------------
// posteriors and continuous duals

/// `λ ↦ P(n_obs, λ) Π(λ) / c_{n_obs}`.
#[derive(Debug, Clone)]
pub struct PosteriorDensity {
    family: DiscreteFamily,
    prior: PriorMeasure,
    n_obs: usize,
    evidence: f64,
}

impl PosteriorDensity {
    pub fn pdf(&self, lambda: f64) -> f64 {
        if !self.prior.support().contains(lambda) {
            return 0.0;
        }
        let v = likelihood_times_prior(&self.family, &self.prior, self.n_obs)(lambda) / self.evidence;
        if v.is_nan() {
            0.0
        } else {
            v
        }
    }

    pub fn evidence(&self) -> f64 {
        self.evidence
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn support(&self) -> Interval {
        self.prior.support()
    }

    pub fn family(&self) -> &DiscreteFamily {
        &self.family
    }

    /// `∫ g(λ) f(λ) dλ` over the support.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        let s = self.support();
        integrate_adaptive(|l| g(l) * self.pdf(l), s.lo, s.hi, CN_REL_TOL)
    }
}

pub fn posterior_density(family: &DiscreteFamily, prior: &PriorMeasure, n_obs: usize) -> Result<PosteriorDensity> {
    let evidence = match compute_cn(family, prior, n_obs) {
        Ok(v) if v > f64::MIN_POSITIVE => v,
        Ok(_) | Err(Error::ZeroEvidence(_)) => return Err(Error::ZeroEvidence(n_obs)),
        Err(e) => return Err(e),
    };
    Ok(PosteriorDensity { family: family.clone(), prior: prior.clone(), n_obs, evidence })
}

#[derive(Debug, Clone)]
pub enum ContinuousKind {
    /// `γ_{n+1}(λ) = λ^n e^{-λ} / n!`
    Gamma,
    /// Beta of the first kind, `n = 0..=N`.
    BetaFirstKind { trials: usize },
    /// `β(λ; m+1, n+1)`
    Beta { successes: usize },
    /// `P(n, λ) Π(λ) / c_n` for a general family and prior.
    Posterior { family: DiscreteFamily, prior: PriorMeasure, c: Vec<f64> },
}

/// The densities `Ψ_n`, `n = 0..=n_max`.
#[derive(Debug, Clone)]
pub struct ContinuousFamily {
    kind: ContinuousKind,
    n_max: usize,
    cut: bool,
}

impl ContinuousFamily {
    pub fn gamma(n_max: usize) -> Self {
        Self { kind: ContinuousKind::Gamma, n_max, cut: false }
    }

    pub fn beta_first_kind(trials: usize) -> Self {
        Self { kind: ContinuousKind::BetaFirstKind { trials }, n_max: trials, cut: false }
    }

    pub fn beta(successes: usize, n_max: usize) -> Result<Self> {
        if successes < 1 {
            return Err(Error::OutOfRange(format!("m = {successes} must be at least 1")));
        }
        Ok(Self { kind: ContinuousKind::Beta { successes }, n_max, cut: false })
    }

    /// Posterior family for every `n` of `family` under `prior`.
    pub fn from_posterior(family: &DiscreteFamily, prior: &PriorMeasure, exec: Exec) -> Result<Self> {
        let c = compute_c(family, prior, exec)?;
        let n_max = family.n_max();
        Ok(Self { kind: ContinuousKind::Posterior { family: family.clone(), prior: prior.clone(), c }, n_max, cut: false })
    }

    /// Same densities, range cut to `0..=n_max`. The cut family is treated
    /// as a finite basis: sums over it carry no tail.
    pub fn truncated(mut self, n_max: usize) -> Self {
        self.n_max = self.n_max.min(n_max);
        self.cut = true;
        if let ContinuousKind::Posterior { c, .. } = &mut self.kind {
            c.truncate(self.n_max + 1);
        }
        self
    }

    pub fn kind(&self) -> &ContinuousKind {
        &self.kind
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn is_finite(&self) -> bool {
        if self.cut {
            return true;
        }
        match &self.kind {
            ContinuousKind::BetaFirstKind { .. } => true,
            ContinuousKind::Posterior { family, .. } => family.is_finite(),
            _ => false,
        }
    }

    pub fn support(&self) -> Interval {
        match &self.kind {
            ContinuousKind::Gamma | ContinuousKind::BetaFirstKind { .. } => Interval::half_line(),
            ContinuousKind::Beta { .. } => Interval::unit(),
            ContinuousKind::Posterior { prior, .. } => prior.support(),
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ContinuousKind::Gamma => "gamma".into(),
            ContinuousKind::BetaFirstKind { trials } => format!("beta-first-kind(N={trials})"),
            ContinuousKind::Beta { successes } => format!("beta(m={successes})"),
            ContinuousKind::Posterior { family, prior, .. } => format!("posterior({}, {})", family.name(), prior.name()),
        }
    }

    /// Variable whose mean is `x_{n+1}`: `1 - λ` for the beta dual, the odds
    /// for a p-binomial posterior, otherwise `λ`.
    pub fn dual_variable(&self, lambda: f64) -> f64 {
        match &self.kind {
            ContinuousKind::Beta { .. } => 1.0 - lambda,
            ContinuousKind::Posterior { family, .. } => family.nonlinear_variable(lambda),
            _ => lambda,
        }
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n > self.n_max {
            return Err(Error::IndexOutOfRange { index: n, max: self.n_max });
        }
        Ok(())
    }

    pub fn ln_pdf(&self, n: usize, lambda: f64) -> Result<f64> {
        self.check_n(n)?;
        let sup = self.support();
        if !(lambda >= sup.lo && lambda <= sup.hi) {
            return Err(Error::OutOfRange(format!("lambda = {lambda} outside [{}, {}]", sup.lo, sup.hi)));
        }
        Ok(match &self.kind {
            ContinuousKind::Gamma => ln_pow(lambda, n as f64) - lambda - ln_factorial(n as u64),
            ContinuousKind::BetaFirstKind { trials } => ln_beta_first_kind(lambda, n, *trials),
            ContinuousKind::Beta { successes } => ln_beta_pdf(lambda, *successes as f64 + 1.0, n as f64 + 1.0),
            ContinuousKind::Posterior { family, prior, c } => {
                let pi = prior.density(lambda);
                if pi == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    family.ln_pmf(n, lambda)? + pi.ln() - c[n].ln()
                }
            }
        })
    }

    pub fn pdf(&self, n: usize, lambda: f64) -> Result<f64> {
        self.ln_pdf(n, lambda).map(f64::exp)
    }

    /// `∫ v(λ)^k Ψ_n(λ) dλ` with `v` the dual variable, using the family's
    /// natural rule: Gauss–Laguerre for gamma, mapped Gauss–Legendre for the
    /// first-kind beta, Gauss–Legendre for beta, adaptive otherwise.
    pub fn moment(&self, n: usize, k: usize) -> Result<f64> {
        self.check_n(n)?;
        match &self.kind {
            ContinuousKind::Gamma => {
                let deg = n + k;
                let nodes = deg / 2 + 1;
                if nodes <= 200 {
                    let rule = gauss_laguerre(nodes)?;
                    let lf = ln_factorial(n as u64);
                    Ok(rule.integrate(|x| (ln_pow(x, deg as f64) - lf).exp()))
                } else {
                    self.integrate(n, |l| l.powi(k as i32))
                }
            }
            ContinuousKind::BetaFirstKind { trials } => {
                // t = λ/(1+λ) turns the integrand into C t^{n+k} (1-t)^{N-n-k}
                if n + k > *trials {
                    return Err(Error::DivergentIntegral(format!(
                        "moment {k} of the first-kind beta density n={n}, N={trials} diverges"
                    )));
                }
                let rule = gauss_legendre(0.0, 1.0, trials / 2 + 1)?;
                let c = ln_factorial(*trials as u64 + 1) - ln_factorial((trials - n) as u64) - ln_factorial(n as u64);
                let (a, b) = ((n + k) as f64, (trials - n - k) as f64);
                Ok(rule.integrate(|t| (c + ln_pow(t, a) + ln_pow(1.0 - t, b)).exp()))
            }
            ContinuousKind::Beta { successes } => {
                let rule = gauss_legendre(0.0, 1.0, (successes + n + k) / 2 + 1)?;
                let lb = crate::special::ln_beta(*successes as f64 + 1.0, n as f64 + 1.0);
                let (a, b) = (*successes as f64, (n + k) as f64);
                Ok(rule.integrate(|l| (ln_pow(l, a) + ln_pow(1.0 - l, b) - lb).exp()))
            }
            ContinuousKind::Posterior { .. } => self.integrate(n, |l| self.dual_variable(l).powi(k as i32)),
        }
    }

    /// `∫ g(λ) Ψ_n(λ) dλ` by adaptive quadrature.
    pub fn integrate(&self, n: usize, g: impl Fn(f64) -> f64) -> Result<f64> {
        self.check_n(n)?;
        let s = self.support();
        integrate_adaptive(
            |l| match self.pdf(n, l) {
                Ok(p) if p == 0.0 => 0.0,
                Ok(p) => g(l) * p,
                Err(_) => f64::NAN,
            },
            s.lo,
            s.hi,
            CN_REL_TOL,
        )
    }

    /// `Ñ(λ) = (1/2π) Σ_n Ψ_n(λ)`.
    pub fn normalizer(&self, lambda: f64) -> Result<f64> {
        let terms: Vec<f64> = (0..=self.n_max).map(|n| self.pdf(n, lambda)).collect::<Result<_>>()?;
        let (sum, tail) = sum_with_ratio_tail(&terms, self.is_finite());
        if !sum.is_finite() || !(sum > 0.0) || tail > DEFAULT_TAIL_TOL {
            return Err(Error::DivergentNormalizer(lambda));
        }
        Ok(sum / (2.0 * PI))
    }
}

/// `⟨Y⟩ = Σ x_n P(n, v)` over the family's sequence, evaluated at the
/// sequence variable `v` of `λ`. Equals `v` for infinite sequences; a
/// finite cutoff `N` gives `v (1 - P(N, v))` since `x_{N+1}` does not exist.
pub fn expectation_y(family: &DiscreteFamily, lambda: f64) -> Result<f64> {
    family.check_lambda(lambda)?;
    let seq = family.sequence()?;
    let v = family.nonlinear_variable(lambda);
    let nl = DiscreteFamily::from_nonlinear(seq.clone());
    let mut s = CompensatedSum::new();
    for n in 1..=seq.n_max() {
        s.add(seq.term(n)? * nl.pmf(n, v)?);
    }
    Ok(s.value())
}

/// `⟨Λ⟩_n = ∫ v Ψ_n`; equals `x_{n+1}`.
pub fn expectation_lambda(psi: &ContinuousFamily, n: usize) -> Result<f64> {
    psi.moment(n, 1)
}

/// Discrete family, prior, `c_n` and the continuous dual.
#[derive(Debug, Clone)]
pub struct DualPair {
    pub family: DiscreteFamily,
    pub prior: PriorMeasure,
    pub c: Vec<f64>,
    pub dual: ContinuousFamily,
}

impl DualPair {
    /// Builds the pair for `family` under `prior`, with `c_n` by quadrature.
    /// Canonical priors on built-in families get the closed-form dual.
    pub fn new(family: DiscreteFamily, prior: PriorMeasure, exec: Exec) -> Result<Self> {
        let c = compute_c(&family, &prior, exec)?;
        let canonical = matches!(prior.density_kind(), PriorDensity::Constant(v) if *v == 1.0)
            || matches!(prior.density_kind(), PriorDensity::BinomialLambda { .. });
        let dual = match (family.kind(), canonical) {
            (FamilyKind::Poisson, true) if prior.support() == Interval::half_line() => {
                ContinuousFamily::gamma(family.n_max())
            }
            (FamilyKind::BinomialLambda { trials }, true)
                if matches!(prior.density_kind(), PriorDensity::BinomialLambda { trials: t } if t == trials) =>
            {
                ContinuousFamily::beta_first_kind(*trials)
            }
            (FamilyKind::NegativeBinomial { successes }, true) if prior.support() == Interval::unit() => {
                ContinuousFamily::beta(*successes, family.n_max())?
            }
            _ => ContinuousFamily {
                kind: ContinuousKind::Posterior { family: family.clone(), prior: prior.clone(), c: c.clone() },
                n_max: family.n_max(),
                cut: false,
            },
        };
        Ok(Self { family, prior, c, dual })
    }

    pub fn canonical(family: DiscreteFamily, exec: Exec) -> Result<Self> {
        let prior = family.canonical_prior()?;
        Self::new(family, prior, exec)
    }
}

// ---------------------------------------------------------------------------
// JSON specs

/// `{"kind": "uniform"|"density-expr"|"table", ...}`. Missing bounds default
/// to the family's parameter interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    Uniform {
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    DensityExpr {
        expr: String,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    Table {
        lambda: Vec<f64>,
        density: Vec<f64>,
    },
}

impl PriorSpec {
    pub fn build(&self, family: &DiscreteFamily) -> Result<PriorMeasure> {
        let fam = family.param_interval();
        let bounds = |lo: &Option<f64>, hi: &Option<f64>| Interval::new(lo.unwrap_or(fam.lo), hi.unwrap_or(fam.hi));
        match self {
            PriorSpec::Uniform { lo, hi } => Ok(PriorMeasure::uniform(bounds(lo, hi)?)),
            PriorSpec::DensityExpr { expr, lo, hi } => PriorMeasure::expr(expr, bounds(lo, hi)?),
            PriorSpec::Table { lambda, density } => PriorMeasure::table(lambda.clone(), density.clone()),
        }
    }
}

/// `{"family": "poisson"|"binomial"|"negbinomial"|"nonlinear", "params": {...}, "prior": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
}

impl FamilySpec {
    pub fn build_family(&self, default_nmax: usize) -> Result<DiscreteFamily> {
        let p = &self.params;
        let n_max = param_usize(p, &["n_max"])?.unwrap_or(default_nmax);
        match self.family.as_str() {
            "poisson" => Ok(DiscreteFamily::poisson(n_max)),
            "binomial" => {
                let trials = param_usize(p, &["N", "trials"])?
                    .ok_or_else(|| Error::InvalidInput("binomial family needs params.N".into()))?;
                match p.get("form").and_then(|v| v.as_str()).unwrap_or("p") {
                    "p" => Ok(DiscreteFamily::binomial_p(trials)),
                    "lambda" => Ok(DiscreteFamily::binomial_lambda(trials)),
                    other => Err(Error::InvalidInput(format!("binomial form must be 'p' or 'lambda', got '{other}'"))),
                }
            }
            "negbinomial" => {
                let m = param_usize(p, &["m", "successes"])?
                    .ok_or_else(|| Error::InvalidInput("negbinomial family needs params.m".into()))?;
                DiscreteFamily::negative_binomial(m, n_max)
            }
            "nonlinear" => {
                let raw = p
                    .get("sequence")
                    .ok_or_else(|| Error::InvalidInput("nonlinear family needs params.sequence".into()))?;
                let spec: SequenceSpec = serde_json::from_value(raw.clone())
                    .map_err(|e| Error::InvalidInput(format!("bad sequence spec: {e}")))?;
                Ok(DiscreteFamily::from_nonlinear(spec.build(n_max)?))
            }
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }

    pub fn build(&self, default_nmax: usize) -> Result<(DiscreteFamily, PriorMeasure)> {
        let family = self.build_family(default_nmax)?;
        let prior = match &self.prior {
            Some(spec) => spec.build(&family)?,
            None => family.canonical_prior()?,
        };
        Ok((family, prior))
    }
}
