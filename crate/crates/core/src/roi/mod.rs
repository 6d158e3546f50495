//! Moment measures, the moment condition, and resolution-of-identity checks.

pub mod quadrature;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::distfam::{ContinuousFamily, DualPair, FamilyKind};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::seqcore::{FactorialSequence, SequenceKind};
use crate::special::ln_pow;

pub use quadrature::{
    angular_trapezoid, gauss_laguerre, gauss_laguerre_folded, gauss_legendre, gauss_rational_map, integrate_adaptive,
    DomainTag, Interval, QuadratureRule,
};

/// Radial nodes used by the natural rules unless a family needs more.
pub const RADIAL_NODES: usize = 64;

#[derive(Clone)]
pub enum RadialDensity {
    /// `e^{-λ} / 2π`
    Poisson,
    /// `(N+1) / (2π (1+λ)^{N+2})`
    Su2 { trials: usize },
    /// `(m+1)(1-λ)^m / 2π` on `[0, 1]`
    Su11 { successes: usize },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for RadialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialDensity::Poisson => write!(f, "Poisson"),
            RadialDensity::Su2 { trials } => write!(f, "Su2({trials})"),
            RadialDensity::Su11 { successes } => write!(f, "Su11({successes})"),
            RadialDensity::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// `dρ̄(λ)` with `λ = r²`, given by its Lebesgue density.
#[derive(Debug, Clone)]
pub struct RadialMeasure {
    density: RadialDensity,
    support: Interval,
    name: String,
}

impl RadialMeasure {
    /// The measure solving the moment problem of a built-in sequence.
    pub fn canonical(seq: &FactorialSequence) -> Result<Self> {
        Ok(match seq.kind() {
            SequenceKind::Poisson => {
                Self { density: RadialDensity::Poisson, support: Interval::half_line(), name: "poisson".into() }
            }
            SequenceKind::Su2 { trials } => Self {
                density: RadialDensity::Su2 { trials },
                support: Interval::half_line(),
                name: format!("su2(N={trials})"),
            },
            SequenceKind::Su11 { successes } => Self {
                density: RadialDensity::Su11 { successes },
                support: Interval::unit(),
                name: format!("su11(m={successes})"),
            },
            SequenceKind::Explicit => {
                return Err(Error::InvalidInput(
                    "no known moment measure for an explicit sequence; supply one".into(),
                ))
            }
        })
    }

    pub fn custom(name: &str, support: Interval, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { density: RadialDensity::Custom(Arc::new(f)), support, name: name.to_string() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support(&self) -> Interval {
        self.support
    }

    pub fn density_kind(&self) -> &RadialDensity {
        &self.density
    }

    pub fn density(&self, lambda: f64) -> f64 {
        if !self.support.contains(lambda) {
            return 0.0;
        }
        let two_pi = 2.0 * PI;
        match &self.density {
            RadialDensity::Poisson => (-lambda).exp() / two_pi,
            RadialDensity::Su2 { trials } => {
                (*trials as f64 + 1.0) / two_pi * (-(*trials as f64 + 2.0) * lambda.ln_1p()).exp()
            }
            RadialDensity::Su11 { successes } => {
                (*successes as f64 + 1.0) / two_pi * ln_pow(1.0 - lambda, *successes as f64).exp()
            }
            RadialDensity::Custom(f) => f(lambda),
        }
    }

    /// `∫ λ^k dρ̄`.
    ///
    /// Built-in measures use a rule that is exact for the monomial; custom
    /// ones fall back to adaptive quadrature.
    pub fn moment(&self, k: usize) -> Result<f64> {
        let kf = k as f64;
        let two_pi = 2.0 * PI;
        match &self.density {
            RadialDensity::Poisson => {
                let rule = gauss_laguerre(RADIAL_NODES.max(k / 2 + 1))?;
                Ok(rule.integrate(|x| x.powi(k as i32)) / two_pi)
            }
            RadialDensity::Su2 { trials } => {
                // λ = t/(1-t): λ^k dλ/(1+λ)^{N+2} = t^k (1-t)^{N-k} dt
                if k > *trials {
                    return Err(Error::DivergentIntegral(format!("moment {k} of the su2(N={trials}) measure diverges")));
                }
                let rule = gauss_legendre(0.0, 1.0, trials / 2 + 1)?;
                let b = (*trials - k) as f64;
                Ok((*trials as f64 + 1.0) / two_pi * rule.integrate(|t| (ln_pow(t, kf) + ln_pow(1.0 - t, b)).exp()))
            }
            RadialDensity::Su11 { successes } => {
                let rule = gauss_legendre(0.0, 1.0, (successes + k) / 2 + 1)?;
                Ok(rule.integrate(|x| ln_pow(x, kf).exp() * self.density(x)))
            }
            RadialDensity::Custom(_) => {
                integrate_adaptive(|x| ln_pow(x, kf).exp() * self.density(x), self.support.lo, self.support.hi, 1e-12)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub k: Vec<usize>,
    /// `x_k! / 2π`
    pub lhs: Vec<f64>,
    /// `∫ λ^k dρ̄`
    pub rhs: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl MomentReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative residuals of `x_k!/2π = ∫ λ^k dρ̄` for `k = 0..=k_max`.
pub fn moment_check(seq: &FactorialSequence, measure: &RadialMeasure, k_max: usize) -> Result<MomentReport> {
    let mut rep = MomentReport { k: vec![], lhs: vec![], rhs: vec![], residuals: vec![] };
    for k in 0..=k_max {
        let lhs = seq.generalized_log_factorial(k)?.exp() / (2.0 * PI);
        let rhs = measure.moment(k)?;
        rep.k.push(k);
        rep.lhs.push(lhs);
        rep.rhs.push(rhs);
        rep.residuals.push(((rhs - lhs) / lhs).abs());
    }
    Ok(rep)
}

/// `∫ Ψ_n` on the diagonal; the angular integral kills every off-diagonal
/// entry, so they are exactly zero.
pub fn gram_matrix(pair: &DualPair, size: usize) -> Result<DMatrix<f64>> {
    check_size(pair, size)?;
    let mut g = DMatrix::zeros(size, size);
    for n in 0..size {
        g[(n, n)] = pair.dual.moment(n, 0)?;
    }
    Ok(g)
}

/// `max |G - I|` over entries.
pub fn identity_residual<T: Copy>(m: &DMatrix<T>, abs: impl Fn(T, bool) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max(abs(m[(i, j)], i == j));
        }
    }
    worst
}

pub fn gram_residual(g: &DMatrix<f64>) -> f64 {
    identity_residual(g, |v, diag| if diag { (v - 1.0).abs() } else { v.abs() })
}

pub fn complex_identity_residual(m: &DMatrix<Complex64>) -> f64 {
    identity_residual(m, |v, diag| if diag { (v - 1.0).norm() } else { v.norm() })
}

fn check_size(pair: &DualPair, size: usize) -> Result<()> {
    if size == 0 || size > pair.family.n_max() + 1 || size > pair.c.len() {
        return Err(Error::OutOfRange(format!(
            "basis size {size} must be between 1 and {}",
            pair.family.n_max().min(pair.c.len().saturating_sub(1)) + 1
        )));
    }
    Ok(())
}

/// Node counts of the tensor grid used by [`roi_check_direct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Grid2D {
    pub radial: usize,
    pub angular: usize,
}

impl Default for Grid2D {
    fn default() -> Self {
        Self { radial: RADIAL_NODES, angular: 128 }
    }
}

/// Radial rule suited to the pair's prior: Gauss–Laguerre (weights folded)
/// when the likelihood carries `e^{-λ}`, Gauss–Legendre on bounded supports,
/// the rational map otherwise.
pub fn natural_radial_rule(pair: &DualPair, nodes: usize) -> Result<QuadratureRule> {
    let sup = pair.prior.support();
    if sup.is_bounded() {
        return gauss_legendre(sup.lo, sup.hi, nodes);
    }
    let poisson_like = matches!(pair.family.kind(), FamilyKind::Poisson)
        || matches!(pair.family.kind(), FamilyKind::Nonlinear(s) if s.kind() == SequenceKind::Poisson);
    let mut rule = if poisson_like { gauss_laguerre_folded(nodes)? } else { gauss_rational_map(nodes)? };
    for x in rule.nodes.iter_mut() {
        *x += sup.lo;
    }
    Ok(rule)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectRoi {
    pub matrix: DMatrix<Complex64>,
    pub residual: f64,
}

/// Assembles `(1/2π) ∫∫ ⟨Φ_m|z⟩⟨z|Φ_n⟩ N(λ) dκ dθ` on a full 2D grid.
///
/// `N(λ)` cancels against the state normalization, leaving the unnormalized
/// sections `u_k = (P(k,λ)/c_k)^{1/2} e^{-ikθ}` weighted by `Π(λ)`.
pub fn roi_check_direct(pair: &DualPair, size: usize, grid: Grid2D, exec: Exec) -> Result<DirectRoi> {
    check_size(pair, size)?;
    if grid.angular < size || grid.radial == 0 {
        return Err(Error::InvalidInput(format!(
            "grid {}x{} too coarse for size {size}",
            grid.radial, grid.angular
        )));
    }
    let radial = natural_radial_rule(pair, grid.radial)?;
    let angular = angular_trapezoid(grid.angular);
    let phases: Vec<Vec<Complex64>> = angular
        .nodes
        .iter()
        .map(|&th| (0..size).map(|k| Complex64::from_polar(1.0, -(k as f64) * th)).collect())
        .collect();

    let partials = exec.map_chunks(radial.len(), 8, |range| -> Result<DMatrix<Complex64>> {
        let mut acc = DMatrix::<Complex64>::zeros(size, size);
        for i in range {
            let (l, w) = (radial.nodes[i], radial.weights[i]);
            let pi = pair.prior.density(l);
            if pi == 0.0 {
                continue;
            }
            let amp: Vec<f64> = (0..size)
                .map(|k| Ok((pair.family.ln_pmf(k, l)? - pair.c[k].ln()).exp().sqrt()))
                .collect::<Result<_>>()?;
            let scale = w * pi / (2.0 * PI);
            for (ph, h) in phases.iter().zip(&angular.weights) {
                for m in 0..size {
                    let um = ph[m] * amp[m];
                    for n in 0..size {
                        acc[(m, n)] += um * (ph[n] * amp[n]).conj() * (scale * h);
                    }
                }
            }
        }
        Ok(acc)
    });
    let mut matrix = DMatrix::<Complex64>::zeros(size, size);
    for p in partials {
        matrix += p?;
    }
    let residual = complex_identity_residual(&matrix);
    Ok(DirectRoi { matrix, residual })
}

/// `|∫ Ψ_n - 1|`.
pub fn psi_normalization_check(psi: &ContinuousFamily, n: usize) -> Result<f64> {
    Ok((psi.moment(n, 0)? - 1.0).abs())
}
