//! Coherent-state coefficient vectors and reproducing kernels.
//!
//! Phase convention: basis functions carry `e^{+ikθ}`, e.g.
//! `Φ_k(z) = z̄^k / √x_k!`, and a state's coefficients are their conjugates,
//! so every construction yields `coeff_k ∝ z^k = λ^{k/2} e^{-ikθ}` with
//! `z = √λ e^{-iθ}`. Then `⟨x|y⟩ = K(x,y) / √(K(x,x) K(y,y))`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::distfam::{dual_normalizer, sum_with_ratio_tail, ContinuousFamily, DiscreteFamily, DualityCertificate};
use crate::error::{Error, Result};
use crate::roi::{angular_trapezoid, gauss_laguerre, gauss_legendre, gauss_rational_map, Interval, RadialDensity, RadialMeasure};
use crate::seqcore::{Cutoff, FactorialSequence, SeriesTruncation, DEFAULT_TAIL_TOL};
use crate::special::CompensatedSum;

/// Point `z = √λ e^{-iθ}` of the label domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CSLabel {
    pub lambda: f64,
    pub theta: f64,
}

impl CSLabel {
    /// `θ` is reduced into `[0, 2π)`.
    pub fn new(lambda: f64, theta: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::OutOfDomain { value: lambda, reason: "lambda must be finite and >= 0".into() });
        }
        if !theta.is_finite() {
            return Err(Error::InvalidInput(format!("theta = {theta} is not finite")));
        }
        let mut theta = theta.rem_euclid(TAU);
        if theta >= TAU {
            theta = 0.0;
        }
        Ok(Self { lambda, theta })
    }

    pub fn from_z(z: Complex64) -> Result<Self> {
        Self::new(z.norm_sqr(), -z.arg())
    }

    pub fn z(&self) -> Complex64 {
        Complex64::from_polar(self.lambda.sqrt(), -self.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherentState {
    pub coeffs: Vec<Complex64>,
    pub label: CSLabel,
    /// The normalizer divided out: `N(λ)` or `Ñ(λ)`.
    pub norm_factor: f64,
}

impl CoherentState {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        let s: CompensatedSum = self.coeffs.iter().map(|c| c.norm_sqr()).collect();
        s.value()
    }

    pub fn to_export(&self) -> StateExport {
        let z = self.label.z();
        StateExport {
            lambda: self.label.lambda,
            theta: self.label.theta,
            z: [z.re, z.im],
            norm_factor: self.norm_factor,
            coeffs: self.coeffs.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

/// JSON shape of a state: label metadata plus `(re, im)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateExport {
    pub lambda: f64,
    pub theta: f64,
    pub z: [f64; 2],
    pub norm_factor: f64,
    pub coeffs: Vec<[f64; 2]>,
}

fn phased(amplitudes: impl Iterator<Item = f64>, theta: f64) -> Vec<Complex64> {
    amplitudes.enumerate().map(|(k, a)| Complex64::from_polar(a, -(k as f64) * theta)).collect()
}

/// `coeff_k = N(λ)^{-1/2} z^k / √x_k!`.
pub fn cs_nonlinear(seq: &FactorialSequence, label: CSLabel, trunc: SeriesTruncation) -> Result<CoherentState> {
    let norm = seq.normalization(label.lambda, trunc)?;
    let lt = seq.ln_terms(label.lambda, norm.terms_used - 1);
    let coeffs = phased(lt.iter().map(|l| (0.5 * (l - norm.log_value)).exp()), label.theta);
    Ok(CoherentState { coeffs, label, norm_factor: norm.value })
}

/// `coeff_n = N(λ)^{-1/2} (P(n,λ)/c_n)^{1/2} e^{-inθ}` with `N = Σ P/c_n`.
pub fn cs_from_discrete(family: &DiscreteFamily, cert: &DualityCertificate, label: CSLabel) -> Result<CoherentState> {
    if !cert.passed() {
        return Err(Error::CertificateFailed(format!("certificate for {} did not pass", family.name())));
    }
    let (n_val, tail) = dual_normalizer(family, &cert.c, label.lambda)?;
    if !(tail <= cert.tail_tol) {
        return Err(Error::TailNotConverged { terms: cert.c.len(), tail, tol: cert.tail_tol });
    }
    let amps: Vec<f64> = cert
        .c
        .iter()
        .enumerate()
        .map(|(n, c)| Ok((family.pmf(n, label.lambda)? / c / n_val).sqrt()))
        .collect::<Result<_>>()?;
    Ok(CoherentState { coeffs: phased(amps.into_iter(), label.theta), label, norm_factor: n_val })
}

/// `coeff_n = (2π Ñ(λ))^{-1/2} Ψ_n(λ)^{1/2} e^{-inθ}` with `Ñ = (1/2π) Σ Ψ_n`.
pub fn cs_from_continuous(psi: &ContinuousFamily, lambda: f64, theta: f64) -> Result<CoherentState> {
    let label = CSLabel::new(lambda, theta)?;
    let nt = psi.normalizer(lambda)?;
    let amps: Vec<f64> = (0..=psi.n_max())
        .map(|n| Ok((psi.pdf(n, lambda)? / (2.0 * PI * nt)).sqrt()))
        .collect::<Result<_>>()?;
    Ok(CoherentState { coeffs: phased(amps.into_iter(), label.theta), label, norm_factor: nt })
}

pub fn overlap(a: &CoherentState, b: &CoherentState) -> Result<Complex64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let (mut re, mut im) = (CompensatedSum::new(), CompensatedSum::new());
    for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
        let p = x.conj() * y;
        re.add(p.re);
        im.add(p.im);
    }
    Ok(Complex64::new(re.value(), im.value()))
}

/// `|⟨φ_n|z⟩|²`.
pub fn prob_extract(cs: &CoherentState, n: usize) -> Result<f64> {
    cs.coeffs
        .get(n)
        .map(|c| c.norm_sqr())
        .ok_or(Error::IndexOutOfRange { index: n, max: cs.len().saturating_sub(1) })
}

#[derive(Debug, Clone)]
pub enum KernelBasis {
    /// `Φ_k(z) = z̄^k / √x_k!`, orthonormal for `dρ̄(λ) dθ`.
    Monomial(FactorialSequence),
    /// `Φ_n(λ,θ) = (Ψ_n(λ)/2π)^{1/2} e^{inθ}`, orthonormal for `dλ dθ`.
    Dual(ContinuousFamily),
}

#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    basis: KernelBasis,
    n_max: usize,
    tail_tol: f64,
}

impl KernelEvaluator {
    /// Monomial basis truncated at `n_max` (clamped to the stored terms).
    pub fn monomial(seq: FactorialSequence, n_max: usize) -> Self {
        let n_max = n_max.min(seq.n_max());
        Self { basis: KernelBasis::Monomial(seq), n_max, tail_tol: DEFAULT_TAIL_TOL }
    }

    pub fn dual(psi: ContinuousFamily) -> Self {
        let n_max = psi.n_max();
        Self { basis: KernelBasis::Dual(psi), n_max, tail_tol: DEFAULT_TAIL_TOL }
    }

    /// Tail tolerance (relative to the partial sum) for [`kernel_eval`].
    pub fn with_tail_tol(mut self, tol: f64) -> Self {
        self.tail_tol = tol;
        self
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn domain(&self) -> Interval {
        match &self.basis {
            KernelBasis::Monomial(s) => Interval { lo: 0.0, hi: s.radius_of_convergence().radius.as_f64() },
            KernelBasis::Dual(p) => p.support(),
        }
    }

    fn is_exact(&self) -> bool {
        match &self.basis {
            KernelBasis::Monomial(s) => s.cutoff() == Cutoff::Finite && self.n_max == s.n_max(),
            KernelBasis::Dual(p) => p.is_finite() && self.n_max == p.n_max(),
        }
    }

    /// `Φ_k(x)`.
    pub fn basis_fn(&self, k: usize, x: CSLabel) -> Result<Complex64> {
        if k > self.n_max {
            return Err(Error::IndexOutOfRange { index: k, max: self.n_max });
        }
        let amp = match &self.basis {
            KernelBasis::Monomial(s) => (0.5 * (k as f64 * x.lambda.ln() - s.generalized_log_factorial(k)?)).exp(),
            KernelBasis::Dual(p) => (p.pdf(k, x.lambda)? / (2.0 * PI)).sqrt(),
        };
        let amp = if x.lambda == 0.0 && k == 0 && matches!(self.basis, KernelBasis::Monomial(_)) { 1.0 } else { amp };
        Ok(Complex64::from_polar(amp, k as f64 * x.theta))
    }

    fn terms(&self, x: CSLabel, y: CSLabel) -> Result<Vec<Complex64>> {
        (0..=self.n_max).map(|k| Ok(self.basis_fn(k, x)? * self.basis_fn(k, y)?.conj())).collect()
    }
}

/// `K(x, y) = Σ_k Φ_k(x) conj(Φ_k(y))`, rejecting truncations whose
/// geometric tail bound exceeds the evaluator's tolerance.
pub fn kernel_eval(ke: &KernelEvaluator, x: CSLabel, y: CSLabel) -> Result<Complex64> {
    let terms = ke.terms(x, y)?;
    let mags: Vec<f64> = terms.iter().map(|t| t.norm()).collect();
    let (_, tail) = sum_with_ratio_tail(&mags, ke.is_exact());
    if tail > ke.tail_tol {
        return Err(Error::TailNotConverged { terms: terms.len(), tail, tol: ke.tail_tol });
    }
    Ok(sum_complex(terms))
}

/// The truncated kernel, no tail check.
fn kernel_truncated(ke: &KernelEvaluator, x: CSLabel, y: CSLabel) -> Result<Complex64> {
    Ok(sum_complex(ke.terms(x, y)?))
}

fn sum_complex(terms: Vec<Complex64>) -> Complex64 {
    let (mut re, mut im) = (CompensatedSum::new(), CompensatedSum::new());
    for t in terms {
        re.add(t.re);
        im.add(t.im);
    }
    Complex64::new(re.value(), im.value())
}

/// Radial rule for `∫ f dρ̄` that is exact on the kernel's radial polynomials.
fn radial_rule(measure: &RadialMeasure, n_max: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let nodes = (n_max / 2 + 2).max(64);
    let sup = measure.support();
    let (x, w): (Vec<f64>, Vec<f64>) = match measure.density_kind() {
        RadialDensity::Poisson => {
            let r = gauss_laguerre(nodes)?;
            let w = r.weights.iter().map(|w| w / (2.0 * PI)).collect();
            (r.nodes, w)
        }
        _ => {
            let r = if sup.is_bounded() { gauss_legendre(sup.lo, sup.hi, nodes)? } else { gauss_rational_map(nodes)? };
            let shift = if sup.is_bounded() { 0.0 } else { sup.lo };
            let w = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * measure.density(x + shift)).collect();
            let x = r.nodes.iter().map(|x| x + shift).collect();
            (x, w)
        }
    };
    Ok((x, w))
}

/// `|∫ K(x,z) K(z,y) dμ(z) - K(x,y)|` with `dμ = dρ̄(λ) dθ`.
///
/// The integrand uses the truncated kernel, which reproduces exactly on the
/// span of the kept basis functions, so grid points far out in `λ` need no
/// tail control. The angular trapezoid has more than `2 n_max` nodes and is
/// exact on the kernel's harmonics; the radial rule is exact for the
/// built-in measures.
pub fn kernel_reproducing_check(
    ke: &KernelEvaluator,
    measure: &RadialMeasure,
    x: CSLabel,
    y: CSLabel,
) -> Result<f64> {
    let (rx, rw) = radial_rule(measure, ke.n_max)?;
    let ang = angular_trapezoid(2 * ke.n_max + 2);
    let (mut re, mut im) = (CompensatedSum::new(), CompensatedSum::new());
    for (&l, &w) in rx.iter().zip(&rw) {
        if w == 0.0 {
            continue;
        }
        for (&th, &h) in ang.nodes.iter().zip(&ang.weights) {
            let z = CSLabel { lambda: l, theta: th };
            let v = kernel_truncated(ke, x, z)? * kernel_truncated(ke, z, y)? * (w * h);
            re.add(v.re);
            im.add(v.im);
        }
    }
    let integral = Complex64::new(re.value(), im.value());
    Ok((integral - kernel_eval(ke, x, y)?).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distfam::{check_convergence, compute_c, pmf_binomial, pmf_negbinomial, pmf_poisson, DualPair};
    use crate::par::Exec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn default_trunc() -> SeriesTruncation {
        SeriesTruncation::default()
    }

    #[test]
    fn label_invariants() {
        let l = CSLabel::new(2.0, -0.5).unwrap();
        assert!((l.z().norm_sqr() - 2.0).abs() < 1e-14);
        assert!((0.0..TAU).contains(&l.theta));
        let back = CSLabel::from_z(l.z()).unwrap();
        assert!((back.theta - l.theta).abs() < 1e-14);
        assert!(CSLabel::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn nonlinear_examples() {
        let seq = FactorialSequence::poisson(256);
        let vac = cs_nonlinear(&seq, CSLabel::new(0.0, 0.0).unwrap(), default_trunc()).unwrap();
        assert_eq!(vac.coeffs[0], Complex64::new(1.0, 0.0));
        assert!(vac.coeffs[1..].iter().all(|c| c.norm() == 0.0));
        let s = cs_nonlinear(&seq, CSLabel::new(1.0, 0.0).unwrap(), default_trunc()).unwrap();
        for n in 0..20 {
            assert!((prob_extract(&s, n).unwrap() - pmf_poisson(n, 1.0).unwrap()).abs() < 1e-12);
        }
        assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
        let su2 = cs_nonlinear(&FactorialSequence::su2(4), CSLabel::new(1.0, 0.0).unwrap(), default_trunc()).unwrap();
        assert!((prob_extract(&su2, 2).unwrap() - 6.0 / 16.0).abs() < 1e-12);
        assert!(matches!(prob_extract(&su2, 5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn nonlinear_domain_errors() {
        let seq = FactorialSequence::su11(2, 64).unwrap();
        let r = cs_nonlinear(&seq, CSLabel::new(1.0, 0.0).unwrap(), default_trunc());
        assert!(matches!(r, Err(Error::OutOfDomain { .. })));
        let r = cs_nonlinear(&FactorialSequence::poisson(16), CSLabel::new(30.0, 0.0).unwrap(), default_trunc());
        assert!(matches!(r, Err(Error::TailNotConverged { .. })));
    }

    #[test]
    fn discrete_examples() {
        let fam = DiscreteFamily::poisson(256);
        let cert = check_convergence(&fam, &vec![1.0; 257], &[0.5, 2.0]);
        let label = CSLabel::new(2.0, 0.7).unwrap();
        let a = cs_from_discrete(&fam, &cert, label).unwrap();
        let b = cs_nonlinear(&FactorialSequence::poisson(256), label, default_trunc()).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - y).norm() < 1e-12);
        }

        let bin = DiscreteFamily::binomial_lambda(4);
        let cert = check_convergence(&bin, &[1.0; 5], &[1.0]);
        let s = cs_from_discrete(&bin, &cert, CSLabel::new(1.0, 0.0).unwrap()).unwrap();
        for n in 0..=4 {
            let c = [1.0, 4.0, 6.0, 4.0, 1.0][n];
            assert!((s.coeffs[n] - Complex64::new((c / 16.0f64).sqrt(), 0.0)).norm() < 1e-14);
        }
        assert!((prob_extract(&s, 2).unwrap() - pmf_binomial(2, 4, 0.5).unwrap()).abs() < 1e-14);
        let t = cs_from_discrete(&bin, &cert, CSLabel::new(1.0, PI).unwrap()).unwrap();
        assert!((t.coeffs[1] + s.coeffs[1]).norm() < 1e-14);
    }

    #[test]
    fn discrete_requires_passing_certificate() {
        let fam = DiscreteFamily::poisson(8);
        let cert = check_convergence(&fam, &[1.0, -1.0], &[1.0]);
        let r = cs_from_discrete(&fam, &cert, CSLabel::new(1.0, 0.0).unwrap());
        assert!(matches!(r, Err(Error::CertificateFailed(_))));
    }

    #[test]
    fn continuous_examples() {
        let g = ContinuousFamily::gamma(256);
        let a = cs_from_continuous(&g, 1.5, 0.3).unwrap();
        let b = cs_nonlinear(&FactorialSequence::poisson(256), CSLabel::new(1.5, 0.3).unwrap(), default_trunc()).unwrap();
        assert!((overlap(&a, &b).unwrap().norm() - 1.0).abs() < 1e-10);

        let single = cs_from_continuous(&ContinuousFamily::gamma(64).truncated(0), 2.0, 1.0).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single.coeffs[0].norm() - 1.0).abs() < 1e-15);

        let m = 2;
        let beta = ContinuousFamily::beta(m, 256).unwrap();
        let s = cs_from_continuous(&beta, 0.5, 0.0).unwrap();
        for n in 0..30 {
            let lg = crate::special::ln_gamma;
            let (mf, nf) = (m as f64, n as f64);
            let want = (0.5 * (lg(mf + nf + 2.0) - lg(mf + 2.0) - lg(nf + 1.0))).exp()
                * 0.5f64.powf(mf / 2.0 + 1.0)
                * 0.5f64.powf(nf / 2.0);
            assert!((s.coeffs[n].re - want).abs() < 1e-12, "n={n}");
            assert!((prob_extract(&s, n).unwrap() - pmf_negbinomial(m + 2, n, 0.5).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn divergent_normalizer() {
        let beta = ContinuousFamily::beta(2, 16).unwrap();
        assert!(matches!(cs_from_continuous(&beta, 0.01, 0.0), Err(Error::DivergentNormalizer(_))));
    }

    #[test]
    fn overlap_examples() {
        let seq = FactorialSequence::poisson(256);
        let a = cs_nonlinear(&seq, CSLabel::new(1.0, 0.0).unwrap(), default_trunc()).unwrap();
        let b = cs_nonlinear(&seq, CSLabel::new(0.0, 0.0).unwrap(), default_trunc()).unwrap();
        assert!((overlap(&a, &a).unwrap() - 1.0).norm() < 1e-12);
        // zero-padded vacuum
        let mut b_pad = b.clone();
        b_pad.coeffs.resize(a.len(), Complex64::new(0.0, 0.0));
        assert!((overlap(&a, &b_pad).unwrap().norm() - (-0.5f64).exp()).abs() < 1e-12);
        let short = cs_nonlinear(&FactorialSequence::su2(3), CSLabel::new(1.0, 0.0).unwrap(), default_trunc()).unwrap();
        assert!(matches!(overlap(&a, &short), Err(Error::DimensionMismatch { .. })));
        let mut e1 = b_pad.clone();
        e1.coeffs.swap(0, 1);
        assert_eq!(overlap(&b_pad, &e1).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn bargmann_kernel() {
        let ke = KernelEvaluator::monomial(FactorialSequence::poisson(256), 60);
        let one = CSLabel::from_z(Complex64::new(1.0, 0.0)).unwrap();
        assert!((kernel_eval(&ke, one, one).unwrap() - std::f64::consts::E).norm() < 1e-10);
        let x = CSLabel::new(0.8, 1.1).unwrap();
        let y = CSLabel::new(1.3, 4.0).unwrap();
        // K(x,y) = exp(conj(z_x) z_y)
        let want = (x.z().conj() * y.z()).exp();
        assert!((kernel_eval(&ke, x, y).unwrap() - want).norm() < 1e-10);
        let d = kernel_eval(&ke, x, x).unwrap();
        assert!(d.re > 0.0 && d.im.abs() < 1e-15);
        let strict = KernelEvaluator::monomial(FactorialSequence::poisson(256), 10).with_tail_tol(1e-12);
        assert!(matches!(kernel_eval(&strict, y, y), Err(Error::TailNotConverged { .. })));
    }

    #[test]
    fn kernel_is_hermitian() {
        let ke = KernelEvaluator::monomial(FactorialSequence::poisson(256), 60);
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let x = CSLabel::new(2.0 * next(), TAU * next()).unwrap();
            let y = CSLabel::new(2.0 * next(), TAU * next()).unwrap();
            let a = kernel_eval(&ke, x, y).unwrap();
            let b = kernel_eval(&ke, y, x).unwrap();
            assert!((a - b.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn reproducing_property() {
        let seq = FactorialSequence::poisson(256);
        let ke = KernelEvaluator::monomial(seq.clone(), 60);
        let mu = RadialMeasure::canonical(&seq).unwrap();
        let x = CSLabel::from_z(Complex64::new(1.2, -0.7)).unwrap();
        let y = CSLabel::from_z(Complex64::new(-0.4, 0.9)).unwrap();
        assert!(kernel_reproducing_check(&ke, &mu, x, y).unwrap() <= 1e-6);
        let o = CSLabel::new(0.0, 0.0).unwrap();
        assert!(kernel_reproducing_check(&ke, &mu, o, o).unwrap() <= 1e-12);

        let su2 = FactorialSequence::su2(4);
        let ke = KernelEvaluator::monomial(su2.clone(), 4);
        let mu = RadialMeasure::canonical(&su2).unwrap();
        let x = CSLabel::new(0.7, 2.0).unwrap();
        let y = CSLabel::new(3.1, 0.4).unwrap();
        assert!(kernel_reproducing_check(&ke, &mu, x, y).unwrap() <= 1e-8);
    }

    #[test]
    fn dual_basis_kernel_reproduces() {
        let psi = ContinuousFamily::beta_first_kind(5);
        let ke = KernelEvaluator::dual(psi);
        let leb = RadialMeasure::custom("lebesgue", Interval::half_line(), |_| 1.0);
        let x = CSLabel::new(0.4, 1.0).unwrap();
        let y = CSLabel::new(2.5, 5.0).unwrap();
        assert!(kernel_reproducing_check(&ke, &leb, x, y).unwrap() <= 1e-8);
    }

    #[test]
    fn construction_routes_agree() {
        let fams = [
            DiscreteFamily::poisson(256),
            DiscreteFamily::binomial_lambda(6),
            DiscreteFamily::negative_binomial(2, 256).unwrap(),
        ];
        for fam in fams {
            let pair = DualPair::canonical(fam.clone(), Exec::default()).unwrap();
            let l = if fam.param_interval().is_bounded() { 0.6 } else { 1.7 };
            let cert = check_convergence(&fam, &pair.c, &[l]);
            let a = cs_from_discrete(&fam, &cert, CSLabel::new(l, 0.9).unwrap()).unwrap();
            let b = cs_from_continuous(&pair.dual, l, 0.9).unwrap();
            assert!((overlap(&a, &b).unwrap().norm() - 1.0).abs() < 1e-10, "{}", fam.name());
        }
    }

    #[test]
    fn state_export_shape() {
        let s = cs_nonlinear(&FactorialSequence::su2(2), CSLabel::new(1.0, 0.5).unwrap(), default_trunc()).unwrap();
        let v = serde_json::to_value(s.to_export()).unwrap();
        assert_eq!(v["coeffs"].as_array().unwrap().len(), 3);
        assert_eq!(v["coeffs"][0].as_array().unwrap().len(), 2);
    }

    #[test]
    fn cn_vector_for_binomial_is_one() {
        let fam = DiscreteFamily::binomial_lambda(5);
        let c = compute_c(&fam, &fam.canonical_prior().unwrap(), Exec::Sequential).unwrap();
        assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn unit_norm_and_pmf_link(l in 0.0f64..30.0, p in 0.01f64..0.99, th in 0.0f64..TAU) {
            let seq = FactorialSequence::poisson(256);
            let s = cs_nonlinear(&seq, CSLabel::new(l, th).unwrap(), default_trunc()).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
            for n in 0..s.len().min(80) {
                prop_assert!((prob_extract(&s, n).unwrap() - pmf_poisson(n, l).unwrap()).abs() < 1e-12);
            }
            let bin = DiscreteFamily::binomial_lambda(7);
            let cert = check_convergence(&bin, &[1.0; 8], &[p]);
            let s = cs_from_discrete(&bin, &cert, CSLabel::new(p, th).unwrap()).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
            for n in 0..=7 {
                prop_assert!((prob_extract(&s, n).unwrap() - bin.pmf(n, p).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn phase_covariance(l in 0.0f64..5.0, th in 0.0f64..TAU, d in -10.0f64..10.0) {
            let seq = FactorialSequence::poisson(256);
            let a = cs_nonlinear(&seq, CSLabel::new(l, th).unwrap(), default_trunc()).unwrap();
            let b = cs_nonlinear(&seq, CSLabel::new(l, th + d).unwrap(), default_trunc()).unwrap();
            for (n, (x, y)) in a.coeffs.iter().zip(&b.coeffs).enumerate() {
                if x.norm() > 1e-300 {
                    let f = y / x;
                    prop_assert!((f.norm() - 1.0).abs() < 1e-14 || x.norm() < 1e-150);
                    assert_relative_eq!(prob_extract(&a, n).unwrap(), prob_extract(&b, n).unwrap(), max_relative = 1e-14);
                }
            }
        }
    }
}
