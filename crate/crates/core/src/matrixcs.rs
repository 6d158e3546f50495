//! Vector coherent states over normal matrices and tensor-product states.
//!
//! Normal matrices live in factored form `Z = U diag(z_1..z_M) U†`; powers,
//! kernels and inverse square roots are all diagonal there.
//!
//! Normalization: the matrix normalizer is `M · K(Z*, Z)`, so the vector
//! states satisfy `Σ_i ⟨Z;i|Z;i⟩ = 1` and `M = 1` reproduces the scalar
//! states exactly.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cstates::{cs_nonlinear, CSLabel, CoherentState};
use crate::distfam::DiscreteFamily;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::roi::{integrate_adaptive, RadialMeasure};
use crate::seqcore::{Cutoff, FactorialSequence, SeriesTruncation};
use crate::special::CompensatedSum;

pub type CMatrix = DMatrix<Complex64>;

const UNITARY_TOL: f64 = 1e-12;
/// Materialization cap for tensor states: `M <= 4`, `n_max <= 32`.
pub const TENSOR_MAX_DIM: usize = 4;
pub const TENSOR_MAX_LEVEL: usize = 32;
/// Samples per Monte Carlo work unit.
const MC_CHUNK: usize = 256;

fn unitarity_residual(u: &CMatrix) -> f64 {
    let d = u * u.adjoint() - CMatrix::identity(u.nrows(), u.ncols());
    d.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMatrixLabel {
    unitary: CMatrix,
    labels: Vec<CSLabel>,
}

impl NormalMatrixLabel {
    pub fn new(unitary: CMatrix, labels: Vec<CSLabel>) -> Result<Self> {
        if !unitary.is_square() {
            return Err(Error::DimensionMismatch { left: unitary.nrows(), right: unitary.ncols() });
        }
        if unitary.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { left: unitary.nrows(), right: labels.len() });
        }
        if labels.is_empty() {
            return Err(Error::InvalidInput("matrix dimension must be at least 1".into()));
        }
        let dev = unitarity_residual(&unitary);
        if !(dev <= UNITARY_TOL) {
            return Err(Error::NotUnitary(dev));
        }
        Ok(Self { unitary, labels })
    }

    pub fn diagonal(labels: Vec<CSLabel>) -> Result<Self> {
        let m = labels.len();
        Self::new(CMatrix::identity(m, m), labels)
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn unitary(&self) -> &CMatrix {
        &self.unitary
    }

    pub fn labels(&self) -> &[CSLabel] {
        &self.labels
    }

    /// Same eigenvalues, eigenbasis `V U`.
    pub fn rotated(&self, v: &CMatrix) -> Result<Self> {
        Self::new(v * &self.unitary, self.labels.clone())
    }

    /// `U diag(f(z_i)) U†`.
    pub fn apply_diag(&self, f: impl Fn(usize, &CSLabel) -> Complex64) -> CMatrix {
        let d = DVector::from_iterator(self.dim(), self.labels.iter().enumerate().map(|(i, l)| f(i, l)));
        &self.unitary * CMatrix::from_diagonal(&d) * self.unitary.adjoint()
    }

    /// Dense `Z`.
    pub fn matrix(&self) -> CMatrix {
        self.apply_diag(|_, l| l.z())
    }

    /// `max |Z Z† - Z† Z|`.
    pub fn normality_residual(&self) -> f64 {
        let z = self.matrix();
        let d = &z * z.adjoint() - z.adjoint() * &z;
        d.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Haar-distributed `M × M` unitary from `rng`: QR of a complex Ginibre
/// matrix with the phases of `diag(R)` moved into `Q`.
pub fn haar_unitary_with(m: usize, rng: &mut impl Rng) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let g = CMatrix::from_fn(m, m, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..m {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn haar_unitary(m: usize, seed: u64) -> Result<CMatrix> {
    if m == 0 {
        return Err(Error::InvalidInput("unitary dimension must be at least 1".into()));
    }
    Ok(haar_unitary_with(m, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn check_domain(label: &NormalMatrixLabel, seq: &FactorialSequence) -> Result<()> {
    label.labels.iter().try_for_each(|l| seq.check_domain(l.lambda))
}

/// `Σ_k w^k / x_k!` with the seqcore tail policy.
fn scalar_kernel(seq: &FactorialSequence, w: Complex64, trunc: SeriesTruncation) -> Result<Complex64> {
    let n = trunc.n_max.min(seq.n_max());
    let lf = seq.log_factorials();
    let r = w.norm();
    let (mut re, mut im, mut mag) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    let mut last = 0.0;
    for (k, l) in lf.iter().enumerate().take(n + 1) {
        let a = if k == 0 { 1.0 } else { (k as f64 * r.ln() - l).exp() };
        let t = Complex64::from_polar(a, k as f64 * w.arg());
        re.add(t.re);
        im.add(t.im);
        mag.add(a);
        last = a;
    }
    let exact = (seq.cutoff() == Cutoff::Finite && n == seq.n_max()) || r == 0.0;
    if !exact {
        let ratio = if n < seq.n_max() { r / seq.values()[n] } else { r / seq.values()[n.saturating_sub(1).min(seq.values().len() - 1)] };
        let tail = if ratio < 1.0 { last * ratio / (1.0 - ratio) / mag.value() } else { f64::INFINITY };
        if tail > trunc.tail_tol {
            return Err(Error::TailNotConverged { terms: n + 1, tail, tol: trunc.tail_tol });
        }
    }
    Ok(Complex64::new(re.value(), im.value()))
}

/// `K(Z'*, Z) = Σ_k Z'*^k Z^k / x_k! = U' (W ∘ S) U†` with `W = U'† U` and
/// `S_ij = Σ_k (z̄'_i z_j)^k / x_k!`.
pub fn matrix_kernel(
    a: &NormalMatrixLabel,
    b: &NormalMatrixLabel,
    seq: &FactorialSequence,
    trunc: SeriesTruncation,
) -> Result<CMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    check_domain(a, seq)?;
    check_domain(b, seq)?;
    let m = a.dim();
    let w = a.unitary.adjoint() * &b.unitary;
    let mut inner = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let s = scalar_kernel(seq, a.labels[i].z().conj() * b.labels[j].z(), trunc)?;
            inner[(i, j)] = w[(i, j)] * s;
        }
    }
    Ok(&a.unitary * inner * b.unitary.adjoint())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorCoherentState {
    /// Row `j` is component `j` of `C^M`, column `k` the level.
    pub coeffs: CMatrix,
    /// 1-based channel `i`.
    pub channel: usize,
    pub label: NormalMatrixLabel,
}

impl VectorCoherentState {
    pub fn norm_sqr(&self) -> f64 {
        let s: CompensatedSum = self.coeffs.iter().map(|c| c.norm_sqr()).collect();
        s.value()
    }
}

/// Scalar states for every eigenvalue; they share one level count.
fn scalar_states(label: &NormalMatrixLabel, seq: &FactorialSequence, trunc: SeriesTruncation) -> Result<Vec<CoherentState>> {
    label.labels.iter().map(|l| cs_nonlinear(seq, *l, trunc)).collect()
}

/// `|Z; i⟩`: column `k` is `(M K)^{-1/2} Z^k χ^i / √x_k!
/// = M^{-1/2} U diag(c_k(z_j)) U† e_i` with `c_k` the scalar coefficients.
pub fn vcs_build(
    label: &NormalMatrixLabel,
    channel: usize,
    seq: &FactorialSequence,
    trunc: SeriesTruncation,
) -> Result<VectorCoherentState> {
    let m = label.dim();
    if channel == 0 || channel > m {
        return Err(Error::OutOfRange(format!("channel {channel} not in 1..={m}")));
    }
    check_domain(label, seq)?;
    let states = scalar_states(label, seq, trunc)?;
    let levels = states[0].len();
    let u = &label.unitary;
    // row i of U† is conj of column... (U† e_i)_j = conj(U_ij)
    let ui: Vec<Complex64> = (0..m).map(|j| u[(channel - 1, j)].conj()).collect();
    let s = 1.0 / (m as f64).sqrt();
    let coeffs = CMatrix::from_fn(m, levels, |row, k| {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..m {
            acc += u[(row, j)] * states[j].coeffs[k] * ui[j];
        }
        acc * s
    });
    Ok(VectorCoherentState { coeffs, channel, label: label.clone() })
}

/// `Σ_i ⟨Z;i|Z;i⟩`.
pub fn vcs_total_norm(label: &NormalMatrixLabel, seq: &FactorialSequence, trunc: SeriesTruncation) -> Result<f64> {
    let mut s = CompensatedSum::new();
    for i in 1..=label.dim() {
        s.add(vcs_build(label, i, seq, trunc)?.norm_sqr());
    }
    Ok(s.value())
}

#[derive(Debug, Clone)]
pub struct MixtureDistribution {
    family: DiscreteFamily,
    lambdas: Vec<f64>,
    weights: Vec<f64>,
}

impl MixtureDistribution {
    /// Uniform weights `1/M` when `weights` is `None`.
    pub fn new(family: DiscreteFamily, lambdas: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidInput("a mixture needs at least one component".into()));
        }
        let m = lambdas.len();
        let weights = weights.unwrap_or_else(|| vec![1.0 / m as f64; m]);
        if weights.len() != m {
            return Err(Error::DimensionMismatch { left: m, right: weights.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-14 * m as f64 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        for &l in &lambdas {
            family.pmf(0, l)?;
        }
        Ok(Self { family, lambdas, weights })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `Σ_i w_i P(n, λ_i)`.
pub fn mixture_pmf(mix: &MixtureDistribution, n: usize) -> Result<f64> {
    let mut s = CompensatedSum::new();
    for (l, w) in mix.lambdas.iter().zip(&mix.weights) {
        s.add(w * mix.family.pmf(n, *l)?);
    }
    Ok(s.value())
}

/// `Σ_i v_i v_i†` with `v_i` the level-`n` column of `|Z;i⟩`, i.e. the
/// partial trace of `Σ_i |Z;i⟩⟨Z;i| (I ⊗ P_n)` over the levels.
pub fn partial_trace_prob(
    label: &NormalMatrixLabel,
    n: usize,
    seq: &FactorialSequence,
    trunc: SeriesTruncation,
) -> Result<CMatrix> {
    let v = partial_trace_factor(label, n, seq, trunc)?;
    Ok(&v * v.adjoint())
}

/// `V` with columns `v_i`, the level-`n` columns of `|Z;i⟩`, so that the
/// partial trace equals `V V†`.
pub fn partial_trace_factor(
    label: &NormalMatrixLabel,
    n: usize,
    seq: &FactorialSequence,
    trunc: SeriesTruncation,
) -> Result<CMatrix> {
    let m = label.dim();
    let mut v = CMatrix::zeros(m, m);
    for i in 1..=m {
        let s = vcs_build(label, i, seq, trunc)?;
        if n >= s.coeffs.ncols() {
            return Err(Error::IndexOutOfRange { index: n, max: s.coeffs.ncols() - 1 });
        }
        v.set_column(i - 1, &s.coeffs.column(n));
    }
    Ok(v)
}

/// `det(M · P_n)` through the factor, `M^M |det V|²`. The factor's condition
/// number is the square root of the partial trace's, which keeps the relative
/// error at rounding level when the `P(n, λ_i)` differ by many orders.
pub fn partial_trace_det(
    label: &NormalMatrixLabel,
    n: usize,
    seq: &FactorialSequence,
    trunc: SeriesTruncation,
) -> Result<f64> {
    let m = label.dim() as f64;
    let v = partial_trace_factor(label, n, seq, trunc)?;
    Ok(m.powi(label.dim() as i32) * v.determinant().norm_sqr())
}

/// `(1/M) U diag(P(n, λ_i)) U†`.
pub fn partial_trace_closed_form(
    label: &NormalMatrixLabel,
    n: usize,
    seq: &FactorialSequence,
    trunc: SeriesTruncation,
) -> Result<CMatrix> {
    let m = label.dim() as f64;
    let probs: Vec<f64> = label
        .labels
        .iter()
        .map(|l| {
            let p = seq.probabilities(l.lambda, trunc)?;
            p.get(n).copied().ok_or(Error::IndexOutOfRange { index: n, max: p.len() - 1 })
        })
        .collect::<Result<_>>()?;
    Ok(label.apply_diag(|i, _| Complex64::new(probs[i] / m, 0.0)))
}

/// Monte Carlo estimate with per-entry standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixEstimate {
    #[serde(serialize_with = "ser_cmatrix")]
    pub mean: CMatrix,
    #[serde(serialize_with = "ser_rmatrix")]
    pub se: DMatrix<f64>,
    pub samples: usize,
}

impl MatrixEstimate {
    /// `max_ij (|mean - exact| - k·SE)`; non-positive means inside the band.
    pub fn band_excess(&self, exact: &CMatrix, k: f64, floor: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.mean.nrows() {
            for j in 0..self.mean.ncols() {
                let dev = (self.mean[(i, j)] - exact[(i, j)]).norm();
                worst = worst.max(dev - k * self.se[(i, j)] - floor);
            }
        }
        worst
    }
}

pub(crate) fn ser_cmatrix<S: serde::Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<[f64; 2]>> =
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect();
    rows.serialize(s)
}

pub(crate) fn ser_rmatrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
    rows.serialize(s)
}

/// `2π ∫ λ^{s} dρ̄`; integer orders use the exact rule.
fn radial_moment(measure: &RadialMeasure, twice_s: usize) -> Result<f64> {
    if twice_s.is_multiple_of(2) {
        return Ok(2.0 * PI * measure.moment(twice_s / 2)?);
    }
    let s = twice_s as f64 / 2.0;
    let sup = measure.support();
    Ok(2.0 * PI * integrate_adaptive(|l| l.powf(s) * measure.density(l), sup.lo, sup.hi, 1e-13)?)
}

/// Estimates `∫ Z^m Z*^n dΩ / √(x_m! x_n!)`, exactly `I δ_mn`.
///
/// `dΩ` is Haar measure on `U(M)` times `Π_i dρ̄(λ_i) dθ_i`. The radial
/// integrals are done by quadrature; `U` and the angles `θ_i` are sampled.
/// Sample `s` draws from a ChaCha8 stream `s` keyed by `seed`, and chunk
/// sums are reduced in order, so the result does not depend on `exec`.
#[allow(clippy::too_many_arguments)]
pub fn matrix_orthogonality_mc(
    m: usize,
    n: usize,
    seq: &FactorialSequence,
    measure: &RadialMeasure,
    dim: usize,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<MatrixEstimate> {
    if dim == 0 {
        return Err(Error::InvalidInput("matrix dimension must be at least 1".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidInput("Monte Carlo needs at least 2 samples".into()));
    }
    let norm = (0.5 * (seq.generalized_log_factorial(m)? + seq.generalized_log_factorial(n)?)).exp();
    let radial = radial_moment(measure, m + n)? / norm;
    let dphase = m as f64 - n as f64;

    struct Acc {
        sum: Vec<Complex64>,
        sq: Vec<f64>,
    }
    let dd = dim * dim;
    let parts = exec.map_chunks(samples, MC_CHUNK, |range| {
        let mut acc = Acc { sum: vec![Complex64::new(0.0, 0.0); dd], sq: vec![0.0; dd] };
        for s in range {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let u = haar_unitary_with(dim, &mut rng);
            let d: Vec<Complex64> = (0..dim)
                .map(|_| {
                    let th: f64 = rng.gen_range(0.0..TAU);
                    Complex64::from_polar(radial, -dphase * th)
                })
                .collect();
            for a in 0..dim {
                for b in 0..dim {
                    let mut v = Complex64::new(0.0, 0.0);
                    for (i, di) in d.iter().enumerate() {
                        v += u[(a, i)] * di * u[(b, i)].conj();
                    }
                    acc.sum[a * dim + b] += v;
                    acc.sq[a * dim + b] += v.norm_sqr();
                }
            }
        }
        acc
    });
    let mut sum = vec![Complex64::new(0.0, 0.0); dd];
    let mut sq = vec![0.0; dd];
    for p in parts {
        for i in 0..dd {
            sum[i] += p.sum[i];
            sq[i] += p.sq[i];
        }
    }
    let sf = samples as f64;
    let mean = CMatrix::from_fn(dim, dim, |a, b| sum[a * dim + b] / sf);
    let se = DMatrix::from_fn(dim, dim, |a, b| {
        let k = a * dim + b;
        let var = ((sq[k] - sum[k].norm_sqr() / sf) / (sf - 1.0)).max(0.0);
        (var / sf).sqrt()
    });
    Ok(MatrixEstimate { mean, se, samples })
}

/// Product state `|z_1⟩ ⊗ … ⊗ |z_M⟩`, kept as its factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCoherentState {
    pub factors: Vec<CoherentState>,
}

impl TensorCoherentState {
    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn entry(&self, ns: &[usize]) -> Result<Complex64> {
        if ns.len() != self.dim() {
            return Err(Error::DimensionMismatch { left: ns.len(), right: self.dim() });
        }
        let mut v = Complex64::new(1.0, 0.0);
        for (f, &n) in self.factors.iter().zip(ns) {
            v *= f.coeffs.get(n).ok_or(Error::IndexOutOfRange { index: n, max: f.len() - 1 })?;
        }
        Ok(v)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.factors.iter().map(|f| f.norm_sqr()).product()
    }

    /// Dense row-major array; refused beyond `M = 4` factors of 33 levels.
    pub fn materialize(&self) -> Result<Vec<Complex64>> {
        let requested: usize = self.factors.iter().map(|f| f.len()).product();
        if self.dim() > TENSOR_MAX_DIM || self.factors.iter().any(|f| f.len() > TENSOR_MAX_LEVEL + 1) {
            return Err(Error::SizeLimit { requested });
        }
        let mut out = vec![Complex64::new(1.0, 0.0)];
        for f in &self.factors {
            out = out.iter().flat_map(|a| f.coeffs.iter().map(move |b| a * b)).collect();
        }
        Ok(out)
    }
}

pub fn tensor_cs(labels: &[CSLabel], seq: &FactorialSequence, trunc: SeriesTruncation) -> Result<TensorCoherentState> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("a tensor state needs at least one factor".into()));
    }
    let factors = labels.iter().map(|l| cs_nonlinear(seq, *l, trunc)).collect::<Result<_>>()?;
    Ok(TensorCoherentState { factors })
}

/// `|⟨φ_{n_1..n_M}|z_1..z_M⟩|² = Π_i P(n_i, λ_i)`.
pub fn joint_prob(state: &TensorCoherentState, ns: &[usize]) -> Result<f64> {
    Ok(state.entry(ns)?.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distfam::pmf_poisson;
    use nalgebra::SymmetricEigen;

    fn trunc() -> SeriesTruncation {
        SeriesTruncation::default()
    }

    fn random_label(m: usize, seed: u64, lmax: f64) -> NormalMatrixLabel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = haar_unitary_with(m, &mut rng);
        let labels = (0..m).map(|_| CSLabel::new(rng.gen_range(0.0..lmax), rng.gen_range(0.0..TAU)).unwrap()).collect();
        NormalMatrixLabel::new(u, labels).unwrap()
    }

    #[test]
    fn haar_basics() {
        let u = haar_unitary(1, 9).unwrap();
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-14);
        for seed in 0..100 {
            assert!(unitarity_residual(&haar_unitary(4, seed).unwrap()) < 1e-12);
        }
        assert!(haar_unitary(0, 1).is_err());
    }

    #[test]
    fn haar_first_moment() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let xs: Vec<f64> = (0..n).map(|_| haar_unitary_with(3, &mut rng)[(0, 0)].norm_sqr()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0 / 3.0).abs() <= 3.0 * se, "{mean} {se}");
    }

    #[test]
    fn label_invariants() {
        let l = random_label(4, 3, 2.0);
        assert!(l.normality_residual() < 1e-12);
        let bad = CMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(matches!(
            NormalMatrixLabel::new(bad, vec![CSLabel::new(1.0, 0.0).unwrap(); 2]),
            Err(Error::NotUnitary(_))
        ));
    }

    #[test]
    fn kernel_examples() {
        let seq = FactorialSequence::poisson(256);
        let one = NormalMatrixLabel::diagonal(vec![CSLabel::new(1.0, 0.0).unwrap()]).unwrap();
        let k = matrix_kernel(&one, &one, &seq, trunc()).unwrap();
        assert!((k[(0, 0)] - std::f64::consts::E).norm() < 1e-10);

        let lams = [0.3, 1.0, 2.5];
        let d = NormalMatrixLabel::diagonal(lams.iter().map(|&l| CSLabel::new(l, 1.0).unwrap()).collect()).unwrap();
        let k = matrix_kernel(&d, &d, &seq, trunc()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { lams[i].exp() } else { 0.0 };
                assert!((k[(i, j)] - want).norm() < 1e-10);
            }
        }
        let zero = SeriesTruncation::new(0, f64::INFINITY).unwrap();
        let r = random_label(3, 5, 2.0);
        let k0 = matrix_kernel(&r, &r, &seq, zero).unwrap();
        assert!((k0 - CMatrix::identity(3, 3)).iter().all(|v| v.norm() < 1e-12));
        let out = NormalMatrixLabel::diagonal(vec![CSLabel::new(1.0, 0.0).unwrap()]).unwrap();
        let su11 = FactorialSequence::su11(2, 64).unwrap();
        assert!(matches!(matrix_kernel(&out, &out, &su11, trunc()), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn kernel_matches_dense_series() {
        let seq = FactorialSequence::poisson(256);
        let a = random_label(3, 11, 1.5);
        let b = random_label(3, 12, 1.5);
        let k = matrix_kernel(&a, &b, &seq, trunc()).unwrap();
        let (za, zb) = (a.matrix().adjoint(), b.matrix());
        let mut dense = CMatrix::zeros(3, 3);
        let (mut pa, mut pb) = (CMatrix::identity(3, 3), CMatrix::identity(3, 3));
        let mut fact = 1.0;
        for kk in 0..60 {
            if kk > 0 {
                pa = &pa * &za;
                pb = &pb * &zb;
                fact *= kk as f64;
            }
            dense += &pa * &pb / Complex64::new(fact, 0.0);
        }
        assert!((k - dense).iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn vcs_examples() {
        let seq = FactorialSequence::poisson(256);
        let l = CSLabel::new(1.3, 0.4).unwrap();
        let v = vcs_build(&NormalMatrixLabel::diagonal(vec![l]).unwrap(), 1, &seq, trunc()).unwrap();
        let s = cs_nonlinear(&seq, l, trunc()).unwrap();
        let ov: Complex64 = v.coeffs.row(0).iter().zip(&s.coeffs).map(|(a, b)| a.conj() * b).sum();
        assert!((ov.norm() - 1.0).abs() < 1e-12);

        let labels: Vec<CSLabel> = [0.5, 1.0, 2.0].iter().map(|&x| CSLabel::new(x, 0.3).unwrap()).collect();
        let d = NormalMatrixLabel::diagonal(labels.clone()).unwrap();
        let v = vcs_build(&d, 2, &seq, trunc()).unwrap();
        let s = cs_nonlinear(&seq, labels[1], trunc()).unwrap();
        for k in 0..v.coeffs.ncols() {
            assert_eq!(v.coeffs[(0, k)], Complex64::new(0.0, 0.0));
            assert_eq!(v.coeffs[(2, k)], Complex64::new(0.0, 0.0));
            assert!((v.coeffs[(1, k)] * 3f64.sqrt() - s.coeffs[k]).norm() < 1e-14);
        }
        assert!(matches!(vcs_build(&d, 0, &seq, trunc()), Err(Error::OutOfRange(_))));
        assert!(matches!(vcs_build(&d, 4, &seq, trunc()), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn vcs_normalization_all_sequences() {
        let seqs = [
            (FactorialSequence::poisson(256), 5.0),
            (FactorialSequence::su2(6), 5.0),
            (FactorialSequence::su11(2, 256).unwrap(), 0.8),
        ];
        for (seq, lmax) in &seqs {
            for m in [2usize, 3, 4] {
                for s in 0..50 {
                    let l = random_label(m, 1000 * m as u64 + s, *lmax);
                    assert!((vcs_total_norm(&l, seq, trunc()).unwrap() - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn mixture_examples() {
        let fam = DiscreteFamily::poisson(64);
        let mix = MixtureDistribution::new(fam.clone(), vec![1.0, 2.0], None).unwrap();
        let want = ((-1f64).exp() + (-2f64).exp()) / 2.0;
        assert!((mixture_pmf(&mix, 0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.251607).abs() < 1e-6);
        let same = MixtureDistribution::new(fam.clone(), vec![1.5; 3], None).unwrap();
        assert!((mixture_pmf(&same, 4).unwrap() - pmf_poisson(4, 1.5).unwrap()).abs() < 1e-15);
        let deg = MixtureDistribution::new(fam.clone(), vec![1.0, 2.0], Some(vec![1.0, 0.0])).unwrap();
        assert_eq!(mixture_pmf(&deg, 3).unwrap(), pmf_poisson(3, 1.0).unwrap());
        assert!(MixtureDistribution::new(fam, vec![1.0, 2.0], Some(vec![0.5, 0.6])).is_err());
    }

    #[test]
    fn partial_trace_identities() {
        let seq = FactorialSequence::poisson(256);
        let fam = DiscreteFamily::poisson(256);
        let l = random_label(3, 77, 3.0);
        for n in 0..6 {
            let p = partial_trace_prob(&l, n, &seq, trunc()).unwrap();
            let c = partial_trace_closed_form(&l, n, &seq, trunc()).unwrap();
            assert!((&p - &c).iter().all(|v| v.norm() < 1e-14));
            let lams: Vec<f64> = l.labels().iter().map(|x| x.lambda).collect();
            let mix = MixtureDistribution::new(fam.clone(), lams.clone(), None).unwrap();
            assert!((p.trace() - mixture_pmf(&mix, n).unwrap()).norm() < 1e-12);
            let prod: f64 = lams.iter().map(|&x| pmf_poisson(n, x).unwrap()).product();
            let lu = (p * Complex64::new(3.0, 0.0)).determinant();
            assert!((lu - prod).norm() <= 1e-8 * prod);
            let det = partial_trace_det(&l, n, &seq, trunc()).unwrap();
            assert!((det - prod).abs() <= 1e-10 * prod);
            let mut eig: Vec<f64> = SymmetricEigen::new(c.clone()).eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = lams.iter().map(|&x| pmf_poisson(n, x).unwrap() / 3.0).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let d = NormalMatrixLabel::diagonal(vec![CSLabel::new(1.0, 0.0).unwrap(), CSLabel::new(2.0, 0.0).unwrap()]).unwrap();
        let p = partial_trace_prob(&d, 1, &seq, trunc()).unwrap();
        assert!((p[(0, 0)].re - pmf_poisson(1, 1.0).unwrap() / 2.0).abs() < 1e-15);
        assert!(p[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn determinant_survives_wide_eigenvalue_spread() {
        let seq = FactorialSequence::poisson(256);
        let fam = DiscreteFamily::poisson(256);
        let u = haar_unitary(3, 4).unwrap();
        let lams = [0.004, 2.0, 4.9];
        let l = NormalMatrixLabel::new(u, lams.iter().map(|&x| CSLabel::new(x, 0.7).unwrap()).collect()).unwrap();
        for n in 0..4 {
            let prod: f64 = lams.iter().map(|&x| fam.pmf(n, x).unwrap()).product();
            let det = partial_trace_det(&l, n, &seq, trunc()).unwrap();
            assert!(((det - prod) / prod).abs() < 1e-12, "n={n}: {det} vs {prod}");
        }
    }

    #[test]
    fn unitary_covariance() {
        let seq = FactorialSequence::poisson(256);
        let l = random_label(3, 5, 2.0);
        let v = haar_unitary(3, 99).unwrap();
        let r = l.rotated(&v).unwrap();
        for n in 0..4 {
            let a = partial_trace_prob(&l, n, &seq, trunc()).unwrap();
            let b = partial_trace_prob(&r, n, &seq, trunc()).unwrap();
            assert!((a.trace() - b.trace()).norm() < 1e-12);
            assert!((a.determinant() - b.determinant()).norm() < 1e-12);
        }
    }

    #[test]
    fn orthogonality_mc() {
        let seq = FactorialSequence::poisson(64);
        let mu = RadialMeasure::canonical(&seq).unwrap();
        let e00 = matrix_orthogonality_mc(0, 0, &seq, &mu, 2, 100, 1, Exec::default()).unwrap();
        let id = CMatrix::identity(2, 2);
        assert!((&e00.mean - &id).iter().all(|v| v.norm() < 1e-12));
        let e10 = matrix_orthogonality_mc(1, 0, &seq, &mu, 2, 10_000, 7, Exec::default()).unwrap();
        assert!(e10.band_excess(&CMatrix::zeros(2, 2), 3.0, 1e-12) <= 0.0);
        assert!(e10.se.iter().all(|s| *s > 0.0));
        let e11 = matrix_orthogonality_mc(1, 1, &seq, &mu, 2, 1000, 7, Exec::default()).unwrap();
        assert!((&e11.mean - &id).iter().all(|v| v.norm() < 1e-2));
    }

    #[test]
    fn orthogonality_mc_is_exec_independent() {
        let seq = FactorialSequence::su2(5);
        let mu = RadialMeasure::canonical(&seq).unwrap();
        let a = matrix_orthogonality_mc(2, 1, &seq, &mu, 3, 1000, 42, Exec::Sequential).unwrap();
        let b = matrix_orthogonality_mc(2, 1, &seq, &mu, 3, 1000, 42, Exec::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tensor_examples() {
        let seq = FactorialSequence::poisson(256);
        let l1 = CSLabel::new(1.0, 0.2).unwrap();
        let t = tensor_cs(&[l1], &seq, trunc()).unwrap();
        assert_eq!(t.factors[0], cs_nonlinear(&seq, l1, trunc()).unwrap());
        let labels = [l1, CSLabel::new(0.5, 1.0).unwrap(), CSLabel::new(2.0, 3.0).unwrap()];
        assert!((tensor_cs(&labels, &seq, trunc()).unwrap().norm_sqr() - 1.0).abs() < 1e-10);

        let t2 = tensor_cs(&labels[..2], &seq, trunc()).unwrap();
        let e = t2.entry(&[2, 3]).unwrap();
        assert!((e - t2.factors[0].coeffs[2] * t2.factors[1].coeffs[3]).norm() < 1e-14);

        let one = CSLabel::new(1.0, 0.0).unwrap();
        let t = tensor_cs(&[one, one], &seq, trunc()).unwrap();
        assert!((joint_prob(&t, &[0, 0]).unwrap() - (-2f64).exp()).abs() < 1e-15);
        let t = tensor_cs(&[one, CSLabel::new(0.0, 0.0).unwrap()], &seq, trunc()).unwrap();
        assert_eq!(joint_prob(&t, &[3, 2]).unwrap(), 0.0);
        assert!(matches!(joint_prob(&t, &[300, 0]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn tensor_materialization_cap() {
        let seq = FactorialSequence::poisson(256);
        let small = SeriesTruncation::new(32, 1e-12).unwrap();
        let one = CSLabel::new(1.0, 0.5).unwrap();
        let t = tensor_cs(&[one, one], &seq, small).unwrap();
        let dense = t.materialize().unwrap();
        assert_eq!(dense.len(), 33 * 33);
        let total: f64 = dense.iter().map(|c| c.norm_sqr()).sum();
        assert!((total - 1.0).abs() < 1e-8);
        assert!(matches!(tensor_cs(&[one; 5], &seq, small).unwrap().materialize(), Err(Error::SizeLimit { .. })));
        let big = tensor_cs(&[one, one], &seq, trunc()).unwrap();
        assert!(matches!(big.materialize(), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn joint_prob_factorizes() {
        let seq = FactorialSequence::poisson(256);
        let labels = [CSLabel::new(0.7, 0.1).unwrap(), CSLabel::new(2.2, 2.0).unwrap(), CSLabel::new(1.1, 4.0).unwrap()];
        let t = tensor_cs(&labels, &seq, trunc()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let ns: Vec<usize> = (0..3).map(|_| rng.gen_range(0..12)).collect();
            let want: f64 = ns.iter().zip(&labels).map(|(&n, l)| pmf_poisson(n, l.lambda).unwrap()).product();
            assert!((joint_prob(&t, &ns).unwrap() - want).abs() < 1e-12);
        }
    }

    fn max_abs(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label_strategy(lmax: f64) -> impl Strategy<Value = (Vec<(f64, f64)>, u64)> {
            (prop::collection::vec((0.05f64..lmax, 0.0f64..TAU), 1..=4), any::<u64>())
        }

        fn build(points: &[(f64, f64)], seed: u64) -> NormalMatrixLabel {
            let labels = points.iter().map(|&(l, t)| CSLabel::new(l, t).unwrap()).collect();
            NormalMatrixLabel::new(haar_unitary(points.len(), seed).unwrap(), labels).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn vcs_total_norm_is_one((points, seed) in label_strategy(6.0)) {
                let label = build(&points, seed);
                let seq = FactorialSequence::poisson(256);
                prop_assert!((vcs_total_norm(&label, &seq, trunc()).unwrap() - 1.0).abs() < 1e-10);
            }

            #[test]
            fn su2_vcs_total_norm_is_one((points, seed) in label_strategy(10.0), n in 1usize..12) {
                let label = build(&points, seed);
                let seq = FactorialSequence::su2(n);
                prop_assert!((vcs_total_norm(&label, &seq, trunc()).unwrap() - 1.0).abs() < 1e-10);
            }

            #[test]
            fn kernel_is_unitarily_covariant((points, seed) in label_strategy(3.0), vseed in any::<u64>()) {
                let a = build(&points, seed);
                let v = haar_unitary(a.dim(), vseed).unwrap();
                let b = a.rotated(&v).unwrap();
                let seq = FactorialSequence::poisson(256);
                let k = matrix_kernel(&a, &a, &seq, trunc()).unwrap();
                let kv = matrix_kernel(&b, &b, &seq, trunc()).unwrap();
                let scale = k.iter().map(|c| c.norm()).fold(1.0, f64::max);
                prop_assert!(max_abs(&kv, &(&v * k * v.adjoint())) < 1e-11 * scale);
            }

            #[test]
            fn partial_trace_matches_closed_form((points, seed) in label_strategy(4.0), n in 0usize..10) {
                let label = build(&points, seed);
                let seq = FactorialSequence::poisson(256);
                let p = partial_trace_prob(&label, n, &seq, trunc()).unwrap();
                let exact = partial_trace_closed_form(&label, n, &seq, trunc()).unwrap();
                prop_assert!(max_abs(&p, &exact) < 1e-13);
                let mean: f64 = points.iter().map(|&(l, _)| pmf_poisson(n, l).unwrap()).sum::<f64>() / points.len() as f64;
                prop_assert!((p.trace().re - mean).abs() < 1e-13);
            }

            #[test]
            fn tensor_probability_factorizes(points in prop::collection::vec((0.05f64..5.0, 0.0f64..TAU), 1..=5), ns in prop::collection::vec(0usize..15, 5)) {
                let labels: Vec<CSLabel> = points.iter().map(|&(l, t)| CSLabel::new(l, t).unwrap()).collect();
                let t = tensor_cs(&labels, &FactorialSequence::poisson(256), trunc()).unwrap();
                let ns = &ns[..labels.len()];
                let want: f64 = ns.iter().zip(&points).map(|(&n, &(l, _))| pmf_poisson(n, l).unwrap()).product();
                prop_assert!((joint_prob(&t, ns).unwrap() - want).abs() <= 1e-13 * want.max(1e-3));
                prop_assert!((t.norm_sqr() - 1.0).abs() < 1e-10);
            }
        }
    }
}
