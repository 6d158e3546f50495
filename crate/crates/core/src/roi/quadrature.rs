//! Gaussian rules and an adaptive Gauss–Kronrod integrator.
//!
//! Semi-infinite integrals use Gauss–Laguerre when the integrand carries an
//! `e^{-λ}` factor and the rational map `λ = t/(1-t)` onto Gauss–Legendre
//! otherwise.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_factorial, CompensatedSum};

/// Closed interval `[lo, hi]`; `hi` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || !lo.is_finite() || lo >= hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub const fn half_line() -> Self {
        Self { lo: 0.0, hi: f64::INFINITY }
    }

    pub const fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.lo >= self.lo && other.hi <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.hi.is_finite()
    }
}

/// What a rule's weights integrate against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainTag {
    /// Plain `∫_a^b f`.
    Bounded { a: f64, b: f64 },
    /// `∫_0^∞ f(λ) e^{-λ} dλ`.
    Laguerre,
    /// Plain `∫_0^∞ f`, weights carry `e^{λ}` or the map Jacobian.
    SemiInfinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: DomainTag,
    /// Highest polynomial degree integrated exactly (in the rule's native variable).
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let s: CompensatedSum = self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).collect();
        s.value()
    }

    /// Largest relative error over the rule's design-degree monomial family.
    ///
    /// Bounded rules integrate `x^k`; Laguerre-weighted rules `x^k e^{-x}`
    /// (exact value `k!`); folded/mapped semi-infinite rules
    /// `λ^k / (1+λ)^{k+2}` (exact value `1/(k+1)`), which is a polynomial in
    /// the mapped variable.
    pub fn monomial_residual(&self, max_degree: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..=max_degree {
            let kf = k as i32;
            let (approx, exact) = match self.domain {
                DomainTag::Bounded { a, b } => (
                    self.integrate(|x| x.powi(kf)),
                    (b.powi(kf + 1) - a.powi(kf + 1)) / (k as f64 + 1.0),
                ),
                DomainTag::Laguerre => (self.integrate(|x| x.powi(kf)), ln_factorial(k as u64).exp()),
                DomainTag::SemiInfinite => (
                    self.integrate(|x| (x / (1.0 + x)).powi(kf) / (1.0 + x).powi(2)),
                    1.0 / (k as f64 + 1.0),
                ),
            };
            worst = worst.max(((approx - exact) / exact).abs());
        }
        worst
    }
}

/// `n`-point Gauss–Legendre rule on `[a, b]`, exact through degree `2n - 1`.
pub fn gauss_legendre(a: f64, b: f64, n: usize) -> Result<QuadratureRule> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInterval { lo: a, hi: b });
    }
    if n == 0 {
        return Err(Error::InvalidInput("quadrature needs at least one node".into()));
    }
    let (x, w) = legendre_reference(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    Ok(QuadratureRule {
        nodes: x.iter().map(|t| mid + half * t).collect(),
        weights: w.iter().map(|w| half * w).collect(),
        domain: DomainTag::Bounded { a, b },
        degree: 2 * n - 1,
    })
}

/// Nodes and weights on `[-1, 1]`, ascending.
fn legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_eval(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_eval(n, z);
                dp = d;
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre_eval(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// `n`-point Gauss–Laguerre rule for `∫_0^∞ f(λ) e^{-λ} dλ`.
///
/// Golub–Welsch eigenvalues seed a Newton polish on `L_n`; weights come from
/// `w_i = x_i / ((n+1)^2 L_{n+1}(x_i)^2)`, which keeps full relative accuracy
/// for the tiny weights at large nodes.
pub fn gauss_laguerre(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidInput("quadrature needs at least one node".into()));
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 * i as f64 + 1.0
        } else if i + 1 == j || j + 1 == i {
            i.max(j) as f64
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    guesses.sort_by(f64::total_cmp);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    // the f64 recurrence leaves ~1e-14 relative error in small nodes, so the
    // polish runs in double-double
    for guess in guesses {
        let mut x = Dd::from(guess);
        for _ in 0..60 {
            let (ln, lnm1) = laguerre_pair_dd(n, x);
            // L_n' = n (L_n - L_{n-1}) / x
            let d = (ln - lnm1).mul_f64(n as f64) / x;
            let dx = ln / d;
            x = x - dx;
            if dx.hi.abs() <= 1e-30 * x.hi.abs() {
                break;
            }
        }
        let (lnp1, _) = laguerre_pair_dd(n + 1, x);
        let np1 = Dd::from((n + 1) as f64);
        let w = x / (np1 * np1 * lnp1 * lnp1);
        nodes.push(x.hi);
        weights.push(w.hi);
    }
    Ok(QuadratureRule { nodes, weights, domain: DomainTag::Laguerre, degree: 2 * n - 1 })
}

/// `(L_n(x), L_{n-1}(x))`.
fn laguerre_pair_dd(n: usize, x: Dd) -> (Dd, Dd) {
    let one = Dd::from(1.0);
    if n == 0 {
        return (one, Dd::from(0.0));
    }
    let mut prev = one;
    let mut cur = one - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((Dd::from(2.0 * kf + 1.0) - x) * cur - prev.mul_f64(kf)) / Dd::from(kf + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Unevaluated sum `hi + lo` carrying about 32 significant digits.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    fn mul_f64(self, b: f64) -> Dd {
        let p = self.hi * b;
        let e = self.hi.mul_add(b, -p);
        quick_two_sum(p, e + self.lo * b)
    }
}

impl std::ops::Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        quick_two_sum(s, e + self.lo + o.lo)
    }
}

impl std::ops::Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + Dd { hi: -o.hi, lo: -o.lo }
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi)
    }
}

impl std::ops::Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o.mul_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o.mul_f64(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + Dd::from(q3)
    }
}

/// Gauss–Laguerre with `e^{λ}` folded into the weights, for plain `∫_0^∞ f`.
pub fn gauss_laguerre_folded(n: usize) -> Result<QuadratureRule> {
    let mut r = gauss_laguerre(n)?;
    for (w, x) in r.weights.iter_mut().zip(&r.nodes) {
        *w *= x.exp();
    }
    r.domain = DomainTag::SemiInfinite;
    Ok(r)
}

/// Gauss–Legendre on `t ∈ (0,1)` pushed through `λ = t/(1-t)`, for plain
/// `∫_0^∞ f`. Exact when `f(λ)(1+λ)^{-2}`-weighted integrands are
/// polynomials in `t` of degree `2n - 1`.
pub fn gauss_rational_map(n: usize) -> Result<QuadratureRule> {
    let base = gauss_legendre(0.0, 1.0, n)?;
    let nodes = base.nodes.iter().map(|t| t / (1.0 - t)).collect();
    let weights = base.nodes.iter().zip(&base.weights).map(|(t, w)| w / ((1.0 - t) * (1.0 - t))).collect();
    Ok(QuadratureRule { nodes, weights, domain: DomainTag::SemiInfinite, degree: base.degree })
}

/// Equispaced trapezoid nodes on `[0, 2π)`; exact for trigonometric
/// polynomials of degree below `n`.
pub fn angular_trapezoid(n: usize) -> QuadratureRule {
    let h = 2.0 * PI / n as f64;
    QuadratureRule {
        nodes: (0..n).map(|j| j as f64 * h).collect(),
        weights: vec![h; n],
        domain: DomainTag::Bounded { a: 0.0, b: 2.0 * PI },
        degree: n.saturating_sub(1),
    }
}

// Gauss–Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64, bool) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut finite = fc.is_finite();
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let (f1, f2) = (f(c - dx), f(c + dx));
        finite &= f1.is_finite() && f2.is_finite();
        k += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs(), finite)
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err.total_cmp(&o.err) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

const MAX_PANELS: usize = 20_000;
const GEOMETRIC_PANELS: i32 = 20;

/// Globally adaptive Gauss–Kronrod integration of `f` over `[lo, hi]`
/// (`hi` may be `+∞`) to relative tolerance `rel_tol`.
///
/// Semi-infinite ranges start from geometric panels `[lo+2^{k-1}, lo+2^k]`
/// plus a mapped tail so that narrow peaks far from the origin are seen by
/// the first sweep.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    if !(lo < hi) || !lo.is_finite() {
        return Err(Error::InvalidInterval { lo, hi });
    }
    if hi.is_finite() {
        let edges: Vec<f64> = (0..=16).map(|i| lo + (hi - lo) * i as f64 / 16.0).collect();
        adaptive_core(&mut |x| f(x), &edges, rel_tol)
    } else {
        let mut edges = vec![0.0, 1.0];
        for k in 1..=GEOMETRIC_PANELS {
            edges.push(2f64.powi(k));
        }
        let far = *edges.last().unwrap();
        let near = adaptive_core(&mut |x| f(lo + x), &edges, rel_tol)?;
        // tail: λ = lo + far + t/(1-t)
        let tail = adaptive_core(
            &mut |t: f64| {
                let s = 1.0 - t;
                let v = f(lo + far + t / s);
                if v == 0.0 {
                    0.0
                } else {
                    v / (s * s)
                }
            },
            &[0.0, 0.25, 0.5, 0.75, 1.0],
            rel_tol,
        )?;
        Ok(near + tail)
    }
}

fn adaptive_core(f: &mut impl FnMut(f64) -> f64, edges: &[f64], rel_tol: f64) -> Result<f64> {
    let mut heap = BinaryHeap::new();
    let (mut total, mut err) = (0.0, 0.0);
    for w in edges.windows(2) {
        let (value, e, ok) = gk15(f, w[0], w[1]);
        if !ok {
            return Err(Error::DivergentIntegral(format!("non-finite integrand on [{}, {}]", w[0], w[1])));
        }
        total += value;
        err += e;
        heap.push(Panel { a: w[0], b: w[1], value, err: e });
    }
    let mut steps = 0usize;
    loop {
        steps += 1;
        if steps.is_multiple_of(256) {
            // running sums drift; refresh them
            total = heap.iter().map(|p| p.value).sum();
            err = heap.iter().map(|p| p.err).sum();
        }
        if err <= rel_tol * total.abs() || err < 1e-300 {
            let s: CompensatedSum = heap.iter().map(|p| p.value).collect();
            return Ok(s.value());
        }
        if heap.len() >= MAX_PANELS {
            return Err(Error::DivergentIntegral(format!(
                "no convergence after {MAX_PANELS} panels (estimate {total:e}, error {err:e})"
            )));
        }
        let worst = heap.pop().expect("non-empty");
        total -= worst.value;
        err -= worst.err;
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::DivergentIntegral("panel width underflow".into()));
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, e, ok) = gk15(f, a, b);
            if !ok {
                return Err(Error::DivergentIntegral(format!("non-finite integrand on [{a}, {b}]")));
            }
            total += value;
            err += e;
            heap.push(Panel { a, b, value, err: e });
        }
    }
}
