//! Simulated experiments, grid posteriors and credible intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distfam::{posterior_density, DiscreteFamily, PosteriorDensity, PriorMeasure};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::roi::integrate_adaptive;

pub const GRID_POINTS: usize = 512;
/// Zoom in when the mode's half-width covers fewer cells than this.
const MIN_MODE_CELLS: f64 = 8.0;
/// Half-width of the grid window in posterior standard deviations.
const WINDOW_SD: f64 = 20.0;
/// Mass allowed beyond the grid on a half-line support.
const UPPER_TAIL: f64 = 1e-9;
const FWHM_PER_SD: f64 = 1.177_410_022_515_474_6;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub family: DiscreteFamily,
    pub true_param: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(family: DiscreteFamily, true_param: f64, seed: u64) -> Result<Self> {
        if family.is_finite() && family.n_max() < 1 {
            return Err(Error::OutOfRange("an experiment needs at least one trial".into()));
        }
        family.pmf(0, true_param)?;
        Ok(Self { family, true_param, seed })
    }

    /// `N` tosses of a coin with heads probability `p0`.
    pub fn coin(trials: usize, p0: f64, seed: u64) -> Result<Self> {
        Self::new(DiscreteFamily::binomial_p(trials), p0, seed)
    }

    pub fn trials(&self) -> Option<usize> {
        self.family.is_finite().then(|| self.family.n_max())
    }
}

fn pmf_table(config: &ExperimentConfig) -> Vec<f64> {
    // the parameter was validated, so only index errors can occur here
    (0..=config.family.n_max()).map(|n| config.family.pmf(n, config.true_param).unwrap_or(0.0)).collect()
}

fn draw(config: &ExperimentConfig, pmf: &[f64], stream: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let u: f64 = rng.gen();
    let mut cdf = 0.0;
    let mut last_positive = 0;
    for (n, &p) in pmf.iter().enumerate() {
        if p > 0.0 {
            last_positive = n;
        }
        cdf += p;
        if u < cdf {
            return n;
        }
    }
    last_positive
}

/// One observation by inverse CDF on the pmf.
pub fn simulate(config: &ExperimentConfig) -> usize {
    draw(config, &pmf_table(config), 0)
}

/// `count` observations; run `i` uses stream `i` of the seed, so entry 0
/// equals `simulate(config)`.
pub fn simulate_batch(config: &ExperimentConfig, count: usize, exec: Exec) -> Vec<usize> {
    let pmf = pmf_table(config);
    exec.map(count, |i| draw(config, &pmf, i as u64))
}

/// `k_obs / N`.
pub fn point_estimate(k_obs: usize, trials: usize) -> Result<f64> {
    if trials == 0 || k_obs > trials {
        return Err(Error::OutOfRange(format!("k_obs = {k_obs} with N = {trials}")));
    }
    Ok(k_obs as f64 / trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CredibleInterval {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Tabulated posterior. `cdf` includes any mass left of the grid.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub family: String,
    pub prior: String,
    pub n_obs: usize,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Posterior mean.
    pub point_estimate: f64,
    pub mode: f64,
    pub credible_interval: CredibleInterval,
}

impl PosteriorSummary {
    /// Linear interpolation of the tabulated CDF.
    pub fn cdf_at(&self, x: f64) -> f64 {
        interp(&self.grid, &self.cdf, x)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        interp(&self.cdf, &self.grid, q)
    }

    /// `lambda,density,cdf` with a header row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "density", "cdf"])?;
        for i in 0..self.grid.len() {
            w.write_record([fmt17(self.grid[i]), fmt17(self.density[i]), fmt17(self.cdf[i])])?;
        }
        w.flush()
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Piecewise-linear `y(x)` for nondecreasing `xs`, clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|v| *v <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    if x1 == x0 {
        return ys[i];
    }
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

fn grid_window(post: &PosteriorDensity) -> Result<(f64, f64, f64)> {
    let sup = post.support();
    let mean = post.integrate(|l| l)?;
    let var = post.integrate(|l| (l - mean) * (l - mean))?.max(0.0);
    let sd = var.sqrt();
    let (mut lo, mut hi) = (sup.lo, sup.hi);
    let bounded = hi.is_finite();
    if !bounded {
        hi = mean + WINDOW_SD * sd.max(f64::MIN_POSITIVE);
        // heavy-tailed posteriors need a wider cut than the sd rule gives
        for _ in 0..60 {
            if integrate_adaptive(|l| post.pdf(l), hi, f64::INFINITY, 1e-8)? <= UPPER_TAIL {
                break;
            }
            hi *= 2.0;
        }
    }
    let h = (hi - lo) / (GRID_POINTS - 1) as f64;
    if FWHM_PER_SD * sd < MIN_MODE_CELLS * h && sd > 0.0 {
        lo = lo.max(mean - WINDOW_SD * sd);
        if bounded {
            hi = hi.min(mean + WINDOW_SD * sd);
        }
    }
    Ok((lo, hi, mean))
}

/// Posterior of `family`'s parameter after observing `k_obs` under `prior`,
/// on a 512-point grid, with the central interval of the requested mass.
pub fn posterior_summary(
    family: &DiscreteFamily,
    prior: &PriorMeasure,
    k_obs: usize,
    mass: f64,
) -> Result<PosteriorSummary> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::OutOfRange(format!("credible mass {mass} must lie in (0, 1)")));
    }
    let post = posterior_density(family, prior, k_obs)?;
    let (lo, hi, mean) = grid_window(&post)?;
    let m = GRID_POINTS;
    let h = (hi - lo) / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|i| if i == m - 1 { hi } else { lo + h * i as f64 }).collect();
    let density: Vec<f64> = grid.iter().map(|&l| post.pdf(l)).collect();

    let left = if lo > post.support().lo {
        integrate_adaptive(|l| post.pdf(l), post.support().lo, lo, 1e-10)?
    } else {
        0.0
    };
    let mut cdf = Vec::with_capacity(m);
    let mut acc = left;
    cdf.push(acc);
    for w in grid.windows(2) {
        acc += integrate_adaptive(|l| post.pdf(l), w[0], w[1], 1e-10)?;
        cdf.push(acc);
    }
    // rounding can push a flat tail a hair past 1; the CDF must stay monotone
    for c in cdf.iter_mut() {
        *c = c.min(1.0);
    }

    let mode = grid[density.iter().enumerate().fold(0, |b, (i, d)| if *d > density[b] { i } else { b })];
    let tail = (1.0 - mass) / 2.0;
    let ci_lo = interp(&cdf, &grid, tail);
    let ci_hi = interp(&cdf, &grid, 1.0 - tail);
    let summary = PosteriorSummary {
        family: family.name(),
        prior: prior.name().to_string(),
        n_obs: k_obs,
        grid,
        density,
        cdf,
        point_estimate: mean,
        mode,
        credible_interval: CredibleInterval { lo: ci_lo, hi: ci_hi, mass },
    };
    Ok(summary)
}
