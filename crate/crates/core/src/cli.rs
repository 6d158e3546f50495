//! Command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage
//! or input errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::{json, Map, Value};

use crate::bayeslab::posterior_summary;
use crate::cstates::CSLabel;
use crate::distfam::{check_convergence, closed_form_c, DiscreteFamily, DualPair, FamilySpec, PriorMeasure};
use crate::error::Error;
use crate::matrixcs::{
    haar_unitary, joint_prob, matrix_orthogonality_mc, mixture_pmf, partial_trace_det, partial_trace_prob, tensor_cs, vcs_total_norm,
    CMatrix, MixtureDistribution, NormalMatrixLabel,
};
use crate::par::Exec;
use crate::report::{sig6, Check, RunReport};
use crate::roi::{gram_matrix, gram_residual, moment_check, roi_check_direct, Grid2D, RadialMeasure};
use crate::seqcore::{FactorialSequence, SeriesTruncation, DEFAULT_NMAX};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const NMAX_ENV: &str = "CSDUALITY_NMAX";

#[derive(Debug, Parser)]
#[command(name = "csduality", version, about = "Coherent states from dual pairs of distributions")]
struct Cli {
    /// Root seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print the JSON report instead of a table.
    #[arg(long, global = true)]
    json: bool,
    /// Also write report.json (and any data files) into DIR.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate or tabulate a family.
    Family(FamilyArgs),
    /// Run moment, Gram, resolution-of-identity and duality checks.
    Verify(VerifyArgs),
    /// Grid posterior and central credible interval.
    Posterior(PosteriorArgs),
    /// Vector coherent states over normal matrices.
    Vcs(VcsArgs),
    /// Tensor-product coherent states.
    Tensor(TensorArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["eval", "table"]))]
struct FamilyArgs {
    /// JSON spec file, or shorthand such as `poisson`, `binomial:N=4`, `negbinomial:m=2`.
    spec: String,
    /// P(n, λ) at one point.
    #[arg(long, num_args = 2, value_names = ["N", "LAMBDA"])]
    eval: Option<Vec<String>>,
    /// Table over n = 0..=rows and the given λ values.
    #[arg(long)]
    table: bool,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    /// Evaluate the continuous dual Ψ_n(λ) instead of the pmf.
    #[arg(long)]
    dual: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Moments,
    Gram,
    Roi,
    Duality,
    All,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    spec: String,
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Override every suite's tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct PosteriorArgs {
    spec: String,
    #[arg(long)]
    obs: usize,
    #[arg(long, default_value_t = 0.95)]
    mass: f64,
    /// CSV file for the tabulated posterior.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeqArgs {
    /// poisson, su2 (alias binomial) or su11 (alias negbinomial).
    #[arg(long, default_value = "poisson")]
    family: String,
    /// N for su2, m for su11.
    #[arg(long)]
    param: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    /// Defaults to all zeros.
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct VcsArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[command(flatten)]
    seq: SeqArgs,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Orthogonality is checked for all m, n <= this.
    #[arg(long, default_value_t = 2)]
    max_order: usize,
}

#[derive(Debug, Args)]
struct TensorArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Levels kept per factor.
    #[arg(long, default_value_t = 32)]
    nmax: usize,
    /// Occupation numbers for a joint probability.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Parse { line: usize, column: usize, msg: String },
    Input(Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Parse { line, column, msg } => write!(f, "ParseError at line {line}, column {column}: {msg}"),
            CliError::Input(e) => write!(f, "{}: {e}", error_name(e)),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Input(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn error_name(e: &Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Output of one subcommand before it is printed.
struct Outcome {
    report: RunReport,
    human: String,
    files: Vec<(String, Vec<u8>)>,
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
            let text = e.render().to_string();
            let _ = if code == EXIT_PASS { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let echo: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, echo) {
        Ok(out) => {
            let json = out.report.to_json();
            if let Some(dir) = &cli.out {
                if let Err(e) = write_outputs(dir, &json, &out.files) {
                    let _ = writeln!(stderr, "error: {e}");
                    return EXIT_INPUT;
                }
            }
            let text = if cli.json { json } else { out.human };
            if stdout.write_all(text.as_bytes()).is_err() {
                return EXIT_INPUT;
            }
            if out.report.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn write_outputs(dir: &Path, json: &str, files: &[(String, Vec<u8>)]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), json)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn default_nmax() -> CliResult<usize> {
    match std::env::var(NMAX_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| CliError::Usage(format!("{NMAX_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(DEFAULT_NMAX),
    }
}

/// Loaded spec plus the raw bytes that go into the digest.
struct LoadedSpec {
    spec: FamilySpec,
    raw: Vec<u8>,
}

fn load_spec(arg: &str) -> CliResult<LoadedSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        let raw = std::fs::read(path)?;
        let spec = serde_json::from_slice(&raw).map_err(|e| CliError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        return Ok(LoadedSpec { spec, raw });
    }
    if arg.ends_with(".json") {
        return Err(CliError::Usage(format!("spec file '{arg}' not found")));
    }
    let (name, rest) = arg.split_once(':').unwrap_or((arg, ""));
    let mut params = Map::new();
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value in '{kv}'")))?;
        let value = match v.parse::<u64>() {
            Ok(n) => Value::from(n),
            Err(_) => Value::from(v),
        };
        params.insert(k.to_string(), value);
    }
    let spec = FamilySpec { family: name.to_string(), params, prior: None };
    Ok(LoadedSpec { spec, raw: arg.as_bytes().to_vec() })
}

fn execute(cli: &Cli, echo: Vec<String>) -> CliResult<Outcome> {
    let nmax = default_nmax()?;
    let nmax_bytes = nmax.to_string();
    let out = match &cli.command {
        Command::Family(a) => {
            let s = load_spec(&a.spec)?;
            let mut rep = RunReport::new(echo, &[&s.raw, nmax_bytes.as_bytes()], cli.seed);
            let (results, human) = cmd_family(a, &s.spec, nmax)?;
            rep.results = results;
            Outcome { report: rep, human, files: vec![] }
        }
        Command::Verify(a) => {
            let s = load_spec(&a.spec)?;
            let mut rep = RunReport::new(echo, &[&s.raw, nmax_bytes.as_bytes()], cli.seed);
            let human = cmd_verify(a, &s.spec, nmax, &mut rep)?;
            Outcome { report: rep, human, files: vec![] }
        }
        Command::Posterior(a) => {
            let s = load_spec(&a.spec)?;
            let mut rep = RunReport::new(echo, &[&s.raw, nmax_bytes.as_bytes()], cli.seed);
            let (human, csv) = cmd_posterior(a, &s.spec, nmax, &mut rep)?;
            if let Some(p) = &a.csv {
                std::fs::write(p, &csv)?;
            }
            Outcome { report: rep, human, files: vec![("posterior.csv".into(), csv)] }
        }
        Command::Vcs(a) => {
            let mut rep = RunReport::new(echo, &[nmax_bytes.as_bytes()], cli.seed);
            let human = cmd_vcs(a, nmax, cli.seed, &mut rep)?;
            Outcome { report: rep, human, files: vec![] }
        }
        Command::Tensor(a) => {
            let mut rep = RunReport::new(echo, &[nmax_bytes.as_bytes()], cli.seed);
            let human = cmd_tensor(a, nmax, &mut rep)?;
            Outcome { report: rep, human, files: vec![] }
        }
    };
    Ok(out)
}

fn probe_lambdas(family: &DiscreteFamily) -> Vec<f64> {
    let iv = family.param_interval();
    if iv.is_bounded() {
        [0.25, 0.5, 0.75].iter().map(|t| iv.lo + t * (iv.hi - iv.lo)).collect()
    } else {
        vec![0.5, 1.0, 2.0, 4.0]
    }
}

fn cmd_family(a: &FamilyArgs, spec: &FamilySpec, nmax: usize) -> CliResult<(Value, String)> {
    let (family, prior) = if a.dual {
        let (f, p) = spec.build(nmax)?;
        (f, Some(p))
    } else {
        (spec.build_family(nmax)?, None)
    };
    let pair = match prior {
        Some(p) => Some(DualPair::new(family.clone(), p, Exec::default())?),
        None => None,
    };
    let eval = |n: usize, l: f64| -> crate::Result<f64> {
        match &pair {
            Some(p) => p.dual.pdf(n, l),
            None => family.pmf(n, l),
        }
    };
    let what = if a.dual { "dual density" } else { "pmf" };
    if let Some(ev) = &a.eval {
        let n: usize = ev[0].parse().map_err(|_| CliError::Usage(format!("bad index '{}'", ev[0])))?;
        let l: f64 = ev[1].parse().map_err(|_| CliError::Usage(format!("bad lambda '{}'", ev[1])))?;
        let v = eval(n, l)?;
        let results = json!({"family": family.name(), "quantity": what, "n": n, "lambda": l, "value": v});
        return Ok((results, format!("{} {what} n={n} lambda={} : {}\n", family.name(), sig6(l), sig6(v))));
    }
    let lambdas = a.lambdas.clone().unwrap_or_else(|| probe_lambdas(&family));
    let rows = if family.is_finite() { a.rows.min(family.n_max()) } else { a.rows };
    let mut table = Vec::new();
    let mut human = format!("{} {what}\n{:>5}", family.name(), "n");
    for l in &lambdas {
        let _ = write!(human, " {:>12}", format!("l={}", sig6(*l)));
    }
    human.push('\n');
    for n in 0..=rows {
        let row: Vec<f64> = lambdas.iter().map(|&l| eval(n, l)).collect::<crate::Result<_>>()?;
        let _ = write!(human, "{n:>5}");
        for v in &row {
            let _ = write!(human, " {:>12}", sig6(*v));
        }
        human.push('\n');
        table.push(row);
    }
    let results = json!({"family": family.name(), "quantity": what, "lambdas": lambdas, "table": table});
    Ok((results, human))
}

fn suite_tol(a: &VerifyArgs, default: f64) -> f64 {
    a.tol.unwrap_or(default)
}

fn cmd_verify(a: &VerifyArgs, spec: &FamilySpec, nmax: usize, rep: &mut RunReport) -> CliResult<String> {
    let (family, prior) = spec.build(nmax)?;
    let size = if family.is_finite() { a.size.min(family.n_max() + 1) } else { a.size };
    if size == 0 {
        return Err(CliError::Usage("--size must be at least 1".into()));
    }
    let want = |s: Suite| a.suite == Suite::All || a.suite == s;
    let mut results = Map::new();
    results.insert("family".into(), json!(family.name()));
    results.insert("prior".into(), json!(prior.name()));
    results.insert("size".into(), json!(size));

    if want(Suite::Moments) {
        let seq = family.sequence()?;
        let measure = RadialMeasure::canonical(&seq)?;
        let k_max = (2 * (size - 1)).min(seq.n_max());
        let m = moment_check(&seq, &measure, k_max)?;
        rep.push(Check::new("moments", m.max_residual(), suite_tol(a, 1e-9)));
        results.insert("moments".into(), serde_json::to_value(&m).expect("serializable"));
    }
    let needs_pair = [Suite::Gram, Suite::Roi, Suite::Duality].into_iter().any(want);
    if needs_pair {
        let pair = DualPair::new(family.clone(), prior.clone(), Exec::default())?;
        if want(Suite::Gram) {
            let g = gram_matrix(&pair, size)?;
            let diag: Vec<f64> = (0..size).map(|i| g[(i, i)]).collect();
            rep.push(Check::new("gram", gram_residual(&g), suite_tol(a, 1e-8)));
            results.insert("gram".into(), json!({"diagonal": diag}));
        }
        if want(Suite::Roi) {
            let d = roi_check_direct(&pair, size, Grid2D::default(), Exec::default())?;
            let g = gram_matrix(&pair, size)?;
            let mut agree: f64 = 0.0;
            for i in 0..size {
                for j in 0..size {
                    agree = agree.max((d.matrix[(i, j)] - Complex64::new(g[(i, j)], 0.0)).norm());
                }
            }
            rep.push(Check::new("roi_direct", d.residual, suite_tol(a, 1e-6)));
            rep.push(Check::new("roi_vs_gram", agree, suite_tol(a, 1e-6)));
            results.insert("roi".into(), json!({"grid": Grid2D::default(), "residual": d.residual, "gram_agreement": agree}));
        }
        if want(Suite::Duality) {
            let probes = probe_lambdas(&family);
            let cert = check_convergence(&family, &pair.c, &probes);
            let worst_tail = cert.samples.iter().map(|s| s.tail).fold(0.0, f64::max);
            rep.push(Check::new("duality_certificate", if cert.passed() { worst_tail } else { f64::INFINITY }, cert.tail_tol));
            let shown: Vec<f64> = pair.c.iter().take(size).copied().collect();
            let mut entry = json!({"c": shown, "certificate": cert.samples});
            if let Some(exact) = closed_form_c(&family, &prior) {
                let rel = pair.c.iter().zip(&exact).map(|(c, e)| ((c - e) / e).abs()).fold(0.0, f64::max);
                rep.push(Check::new("c_closed_form", rel, suite_tol(a, 1e-9)));
                entry["c_closed_form"] = json!(exact.iter().take(size).copied().collect::<Vec<_>>());
            }
            results.insert("duality".into(), entry);
        }
    }
    rep.results = Value::Object(results);

    let mut human = format!("verify {} (size {size})\n", family.name());
    if let Some(c) = rep.results.get("duality").and_then(|d| d.get("c")).and_then(|c| c.as_array()) {
        let cs: Vec<String> = c.iter().filter_map(|v| v.as_f64()).map(sig6).collect();
        let _ = writeln!(human, "c_n: {}", cs.join(", "));
    }
    human.push_str(&check_table(&rep.checks));
    let _ = writeln!(human, "{}", if rep.pass { "PASS" } else { "FAIL" });
    Ok(human)
}

fn check_table(checks: &[Check]) -> String {
    let mut s = format!("{:<22} {:>12} {:>12}  status\n", "check", "residual", "tol");
    for c in checks {
        let _ = writeln!(
            s,
            "{:<22} {:>12} {:>12}  {}",
            c.name,
            sig6(c.residual),
            sig6(c.tol),
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    s
}

fn cmd_posterior(a: &PosteriorArgs, spec: &FamilySpec, nmax: usize, rep: &mut RunReport) -> CliResult<(String, Vec<u8>)> {
    if !(a.mass > 0.0 && a.mass < 1.0) {
        return Err(CliError::Usage(format!("--mass must lie in (0, 1), got {}", a.mass)));
    }
    let (family, prior): (DiscreteFamily, PriorMeasure) = spec.build(nmax)?;
    let s = posterior_summary(&family, &prior, a.obs, a.mass)?;
    let total = *s.cdf.last().expect("grid is non-empty");
    rep.push(Check::new("normalization", (total - 1.0).abs(), 1e-6));
    let ci = s.credible_interval;
    let got = s.cdf_at(ci.hi) - s.cdf_at(ci.lo);
    rep.push(Check::new("interval_mass", (got - ci.mass).abs(), 1e-4));
    rep.results = json!({
        "family": s.family,
        "prior": s.prior,
        "n_obs": s.n_obs,
        "mean": s.point_estimate,
        "mode": s.mode,
        "credible_interval": ci,
        "grid": {"points": s.grid.len(), "lo": s.grid[0], "hi": s.grid[s.grid.len() - 1]},
    });
    let mut csv = Vec::new();
    s.write_csv(&mut csv)?;
    let mut human = format!("posterior {} after n = {} ({})\n", s.family, s.n_obs, s.prior);
    let _ = writeln!(human, "mean {}  mode {}", sig6(s.point_estimate), sig6(s.mode));
    let _ = writeln!(human, "{}% central interval [{}, {}]", sig6(100.0 * ci.mass), sig6(ci.lo), sig6(ci.hi));
    human.push_str(&check_table(&rep.checks));
    Ok((human, csv))
}

fn build_sequence(a: &SeqArgs, nmax: usize) -> CliResult<FactorialSequence> {
    let need = |what: &str| a.param.ok_or_else(|| CliError::Usage(format!("--param {what} is required for {}", a.family)));
    Ok(match a.family.as_str() {
        "poisson" => FactorialSequence::poisson(nmax),
        "su2" | "binomial" => FactorialSequence::su2(need("N")?),
        "su11" | "negbinomial" => FactorialSequence::su11(need("m")?, nmax)?,
        other => return Err(CliError::Usage(format!("unknown family '{other}'"))),
    })
}

fn build_labels(a: &SeqArgs, dim: usize) -> CliResult<Vec<CSLabel>> {
    if a.lambdas.len() != dim {
        return Err(CliError::Usage(format!("expected {dim} lambdas, got {}", a.lambdas.len())));
    }
    let thetas = a.thetas.clone().unwrap_or_else(|| vec![0.0; dim]);
    if thetas.len() != dim {
        return Err(CliError::Usage(format!("expected {dim} thetas, got {}", thetas.len())));
    }
    Ok(a.lambdas.iter().zip(&thetas).map(|(&l, &t)| CSLabel::new(l, t)).collect::<crate::Result<_>>()?)
}

/// Seed offset separating the label unitary from the Monte Carlo streams.
const LABEL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn cmd_vcs(a: &VcsArgs, nmax: usize, seed: u64, rep: &mut RunReport) -> CliResult<String> {
    if a.dim == 0 {
        return Err(CliError::Usage("--dim must be at least 1".into()));
    }
    if a.samples < 2 {
        return Err(CliError::Usage(format!("--samples must be at least 2, got {}", a.samples)));
    }
    let seq = build_sequence(&a.seq, nmax)?;
    let labels = build_labels(&a.seq, a.dim)?;
    let u = haar_unitary(a.dim, seed ^ LABEL_SEED_SALT)?;
    let label = NormalMatrixLabel::new(u, labels)?;
    let trunc = SeriesTruncation::default();
    let family = DiscreteFamily::from_nonlinear(seq.clone());

    let total = vcs_total_norm(&label, &seq, trunc)?;
    rep.push(Check::new("normalization", (total - 1.0).abs(), 1e-10));

    let lambdas: Vec<f64> = label.labels().iter().map(|l| l.lambda).collect();
    let mix = MixtureDistribution::new(family.clone(), lambdas.clone(), None)?;
    let levels = 6.min(seq.n_max() + 1);
    let (mut trace_res, mut det_res): (f64, f64) = (0.0, 0.0);
    let mut rows = Vec::new();
    for n in 0..levels {
        let p = partial_trace_prob(&label, n, &seq, trunc)?;
        let tr = p.trace();
        let mixp = mixture_pmf(&mix, n)?;
        let det = partial_trace_det(&label, n, &seq, trunc)?;
        let prod: f64 = lambdas.iter().map(|&l| family.pmf(n, l)).collect::<crate::Result<Vec<_>>>()?.iter().product();
        trace_res = trace_res.max((tr - mixp).norm());
        if prod > 0.0 {
            det_res = det_res.max(((det - prod) / prod).abs());
        } else {
            det_res = det_res.max(det.abs());
        }
        rows.push(json!({"n": n, "trace": tr.re, "mixture_pmf": mixp, "det": det, "product": prod}));
    }
    rep.push(Check::new("trace_identity", trace_res, 1e-12));
    rep.push(Check::new("determinant_identity", det_res, 1e-10));

    let measure = RadialMeasure::canonical(&seq)?;
    let mut mc_rows = Vec::new();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut max_se: f64 = 0.0;
    let orders = a.max_order.min(seq.n_max());
    for mo in 0..=orders {
        for no in 0..=orders {
            let est = matrix_orthogonality_mc(mo, no, &seq, &measure, a.dim, a.samples, seed, Exec::default())?;
            let exact = if mo == no { CMatrix::identity(a.dim, a.dim) } else { CMatrix::zeros(a.dim, a.dim) };
            let excess = est.band_excess(&exact, 3.0, 1e-12);
            let se = est.se.iter().copied().fold(0.0, f64::max);
            let dev = (&est.mean - &exact).iter().map(|v| v.norm()).fold(0.0, f64::max);
            worst = worst.max(excess);
            max_se = max_se.max(se);
            mc_rows.push(json!({"m": mo, "n": no, "max_deviation": dev, "max_se": se, "within_3se": excess <= 0.0}));
        }
    }
    rep.push(Check::new("orthogonality_mc_band", worst.max(0.0), 0.0));
    rep.results = json!({
        "dim": a.dim,
        "sequence": format!("{:?}", seq.kind()),
        "lambdas": lambdas,
        "total_norm": total,
        "levels": rows,
        "orthogonality": {"samples": a.samples, "max_se": max_se, "table": mc_rows},
    });

    let mut human = format!("vcs M={} {:?}\nsum_i <Z;i|Z;i> = {}\n", a.dim, seq.kind(), sig6(total));
    let _ = writeln!(human, "{:>3} {:>12} {:>12} {:>12} {:>12}", "n", "trace", "mixture", "det(MP)", "prod P");
    for r in &rows {
        let g = |k: &str| sig6(r[k].as_f64().unwrap_or(f64::NAN));
        let _ = writeln!(human, "{:>3} {:>12} {:>12} {:>12} {:>12}", r["n"], g("trace"), g("mixture_pmf"), g("det"), g("product"));
    }
    let _ = writeln!(human, "orthogonality ({} samples, max SE {})", a.samples, sig6(max_se));
    for r in &mc_rows {
        let _ = writeln!(
            human,
            "  m={} n={} dev {} se {} {}",
            r["m"],
            r["n"],
            sig6(r["max_deviation"].as_f64().unwrap_or(f64::NAN)),
            sig6(r["max_se"].as_f64().unwrap_or(f64::NAN)),
            if r["within_3se"].as_bool() == Some(true) { "ok" } else { "OUTSIDE" }
        );
    }
    human.push_str(&check_table(&rep.checks));
    Ok(human)
}

/// Index boxes larger than this are sampled on their leading corner only.
const FACTOR_BOX: usize = 6;

fn cmd_tensor(a: &TensorArgs, nmax: usize, rep: &mut RunReport) -> CliResult<String> {
    let seq = build_sequence(&a.seq, nmax)?;
    let dim = a.seq.lambdas.len();
    if dim == 0 {
        return Err(CliError::Usage("--lambdas must list at least one value".into()));
    }
    let labels = build_labels(&a.seq, dim)?;
    let trunc = SeriesTruncation::new(a.nmax, 1e-12)?;
    let t = tensor_cs(&labels, &seq, trunc)?;
    let family = DiscreteFamily::from_nonlinear(seq.clone());

    let edge = (FACTOR_BOX + 1).min(t.factors[0].len());
    let box_len = edge.pow(dim.min(4) as u32);
    let mut worst: f64 = 0.0;
    let mut ns = vec![0usize; dim];
    for idx in 0..box_len {
        let mut r = idx;
        for slot in ns.iter_mut().take(dim.min(4)) {
            *slot = r % edge;
            r /= edge;
        }
        let want: f64 = ns.iter().zip(&labels).map(|(&n, l)| family.pmf(n, l.lambda)).collect::<crate::Result<Vec<_>>>()?.iter().product();
        worst = worst.max((joint_prob(&t, &ns)? - want).abs());
    }
    rep.push(Check::new("factorization", worst, 1e-12));
    let (mass, how) = match t.materialize() {
        Ok(v) => (v.iter().map(|c| c.norm_sqr()).sum::<f64>(), "materialized"),
        Err(Error::SizeLimit { .. }) => (t.norm_sqr(), "factored"),
        Err(e) => return Err(e.into()),
    };
    rep.push(Check::new("total_mass", (mass - 1.0).abs(), 1e-8));

    let mut results = json!({
        "dim": dim,
        "levels": t.factors[0].len(),
        "total_mass": mass,
        "mass_from": how,
        "marginal_norms": t.factors.iter().map(|f| f.norm_sqr()).collect::<Vec<_>>(),
    });
    let mut human = format!("tensor M={dim} levels={}\ntotal mass {} ({how})\n", t.factors[0].len(), sig6(mass));
    if let Some(q) = &a.ns {
        let p = joint_prob(&t, q)?;
        let marg: Vec<f64> = q.iter().zip(&labels).map(|(&n, l)| family.pmf(n, l.lambda)).collect::<crate::Result<_>>()?;
        results["joint"] = json!({"ns": q, "probability": p, "marginals": marg});
        let _ = writeln!(human, "P({q:?}) = {}", sig6(p));
    }
    rep.results = results;
    human.push_str(&check_table(&rep.checks));
    Ok(human)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["csduality"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn json_of(args: &[&str]) -> (i32, Value) {
        let mut a = vec!["--json"];
        a.extend_from_slice(args);
        let (code, out, err) = run_capture(&a);
        (code, serde_json::from_str(&out).unwrap_or_else(|_| panic!("not json: {out} / {err}")))
    }

    #[test]
    fn family_eval_examples() {
        let (code, v) = json_of(&["family", "poisson", "--eval", "2", "1.0"]);
        assert_eq!(code, 0);
        assert!((v["results"]["value"].as_f64().unwrap() - 0.18393972).abs() < 1e-8);
        let (code, v) = json_of(&["family", "binomial:N=4", "--eval", "2", "0.5"]);
        assert_eq!(code, 0);
        assert!((v["results"]["value"].as_f64().unwrap() - 0.375).abs() < 1e-14);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_capture(&["family", "poisson"]).0, 2);
        assert_eq!(run_capture(&["family", "nosuch", "--eval", "1", "1"]).0, 2);
        assert_eq!(run_capture(&["posterior", "binomial:N=10", "--obs", "7", "--mass", "1.5"]).0, 2);
        assert_eq!(run_capture(&["vcs", "--dim", "2", "--lambdas", "1,2", "--samples", "0"]).0, 2);
        assert_eq!(run_capture(&["bogus"]).0, 2);
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn shorthand_parsing() {
        let s = load_spec("negbinomial:m=2").unwrap().spec;
        assert_eq!(s.family, "negbinomial");
        assert_eq!(s.params["m"], json!(2));
        let s = load_spec("binomial:N=4,form=lambda").unwrap().spec;
        assert_eq!(s.params["form"], json!("lambda"));
        assert!(load_spec("binomial:N").is_err());
    }
}
