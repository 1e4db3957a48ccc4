//! Command-line front end.
//!
//! Exit codes: 0 when every solve converged, 2 when a run stopped on the
//! iteration or time budget, 1 on usage, input or evaluation errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::barrier::Barrier;
use crate::bench::{self, CompletionParams, Instance, Metric, RosenbrockVariant, Suite, SuiteOptions};
use crate::check;
use crate::inner::InnerKind;
use crate::model::Formulation;
use crate::outer::{self, OuterConfig, RunRecord};

#[derive(Debug, Parser)]
#[command(name = "penbar", version, about = "Penalty-barrier solver for constrained structured nonconvex problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one generated instance
    Solve(SolveArgs),
    /// Run a benchmark suite and write one JSON record per run
    Bench(BenchArgs),
    /// Compute a data or pairwise profile from a record directory
    Profile(ProfileArgs),
    /// Run the self-check suite
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Family {
    NonnegPca,
    Degenerate,
    EqQp,
    Rosenbrock,
    RosenbrockEq,
    MatrixCompletion,
}

/// Solver settings shared by `solve` and `bench`. Unset flags fall back to
/// the config file, then to the defaults shown.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SolverFlags {
    /// Barrier: inverse, inverse_p:<p>, loglike or exp [default: loglike]
    #[arg(long, value_parser = parse_barrier)]
    pub barrier: Option<Barrier>,
    /// Inner solver: spectral or accel [default: accel]
    #[arg(long, value_parser = parse_inner)]
    pub inner: Option<InnerKind>,
    /// Equality handling: native or split [default: native]
    #[arg(long, value_parser = parse_formulation)]
    pub formulation: Option<Formulation>,
    /// Primal tolerance on violation and complementarity [default: 1e-5]
    #[arg(long)]
    pub eps_p: Option<f64>,
    /// Dual (stationarity) tolerance [default: 1e-5]
    #[arg(long)]
    pub eps_d: Option<f64>,
    /// Initial penalty parameter [default: 1]
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Initial barrier parameter [default: 1]
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Initial inner tolerance [default: from the residual at x0]
    #[arg(long)]
    pub eps0: Option<f64>,
    /// Penalty increase factor [default: 2]
    #[arg(long)]
    pub delta_alpha: Option<f64>,
    /// Inner tolerance decrease factor [default: 0.25]
    #[arg(long)]
    pub delta_eps: Option<f64>,
    /// Barrier decrease factor [default: 0.25]
    #[arg(long)]
    pub delta_mu: Option<f64>,
    /// Fraction of the initial residual used as first inner tolerance [default: 0.01]
    #[arg(long)]
    pub kappa_eps: Option<f64>,
    /// Outer iteration budget [default: 200]
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Wall-clock budget in seconds [default: none]
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Inner iteration budget per subproblem [default: 20000]
    #[arg(long)]
    pub max_inner: Option<usize>,
    /// Initial inner step size [default: curvature probe]
    #[arg(long)]
    pub gamma_init: Option<f64>,
    /// Nonmonotone reference window [default: 10]
    #[arg(long)]
    pub nonmonotone_memory: Option<usize>,
    /// L-BFGS memory [default: 5]
    #[arg(long)]
    pub lbfgs_memory: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl SolverFlags {
    /// Fills every unset field from `lower`.
    pub fn or(mut self, lower: &SolverFlags) -> SolverFlags {
        overlay!(self, lower; barrier, inner, formulation, eps_p, eps_d, alpha0, mu0, eps0, delta_alpha, delta_eps,
            delta_mu, kappa_eps, max_outer, time_limit, max_inner, gamma_init, nonmonotone_memory, lbfgs_memory);
        self
    }

    pub fn apply(&self, base: &OuterConfig) -> OuterConfig {
        let mut c = base.clone();
        macro_rules! set {
            ($($f:ident => $($dst:ident).+),*) => { $( if let Some(v) = self.$f.clone() { c.$($dst).+ = v; } )* };
        }
        set!(barrier => barrier, inner => inner.kind, formulation => formulation, eps_p => eps_p, eps_d => eps_d,
            alpha0 => alpha0, mu0 => mu0, delta_alpha => delta_alpha, delta_eps => delta_eps, delta_mu => delta_mu,
            kappa_eps => kappa_eps, max_outer => max_outer, max_inner => inner.max_iters,
            nonmonotone_memory => inner.nonmonotone_memory, lbfgs_memory => inner.lbfgs_memory);
        if self.eps0.is_some() {
            c.eps0 = self.eps0;
        }
        if self.time_limit.is_some() {
            c.time_limit = self.time_limit;
        }
        if self.gamma_init.is_some() {
            c.inner.gamma_init = self.gamma_init;
        }
        c
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct InstanceFlags {
    /// Problem family [default: nonneg_pca]
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    /// Instance seed [default: 0]
    #[arg(long, env = "PB_SEED")]
    pub seed: Option<u64>,
    /// Dimension for nonneg_pca, variables for eq_qp [default: 10, or 10 m for eq_qp]
    #[arg(long)]
    pub n: Option<usize>,
    /// Equality rows for eq_qp [default: 1]
    #[arg(long)]
    pub m: Option<usize>,
    /// PCA signal-to-noise ratio [default: 1]
    #[arg(long)]
    pub sigma_n: Option<f64>,
    /// PCA sparsity fraction [default: 0.5]
    #[arg(long)]
    pub sigma_s: Option<f64>,
    /// Completion users [default: 10]
    #[arg(long)]
    pub users: Option<usize>,
    /// Completion items [default: 20]
    #[arg(long)]
    pub items: Option<usize>,
    /// Completion rank [default: 3]
    #[arg(long)]
    pub rank: Option<usize>,
    /// Observed fraction of synthetic ratings [default: 0.3]
    #[arg(long)]
    pub density: Option<f64>,
    /// Completion sparsity weight [default: 0.01]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `user item rating` file replacing synthetic completion data [default: none]
    #[arg(long)]
    pub ratings: Option<PathBuf>,
}

impl InstanceFlags {
    fn or(mut self, lower: &InstanceFlags) -> InstanceFlags {
        overlay!(self, lower; family, seed, n, m, sigma_n, sigma_s, users, items, rank, density, lambda, ratings);
        self
    }
}

/// JSON config file for `solve`: the long flag names as keys.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SolveConfigFile {
    #[serde(flatten)]
    pub solver: SolverFlags,
    #[serde(flatten)]
    pub instance: InstanceFlags,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub instance: InstanceFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// JSON file with defaults for any of these flags [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the run record here [default: not written]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON config file for `bench`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct BenchConfigFile {
    #[serde(flatten)]
    pub solver: SolverFlags,
    pub seeds: Option<usize>,
    pub seed_base: Option<u64>,
    pub sizes: Option<String>,
    pub barriers: Option<String>,
    pub inners: Option<String>,
    pub formulations: Option<String>,
    pub eps: Option<String>,
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suite: pca_small, eq_qp, degenerate, rosenbrock or completion_small
    #[arg(long, value_parser = parse_suite)]
    pub suite: Suite,
    /// Output directory for records and the manifest
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds per size [default: per suite]
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed [default: 0]
    #[arg(long, env = "PB_SEED")]
    pub seed_base: Option<u64>,
    /// Sizes as `a..b` or a comma list [default: per suite]
    #[arg(long)]
    pub sizes: Option<String>,
    /// Comma-separated barrier ids [default: per suite]
    #[arg(long)]
    pub barriers: Option<String>,
    /// Comma-separated inner solvers [default: per suite]
    #[arg(long)]
    pub inners: Option<String>,
    /// Comma-separated formulations, used by eq_qp [default: per suite]
    #[arg(long)]
    pub formulations: Option<String>,
    /// Comma-separated tolerances, each applied to eps_p and eps_d [default: per suite]
    #[arg(long)]
    pub eps: Option<String>,
    /// Worker threads, 0 for all cores [default: 0]
    #[arg(long, env = "PB_WORKERS")]
    pub workers: Option<usize>,
    /// JSON file with defaults for any of these flags [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileMode {
    Data,
    Pairwise,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Record directory written by `bench`
    #[arg(long)]
    pub dir: PathBuf,
    /// Profile kind
    #[arg(long, value_enum, default_value = "data")]
    pub mode: ProfileMode,
    /// Cost measure: grad_evals, wall_ms or outer_iters
    #[arg(long, default_value = "grad_evals", value_parser = parse_metric)]
    pub metric: Metric,
    /// Variant label to profile in data mode [default: the only variant present]
    #[arg(long)]
    pub variant: Option<String>,
    /// First variant label in pairwise mode [default: first of exactly two present]
    #[arg(long)]
    pub first: Option<String>,
    /// Second variant label in pairwise mode [default: second of exactly two present]
    #[arg(long)]
    pub second: Option<String>,
    /// CSV destination [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Seed for the randomized cases
    #[arg(long, env = "PB_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Print the report as JSON
    #[arg(long)]
    pub json: bool,
}

fn parse_barrier(s: &str) -> Result<Barrier, String> {
    s.parse::<Barrier>().map_err(|e| e.to_string())
}

fn parse_inner(s: &str) -> Result<InnerKind, String> {
    s.parse()
}

fn parse_formulation(s: &str) -> Result<Formulation, String> {
    s.parse()
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

/// `a..b` (inclusive) or `a,b,c`.
pub fn parse_sizes(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid sizes `{s}`; expected a..b or a comma list");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    parse_list(s, |t| t.parse::<usize>().map_err(|_| bad()))
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let v: Vec<T> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(f).collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err(format!("empty list `{s}`"));
    }
    Ok(v)
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

/// Reads a JSON config whose keys must be a subset of the fields of `T`.
fn read_config<T: for<'de> Deserialize<'de> + Serialize + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(p) = path else { return Ok(T::default()) };
    let fail = |e: &dyn std::fmt::Display| Failure(format!("{}: {e}", p.display()));
    let text = fs::read_to_string(p).map_err(|e| fail(&e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(&e))?;
    let known = serde_json::to_value(T::default()).map_err(|e| fail(&e))?;
    if let (Some(given), Some(known)) = (value.as_object(), known.as_object()) {
        if let Some(k) = given.keys().find(|k| !known.contains_key(*k)) {
            let mut names: Vec<&String> = known.keys().collect();
            names.sort();
            return Err(fail(&format!("unknown key `{k}`; expected one of {names:?}")));
        }
    }
    serde_json::from_value(value).map_err(|e| fail(&e))
}

/// Builds the instance described by the flags.
pub fn build_instance(f: &InstanceFlags) -> Result<Instance, String> {
    let seed = f.seed.unwrap_or(0);
    let e = |e: bench::BenchError| e.to_string();
    Ok(match f.family.unwrap_or(Family::NonnegPca) {
        Family::NonnegPca => bench::gen_nonneg_pca(f.n.unwrap_or(10), f.sigma_n.unwrap_or(1.0), f.sigma_s.unwrap_or(0.5), seed).map_err(e)?,
        Family::Degenerate => bench::gen_degenerate(seed),
        Family::EqQp => {
            let m = f.m.unwrap_or(1);
            bench::gen_eq_qp(f.n.unwrap_or(10 * m), m, seed).map_err(e)?.0
        }
        Family::Rosenbrock => bench::gen_rosenbrock(RosenbrockVariant::Inequality, seed),
        Family::RosenbrockEq => bench::gen_rosenbrock(RosenbrockVariant::EqualitySlack, seed),
        Family::MatrixCompletion => {
            let d = CompletionParams::default();
            let p = CompletionParams {
                users: f.users.unwrap_or(d.users),
                items: f.items.unwrap_or(d.items),
                rank: f.rank.unwrap_or(d.rank),
                density: f.density.unwrap_or(d.density),
                lambda: f.lambda.unwrap_or(d.lambda),
            };
            match &f.ratings {
                Some(path) => {
                    let r = bench::load_ratings(path).map_err(e)?;
                    bench::gen_matrix_completion_from_ratings(p, &r, seed).map_err(e)?
                }
                None => bench::gen_matrix_completion(p, seed).map_err(e)?,
            }
        }
    })
}

/// One-line run summary.
pub fn summary(r: &RunRecord) -> String {
    let status = serde_json::to_value(r.exit.status).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    format!(
        "status={status} objective={:.10e} p={:.3e} s={:.3e} outer_iters={} grad_evals={} alpha={} mu={:.3e}",
        r.exit.objective, r.exit.p, r.exit.s, r.exit.outer_iters, r.exit.grad_evals, r.exit.alpha, r.exit.mu
    )
}

fn cmd_solve(a: SolveArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let file: SolveConfigFile = read_config(a.config.as_deref())?;
    let solver = a.solver.or(&file.solver);
    let inst_flags = a.instance.or(&file.instance);
    let cfg = solver.apply(&OuterConfig::default());
    cfg.validate()?;
    let inst = build_instance(&inst_flags).map_err(Failure)?;
    let mut rec = outer::run(&inst.problem, &inst.x0, &cfg)?;
    rec.config.instance = inst.name.clone();
    rec.config.variant = format!("{}-{}-{}", cfg.barrier, cfg.inner.kind.label(), cfg.formulation.label());
    if let Some(path) = a.out.or(file.out) {
        bench::write_atomic(&path, rec.to_json().as_bytes())?;
    }
    writeln!(out, "{} {}", inst.name, summary(&rec))?;
    Ok(rec.exit.status.code())
}

fn bench_options(a: &BenchArgs, file: &BenchConfigFile) -> Result<SuiteOptions, Failure> {
    let mut o = a.suite.default_options();
    let pick = |flag: &Option<String>, cfg: &Option<String>| flag.clone().or_else(|| cfg.clone());
    if let Some(n) = a.seeds.or(file.seeds) {
        o.seeds = n;
    }
    if let Some(b) = a.seed_base.or(file.seed_base) {
        o.seed_base = b;
    }
    if let Some(s) = pick(&a.sizes, &file.sizes) {
        o.sizes = parse_sizes(&s).map_err(Failure)?;
    }
    if let Some(s) = pick(&a.barriers, &file.barriers) {
        o.barriers = parse_list(&s, parse_barrier).map_err(Failure)?;
    }
    if let Some(s) = pick(&a.inners, &file.inners) {
        o.inners = parse_list(&s, parse_inner).map_err(Failure)?;
    }
    if let Some(s) = pick(&a.formulations, &file.formulations) {
        o.formulations = parse_list(&s, parse_formulation).map_err(Failure)?;
    }
    if let Some(s) = pick(&a.eps, &file.eps) {
        o.eps = parse_list(&s, |t| t.parse::<f64>().map_err(|_| format!("invalid tolerance `{t}`"))).map_err(Failure)?;
    }
    if let Some(w) = a.workers.or(file.workers) {
        o.workers = w;
    }
    o.base = a.solver.clone().or(&file.solver).apply(&o.base);
    Ok(o)
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let file: BenchConfigFile = read_config(a.config.as_deref())?;
    let o = bench_options(&a, &file)?;
    let res = bench::run_suite(a.suite, &o, Some(&a.out))?;
    let total = res.manifest.runs.len();
    let converged = res.records.iter().filter(|r| r.converged()).count();
    let errors = total - res.records.len();
    writeln!(out, "suite={} runs={total} converged={converged} errors={errors} out={}", a.suite, a.out.display())?;
    Ok(if errors > 0 {
        1
    } else if converged < total {
        2
    } else {
        0
    })
}

fn cmd_profile(a: ProfileArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let records = bench::read_records(&a.dir)?;
    let mut variants: Vec<String> = records.iter().map(|r| r.config.variant.clone()).collect();
    variants.sort();
    variants.dedup();
    let select = |label: &str| -> Vec<(String, Option<f64>)> {
        records.iter().filter(|r| r.config.variant == label).map(|r| (r.config.instance.clone(), a.metric.of(r))).collect()
    };
    let known = |label: &str| -> Result<(), Failure> {
        if variants.iter().any(|v| v == label) {
            Ok(())
        } else {
            Err(Failure(format!("no records for variant `{label}`; variants present: {}", variants.join(", "))))
        }
    };
    let mut csv = String::new();
    match a.mode {
        ProfileMode::Data => {
            let label = match (&a.variant, variants.as_slice()) {
                (Some(v), _) => v.clone(),
                (None, [only]) => only.clone(),
                (None, _) => return Err(Failure(format!("records hold {} variants; pick one with --variant: {}", variants.len(), variants.join(", ")))),
            };
            known(&label)?;
            let metrics: Vec<Option<f64>> = select(&label).into_iter().map(|(_, m)| m).collect();
            csv.push_str("t,fraction\n");
            for (t, f) in bench::data_profile(&metrics) {
                csv.push_str(&format!("{t},{f}\n"));
            }
        }
        ProfileMode::Pairwise => {
            let (first, second) = match (&a.first, &a.second, variants.as_slice()) {
                (Some(x), Some(y), _) => (x.clone(), y.clone()),
                (None, None, [x, y]) => (x.clone(), y.clone()),
                _ => return Err(Failure(format!("pairwise mode needs --first and --second; variants present: {}", variants.join(", ")))),
            };
            known(&first)?;
            known(&second)?;
            let (ra, rb) = (select(&first), select(&second));
            csv.push_str("tau,fraction,solver\n");
            for (label, curve) in [(&first, bench::pairwise_profile(&ra, &rb)?), (&second, bench::pairwise_profile(&rb, &ra)?)] {
                for (t, f) in curve {
                    csv.push_str(&format!("{t},{f},{label}\n"));
                }
            }
        }
    }
    match a.out {
        Some(p) => fs::write(p, csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(0)
}

fn cmd_check(a: CheckArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let report = check::run_all(a.seed);
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        for c in &report.checks {
            match c.failures.first() {
                None => writeln!(out, "PASS {} ({} cases)", c.name, c.cases)?,
                Some(f) => writeln!(out, "FAIL {} ({} of {} cases): {f}", c.name, c.failures.len(), c.cases)?,
            }
        }
        writeln!(out, "log-like slack candidates rejected: {}", report.candidate_rejections)?;
        writeln!(out, "passed {} failed {}", report.passed(), report.failed())?;
    }
    Ok(if report.all_pass() { 0 } else { 1 })
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Profile(a) => cmd_profile(a, out),
        Command::Check(a) => cmd_check(a, out),
    };
    match res {
        Ok(code) => code,
        Err(Failure(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}
