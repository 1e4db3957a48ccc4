//! Outer loop: drives `(alpha, mu, eps)` around repeated inner solves and
//! records every iterate.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{Barrier, BarrierOps};
use crate::inner::{self, InnerConfig, InnerStatus};
use crate::model::{classify_row, Formulation, ModelError, ProblemSpec, RowClass, Subproblem};

#[derive(Debug, Error)]
pub enum OuterError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterConfig {
    pub barrier: Barrier,
    pub inner: InnerConfig,
    pub formulation: Formulation,
    pub eps_p: f64,
    pub eps_d: f64,
    pub alpha0: f64,
    pub mu0: f64,
    /// Initial inner tolerance; derived from the residual at the start when absent.
    pub eps0: Option<f64>,
    pub delta_alpha: f64,
    pub delta_eps: f64,
    pub delta_mu: f64,
    pub kappa_eps: f64,
    pub max_outer: usize,
    /// Wall-clock budget in seconds.
    pub time_limit: Option<f64>,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            barrier: Barrier::LogLike,
            inner: InnerConfig::default(),
            formulation: Formulation::Native,
            eps_p: 1e-5,
            eps_d: 1e-5,
            alpha0: 1.0,
            mu0: 1.0,
            eps0: None,
            delta_alpha: 2.0,
            delta_eps: 0.25,
            delta_mu: 0.25,
            kappa_eps: 1e-2,
            max_outer: 200,
            time_limit: None,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<(), OuterError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let frac = |v: f64| v > 0.0 && v < 1.0;
        let bad = |what: &str, v: f64| Err(OuterError::Config(format!("{what} = {v}")));
        if !pos(self.eps_p) {
            return bad("eps_p must be positive", self.eps_p);
        }
        if !pos(self.eps_d) {
            return bad("eps_d must be positive", self.eps_d);
        }
        if !pos(self.alpha0) {
            return bad("alpha0 must be positive", self.alpha0);
        }
        if !pos(self.mu0) {
            return bad("mu0 must be positive", self.mu0);
        }
        if let Some(e) = self.eps0 {
            if !pos(e) {
                return bad("eps0 must be positive", e);
            }
        }
        if !(self.delta_alpha.is_finite() && self.delta_alpha > 1.0) {
            return bad("delta_alpha must exceed 1", self.delta_alpha);
        }
        if !frac(self.delta_eps) {
            return bad("delta_eps must lie in (0, 1)", self.delta_eps);
        }
        if !frac(self.delta_mu) {
            return bad("delta_mu must lie in (0, 1)", self.delta_mu);
        }
        if !frac(self.kappa_eps) {
            return bad("kappa_eps must lie in (0, 1)", self.kappa_eps);
        }
        if self.max_outer == 0 {
            return Err(OuterError::Config("max_outer must be at least 1".into()));
        }
        Ok(())
    }
}

/// `-2 m' (mu/alpha) b*(alpha/mu)`, the violation level below which `alpha` is kept.
pub fn penalty_threshold(barrier: &Barrier, m_prime: usize, alpha: f64, mu: f64) -> f64 {
    if m_prime == 0 {
        return 0.0;
    }
    -2.0 * m_prime as f64 * (mu / alpha) * barrier.conjugate(alpha / mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Converged,
    MaxOuter,
    TimeLimit,
}

impl ExitStatus {
    /// Process exit code used by the command-line tool.
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Converged => 0,
            ExitStatus::MaxOuter | ExitStatus::TimeLimit => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecordConfig {
    pub instance: String,
    pub variant: String,
    pub barrier: Barrier,
    pub inner: InnerConfig,
    pub formulation: Formulation,
    pub eps_p: f64,
    pub eps_d: f64,
    pub alpha0: f64,
    pub mu0: f64,
    pub eps0: f64,
    pub delta_alpha: f64,
    pub delta_eps: f64,
    pub delta_mu: f64,
    pub kappa_eps: f64,
    pub max_outer: usize,
    pub n: usize,
    pub m: usize,
    pub m_eq: usize,
    pub m_prime: usize,
}

impl PartialEq for InnerConfig {
    fn eq(&self, o: &Self) -> bool {
        self.kind == o.kind
            && self.max_iters == o.max_iters
            && self.gamma_init == o.gamma_init
            && self.nonmonotone_memory == o.nonmonotone_memory
            && self.lbfgs_memory == o.lbfgs_memory
            && self.trace == o.trace
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub alpha: f64,
    pub mu: f64,
    pub eps: f64,
    pub p: f64,
    pub s: f64,
    pub inner_iters: usize,
    /// Cumulative over the run.
    pub grad_evals: u64,
    pub wall_ms: f64,
    pub threshold: f64,
    pub residual: f64,
    pub inner_status: InnerStatus,
    /// Largest one-sided multiplier at this iterate.
    pub y_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExitRecord {
    pub status: ExitStatus,
    pub x: Vec<f64>,
    /// Signed multipliers of the non-equality rows, in row order.
    pub y: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub objective: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub grad_evals: u64,
    pub wall_ms: f64,
    pub alpha: f64,
    pub mu: f64,
    pub p: f64,
    pub s: f64,
    pub residual: f64,
    /// Step size and anchor of the final forward-backward step, for re-certification.
    pub gamma: f64,
    pub anchor: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub config: RecordConfig,
    pub iterations: Vec<IterateRecord>,
    pub exit: ExitRecord,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        self.exit.status == ExitStatus::Converged
    }

    /// Whether `alpha` ever moved away from `alpha0`.
    pub fn alpha_updated(&self) -> bool {
        self.iterations.iter().any(|it| it.alpha != self.config.alpha0) || self.exit.alpha != self.config.alpha0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records contain only serializable data")
    }
}

/// Violation `p` and complementarity `s` of a point from its row multipliers.
fn feasibility_measures(problem: &ProblemSpec, c: &[f64], sides: &[(f64, f64)]) -> (f64, f64, f64) {
    let p = problem.violation(c);
    let mut s: f64 = 0.0;
    let mut y_max: f64 = 0.0;
    for (i, &(yu, yl)) in sides.iter().enumerate() {
        let (l, u) = (problem.lower[i], problem.upper[i]);
        y_max = y_max.max(yu).max(yl);
        match classify_row(l, u) {
            RowClass::Equality | RowClass::Free => {}
            _ => {
                if u.is_finite() {
                    s = s.max(yu.min((u - c[i]).max(0.0)));
                }
                if l.is_finite() {
                    s = s.max(yl.min((c[i] - l).max(0.0)));
                }
            }
        }
    }
    (p, s, y_max)
}

fn signed_multipliers(problem: &ProblemSpec, sides: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let (mut y, mut y_eq) = (Vec::new(), Vec::new());
    for (i, &(yu, yl)) in sides.iter().enumerate() {
        match classify_row(problem.lower[i], problem.upper[i]) {
            RowClass::Equality => y_eq.push(yu - yl),
            _ => y.push(yu - yl),
        }
    }
    (y, y_eq)
}

/// Runs the penalty-barrier method from `x0`.
pub fn run(problem: &ProblemSpec, x0: &[f64], cfg: &OuterConfig) -> Result<RunRecord, OuterError> {
    cfg.validate()?;
    if x0.len() != problem.n {
        return Err(ModelError::Dimension(format!("x0 has length {}, problem has n = {}", x0.len(), problem.n)).into());
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::EvalFailure("x0").into());
    }
    let start = Instant::now();
    let mut x = x0.to_vec();
    if !problem.g.value(&x).is_finite() {
        let z = x.clone();
        problem.g.prox(1.0, &z, &mut x)?;
    }
    let elapsed_ms = || start.elapsed().as_secs_f64() * 1e3;
    let m_prime = problem.one_sided_count();
    let (mut alpha, mut mu) = (cfg.alpha0, cfg.mu0);
    let mut grad_evals = 0u64;
    let mut inner_total = 0usize;

    let eps0 = match cfg.eps0 {
        Some(e) => e,
        None => {
            let sp = Subproblem::new(problem, cfg.barrier, alpha, mu, cfg.formulation)?;
            let mut gx = vec![0.0; problem.n];
            sp.eval(&x, &mut gx)?;
            let gamma = match cfg.inner.gamma_init {
                Some(g) => g,
                None => inner::estimate_gamma(&sp, &x, &gx),
            };
            let (_, eta0) = inner::stationarity_residual(&sp, &x, gamma)?;
            grad_evals += sp.grad_evals();
            if !eta0.is_finite() {
                return Err(ModelError::EvalFailure("initial residual").into());
            }
            cfg.eps_d.max(cfg.kappa_eps * eta0)
        }
    };
    let mut eps = eps0.max(cfg.eps_d);
    let mut iterations = Vec::new();
    let mut status = ExitStatus::MaxOuter;
    let mut last: Option<(inner::InnerResult, f64, f64, Vec<(f64, f64)>, f64, f64)> = None;

    for k in 0..cfg.max_outer {
        let sp = Subproblem::new(problem, cfg.barrier, alpha, mu, cfg.formulation)?;
        let res = inner::solve(&sp, &x, eps, &cfg.inner)?;
        grad_evals += sp.grad_evals();
        inner_total += res.iters;
        x.clone_from(&res.x);
        let c = problem.eval_constraints(&x);
        let sides = sp.side_multipliers(&c);
        let (p, s, y_max) = feasibility_measures(problem, &c, &sides);
        let threshold = penalty_threshold(&cfg.barrier, m_prime, alpha, mu);
        iterations.push(IterateRecord {
            k,
            alpha,
            mu,
            eps,
            p,
            s,
            inner_iters: res.iters,
            grad_evals,
            wall_ms: elapsed_ms(),
            threshold,
            residual: res.residual,
            inner_status: res.status,
            y_max,
        });
        let certified = res.status == InnerStatus::Converged;
        let done = certified && eps <= cfg.eps_d && p <= cfg.eps_p && s <= cfg.eps_p;
        last = Some((res, alpha, mu, sides, p, s));
        if done {
            status = ExitStatus::Converged;
            break;
        }
        eps = (cfg.delta_eps * eps).max(cfg.eps_d);
        if p > cfg.eps_p.max(threshold) {
            alpha *= cfg.delta_alpha;
            if s > cfg.eps_p {
                mu *= cfg.delta_mu;
            }
        } else {
            mu *= cfg.delta_mu;
        }
        // Checked after the iteration so the record always holds at least one iterate.
        if cfg.time_limit.is_some_and(|limit| start.elapsed().as_secs_f64() > limit) {
            status = ExitStatus::TimeLimit;
            break;
        }
    }

    let (y, y_eq, gamma, anchor, residual, fa, fm, p, s) = match last {
        Some((res, a, m, sides, p, s)) => {
            let (y, y_eq) = signed_multipliers(problem, &sides);
            (y, y_eq, res.gamma, res.anchor, res.residual, a, m, p, s)
        }
        None => {
            let c = problem.eval_constraints(&x);
            let (y, y_eq) = signed_multipliers(problem, &vec![(0.0, 0.0); c.len()]);
            (y, y_eq, f64::NAN, x.clone(), f64::INFINITY, alpha, mu, problem.violation(&c), f64::NAN)
        }
    };
    let objective = problem.objective(&x);
    Ok(RunRecord {
        config: RecordConfig {
            instance: String::new(),
            variant: String::new(),
            barrier: cfg.barrier,
            inner: cfg.inner.clone(),
            formulation: cfg.formulation,
            eps_p: cfg.eps_p,
            eps_d: cfg.eps_d,
            alpha0: cfg.alpha0,
            mu0: cfg.mu0,
            eps0,
            delta_alpha: cfg.delta_alpha,
            delta_eps: cfg.delta_eps,
            delta_mu: cfg.delta_mu,
            kappa_eps: cfg.kappa_eps,
            max_outer: cfg.max_outer,
            n: problem.n,
            m: problem.m(),
            m_eq: problem.equality_count(),
            m_prime,
        },
        exit: ExitRecord {
            status,
            x,
            y,
            y_eq,
            objective,
            outer_iters: iterations.len(),
            inner_iters: inner_total,
            grad_evals,
            wall_ms: elapsed_ms(),
            alpha: fa,
            mu: fm,
            p,
            s,
            residual,
            gamma,
            anchor,
        },
        iterations,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KktCondition {
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl KktCondition {
    fn new(value: f64, tolerance: f64) -> Self {
        Self { value, tolerance, pass: value <= tolerance }
    }
}

/// Independent re-evaluation of the approximate KKT conditions of a record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KktReport {
    /// Re-computed forward-backward certificate at the reported point.
    pub dual_stationarity: KktCondition,
    /// Largest bound violation of `c(x)`.
    pub primal_feasibility: KktCondition,
    /// Largest sign violation of the reported multipliers.
    pub dual_feasibility: KktCondition,
    /// `max_i min{|y_i|, distance to the bound y_i belongs to}`.
    pub complementarity: KktCondition,
    /// Largest mismatch between reported and re-derived multipliers.
    pub multiplier_mismatch: f64,
}

impl KktReport {
    pub fn pass(&self) -> bool {
        self.dual_stationarity.pass && self.primal_feasibility.pass && self.dual_feasibility.pass && self.complementarity.pass
    }
}

/// Re-derives the KKT residuals of `record` on `problem` without trusting the
/// recorded `p`, `s` or residual values.
pub fn kkt_report(record: &RunRecord, problem: &ProblemSpec) -> Result<KktReport, OuterError> {
    let cfg = &record.config;
    let ex = &record.exit;
    let x = &ex.x;
    if x.len() != problem.n || ex.anchor.len() != problem.n {
        return Err(ModelError::Dimension("record does not match problem".into()).into());
    }
    let sp = Subproblem::new(problem, cfg.barrier, ex.alpha, ex.mu, cfg.formulation)?;

    // The final point must be the forward-backward step from the anchor.
    let stationarity = if ex.gamma.is_finite() && ex.gamma > 0.0 {
        let n = problem.n;
        let mut ga = vec![0.0; n];
        sp.eval(&ex.anchor, &mut ga)?;
        let z: Vec<f64> = ex.anchor.iter().zip(&ga).map(|(a, g)| a - ex.gamma * g).collect();
        let mut xb = vec![0.0; n];
        sp.prox(ex.gamma, &z, &mut xb)?;
        let scale = 1e-9 * crate::model::linalg::norm_inf(x).max(1.0);
        let reproduced = xb.iter().zip(x).all(|(a, b)| (a - b).abs() <= scale);
        let mut gx = vec![0.0; n];
        sp.eval(x, &mut gx)?;
        let mut r = 0.0;
        for i in 0..n {
            let v = (ex.anchor[i] - x[i]) / ex.gamma + gx[i] - ga[i];
            r += v * v;
        }
        if reproduced {
            r.sqrt()
        } else {
            f64::INFINITY
        }
    } else {
        f64::INFINITY
    };

    let c = problem.eval_constraints(x);
    let sides = sp.side_multipliers(&c);
    let (y, y_eq) = signed_multipliers(problem, &sides);
    let mismatch = y
        .iter()
        .zip(&ex.y)
        .chain(y_eq.iter().zip(&ex.y_eq))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut sign: f64 = 0.0;
    let mut compl: f64 = 0.0;
    let mut yi = ex.y.iter();
    for i in 0..problem.m() {
        let (l, u) = (problem.lower[i], problem.upper[i]);
        let class = classify_row(l, u);
        if class == RowClass::Equality {
            continue;
        }
        let v = *yi.next().unwrap_or(&0.0);
        match class {
            RowClass::Upper => sign = sign.max((-v).max(0.0)),
            RowClass::Lower => sign = sign.max(v.max(0.0)),
            RowClass::Free => sign = sign.max(v.abs()),
            _ => {}
        }
        if v > 0.0 && u.is_finite() {
            compl = compl.max(v.min((u - c[i]).max(0.0)));
        } else if v < 0.0 && l.is_finite() {
            compl = compl.max((-v).min((c[i] - l).max(0.0)));
        }
    }
    Ok(KktReport {
        dual_stationarity: KktCondition::new(stationarity, cfg.eps_d),
        primal_feasibility: KktCondition::new(problem.violation(&c), cfg.eps_p),
        dual_feasibility: KktCondition::new(sign, 0.0),
        complementarity: KktCondition::new(compl, cfg.eps_p),
        multiplier_mismatch: mismatch,
    })
}

/// Checks the structural guarantees of the method on a finished record and
/// returns one message per violation.
pub fn trajectory_violations(record: &RunRecord) -> Vec<String> {
    let cfg = &record.config;
    let its = &record.iterations;
    let mut out = Vec::new();
    let tol = |v: f64| 1e-12 * v.abs().max(1.0);
    let b = cfg.barrier;
    let mu_safe = cfg.eps_p / b.derivative(-cfg.eps_p);
    let c0 = penalty_threshold(&b, cfg.m_prime, cfg.alpha0, cfg.mu0);
    let theta = rate_for(&b, cfg.delta_alpha.min(1.0 / cfg.delta_mu));

    for (idx, it) in its.iter().enumerate() {
        if it.y_max < 0.0 || it.y_max > it.alpha + tol(it.alpha) {
            out.push(format!("k={}: multiplier {} outside [0, alpha={}]", it.k, it.y_max, it.alpha));
        }
        if it.mu <= mu_safe && it.s > cfg.eps_p {
            out.push(format!("k={}: mu={} below the safe level but s={} > eps_p", it.k, it.mu, it.s));
        }
        if it.eps < cfg.eps_d {
            out.push(format!("k={}: eps={} below eps_d", it.k, it.eps));
        }
        if let Some(next) = its.get(idx + 1) {
            if next.alpha == it.alpha && next.mu == it.mu {
                out.push(format!("k={}: neither alpha nor mu changed", it.k));
            }
            if next.alpha < it.alpha || next.mu > it.mu || next.eps > it.eps {
                out.push(format!("k={}: parameters moved in the wrong direction", it.k));
            }
            if next.threshold > it.threshold + tol(it.threshold) {
                out.push(format!("k={}: threshold increased {} -> {}", it.k, it.threshold, next.threshold));
            }
            if next.grad_evals < it.grad_evals {
                out.push(format!("k={}: gradient counter decreased", it.k));
            }
        }
        let alpha_kept = its[..=idx].iter().all(|j| j.alpha == cfg.alpha0)
            && its.get(idx + 1).is_none_or(|n| n.alpha == cfg.alpha0);
        if alpha_kept {
            let bound = cfg.eps_p.max(c0 * theta.powi(it.k as i32));
            if it.p > bound + tol(bound) {
                out.push(format!("k={}: p={} exceeds linear bound {}", it.k, it.p, bound));
            }
        }
    }
    out
}

/// Smallest `theta in (0, 1)` with `kappa_max(theta) <= ratio`, by bisection.
fn rate_for(b: &Barrier, ratio: f64) -> f64 {
    let ok = |theta: f64| {
        crate::barrier::kappa(b, theta, crate::barrier::KappaMode::Max).map(|k| k <= ratio).unwrap_or(false)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if ok(1.0 - 1e-9) {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (hi * (1.0 + 1e-6)).min(1.0)
    } else {
        1.0
    }
}
