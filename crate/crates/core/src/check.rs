//! Self-check suite: barrier identities, envelope values against brute-force
//! one-dimensional minimization, proximal maps against grid search, and
//! finite-difference audits of every bundled problem.
//!
//! Checks take `&dyn BarrierOps` where possible so that a deliberately broken
//! barrier can be fed through them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barrier::{Barrier, BarrierOps, KappaMode};
use crate::bench::{self, CompletionParams, Instance, RosenbrockVariant};
use crate::model::prox::{BoxIndicator, HalfNorm, NonPositive, UnitSphere, Zero, L0, L1};
use crate::model::{Formulation, ProxFriendly, Subproblem};
use crate::penalty::{self, psi_bilateral, psi_derivative, psi_split, psi_value};

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), cases: 0, failures: Vec::new() }
    }

    fn case(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok && self.failures.len() < 20 {
            self.failures.push(detail());
        } else if !ok {
            self.failures.push(String::new());
        }
    }

    pub fn pass(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
    /// Log-like closed-form slack candidates rejected so far in this process.
    pub candidate_rejections: u64,
}

impl CheckReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.pass()).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    pub fn all_pass(&self) -> bool {
        self.failed() == 0
    }
}

pub const BARRIERS: [Barrier; 4] = [Barrier::INVERSE, Barrier::InversePower { p: 2.0 }, Barrier::LogLike, Barrier::Exponential];

/// Identity and oracle tolerances.
pub const IDENTITY_RTOL: f64 = 1e-8;
pub const ORACLE_RTOL: f64 = 1e-6;
pub const KAPPA_TOL: f64 = 1e-3;
pub const FD_RTOL: f64 = 1e-5;

fn close(a: f64, b: f64, rtol: f64, scale: f64) -> bool {
    (a - b).abs() <= rtol * scale.max(1e-300)
}

/// Points in `[-1e3, -1e-3]` where `b` and `b'` are representable.
fn barrier_grid(b: &dyn BarrierOps) -> Vec<f64> {
    (0..=120)
        .map(|k| -(10f64.powf(-3.0 + 6.0 * k as f64 / 120.0)))
        .filter(|&t| b.value(t).is_finite() && b.derivative(t).is_finite())
        .collect()
}

/// `b*(b'(t)) = t b'(t) - b(t)`.
pub fn conjugate_identity(name: &str, b: &dyn BarrierOps) -> CheckResult {
    let mut r = CheckResult::new(format!("conjugate identity [{name}]"));
    for t in barrier_grid(b) {
        let (v, d) = (b.value(t), b.derivative(t));
        let lhs = b.conjugate(d);
        let rhs = t * d - v;
        r.case(close(lhs, rhs, IDENTITY_RTOL, (t * d).abs() + v.abs()), || format!("t={t:e}: {lhs:e} vs {rhs:e}"));
    }
    r
}

/// `b*'(b'(t)) = t`.
pub fn inverse_relation(name: &str, b: &dyn BarrierOps) -> CheckResult {
    let mut r = CheckResult::new(format!("conjugate derivative inverts derivative [{name}]"));
    for t in barrier_grid(b) {
        let back = b.conjugate_derivative(b.derivative(t));
        r.case(close(back, t, IDENTITY_RTOL, t.abs()), || format!("t={t:e}: got {back:e}"));
    }
    r
}

/// Pointwise limits of the envelope as `rho*` grows and of `b*(tau)/tau`.
pub fn monotone_limits(name: &str, b: &dyn BarrierOps) -> CheckResult {
    let mut r = CheckResult::new(format!("monotone limits [{name}]"));
    let rhos = [1.0, 4.0, 16.0, 64.0, 256.0];
    let slack = |v: f64| 1e-12 * v.abs().max(1.0);
    for k in 0..=60 {
        let t = -3.0 + 0.1 * k as f64;
        let vals: Vec<f64> = rhos.iter().map(|&p| psi_value(b, p, t)).collect();
        for w in 0..rhos.len() - 1 {
            r.case(vals[w] <= vals[w + 1] + slack(vals[w + 1]), || format!("psi not increasing in rho at t={t}"));
            r.case(vals[w] / rhos[w] + slack(vals[w]) >= vals[w + 1] / rhos[w + 1], || format!("psi/rho not decreasing at t={t}"));
        }
        if t < 0.0 {
            let bt = b.value(t);
            r.case(vals.iter().all(|&v| v <= bt + slack(bt)), || format!("psi above b at t={t}"));
        }
        let pmax = rhos[rhos.len() - 1];
        let gap = (vals[rhos.len() - 1] / pmax - t.max(0.0)).abs();
        let bound = 2.0 * b.conjugate(pmax).abs() / pmax;
        r.case(gap <= bound + 1e-12, || format!("psi/rho far from [t]_+ at t={t}: {gap:e} > {bound:e}"));

        // mu psi_{alpha/mu} decreases to alpha [t]_+ with alpha = 1.
        let scaled: Vec<f64> = [1.0, 0.25, 1.0 / 16.0, 1.0 / 64.0].iter().map(|&m| m * psi_value(b, 1.0 / m, t)).collect();
        for w in 0..scaled.len() - 1 {
            r.case(scaled[w + 1] <= scaled[w] + slack(scaled[w]), || format!("mu psi not decreasing at t={t}"));
        }
        r.case(scaled.iter().all(|&v| v + slack(v) >= t.max(0.0)), || format!("mu psi below [t]_+ at t={t}"));
    }
    // b*(tau)/tau increases to 0.
    let taus: Vec<f64> = (0..=48).map(|k| 10f64.powf(-4.0 + 0.25 * k as f64)).collect();
    let ratios: Vec<f64> = taus.iter().map(|&s| b.conjugate(s) / s).collect();
    for w in 0..ratios.len() - 1 {
        r.case(ratios[w] <= ratios[w + 1] + 1e-15 && ratios[w + 1] <= 1e-15, || {
            format!("b*(tau)/tau not increasing to 0 at tau={:e}", taus[w])
        });
    }
    r.case(ratios[ratios.len() - 1].abs() < 0.1 * ratios[0].abs(), || "b*(tau)/tau does not approach 0".into());
    r
}

/// Golden-section minimizer of a unimodal function on `[a, c]`; returns `(argmin, min)`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut c: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = c - g * (c - a);
    let mut x2 = a + g * (c - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 < f2 {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - g * (c - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (c - a);
            f2 = f(x2);
        }
        if c - a <= 4.0 * f64::EPSILON * (a.abs() + c.abs()) {
            break;
        }
    }
    [(a, f(a)), (x1, f1), (x2, f2), (c, f(c))]
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |best, p| if p.1 < best.1 { p } else { best })
}

/// Minimizes the convex marginal objective `rho s + sum_k b(a_k - s)` over
/// `s >= 0`. The value comes from golden-section search; the minimizer from
/// bisection on the first-order condition.
fn marginal_oracle(b: &dyn BarrierOps, rho: f64, args: &[f64]) -> (f64, f64) {
    let obj = |s: f64| rho * s + args.iter().map(|&a| b.value(a - s)).sum::<f64>();
    let slope = |s: f64| rho - args.iter().map(|&a| b.derivative(a - s)).sum::<f64>();
    let lo = args.iter().copied().fold(0.0, f64::max);
    let mut hi = lo + 1.0;
    while slope(hi) < 0.0 {
        hi = lo + 2.0 * (hi - lo);
    }
    let (_, value) = golden_section(obj, lo, hi);
    let s = if lo == 0.0 && args.iter().all(|&a| a < 0.0) && slope(0.0) >= 0.0 {
        0.0
    } else {
        let (mut a, mut c) = (lo, hi);
        for _ in 0..400 {
            let m = 0.5 * (a + c);
            if m <= a || m >= c {
                break;
            }
            if slope(m) < 0.0 {
                a = m;
            } else {
                c = m;
            }
        }
        c
    };
    (value, s)
}

fn random_barrier(r: &mut ChaCha8Rng) -> Barrier {
    BARRIERS[r.random_range(0..BARRIERS.len())]
}

/// One-sided, bilateral and split envelopes against the marginal oracle on `cases` random inputs.
pub fn envelope_oracles(cases: usize, seed: u64) -> CheckResult {
    let mut r = CheckResult::new("envelopes match brute-force minimization");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = |a: f64, b: f64| close(a, b, ORACLE_RTOL, b.abs().max(1.0));
    for _ in 0..cases {
        let b = random_barrier(&mut rng);
        let rho = 10f64.powf(rng.random_range(-2.0..3.0));
        let t: f64 = rng.random_range(-5.0..5.0);

        let (ov, os) = marginal_oracle(&b, rho, &[t]);
        let od = b.derivative(t - os);
        let (v, d) = (psi_value(&b, rho, t), psi_derivative(&b, rho, t));
        r.case(tol(v, ov) && tol(d, od), || format!("{b} rho={rho:e} t={t}: ({v}, {d}) vs ({ov}, {od})"));

        let l: f64 = rng.random_range(-3.0..3.0);
        let width = if rng.random::<f64>() < 0.3 { 0.0 } else { 10f64.powf(rng.random_range(-2.0..1.0)) };
        let u = l + width;
        let t = 0.5 * (l + u) + rng.random_range(-5.0..5.0) * width.max(1.0);

        let (ov, os) = marginal_oracle(&b, rho, &[t - u, l - t]);
        let od = b.derivative(t - u - os) - b.derivative(l - t - os);
        match psi_bilateral(&b, rho, l, u, t) {
            Ok(e) => r.case(tol(e.value, ov) && tol(e.derivative, od), || {
                format!("{b} bilateral rho={rho:e} [{l}, {u}] t={t}: ({}, {}) vs ({ov}, {od})", e.value, e.derivative)
            }),
            Err(e) => r.case(false, || format!("bilateral error {e}")),
        }

        let (ou, osu) = marginal_oracle(&b, rho, &[t - u]);
        let (ol, osl) = marginal_oracle(&b, rho, &[l - t]);
        let od = b.derivative(t - u - osu) - b.derivative(l - t - osl);
        let v = psi_split(&b, rho, l, u, t).unwrap_or(f64::NAN);
        let d = psi_derivative(&b, rho, t - u) - psi_derivative(&b, rho, l - t);
        r.case(tol(v, ou + ol) && tol(d, od), || format!("{b} split rho={rho:e} [{l}, {u}] t={t}: ({v}, {d}) vs ({}, {od})", ou + ol));
    }
    r
}

/// Bilateral envelope lies between the one-sided envelope of the distance and twice the half-slope one.
pub fn sandwich(b: &Barrier) -> CheckResult {
    let mut r = CheckResult::new(format!("sandwich bounds [{b}]"));
    for &rho in &[0.5, 1.0, 4.0, 16.0, 64.0] {
        for &l in &[-1.0, 0.0, 0.5] {
            for &w in &[0.0, 0.5, 2.0] {
                let (u, h) = (l + w, 0.5 * w);
                for k in 0..=40 {
                    let t = -4.0 + 0.2 * k as f64;
                    let d = t.abs() - h;
                    let lo = psi_value(b, rho, d);
                    let hi = 2.0 * psi_value(b, rho / 2.0, d);
                    let mid = psi_bilateral(b, rho, l, u, t + 0.5 * (l + u)).map_or(f64::NAN, |e| e.value);
                    let eps = 1e-12 * hi.abs().max(1.0);
                    r.case(lo <= mid + eps && mid <= hi + eps, || format!("rho={rho} [{l}, {u}] t={t}: {lo} <= {mid} <= {hi}"));
                }
            }
        }
    }
    r
}

/// Tabulated `kappa` values.
pub fn kappa_table() -> CheckResult {
    let mut r = CheckResult::new("barrier behavior profile");
    for theta in [0.25, 0.5, 0.75] {
        let inv = Barrier::INVERSE.kappa(theta, KappaMode::Asymptotic).unwrap_or(f64::NAN);
        let want = 1.0 / (theta * theta);
        r.case(close(inv, want, KAPPA_TOL, want), || format!("inverse theta={theta}: {inv} vs {want}"));
        let ll = Barrier::LogLike.kappa(theta, KappaMode::Asymptotic).unwrap_or(f64::NAN);
        let want = 1.0 / theta;
        r.case(close(ll, want, KAPPA_TOL, want), || format!("loglike theta={theta}: {ll} vs {want}"));
    }
    r
}

/// Smallest value of `phi` over a fine grid around `x`, refined by golden-section search.
fn scalar_prox_oracle(g: &dyn Fn(f64) -> f64, gamma: f64, x: f64) -> f64 {
    let phi = |z: f64| g(z) + (z - x) * (z - x) / (2.0 * gamma);
    let span = x.abs() + 3.0 + 3.0 * gamma;
    let n = 4000;
    let mut best = phi(0.0).min(phi(x));
    let mut at = 0.0;
    for k in 0..=n {
        let z = -span + 2.0 * span * k as f64 / n as f64;
        if phi(z) < best {
            best = phi(z);
            at = z;
        }
    }
    let step = 2.0 * span / n as f64;
    best.min(golden_section(phi, at - step, at + step).1)
}

/// Proximal maps: prox inequality, brute-force optimality and fixed points.
pub fn prox_oracles(cases: usize, seed: u64) -> CheckResult {
    let mut r = CheckResult::new("proximal maps");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lam = 0.7;
    let scalar: Vec<(&str, Box<dyn ProxFriendly>, Box<dyn Fn(f64) -> f64>)> = vec![
        ("zero", Box::new(Zero), Box::new(|_| 0.0)),
        ("l1", Box::new(L1 { lambda: lam }), Box::new(move |z: f64| lam * z.abs())),
        ("l0", Box::new(L0 { lambda: lam }), Box::new(move |z: f64| if z != 0.0 { lam } else { 0.0 })),
        ("halfnorm", Box::new(HalfNorm { lambda: lam }), Box::new(move |z: f64| lam * z.abs().sqrt())),
        ("nonpos", Box::new(NonPositive), Box::new(|z: f64| if z <= 0.0 { 0.0 } else { f64::INFINITY })),
        (
            "box",
            Box::new(BoxIndicator { lo: vec![-0.5], hi: vec![1.5] }),
            Box::new(|z: f64| if (-0.5..=1.5).contains(&z) { 0.0 } else { f64::INFINITY }),
        ),
    ];
    for _ in 0..cases {
        let gamma = 10f64.powf(rng.random_range(-2.0..1.0));
        let x: f64 = rng.random_range(-4.0..4.0);
        for (name, op, g) in &scalar {
            let mut p = [0.0];
            if op.prox(gamma, &[x], &mut p).is_err() {
                r.case(false, || format!("{name}: prox failed"));
                continue;
            }
            let phi = g(p[0]) + (p[0] - x) * (p[0] - x) / (2.0 * gamma);
            let gx = g(x);
            r.case(!gx.is_finite() || phi <= gx + 1e-12, || format!("{name}: prox inequality fails at x={x}, gamma={gamma}"));
            let best = scalar_prox_oracle(g.as_ref(), gamma, x);
            r.case(phi <= best + 1e-9 * best.abs().max(1.0), || format!("{name}: x={x} gamma={gamma} prox {} value {phi} > oracle {best}", p[0]));
        }
        // Sphere: projection beats random unit vectors and is a fixed point.
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut p = vec![0.0; 3];
        UnitSphere.prox(gamma, &v, &mut p).expect("positive step");
        let dist = |z: &[f64]| z.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let dp = dist(&p);
        for _ in 0..20 {
            let mut z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = crate::model::linalg::norm2(&z);
            z.iter_mut().for_each(|c| *c /= n);
            r.case(dp <= dist(&z) + 1e-12, || "sphere projection not nearest".into());
        }
        let mut q = vec![0.0; 3];
        UnitSphere.prox(gamma, &p, &mut q).expect("positive step");
        r.case(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-15), || "sphere projection not idempotent".into());
        let inside = [rng.random_range(-0.5..1.5)];
        let mut q = [0.0];
        BoxIndicator { lo: vec![-0.5], hi: vec![1.5] }.prox(gamma, &inside, &mut q).expect("positive step");
        r.case(q == inside, || "box prox moves an interior point".into());
    }
    r
}

/// The bundled instances with small sizes.
pub fn audit_instances() -> Vec<Instance> {
    let mut v = vec![
        bench::gen_degenerate(3),
        bench::gen_nonneg_pca(10, 1.0, 0.5, 3).expect("valid parameters"),
        bench::gen_rosenbrock(RosenbrockVariant::Inequality, 3),
        bench::gen_rosenbrock(RosenbrockVariant::EqualitySlack, 3),
        bench::gen_matrix_completion(CompletionParams::default(), 3).expect("valid parameters"),
    ];
    let (native, split) = bench::gen_eq_qp(20, 2, 3).expect("valid parameters");
    v.push(native);
    v.push(Instance { name: format!("{}_split", split.name), ..split });
    v
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Gradients of `f`, transposed-Jacobian products of `c`, and subproblem
/// gradients against central differences at random points near `x0`.
pub fn fd_audit(inst: &Instance, points: usize, seed: u64) -> CheckResult {
    let mut r = CheckResult::new(format!("finite differences [{}]", inst.name));
    let p = &inst.problem;
    let (n, m) = (p.n, p.m());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let close_fd = |fd: f64, an: f64, scale: f64| (fd - an).abs() <= FD_RTOL * scale.max(1.0);
    for _ in 0..points {
        let x: Vec<f64> = inst.x0.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        let mut g = vec![0.0; n];
        p.f.eval(&x, &mut g);
        let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut jt = vec![0.0; n];
        p.c.jac_t_mul(&x, &v, &mut jt);
        let sp = Subproblem::new(p, Barrier::LogLike, 1.0, 0.5, Formulation::Native).expect("valid parameters");
        let mut gs = vec![0.0; n];
        let fx = sp.eval(&x, &mut gs).unwrap_or(f64::NAN);
        r.case(fx.is_finite(), || "subproblem value not finite".into());
        let gscale = g.iter().chain(&gs).fold(0.0f64, |a, b| a.max(b.abs()));
        let jscale = jt.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut scratch = vec![0.0; n];
        for k in 0..n {
            let h = fd_step(x[k]);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let fd = (p.f.eval(&xp, &mut scratch) - p.f.eval(&xm, &mut scratch)) / (2.0 * h);
            r.case(close_fd(fd, g[k], gscale), || format!("grad f[{k}]: fd {fd} vs {}", g[k]));
            let (cp, cm) = (p.eval_constraints(&xp), p.eval_constraints(&xm));
            let fd: f64 = (0..m).map(|i| v[i] * (cp[i] - cm[i]) / (2.0 * h)).sum();
            r.case(close_fd(fd, jt[k], jscale), || format!("Jc^T v [{k}]: fd {fd} vs {}", jt[k]));
            let fp = sp.eval(&xp, &mut scratch).unwrap_or(f64::NAN);
            let fm = sp.eval(&xm, &mut scratch).unwrap_or(f64::NAN);
            let fd = (fp - fm) / (2.0 * h);
            r.case(close_fd(fd, gs[k], gscale), || format!("grad F[{k}]: fd {fd} vs {}", gs[k]));
        }
    }
    r
}

/// Runs every check. Deterministic for a given seed.
pub fn run_all(seed: u64) -> CheckReport {
    let mut checks = Vec::new();
    for b in BARRIERS {
        let name = b.id();
        checks.push(conjugate_identity(&name, &b));
        checks.push(inverse_relation(&name, &b));
        checks.push(monotone_limits(&name, &b));
        checks.push(sandwich(&b));
    }
    checks.push(envelope_oracles(600, seed));
    checks.push(kappa_table());
    checks.push(prox_oracles(200, seed.wrapping_add(1)));
    for (i, inst) in audit_instances().iter().enumerate() {
        checks.push(fd_audit(inst, 10, seed.wrapping_add(2 + i as u64)));
    }
    CheckReport { checks, candidate_rejections: penalty::loglike_candidate_rejections() }
}
