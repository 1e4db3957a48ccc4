//! Proximal-gradient inner solvers for `min F(x) + g(x)`.
//!
//! Both solvers stop on the stationarity certificate
//! `r = ||(x - xbar)/gamma + grad F(xbar) - grad F(x)||`, which bounds
//! `dist(0, grad F(xbar) + partial g(xbar))`, and return the certified point `xbar`.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::linalg::{dot, norm2};
use crate::model::{ModelError, Subproblem};

pub const GAMMA_MIN: f64 = 1e-12;
pub const GAMMA_MAX: f64 = 1e12;
/// Below this the backtracking gives up.
const GAMMA_FLOOR: f64 = 1e-18;
const PROBE_SEED: u64 = 0x5EED_0F_7E57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerKind {
    /// Nonmonotone proximal gradient with spectral step sizes.
    Spectral,
    /// Forward-backward envelope line search along L-BFGS directions.
    Accelerated,
}

impl InnerKind {
    pub fn label(self) -> &'static str {
        match self {
            InnerKind::Spectral => "spectral",
            InnerKind::Accelerated => "accel",
        }
    }
}

impl std::str::FromStr for InnerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spectral" => Ok(InnerKind::Spectral),
            "accel" | "accelerated" => Ok(InnerKind::Accelerated),
            _ => Err(format!("unknown inner solver `{s}`; expected spectral or accel")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerConfig {
    pub kind: InnerKind,
    pub max_iters: usize,
    /// Initial step; estimated from a curvature probe when absent.
    pub gamma_init: Option<f64>,
    /// Reference window of the nonmonotone acceptance test.
    pub nonmonotone_memory: usize,
    pub lbfgs_memory: usize,
    /// Record the merit value of every accepted iterate.
    pub trace: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            kind: InnerKind::Accelerated,
            max_iters: 20_000,
            gamma_init: None,
            nonmonotone_memory: 10,
            lbfgs_memory: 5,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStatus {
    Converged,
    MaxIters,
    /// Backtracking drove the step size below the floor.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    /// Certified point `xbar`.
    pub x: Vec<f64>,
    /// Point whose forward-backward step produced `x`.
    pub anchor: Vec<f64>,
    pub status: InnerStatus,
    pub iters: usize,
    /// Gradient evaluations spent by this call.
    pub grad_evals: u64,
    pub residual: f64,
    pub gamma: f64,
    pub trace: Vec<f64>,
}

/// Forward-backward step `xbar = prox_{gamma g}(x - gamma grad F(x))` and the
/// certificate at `xbar`. Costs two gradient evaluations.
pub fn stationarity_residual(sp: &Subproblem, x: &[f64], gamma: f64) -> Result<(Vec<f64>, f64), ModelError> {
    let n = x.len();
    let mut gx = vec![0.0; n];
    sp.eval(x, &mut gx)?;
    let mut xb = vec![0.0; n];
    forward_backward(sp, x, &gx, gamma, &mut xb)?;
    let mut gb = vec![0.0; n];
    sp.eval(&xb, &mut gb)?;
    Ok((xb.clone(), certificate(x, &xb, &gx, &gb, gamma)))
}

fn forward_backward(sp: &Subproblem, x: &[f64], gx: &[f64], gamma: f64, out: &mut [f64]) -> Result<(), ModelError> {
    let z: Vec<f64> = x.iter().zip(gx).map(|(xi, gi)| xi - gamma * gi).collect();
    sp.prox(gamma, &z, out)
}

fn certificate(x: &[f64], xb: &[f64], gx: &[f64], gb: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let v = (x[i] - xb[i]) / gamma + gb[i] - gx[i];
        s += v * v;
    }
    s.sqrt()
}

/// Step size from a finite-difference curvature probe along a fixed random direction.
pub fn estimate_gamma(sp: &Subproblem, x: &[f64], gx: &[f64]) -> f64 {
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let mut d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let dn = norm2(&d);
    if n == 0 || dn == 0.0 {
        return 1.0;
    }
    d.iter_mut().for_each(|v| *v /= dn);
    let h = 1e-6 * norm2(x).max(1.0);
    let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + h * b).collect();
    let mut gp = vec![0.0; n];
    if sp.eval(&xp, &mut gp).is_err() {
        return 1.0;
    }
    let diff: Vec<f64> = gp.iter().zip(gx).map(|(a, b)| a - b).collect();
    let l = norm2(&diff) / h;
    if l.is_finite() && l > 1e-12 {
        (0.95 / l).clamp(GAMMA_MIN, GAMMA_MAX)
    } else {
        1.0
    }
}

fn roundoff(v: f64) -> f64 {
    10.0 * f64::EPSILON * v.abs().max(1.0)
}

pub fn solve(sp: &Subproblem, x0: &[f64], eps: f64, cfg: &InnerConfig) -> Result<InnerResult, ModelError> {
    let before = sp.grad_evals();
    let mut res = match cfg.kind {
        InnerKind::Spectral => solve_spectral(sp, x0, eps, cfg),
        InnerKind::Accelerated => solve_accelerated(sp, x0, eps, cfg),
    }?;
    res.grad_evals = sp.grad_evals() - before;
    Ok(res)
}

fn initial_gamma(sp: &Subproblem, x: &[f64], gx: &[f64], cfg: &InnerConfig) -> f64 {
    match cfg.gamma_init {
        Some(g) if g.is_finite() && g > 0.0 => g.clamp(GAMMA_MIN, GAMMA_MAX),
        _ => estimate_gamma(sp, x, gx),
    }
}

fn solve_spectral(sp: &Subproblem, x0: &[f64], eps: f64, cfg: &InnerConfig) -> Result<InnerResult, ModelError> {
    const SIGMA: f64 = 1e-4;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut gx = vec![0.0; n];
    let fx = sp.eval(&x, &mut gx)?;
    let mut gamma = initial_gamma(sp, &x, &gx, cfg);
    let mut refs: VecDeque<f64> = VecDeque::with_capacity(cfg.nonmonotone_memory.max(1));
    refs.push_back(fx + sp.g_value(&x));
    let mut trace = Vec::new();
    let (mut xb, mut gb) = (vec![0.0; n], vec![0.0; n]);
    let mut residual = f64::INFINITY;
    let mut last_bar = x.clone();
    let mut last_anchor = x.clone();
    let mut last_gamma = gamma;

    for iter in 0..cfg.max_iters {
        let phi_ref = refs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let phib = loop {
            forward_backward(sp, &x, &gx, gamma, &mut xb)?;
            let trial = sp.eval(&xb, &mut gb);
            let dd: f64 = x.iter().zip(&xb).map(|(a, b)| (a - b) * (a - b)).sum();
            if let Ok(fb) = trial {
                let phib = fb + sp.g_value(&xb);
                if phib <= phi_ref - SIGMA * dd / (2.0 * gamma) + roundoff(phi_ref) {
                    break phib;
                }
            }
            gamma *= 0.5;
            if gamma < GAMMA_FLOOR {
                trial?;
                return Ok(InnerResult { x: last_bar, anchor: last_anchor, status: InnerStatus::Stalled, iters: iter, grad_evals: 0, residual, gamma: last_gamma, trace });
            }
        };
        residual = certificate(&x, &xb, &gx, &gb, gamma);
        last_bar.copy_from_slice(&xb);
        last_anchor.copy_from_slice(&x);
        last_gamma = gamma;
        if cfg.trace {
            trace.push(phi_ref);
        }
        if residual <= eps {
            return Ok(InnerResult { x: xb, anchor: x, status: InnerStatus::Converged, iters: iter + 1, grad_evals: 0, residual, gamma, trace });
        }
        // Barzilai-Borwein step from the accepted move, alternating the long and short variants.
        let s: Vec<f64> = xb.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gb.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let (ss, sy, yy) = (dot(&s, &s), dot(&s, &y), dot(&y, &y));
        gamma = if sy > 0.0 {
            if iter % 2 == 1 {
                sy / yy
            } else {
                ss / sy
            }
        } else if yy > 0.0 {
            (ss / yy).sqrt()
        } else {
            2.0 * gamma
        }
        .clamp(GAMMA_MIN, GAMMA_MAX);
        std::mem::swap(&mut x, &mut xb);
        std::mem::swap(&mut gx, &mut gb);
        if refs.len() == cfg.nonmonotone_memory.max(1) {
            refs.pop_front();
        }
        refs.push_back(phib);
    }
    Ok(InnerResult {
        x: last_bar,
        anchor: last_anchor,
        status: InnerStatus::MaxIters,
        iters: cfg.max_iters, grad_evals: 0,
        residual,
        gamma: last_gamma,
        trace,
    })
}

/// Point `x` together with everything the accelerated method needs there.
struct Anchor {
    x: Vec<f64>,
    fx: f64,
    gx: Vec<f64>,
    xb: Vec<f64>,
    fb: f64,
    gb: Vec<f64>,
    g_xb: f64,
}

impl Anchor {
    fn fbe(&self, gamma: f64) -> f64 {
        let mut lin = 0.0;
        let mut dd = 0.0;
        for i in 0..self.x.len() {
            let d = self.xb[i] - self.x[i];
            lin += self.gx[i] * d;
            dd += d * d;
        }
        self.fx + self.g_xb + lin + dd / (2.0 * gamma)
    }

    fn upper_bound_holds(&self, gamma: f64) -> bool {
        const LIP_FRACTION: f64 = 0.95;
        let mut lin = 0.0;
        let mut dd = 0.0;
        for i in 0..self.x.len() {
            let d = self.xb[i] - self.x[i];
            lin += self.gx[i] * d;
            dd += d * d;
        }
        self.fb <= self.fx + lin + LIP_FRACTION * dd / (2.0 * gamma) + roundoff(self.fx)
    }

    fn residual_map(&self, gamma: f64) -> Vec<f64> {
        self.x.iter().zip(&self.xb).map(|(a, b)| (a - b) / gamma).collect()
    }
}

/// Builds the anchor at `x` given `F(x)` and `grad F(x)`; one more gradient evaluation.
fn anchor_at(sp: &Subproblem, x: Vec<f64>, fx: f64, gx: Vec<f64>, gamma: f64) -> Result<Anchor, ModelError> {
    let n = x.len();
    let mut xb = vec![0.0; n];
    forward_backward(sp, &x, &gx, gamma, &mut xb)?;
    let mut gb = vec![0.0; n];
    let fb = sp.eval(&xb, &mut gb).unwrap_or(f64::INFINITY);
    let g_xb = sp.g_value(&xb);
    Ok(Anchor { x, fx, gx, xb, fb, gb, g_xb })
}

/// Shrinks `gamma` until the quadratic upper bound holds at the anchor.
fn settle(sp: &Subproblem, a: &mut Anchor, gamma: &mut f64) -> Result<bool, ModelError> {
    let mut shrunk = false;
    while !(a.fb.is_finite() && a.upper_bound_holds(*gamma)) {
        *gamma *= 0.5;
        shrunk = true;
        if *gamma < GAMMA_FLOOR {
            return Err(ModelError::EvalFailure("step size collapsed"));
        }
        let x = std::mem::take(&mut a.x);
        let gx = std::mem::take(&mut a.gx);
        *a = anchor_at(sp, x, a.fx, gx, *gamma)?;
    }
    Ok(shrunk)
}

struct Lbfgs {
    mem: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
}

impl Lbfgs {
    fn new(mem: usize) -> Self {
        Self { mem: mem.max(1), s: VecDeque::new(), y: VecDeque::new() }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * norm2(&s) * norm2(&y)) {
            return;
        }
        if self.s.len() == self.mem {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
    }

    /// `-H q` by the two-loop recursion; `H_0 = h0 I` when memory is empty.
    fn direction(&self, q: &[f64], h0: f64) -> Vec<f64> {
        let mut q = q.to_vec();
        let k = self.s.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&self.s[i], &self.y[i]);
            alphas[i] = rho * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alphas[i] * yj;
            }
        }
        let scale = match (self.s.back(), self.y.back()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => h0,
        };
        q.iter_mut().for_each(|v| *v *= scale);
        for i in 0..k {
            let rho = 1.0 / dot(&self.s[i], &self.y[i]);
            let beta = rho * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alphas[i] - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

fn solve_accelerated(sp: &Subproblem, x0: &[f64], eps: f64, cfg: &InnerConfig) -> Result<InnerResult, ModelError> {
    const BETA: f64 = 0.025;
    const MAX_HALVINGS: usize = 10;
    let n = x0.len();
    let mut gx = vec![0.0; n];
    let fx = sp.eval(x0, &mut gx)?;
    let mut gamma = initial_gamma(sp, x0, &gx, cfg);
    let mut a = anchor_at(sp, x0.to_vec(), fx, gx, gamma)?;
    settle(sp, &mut a, &mut gamma)?;
    let mut lbfgs = Lbfgs::new(cfg.lbfgs_memory);
    let mut trace = Vec::new();
    let mut residual: f64;

    for iter in 0..cfg.max_iters {
        residual = certificate(&a.x, &a.xb, &a.gx, &a.gb, gamma);
        let merit = a.fbe(gamma);
        if cfg.trace {
            trace.push(merit);
        }
        if residual <= eps {
            return Ok(InnerResult { x: a.xb, anchor: a.x, status: InnerStatus::Converged, iters: iter, grad_evals: 0, residual, gamma, trace });
        }
        let r = a.residual_map(gamma);
        let d = lbfgs.direction(&r, gamma);
        let dd: f64 = r.iter().map(|v| v * v).sum::<f64>() * gamma * gamma;
        let target = merit - BETA * dd / (2.0 * gamma) + roundoff(merit);

        let mut tau = 1.0;
        let mut next: Option<Anchor> = None;
        for _ in 0..MAX_HALVINGS {
            let xp: Vec<f64> =
                (0..n).map(|i| a.x[i] + (1.0 - tau) * (a.xb[i] - a.x[i]) + tau * d[i]).collect();
            let mut gp = vec![0.0; n];
            if let Ok(fp) = sp.eval(&xp, &mut gp) {
                let cand = anchor_at(sp, xp, fp, gp, gamma)?;
                if cand.fbe(gamma) <= target {
                    next = Some(cand);
                    break;
                }
            }
            tau *= 0.5;
        }
        // Plain forward-backward step; its decrease is guaranteed by the upper bound at x.
        let mut cand = match next {
            Some(c) => c,
            None => {
                let xp = a.xb.clone();
                let (fp, gp) = (a.fb, a.gb.clone());
                anchor_at(sp, xp, fp, gp, gamma)?
            }
        };
        let old_gamma = gamma;
        let shrunk = settle(sp, &mut cand, &mut gamma)?;
        if shrunk {
            lbfgs.clear();
        } else {
            let s: Vec<f64> = cand.x.iter().zip(&a.x).map(|(p, q)| p - q).collect();
            let rn = cand.residual_map(old_gamma);
            let y: Vec<f64> = rn.iter().zip(&r).map(|(p, q)| p - q).collect();
            lbfgs.push(s, y);
        }
        a = cand;
    }
    residual = certificate(&a.x, &a.xb, &a.gx, &a.gb, gamma);
    Ok(InnerResult { x: a.xb, anchor: a.x, status: InnerStatus::MaxIters, iters: cfg.max_iters, grad_evals: 0, residual, gamma, trace })
}
