//! Problem description `min f(x) + g(x)  s.t.  l <= c(x) <= u` and the smooth
//! penalized subproblem `F = f + mu * sum_i psi_i(c_i)` handed to inner solvers.

pub mod linalg;
pub mod prox;

use std::cell::Cell;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::Barrier;
use crate::penalty::{PenaltyError, Shape, SmoothPenalty};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("row {row}: invalid bounds [{l}, {u}]")]
    Bounds { row: usize, l: f64, u: f64 },
    #[error("proximal step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value from {0}")]
    EvalFailure(&'static str),
    #[error("alpha and mu must be positive and finite (alpha={alpha}, mu={mu})")]
    Parameters { alpha: f64, mu: f64 },
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
}

/// Smooth cost with locally Lipschitz gradient.
pub trait SmoothCost: Send + Sync {
    /// Returns `f(x)` and writes `grad f(x)`.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Smooth constraint map `c: R^n -> R^m`.
pub trait ConstraintMap: Send + Sync {
    fn rows(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// `out = Jc(x)^T v`.
    fn jac_t_mul(&self, x: &[f64], v: &[f64], out: &mut [f64]);
}

/// Lower semicontinuous term with an inexpensive proximal map.
pub trait ProxFriendly: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError>;
}

/// Cost given by a closure.
pub struct FnCost<F>(pub F);

impl<F> SmoothCost for FnCost<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Send + Sync,
{
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.0)(x, grad)
    }
}

/// Constraint map given by an evaluation closure and a transposed-Jacobian closure.
pub struct FnConstraints<C, J> {
    pub rows: usize,
    pub eval: C,
    pub jac_t: J,
}

impl<C, J> ConstraintMap for FnConstraints<C, J>
where
    C: Fn(&[f64], &mut [f64]) + Send + Sync,
    J: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn rows(&self) -> usize {
        self.rows
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }
    fn jac_t_mul(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.jac_t)(x, v, out)
    }
}

/// The empty constraint map.
pub struct NoConstraints;

impl ConstraintMap for NoConstraints {
    fn rows(&self) -> usize {
        0
    }
    fn eval(&self, _x: &[f64], _out: &mut [f64]) {}
    fn jac_t_mul(&self, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// Repeats rows of an inner map; used to state equalities as inequality pairs.
struct RepeatedRows {
    inner: Arc<dyn ConstraintMap>,
    source: Vec<usize>,
}

impl ConstraintMap for RepeatedRows {
    fn rows(&self) -> usize {
        self.source.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let mut c = vec![0.0; self.inner.rows()];
        self.inner.eval(x, &mut c);
        for (o, &s) in out.iter_mut().zip(&self.source) {
            *o = c[s];
        }
    }
    fn jac_t_mul(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let mut w = vec![0.0; self.inner.rows()];
        for (vi, &s) in v.iter().zip(&self.source) {
            w[s] += vi;
        }
        self.inner.jac_t_mul(x, &w, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowClass {
    /// `c_i <= u_i`.
    Upper,
    /// `l_i <= c_i`.
    Lower,
    /// `l_i <= c_i <= u_i`, `l_i < u_i`.
    TwoSided,
    /// `c_i = l_i = u_i`.
    Equality,
    /// Both bounds infinite; the row is ignored.
    Free,
}

impl RowClass {
    /// Number of one-sided constraints the row accounts for in the threshold.
    pub fn weight(self) -> usize {
        match self {
            RowClass::Upper | RowClass::Lower => 1,
            RowClass::TwoSided | RowClass::Equality => 2,
            RowClass::Free => 0,
        }
    }
}

pub fn classify_row(l: f64, u: f64) -> RowClass {
    match (l.is_finite(), u.is_finite()) {
        (false, true) => RowClass::Upper,
        (true, false) => RowClass::Lower,
        (true, true) if l == u => RowClass::Equality,
        (true, true) => RowClass::TwoSided,
        (false, false) => RowClass::Free,
    }
}

/// How equality rows enter the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// One bilateral envelope per two-sided or equality row.
    #[default]
    Native,
    /// Equality rows as two independent one-sided penalties.
    SplitEqualities,
}

impl std::str::FromStr for Formulation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "native" => Ok(Formulation::Native),
            "split" | "split_equalities" => Ok(Formulation::SplitEqualities),
            _ => Err(format!("unknown formulation `{s}`; expected native or split")),
        }
    }
}

impl Formulation {
    pub fn label(self) -> &'static str {
        match self {
            Formulation::Native => "native",
            Formulation::SplitEqualities => "split",
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub n: usize,
    pub f: Arc<dyn SmoothCost>,
    pub g: Arc<dyn ProxFriendly>,
    pub c: Arc<dyn ConstraintMap>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("n", &self.n)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn new(
        n: usize,
        f: Arc<dyn SmoothCost>,
        g: Arc<dyn ProxFriendly>,
        c: Arc<dyn ConstraintMap>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let m = c.rows();
        if lower.len() != m || upper.len() != m {
            return Err(ModelError::Dimension(format!(
                "{m} constraint rows but {} lower and {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (row, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(ModelError::Bounds { row, l, u });
            }
        }
        Ok(Self { n, f, g, c, lower, upper })
    }

    pub fn m(&self) -> usize {
        self.lower.len()
    }

    pub fn row_classes(&self) -> Vec<RowClass> {
        self.lower.iter().zip(&self.upper).map(|(&l, &u)| classify_row(l, u)).collect()
    }

    pub fn equality_count(&self) -> usize {
        self.row_classes().iter().filter(|c| **c == RowClass::Equality).count()
    }

    /// `m'`: one-sided rows count once, two-sided and equality rows twice.
    pub fn one_sided_count(&self) -> usize {
        self.row_classes().iter().map(|c| c.weight()).sum()
    }

    /// Same feasible set with every equality row restated as a pair of
    /// one-sided rows `c_i <= v_i` and `c_i >= v_i`.
    pub fn split_equalities(&self) -> ProblemSpec {
        let mut source = Vec::new();
        let (mut lower, mut upper) = (Vec::new(), Vec::new());
        for (i, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if classify_row(l, u) == RowClass::Equality {
                source.extend([i, i]);
                lower.extend([f64::NEG_INFINITY, l]);
                upper.extend([u, f64::INFINITY]);
            } else {
                source.push(i);
                lower.push(l);
                upper.push(u);
            }
        }
        ProblemSpec {
            n: self.n,
            f: self.f.clone(),
            g: self.g.clone(),
            c: Arc::new(RepeatedRows { inner: self.c.clone(), source }),
            lower,
            upper,
        }
    }

    /// `max_i dist(c_i(x), [l_i, u_i])`.
    pub fn violation(&self, cx: &[f64]) -> f64 {
        cx.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&c, (&l, &u))| (c - u).max(l - c).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn eval_constraints(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.m()];
        self.c.eval(x, &mut c);
        c
    }

    /// `f(x) + g(x)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.n];
        self.f.eval(x, &mut grad) + self.g.value(x)
    }
}

/// Smooth part of the penalized subproblem at fixed `(alpha, mu)`.
pub struct Subproblem<'a> {
    problem: &'a ProblemSpec,
    penalties: Vec<Option<SmoothPenalty>>,
    mu: f64,
    alpha: f64,
    grad_evals: Cell<u64>,
}

impl<'a> Subproblem<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        barrier: Barrier,
        alpha: f64,
        mu: f64,
        formulation: Formulation,
    ) -> Result<Self, ModelError> {
        if !(alpha.is_finite() && alpha > 0.0 && mu.is_finite() && mu > 0.0) {
            return Err(ModelError::Parameters { alpha, mu });
        }
        let rho_star = alpha / mu;
        let penalties = problem
            .lower
            .iter()
            .zip(&problem.upper)
            .map(|(&l, &u)| {
                let shape = match classify_row(l, u) {
                    RowClass::Upper => Shape::Upper(u),
                    RowClass::Lower => Shape::Lower(l),
                    RowClass::TwoSided => Shape::TwoSided { l, u },
                    RowClass::Equality => match formulation {
                        Formulation::Native => Shape::TwoSided { l, u },
                        Formulation::SplitEqualities => Shape::Split { l, u },
                    },
                    RowClass::Free => return Ok(None),
                };
                SmoothPenalty::new(barrier, rho_star, shape).map(Some)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { problem, penalties, mu, alpha, grad_evals: Cell::new(0) })
    }

    pub fn problem(&self) -> &ProblemSpec {
        self.problem
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn grad_evals(&self) -> u64 {
        self.grad_evals.get()
    }

    /// Value of `F` and its gradient; counts one gradient evaluation.
    pub fn eval(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        self.grad_evals.set(self.grad_evals.get() + 1);
        let p = self.problem;
        let fx = p.f.eval(x, grad);
        if !fx.is_finite() {
            return Err(ModelError::EvalFailure("f"));
        }
        let m = p.m();
        if m == 0 {
            return Ok(fx);
        }
        let mut c = vec![0.0; m];
        p.c.eval(x, &mut c);
        let mut w = vec![0.0; m];
        let mut pen = 0.0;
        for i in 0..m {
            if let Some(psi) = &self.penalties[i] {
                if !c[i].is_finite() {
                    return Err(ModelError::EvalFailure("c"));
                }
                let (v, wu, wl) = psi.eval(c[i]);
                pen += v;
                w[i] = self.mu * (wu - wl);
            }
        }
        let mut jt = vec![0.0; p.n];
        p.c.jac_t_mul(x, &w, &mut jt);
        for (g, j) in grad.iter_mut().zip(&jt) {
            *g += j;
        }
        let val = fx + self.mu * pen;
        if !val.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::EvalFailure("penalty"));
        }
        Ok(val)
    }

    /// Nonnegative multiplier pairs `mu * (psi_up', psi_lo')` per row at `c`.
    pub fn side_multipliers(&self, c: &[f64]) -> Vec<(f64, f64)> {
        c.iter()
            .zip(&self.penalties)
            .map(|(&ci, psi)| match psi {
                Some(psi) => {
                    let (wu, wl) = psi.side_weights(ci);
                    (self.mu * wu, self.mu * wl)
                }
                None => (0.0, 0.0),
            })
            .collect()
    }

    /// Signed multipliers `mu * psi_i'(c_i(x))`: non-equality rows in `y`
    /// (nonnegative on upper rows, nonpositive on lower rows), equality rows in `y_eq`.
    pub fn multipliers(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.problem.eval_constraints(x);
        let (mut y, mut y_eq) = (Vec::new(), Vec::new());
        for (i, (yu, yl)) in self.side_multipliers(&c).into_iter().enumerate() {
            match classify_row(self.problem.lower[i], self.problem.upper[i]) {
                RowClass::Equality => y_eq.push(yu - yl),
                _ => y.push(yu - yl),
            }
        }
        (y, y_eq)
    }

    pub fn g_value(&self, x: &[f64]) -> f64 {
        self.problem.g.value(x)
    }

    pub fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        self.problem.g.prox(gamma, x, out)
    }
}
