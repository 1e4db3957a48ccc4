//! Marginalized penalty-barrier envelopes.
//!
//! The one-sided envelope `psi_{rho*}(t) = inf_{s >= 0} rho* s + b(t - s)`
//! equals `b` left of the breakpoint `b*'(rho*)` and continues linearly with
//! slope `rho*` to the right of it. The bilateral envelope handles
//! `l <= t <= u` with a single shared slack.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{Barrier, BarrierOps};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PenaltyError {
    #[error("penalty slope rho* must be positive and finite, got {0}")]
    BadRhoStar(f64),
    #[error("invalid bounds [{l}, {u}]")]
    BadBounds { l: f64, u: f64 },
    #[error("non-finite argument {0}")]
    NonFinite(f64),
}

/// Relative tolerance of the first-order check applied to closed-form slacks.
pub const SLACK_FOC_RTOL: f64 = 1e-6;

static CANDIDATE_REJECTIONS: AtomicU64 = AtomicU64::new(0);

/// How many times a closed-form log-like slack failed its first-order check
/// and was replaced by the numerical solution (process-wide).
pub fn loglike_candidate_rejections() -> u64 {
    CANDIDATE_REJECTIONS.load(Ordering::Relaxed)
}

/// One-sided envelope value for the constraint `t <= 0`.
pub fn psi_value<B: BarrierOps + ?Sized>(b: &B, rho_star: f64, t: f64) -> f64 {
    let rho = b.conjugate_derivative(rho_star);
    if t <= rho {
        b.value(t)
    } else {
        rho_star * t - b.conjugate(rho_star)
    }
}

/// `min{b'(t), rho*}`; never exceeds `rho*`.
pub fn psi_derivative<B: BarrierOps + ?Sized>(b: &B, rho_star: f64, t: f64) -> f64 {
    let rho = b.conjugate_derivative(rho_star);
    if t <= rho {
        b.derivative(t)
    } else {
        rho_star
    }
}

/// Optimal slack `[t - b*'(rho*)]_+` of the one-sided envelope.
pub fn marginal_slack<B: BarrierOps + ?Sized>(b: &B, rho_star: f64, t: f64) -> f64 {
    (t - b.conjugate_derivative(rho_star)).max(0.0)
}

/// Result of evaluating the bilateral envelope at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralEval {
    pub value: f64,
    pub derivative: f64,
    pub slack: f64,
    /// `b'(t - u - s)`, the weight on the upper bound.
    pub upper_weight: f64,
    /// `b'(l - t - s)`, the weight on the lower bound.
    pub lower_weight: f64,
}

fn check_rho(rho_star: f64) -> Result<(), PenaltyError> {
    if rho_star.is_finite() && rho_star > 0.0 {
        Ok(())
    } else {
        Err(PenaltyError::BadRhoStar(rho_star))
    }
}

fn check_two_sided(l: f64, u: f64) -> Result<(), PenaltyError> {
    if l.is_finite() && u.is_finite() && l <= u {
        Ok(())
    } else {
        Err(PenaltyError::BadBounds { l, u })
    }
}

/// Closed-form candidate for the log-like bilateral slack. It is not exact in
/// general; callers must verify it against the first-order condition.
pub fn loglike_slack_candidate(rho_star: f64, l: f64, u: f64, t: f64) -> f64 {
    let tau = t - 0.5 * (l + u);
    let t2 = tau * tau;
    let inner = (4.0 * t2 / rho_star + t2 + 1.0 / rho_star).sqrt();
    let s = (rho_star * t2 + rho_star / 4.0 + 1.0 + inner).sqrt() - 0.5 + 0.5 * (l - u);
    s.max(0.0)
}

/// Bilateral envelope `inf_{s >= 0} rho* s + b(t - u - s) + b(l - t - s)`.
pub fn psi_bilateral(b: &Barrier, rho_star: f64, l: f64, u: f64, t: f64) -> Result<BilateralEval, PenaltyError> {
    check_rho(rho_star)?;
    check_two_sided(l, u)?;
    if !t.is_finite() {
        return Err(PenaltyError::NonFinite(t));
    }
    Ok(bilateral_eval(b, rho_star, l, u, t))
}

/// Split two-sided penalty `psi(t - u) + psi(l - t)`.
pub fn psi_split<B: BarrierOps + ?Sized>(b: &B, rho_star: f64, l: f64, u: f64, t: f64) -> Result<f64, PenaltyError> {
    check_rho(rho_star)?;
    check_two_sided(l, u)?;
    Ok(psi_value(b, rho_star, t - u) + psi_value(b, rho_star, l - t))
}

fn bilateral_eval(b: &Barrier, rho_star: f64, l: f64, u: f64, t: f64) -> BilateralEval {
    let h = 0.5 * (u - l);
    let tau = t - 0.5 * (l + u);
    let a = tau.abs();

    if a < h {
        let (wu, wl) = (b.derivative(t - u), b.derivative(l - t));
        if wu + wl <= rho_star {
            return BilateralEval {
                value: b.value(t - u) + b.value(l - t),
                derivative: wu - wl,
                slack: 0.0,
                upper_weight: wu,
                lower_weight: wl,
            };
        }
    }

    // d is the distance of the nearer argument from 0; the farther one is 2a + d.
    let foc = |d: f64| b.derivative(-d) + b.derivative(-2.0 * a - d) - rho_star;
    let d_lo = (h - a).max(0.0);
    let candidate = match *b {
        Barrier::InversePower { p } if p == 1.0 => {
            let big = 1.0 / rho_star + (4.0 * a * a / rho_star + 1.0 / (rho_star * rho_star)).sqrt();
            let s_total = (a * a + big).sqrt();
            Some(big / (s_total + a))
        }
        Barrier::LogLike => {
            let s = loglike_slack_candidate(rho_star, l, u, t);
            Some(s + h - a)
        }
        _ => None,
    };
    let d = match candidate {
        Some(d) if d > d_lo && foc(d).abs() <= SLACK_FOC_RTOL * rho_star => d,
        other => {
            if other.is_some() && matches!(b, Barrier::LogLike) {
                CANDIDATE_REJECTIONS.fetch_add(1, Ordering::Relaxed);
            }
            let d_hi = (-b.conjugate_derivative(0.5 * rho_star)).max(d_lo);
            solve_decreasing(b, a, rho_star, d_lo, d_hi)
        }
    };
    let near = -d;
    let far = -2.0 * a - d;
    let slack = (a - h) + d;
    let (wn, wf) = (b.derivative(near), b.derivative(far));
    let (wu, wl) = if tau >= 0.0 { (wn, wf) } else { (wf, wn) };
    BilateralEval {
        value: rho_star * slack + b.value(near) + b.value(far),
        derivative: wu - wl,
        slack,
        upper_weight: wu,
        lower_weight: wl,
    }
}

/// Root of `b'(-d) + b'(-2a - d) = rho*` on `(lo, hi]` by safeguarded Newton.
fn solve_decreasing(b: &Barrier, a: f64, rho_star: f64, lo: f64, hi: f64) -> f64 {
    let g = |d: f64| b.derivative(-d) + b.derivative(-2.0 * a - d) - rho_star;
    let dg = |d: f64| -(b.second_derivative(-d) + b.second_derivative(-2.0 * a - d));
    let (mut lo, mut hi) = (lo, hi);
    let mut d = hi;
    for _ in 0..200 {
        let gd = g(d);
        if gd == 0.0 {
            return d;
        }
        if gd > 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let newton = d - gd / dg(d);
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - d).abs() <= 4.0 * f64::EPSILON * d.abs() || hi - lo <= 4.0 * f64::EPSILON * hi {
            return next;
        }
        d = next;
    }
    d
}

/// Bound structure of one constraint row in penalty form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// `t <= u`.
    Upper(f64),
    /// `l <= t`, handled by reflection.
    Lower(f64),
    /// `l <= t <= u` with one shared slack; `l == u` is an equality.
    TwoSided { l: f64, u: f64 },
    /// `l <= t <= u` as two independent one-sided penalties.
    Split { l: f64, u: f64 },
}

/// A row penalty with its breakpoint and conjugate value cached.
#[derive(Debug, Clone, Copy)]
pub struct SmoothPenalty {
    barrier: Barrier,
    rho_star: f64,
    shape: Shape,
    breakpoint: f64,
    conj: f64,
}

impl SmoothPenalty {
    pub fn new(barrier: Barrier, rho_star: f64, shape: Shape) -> Result<Self, PenaltyError> {
        check_rho(rho_star)?;
        match shape {
            Shape::Upper(v) | Shape::Lower(v) if !v.is_finite() => {
                return Err(PenaltyError::BadBounds { l: v, u: v });
            }
            Shape::TwoSided { l, u } | Shape::Split { l, u } => check_two_sided(l, u)?,
            _ => {}
        }
        Ok(Self {
            barrier,
            rho_star,
            shape,
            breakpoint: barrier.conjugate_derivative(rho_star),
            conj: barrier.conjugate(rho_star),
        })
    }

    pub fn barrier(&self) -> Barrier {
        self.barrier
    }

    pub fn rho_star(&self) -> f64 {
        self.rho_star
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn one_sided(&self, t: f64) -> (f64, f64) {
        if t <= self.breakpoint {
            (self.barrier.value(t), self.barrier.derivative(t))
        } else {
            (self.rho_star * t - self.conj, self.rho_star)
        }
    }

    /// Value and the two nonnegative side weights `(upper, lower)` at `t`.
    /// The derivative is `upper - lower`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        match self.shape {
            Shape::Upper(u) => {
                let (v, d) = self.one_sided(t - u);
                (v, d, 0.0)
            }
            Shape::Lower(l) => {
                let (v, d) = self.one_sided(l - t);
                (v, 0.0, d)
            }
            Shape::Split { l, u } => {
                let (vu, du) = self.one_sided(t - u);
                let (vl, dl) = self.one_sided(l - t);
                (vu + vl, du, dl)
            }
            Shape::TwoSided { l, u } => {
                if !t.is_finite() {
                    return (f64::NAN, f64::NAN, f64::NAN);
                }
                let e = bilateral_eval(&self.barrier, self.rho_star, l, u, t);
                (e.value, e.upper_weight, e.lower_weight)
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let (_, wu, wl) = self.eval(t);
        wu - wl
    }

    /// `(upper, lower)` nonnegative weights; see [`SmoothPenalty::eval`].
    pub fn side_weights(&self, t: f64) -> (f64, f64) {
        let (_, wu, wl) = self.eval(t);
        (wu, wl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV: Barrier = Barrier::INVERSE;

    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut c: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let x1 = c - g * (c - a);
            let x2 = a + g * (c - a);
            if f(x1) < f(x2) {
                c = x2;
            } else {
                a = x1;
            }
        }
        f(0.5 * (a + c)).min(f(a)).min(f(c))
    }

    fn bilateral_oracle(b: &Barrier, rho: f64, l: f64, u: f64, t: f64) -> f64 {
        let obj = |s: f64| rho * s + b.value(t - u - s) + b.value(l - t - s);
        let s_min = (t - u).max(l - t).max(0.0);
        let mut hi = s_min + 1.0;
        while obj(hi * 2.0) < obj(hi) {
            hi *= 2.0;
        }
        golden_min(obj, s_min, 2.0 * hi + 1.0)
    }

    #[test]
    fn one_sided_reference_values() {
        assert!((psi_value(&INV, 1.0, 3.0) - 5.0).abs() < 1e-15);
        assert!((psi_value(&INV, 1.0, -3.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(psi_value(&INV, 1.0, 0.0), 2.0);
        assert_eq!(marginal_slack(&INV, 4.0, 0.5), 1.0);
        assert_eq!(psi_derivative(&INV, 1.0, -0.5), 1.0);
        assert_eq!(psi_derivative(&INV, 100.0, -0.5), 4.0);
    }

    #[test]
    fn split_reference_values() {
        assert!((psi_split(&INV, 1.0, 0.0, 0.0, 3.0).unwrap() - 16.0 / 3.0).abs() < 1e-14);
        assert!((psi_split(&INV, 1.0, 0.0, 0.0, 0.0).unwrap() - 4.0).abs() < 1e-14);
        assert!(psi_split(&INV, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn bilateral_reference_values() {
        let e = psi_bilateral(&INV, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!((e.value - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(e.derivative, 0.0);
        assert!((e.slack - 2f64.sqrt()).abs() < 1e-12);

        // Width 2 centered at the midpoint: slack sqrt(2) - 1, zero slope.
        let e = psi_bilateral(&INV, 1.0, 0.0, 2.0, 1.0).unwrap();
        assert!((e.slack - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!(e.derivative.abs() < 1e-14);
        let oracle = bilateral_oracle(&INV, 1.0, 0.0, 2.0, 1.0);
        assert!((e.value - oracle).abs() < 1e-9);

        // Steep penalty, interior point: no slack needed.
        let e = psi_bilateral(&INV, 100.0, 0.0, 2.0, 1.0).unwrap();
        assert_eq!(e.slack, 0.0);
        assert!((e.value - 2.0).abs() < 1e-14);

        assert!(psi_bilateral(&INV, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(psi_bilateral(&INV, 1.0, 2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bilateral_matches_oracle_for_every_barrier() {
        let cases = [
            (0.3, -1.0, 1.0, 0.2),
            (5.0, 0.0, 0.0, 3.0),
            (5.0, 0.0, 0.0, -3.0),
            (50.0, -0.5, 2.0, 2.5),
            (2.0, 1.0, 1.5, -4.0),
            (1e3, 0.0, 1.0, 1.0),
        ];
        for b in [INV, Barrier::InversePower { p: 2.0 }, Barrier::LogLike] {
            for &(rho, l, u, t) in &cases {
                let e = psi_bilateral(&b, rho, l, u, t).unwrap();
                let o = bilateral_oracle(&b, rho, l, u, t);
                assert!((e.value - o).abs() <= 1e-7 * o.abs().max(1.0), "{b} {rho} {l} {u} {t}: {} vs {o}", e.value);
                let h = 1e-6;
                let fd = (psi_bilateral(&b, rho, l, u, t + h).unwrap().value
                    - psi_bilateral(&b, rho, l, u, t - h).unwrap().value)
                    / (2.0 * h);
                assert!((fd - e.derivative).abs() <= 1e-5 * rho.max(1.0), "{b} deriv {fd} vs {}", e.derivative);
                assert!(e.derivative.abs() <= rho);
            }
        }
    }

    #[test]
    fn loglike_candidate_is_screened() {
        // At rho* = 4 the closed-form candidate misses the true slack.
        let cand = loglike_slack_candidate(4.0, 0.0, 0.0, 0.0);
        let truth = psi_bilateral(&Barrier::LogLike, 4.0, 0.0, 0.0, 0.0).unwrap().slack;
        assert!((truth - (3f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
        assert!((cand - truth).abs() > 0.1);
    }

    #[test]
    fn smooth_penalty_shapes() {
        let up = SmoothPenalty::new(INV, 1.0, Shape::Upper(1.0)).unwrap();
        assert_eq!(up.value(4.0), 5.0);
        assert_eq!(up.side_weights(4.0), (1.0, 0.0));
        let lo = SmoothPenalty::new(INV, 1.0, Shape::Lower(1.0)).unwrap();
        assert_eq!(lo.value(-2.0), 5.0);
        assert_eq!(lo.derivative(-2.0), -1.0);
        let eq = SmoothPenalty::new(INV, 1.0, Shape::TwoSided { l: 0.0, u: 0.0 }).unwrap();
        assert!((eq.value(0.0) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let sp = SmoothPenalty::new(INV, 1.0, Shape::Split { l: 0.0, u: 0.0 }).unwrap();
        assert!((sp.value(3.0) - 16.0 / 3.0).abs() < 1e-14);
        assert!(SmoothPenalty::new(INV, -1.0, Shape::Upper(0.0)).is_err());
        assert!(SmoothPenalty::new(INV, 1.0, Shape::Upper(f64::INFINITY)).is_err());
    }
}
