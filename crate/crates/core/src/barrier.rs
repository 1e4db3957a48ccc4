//! Barrier functions on the open negative half-line and their convex conjugates.
//!
//! Every barrier `b` is finite, positive, increasing and strictly convex on
//! `t < 0` and `+inf` on `t >= 0`. The conjugate `b*` is `+inf` for negative
//! arguments and its derivative maps a slope back to the point of `(-inf, 0)`
//! where `b'` attains it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("unknown barrier id `{0}`; expected one of: inverse, inverse_p:<p>, loglike, exp")]
    UnknownId(String),
    #[error("inverse barrier exponent must be positive and finite, got {0}")]
    BadExponent(f64),
    #[error("contraction factor theta must lie in (0, 1), got {0}")]
    BadTheta(f64),
}

/// Which limit the behavior-profile estimator targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaMode {
    /// `limsup_{t -> 0-} b(theta t) / (theta b(t))`.
    Asymptotic,
    /// `sup_{t < 0} b(theta t) / (theta b(t))`.
    Max,
}

/// Values above this are reported as an infinite profile.
pub const KAPPA_INFINITY_CUTOFF: f64 = 1e12;

/// Scalar oracle interface shared by the barrier family and by test fixtures.
pub trait BarrierOps {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
    fn second_derivative(&self, t: f64) -> f64;
    fn conjugate(&self, tau: f64) -> f64;
    fn conjugate_derivative(&self, tau: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Barrier {
    /// `(1/p) (-t)^(-p)`.
    InversePower { p: f64 },
    /// `ln(1 - 1/t)`.
    LogLike,
    /// `exp(-1/t)`. Its infimum is 1, so `b*(0) = -1`; kept to illustrate an
    /// unbounded behavior profile, not for solving.
    Exponential,
}

impl Barrier {
    pub const INVERSE: Barrier = Barrier::InversePower { p: 1.0 };

    pub fn inverse_power(p: f64) -> Result<Self, BarrierError> {
        if p.is_finite() && p > 0.0 {
            Ok(Barrier::InversePower { p })
        } else {
            Err(BarrierError::BadExponent(p))
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn kappa(&self, theta: f64, mode: KappaMode) -> Result<f64, BarrierError> {
        kappa(self, theta, mode)
    }
}

impl fmt::Display for Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Barrier::InversePower { p } if *p == 1.0 => write!(f, "inverse"),
            Barrier::InversePower { p } => write!(f, "inverse_p:{p}"),
            Barrier::LogLike => write!(f, "loglike"),
            Barrier::Exponential => write!(f, "exp"),
        }
    }
}

impl FromStr for Barrier {
    type Err = BarrierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inverse" => Ok(Barrier::INVERSE),
            "loglike" => Ok(Barrier::LogLike),
            "exp" => Ok(Barrier::Exponential),
            other => match other.strip_prefix("inverse_p:") {
                Some(p) => {
                    let p: f64 = p.parse().map_err(|_| BarrierError::UnknownId(s.to_string()))?;
                    Barrier::inverse_power(p)
                }
                None => Err(BarrierError::UnknownId(s.to_string())),
            },
        }
    }
}

impl From<Barrier> for String {
    fn from(b: Barrier) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for Barrier {
    type Error = BarrierError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl BarrierOps for Barrier {
    fn value(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t >= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            Barrier::InversePower { p } => (-t).powf(-p) / p,
            Barrier::LogLike => (-1.0 / t).ln_1p(),
            Barrier::Exponential => (-1.0 / t).exp(),
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t >= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            Barrier::InversePower { p } => (-t).powf(-p - 1.0),
            Barrier::LogLike => 1.0 / (t * (t - 1.0)),
            Barrier::Exponential => {
                let u = -1.0 / t;
                u * u * u.exp()
            }
        }
    }

    fn second_derivative(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t >= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            Barrier::InversePower { p } => (p + 1.0) * (-t).powf(-p - 2.0),
            Barrier::LogLike => {
                let q = t * (t - 1.0);
                (1.0 - 2.0 * t) / (q * q)
            }
            Barrier::Exponential => {
                let u = -1.0 / t;
                u * u * u * (u + 2.0) * u.exp()
            }
        }
    }

    fn conjugate(&self, tau: f64) -> f64 {
        if tau.is_nan() {
            return f64::NAN;
        }
        if tau < 0.0 {
            return f64::INFINITY;
        }
        match *self {
            Barrier::InversePower { p } => {
                let q = p / (1.0 + p);
                -tau.powf(q) / q
            }
            Barrier::LogLike => {
                if tau == 0.0 {
                    return 0.0;
                }
                let r = tau.sqrt();
                let s = (tau + 4.0).sqrt();
                -2.0 * (r / (r + s) + ((r + s) / 2.0).ln())
            }
            Barrier::Exponential => {
                if tau == 0.0 {
                    return -1.0;
                }
                let w = lambert_w0(tau.sqrt() / 2.0);
                -(tau / (2.0 * w)) * (1.0 + 1.0 / (2.0 * w))
            }
        }
    }

    fn conjugate_derivative(&self, tau: f64) -> f64 {
        if tau.is_nan() || tau < 0.0 {
            return f64::NAN;
        }
        if tau == 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            Barrier::InversePower { p } => -tau.powf(-1.0 / (p + 1.0)),
            Barrier::LogLike => {
                // (1 - sqrt(1 + 4/tau)) / 2 without cancellation for large tau.
                let s = (1.0 + 4.0 / tau).sqrt();
                -2.0 / (tau * (1.0 + s))
            }
            Barrier::Exponential => -1.0 / (2.0 * lambert_w0(tau.sqrt() / 2.0)),
        }
    }
}

/// Principal branch of the Lambert W function for `x >= 0` (Halley iteration).
pub fn lambert_w0(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut w = if x < 3.0 {
        x.ln_1p()
    } else {
        let l = x.ln();
        l - l.ln()
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    w
}

/// Estimates the behavior profile `kappa_b(theta)` numerically.
///
/// Asymptotic mode evaluates the derivative ratio `b'(theta t) / b'(t)` on the
/// grid `t = -10^-j`, `j = 0..=12`, and returns its maximum over the tail half.
/// Since `b` and `b'` both diverge at `0-`, this ratio has the same limit as
/// `b(theta t) / (theta b(t))` but converges at rate `O(|t|)` even for
/// logarithmic barriers, where the value ratio only converges like `1/ln|t|`.
///
/// Max mode evaluates `b(theta t) / (theta b(t))` on a log grid over
/// `[-1e6, -1e-12]`.
///
/// Non-finite ratios and ratios above [`KAPPA_INFINITY_CUTOFF`] yield `+inf`.
pub fn kappa<B: BarrierOps + ?Sized>(b: &B, theta: f64, mode: KappaMode) -> Result<f64, BarrierError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(BarrierError::BadTheta(theta));
    }
    let ratios: Vec<f64> = match mode {
        KappaMode::Asymptotic => (6..=12)
            .map(|j| {
                let t = -(10f64).powi(-j);
                b.derivative(theta * t) / b.derivative(t)
            })
            .collect(),
        KappaMode::Max => {
            const POINTS: usize = 4001;
            let (lo, hi) = (-12.0f64, 6.0f64);
            (0..POINTS)
                .map(|i| {
                    let e = lo + (hi - lo) * i as f64 / (POINTS - 1) as f64;
                    let t = -(10f64).powf(e);
                    b.value(theta * t) / (theta * b.value(t))
                })
                .collect()
        }
    };
    let mut best = 0.0f64;
    for r in ratios {
        if !r.is_finite() || r > KAPPA_INFINITY_CUTOFF {
            return Ok(f64::INFINITY);
        }
        best = best.max(r);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Barrier; 4] = [
        Barrier::INVERSE,
        Barrier::InversePower { p: 2.5 },
        Barrier::LogLike,
        Barrier::Exponential,
    ];

    fn brute_conjugate(b: &Barrier, tau: f64) -> f64 {
        // sup over a dense log grid of t < 0, refined by golden section.
        let mut best_t = -1.0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=4000 {
            let t = -(10f64).powf(-8.0 + 14.0 * i as f64 / 4000.0);
            let v = tau * t - b.value(t);
            if v > best {
                best = v;
                best_t = t;
            }
        }
        let (mut a, mut c) = (best_t * 1.01, best_t * 0.99);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = c - g * (c - a);
            let x2 = a + g * (c - a);
            if tau * x1 - b.value(x1) > tau * x2 - b.value(x2) {
                c = x2;
            } else {
                a = x1;
            }
        }
        let t = 0.5 * (a + c);
        tau * t - b.value(t)
    }

    #[test]
    fn ids_round_trip() {
        for b in ALL {
            assert_eq!(b.id().parse::<Barrier>().unwrap(), b);
        }
        assert!(matches!("foo".parse::<Barrier>(), Err(BarrierError::UnknownId(_))));
        assert!("inverse_p:-1".parse::<Barrier>().is_err());
        let msg = "foo".parse::<Barrier>().unwrap_err().to_string();
        for id in ["inverse", "inverse_p:<p>", "loglike", "exp"] {
            assert!(msg.contains(id));
        }
    }

    #[test]
    fn reference_values() {
        let inv = Barrier::INVERSE;
        assert_eq!(inv.value(-0.5), 2.0);
        assert_eq!(inv.conjugate(4.0), -4.0);
        assert_eq!(inv.conjugate_derivative(4.0), -0.5);
        assert_eq!(inv.conjugate(0.0), 0.0);
        assert_eq!(inv.conjugate(-1.0), f64::INFINITY);
        assert!((Barrier::LogLike.value(-1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((Barrier::LogLike.conjugate_derivative(0.5) + 1.0).abs() < 1e-15);
        assert_eq!(Barrier::LogLike.conjugate(0.0), 0.0);
        assert_eq!(Barrier::Exponential.conjugate(0.0), -1.0);
        for b in ALL {
            assert_eq!(b.value(0.0), f64::INFINITY);
            assert_eq!(b.value(1.0), f64::INFINITY);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for b in ALL {
            for &t in &[-3.0f64, -1.0, -0.7, -0.3] {
                let h = 1e-6 * t.abs();
                let fd1 = (b.value(t + h) - b.value(t - h)) / (2.0 * h);
                let fd2 = (b.derivative(t + h) - b.derivative(t - h)) / (2.0 * h);
                assert!((fd1 - b.derivative(t)).abs() <= 1e-6 * b.derivative(t).abs().max(1.0), "{b} {t}");
                assert!((fd2 - b.second_derivative(t)).abs() <= 1e-5 * b.second_derivative(t).abs().max(1.0), "{b} {t}");
            }
        }
    }

    #[test]
    fn conjugate_matches_brute_force_sup() {
        for b in ALL {
            for &tau in &[0.05, 0.5, 1.0, 3.0, 40.0] {
                let bf = brute_conjugate(&b, tau);
                let v = b.conjugate(tau);
                assert!((bf - v).abs() <= 1e-8 * v.abs().max(1.0), "{b} tau={tau}: {v} vs {bf}");
            }
        }
    }

    #[test]
    fn conjugate_derivative_inverts_derivative() {
        for b in ALL {
            for &t in &[-5.0, -1.0, -0.2, -0.05] {
                let back = b.conjugate_derivative(b.derivative(t));
                assert!((back - t).abs() <= 1e-10 * t.abs(), "{b} {t} {back}");
            }
        }
    }

    #[test]
    fn lambert_w_solves_defining_equation() {
        for &x in &[1e-8, 0.1, 1.0, 2.5, 10.0, 1e6] {
            let w = lambert_w0(x);
            assert!((w * w.exp() - x).abs() <= 1e-13 * x.max(1.0));
        }
    }

    #[test]
    fn kappa_table() {
        for &theta in &[0.25, 0.5, 0.75] {
            let a = Barrier::INVERSE.kappa(theta, KappaMode::Asymptotic).unwrap();
            let m = Barrier::INVERSE.kappa(theta, KappaMode::Max).unwrap();
            let expect = 1.0 / (theta * theta);
            assert!((a - expect).abs() < 1e-9 * expect);
            assert!((m - expect).abs() < 1e-9 * expect);
            let p = 2.5;
            let ip = Barrier::InversePower { p }.kappa(theta, KappaMode::Asymptotic).unwrap();
            assert!((ip - theta.powf(-1.0 - p)).abs() < 1e-9 * ip);
            let la = Barrier::LogLike.kappa(theta, KappaMode::Asymptotic).unwrap();
            assert!((la - 1.0 / theta).abs() < 1e-3);
            let lm = Barrier::LogLike.kappa(theta, KappaMode::Max).unwrap();
            assert!((lm - 1.0 / (theta * theta)).abs() < 1e-3);
            assert_eq!(Barrier::Exponential.kappa(theta, KappaMode::Asymptotic).unwrap(), f64::INFINITY);
        }
        assert!(Barrier::INVERSE.kappa(1.0, KappaMode::Max).is_err());
        assert!(Barrier::INVERSE.kappa(0.0, KappaMode::Max).is_err());
    }

    #[test]
    fn serde_uses_ids() {
        let s = serde_json::to_string(&Barrier::LogLike).unwrap();
        assert_eq!(s, "\"loglike\"");
        let b: Barrier = serde_json::from_str("\"inverse_p:2\"").unwrap();
        assert_eq!(b, Barrier::InversePower { p: 2.0 });
    }
}
