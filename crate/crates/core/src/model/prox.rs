//! Proximal operators of the nonsmooth terms used by the bundled problems.
//!
//! Every operator rejects `gamma <= 0` and writes `prox_{gamma g}(x)` into
//! `out`. Indicator functions report `+inf` outside their set.

use std::ops::Range;

use super::{ModelError, ProxFriendly};

fn check_gamma(gamma: f64) -> Result<(), ModelError> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidStep(gamma))
    }
}

/// Projection onto `[lo, hi]` componentwise.
pub fn prox_box(gamma: f64, x: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    check_gamma(gamma)?;
    for i in 0..x.len() {
        out[i] = x[i].max(lo[i]).min(hi[i]);
    }
    Ok(())
}

/// Projection onto the unit sphere; the origin maps to `e_1`.
pub fn prox_unit_sphere(gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    check_gamma(gamma)?;
    let nrm = super::linalg::norm2(x);
    if nrm == 0.0 || !nrm.is_finite() {
        out.iter_mut().for_each(|o| *o = 0.0);
        if let Some(o) = out.first_mut() {
            *o = 1.0;
        }
    } else {
        for (o, v) in out.iter_mut().zip(x) {
            *o = v / nrm;
        }
    }
    Ok(())
}

/// Soft thresholding at `gamma * lambda`.
pub fn prox_l1(gamma: f64, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    check_gamma(gamma)?;
    let k = gamma * lambda;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.signum() * (v.abs() - k).max(0.0);
    }
    Ok(())
}

/// Hard thresholding at `sqrt(2 gamma lambda)`; ties go to zero.
pub fn prox_l0(gamma: f64, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    check_gamma(gamma)?;
    let k = (2.0 * gamma * lambda).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v.abs() > k { v } else { 0.0 };
    }
    Ok(())
}

/// Prox of `lambda * sum_i sqrt|x_i|`.
///
/// With `g = gamma lambda`, the nonzero branch applies for `|x| > 1.5 g^(2/3)`
/// and equals `(2/3) x (1 + cos((2/3) acos(-(g/4) (3/|x|)^(3/2))))`; at the
/// threshold both candidates tie and zero is returned.
pub fn prox_halfnorm(gamma: f64, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    check_gamma(gamma)?;
    let g = gamma * lambda;
    let thresh = 1.5 * g.powf(2.0 / 3.0);
    for (o, &v) in out.iter_mut().zip(x) {
        let a = v.abs();
        *o = if a > thresh {
            let arg = (-(g / 4.0) * (3.0 / a).powf(1.5)).max(-1.0);
            (2.0 / 3.0) * v * (1.0 + ((2.0 / 3.0) * arg.acos()).cos())
        } else {
            0.0
        };
    }
    Ok(())
}

/// Projection onto the nonpositive orthant.
pub fn prox_nonpos(gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    check_gamma(gamma)?;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.min(0.0);
    }
    Ok(())
}

/// `g = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl ProxFriendly for Zero {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        check_gamma(gamma)?;
        out.copy_from_slice(x);
        Ok(())
    }
}

/// Indicator of a box; bounds may be infinite.
#[derive(Debug, Clone)]
pub struct BoxIndicator {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ProxFriendly for BoxIndicator {
    fn value(&self, x: &[f64]) -> f64 {
        let inside = x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h);
        if inside {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        prox_box(gamma, x, &self.lo, &self.hi, out)
    }
}

/// Indicator of the unit sphere, with a relative feasibility tolerance.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitSphere;

pub const SPHERE_TOL: f64 = 1e-9;

impl ProxFriendly for UnitSphere {
    fn value(&self, x: &[f64]) -> f64 {
        if (super::linalg::norm2(x) - 1.0).abs() <= SPHERE_TOL {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        prox_unit_sphere(gamma, x, out)
    }
}

/// `lambda * ||x||_1`.
#[derive(Debug, Clone, Copy)]
pub struct L1 {
    pub lambda: f64,
}

impl ProxFriendly for L1 {
    fn value(&self, x: &[f64]) -> f64 {
        self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        prox_l1(gamma, self.lambda, x, out)
    }
}

/// `lambda * ||x||_0`.
#[derive(Debug, Clone, Copy)]
pub struct L0 {
    pub lambda: f64,
}

impl ProxFriendly for L0 {
    fn value(&self, x: &[f64]) -> f64 {
        self.lambda * x.iter().filter(|v| **v != 0.0).count() as f64
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        prox_l0(gamma, self.lambda, x, out)
    }
}

/// `lambda * sum_i sqrt|x_i|`.
#[derive(Debug, Clone, Copy)]
pub struct HalfNorm {
    pub lambda: f64,
}

impl ProxFriendly for HalfNorm {
    fn value(&self, x: &[f64]) -> f64 {
        self.lambda * x.iter().map(|v| v.abs().sqrt()).sum::<f64>()
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        prox_halfnorm(gamma, self.lambda, x, out)
    }
}

/// Indicator of `x <= 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NonPositive;

impl ProxFriendly for NonPositive {
    fn value(&self, x: &[f64]) -> f64 {
        if x.iter().all(|v| *v <= 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        prox_nonpos(gamma, x, out)
    }
}

/// Block-separable sum; blocks must tile `0..n` without overlap.
pub struct Separable {
    blocks: Vec<(Range<usize>, Box<dyn ProxFriendly>)>,
}

impl Separable {
    pub fn new(blocks: Vec<(Range<usize>, Box<dyn ProxFriendly>)>) -> Result<Self, ModelError> {
        let mut next = 0;
        for (r, _) in &blocks {
            if r.start != next || r.end < r.start {
                return Err(ModelError::Dimension(format!("separable blocks must tile the variable, block {r:?} starts at {next}")));
            }
            next = r.end;
        }
        Ok(Self { blocks })
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |(r, _)| r.end)
    }
}

impl ProxFriendly for Separable {
    fn value(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|(r, g)| g.value(&x[r.clone()])).sum()
    }
    fn prox(&self, gamma: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        for (r, g) in &self.blocks {
            g.prox(gamma, &x[r.clone()], &mut out[r.clone()])?;
        }
        Ok(())
    }
}
