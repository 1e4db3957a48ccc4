//! Data profiles and pairwise performance profiles over run records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::outer::RunRecord;

/// Cost measure read from a converged record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GradEvals,
    WallMs,
    OuterIters,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grad_evals" => Ok(Metric::GradEvals),
            "wall_ms" | "time" => Ok(Metric::WallMs),
            "outer_iters" => Ok(Metric::OuterIters),
            _ => Err(format!("unknown metric `{s}`; expected grad_evals, wall_ms or outer_iters")),
        }
    }
}

impl Metric {
    /// `None` for unsolved runs.
    pub fn of(self, r: &RunRecord) -> Option<f64> {
        if !r.converged() {
            return None;
        }
        Some(match self {
            Metric::GradEvals => r.exit.grad_evals as f64,
            Metric::WallMs => r.exit.wall_ms,
            Metric::OuterIters => r.exit.outer_iters as f64,
        })
    }
}

fn step_curve(values: &[f64], total: usize) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|t| t.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, t) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / total as f64;
        match out.last_mut() {
            Some(last) if last.0 == *t => last.1 = frac,
            _ => out.push((*t, frac)),
        }
    }
    out
}

/// Fraction of problems solved within cost `t`, at every distinct solved cost.
/// Unsolved problems (`None`) count in the denominator only.
pub fn data_profile(metrics: &[Option<f64>]) -> Vec<(f64, f64)> {
    if metrics.is_empty() {
        return Vec::new();
    }
    let vals: Vec<f64> = metrics.iter().map(|m| m.unwrap_or(f64::INFINITY)).collect();
    step_curve(&vals, metrics.len())
}

/// Fraction of problems with `t / t_pm <= tau`, where `t` is the cost of the
/// first solver and `t_pm` that of the second on the same problem. A problem
/// only the second solver fails counts at ratio 0; one the first solver fails
/// never counts.
pub fn pairwise_profile(first: &[(String, Option<f64>)], second: &[(String, Option<f64>)]) -> Result<Vec<(f64, f64)>, BenchError> {
    let a: BTreeMap<&str, Option<f64>> = first.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let b: BTreeMap<&str, Option<f64>> = second.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    if a.len() != first.len() || b.len() != second.len() || a.keys().ne(b.keys()) {
        return Err(BenchError::Invalid("pairwise profile needs both record sets over the same instances".into()));
    }
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let ratios: Vec<f64> = a
        .iter()
        .map(|(k, ta)| match (ta, b[k]) {
            (Some(ta), Some(tb)) if tb > 0.0 => ta / tb,
            (Some(_), Some(_)) => f64::INFINITY,
            (Some(_), None) => 0.0,
            (None, _) => f64::INFINITY,
        })
        .collect();
    Ok(step_curve(&ratios, ratios.len()))
}

/// Value of a step curve at `t` (fraction of entries `<= t`).
pub fn curve_at(curve: &[(f64, f64)], t: f64) -> f64 {
    curve.iter().take_while(|(x, _)| *x <= t).last().map_or(0.0, |(_, f)| *f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(v: &[Option<f64>]) -> Vec<(String, Option<f64>)> {
        v.iter().enumerate().map(|(i, t)| (format!("p{i}"), *t)).collect()
    }

    #[test]
    fn data_profile_reference() {
        let c = data_profile(&[Some(3.0), Some(1.0), Some(2.0)]);
        assert_eq!(c, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        let c = data_profile(&[Some(3.0), None, Some(2.0)]);
        assert_eq!(c.last().unwrap().1, 2.0 / 3.0);
        assert_eq!(data_profile(&[Some(1.0), Some(1.0)]), vec![(1.0, 1.0)]);
        assert!(data_profile(&[]).is_empty());
    }

    #[test]
    fn pairwise_reference() {
        let a = named(&[Some(4.0), Some(2.0), None]);
        let c = pairwise_profile(&a, &a).unwrap();
        assert_eq!(curve_at(&c, 1.0), 2.0 / 3.0);
        let full = named(&[Some(4.0), Some(2.0)]);
        assert_eq!(curve_at(&pairwise_profile(&full, &full).unwrap(), 1.0), 1.0);
        let b = named(&[Some(2.0), None, Some(1.0)]);
        let c = pairwise_profile(&a, &b).unwrap();
        assert_eq!(c, vec![(0.0, 1.0 / 3.0), (2.0, 2.0 / 3.0)]);
        assert!(pairwise_profile(&a, &named(&[Some(1.0)])).is_err());
    }
}
