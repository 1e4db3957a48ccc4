//! Seeded instance generators for the benchmark families.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use super::BenchError;
use crate::model::linalg::{dot, CooMatrix, DenseMatrix};
use crate::model::prox::{BoxIndicator, HalfNorm, NonPositive, Separable, UnitSphere, L0};
use crate::model::{ConstraintMap, ProblemSpec, ProxFriendly, SmoothCost};

/// A problem together with its starting point.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub problem: ProblemSpec,
    pub x0: Vec<f64>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

fn invalid(msg: impl Into<String>) -> BenchError {
    BenchError::Invalid(msg.into())
}

/// `f(x) = -x^T Z x`.
pub struct NegQuadratic {
    pub z: DenseMatrix,
}

impl SmoothCost for NegQuadratic {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.z.mul(x, grad);
        let v = -dot(x, grad);
        grad.iter_mut().for_each(|g| *g *= -2.0);
        v
    }
}

/// `c(x) = -x`.
pub struct Negation {
    pub n: usize,
}

impl ConstraintMap for Negation {
    fn rows(&self) -> usize {
        self.n
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    }
    fn jac_t_mul(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(v) {
            *o = -w;
        }
    }
}

/// Sparse nonnegative PCA: maximize `x^T Z x` over the nonnegative part of the
/// unit sphere, with `Z = sqrt(sigma_n) z z^T + N`.
pub fn gen_nonneg_pca(n: usize, sigma_n: f64, sigma_s: f64, seed: u64) -> Result<Instance, BenchError> {
    if n < 2 {
        return Err(invalid("pca dimension must be at least 2"));
    }
    if !(sigma_s > 0.0 && sigma_s < 1.0) || !(sigma_n > 0.0 && sigma_n.is_finite()) {
        return Err(invalid(format!("pca parameters out of range: sigma_n={sigma_n}, sigma_s={sigma_s}")));
    }
    let mut r = rng(seed);
    let k = ((sigma_s * n as f64).ceil() as usize).clamp(1, n);
    let raw: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[b].abs().total_cmp(&raw[a].abs()));
    let mut z = vec![0.0; n];
    for &i in &order[..k] {
        z[i] = raw[i].abs();
    }
    let zn = crate::model::linalg::norm2(&z);
    z.iter_mut().for_each(|v| *v /= zn);

    let noise = Normal::new(0.0, (1.0 / n as f64).sqrt()).expect("positive std");
    let mut zmat = DenseMatrix::zeros(n, n);
    let scale = sigma_n.sqrt();
    for i in 0..n {
        for j in i..n {
            let v = scale * z[i] * z[j] + if j > i { noise.sample(&mut r) } else { 0.0 };
            zmat.set(i, j, v);
            zmat.set(j, i, v);
        }
    }
    let u = Uniform::new(0.0, 3.0).expect("valid range");
    let mut x0: Vec<f64> = (0..n).map(|_| u.sample(&mut r)).collect();
    let xn = crate::model::linalg::norm2(&x0);
    x0.iter_mut().for_each(|v| *v /= xn);

    let problem = ProblemSpec::new(
        n,
        Arc::new(NegQuadratic { z: zmat }),
        Arc::new(UnitSphere),
        Arc::new(Negation { n }),
        vec![f64::NEG_INFINITY; n],
        vec![0.0; n],
    )?;
    Ok(Instance { name: format!("pca_n{n}_s{seed}"), problem, x0 })
}

struct FirstCoordinate;

impl SmoothCost for FirstCoordinate {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        grad[0] = 1.0;
        x[0]
    }
}

struct ParabolaConstraint;

impl ConstraintMap for ParabolaConstraint {
    fn rows(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0] + x[1];
    }
    fn jac_t_mul(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0] * v[0];
        out[1] = v[0];
    }
}

/// `min x1 s.t. x1^2 + x2 <= 0, x2 >= 0`; the solution `(0, 0)` admits no multiplier.
pub fn gen_degenerate(seed: u64) -> Instance {
    let mut r = rng(seed);
    let d = Normal::new(0.0, 30.0).expect("positive std");
    let x0 = vec![d.sample(&mut r), d.sample(&mut r)];
    let problem = ProblemSpec::new(
        2,
        Arc::new(FirstCoordinate),
        Arc::new(BoxIndicator { lo: vec![f64::NEG_INFINITY, 0.0], hi: vec![f64::INFINITY; 2] }),
        Arc::new(ParabolaConstraint),
        vec![f64::NEG_INFINITY],
        vec![0.0],
    )
    .expect("static dimensions");
    Instance { name: format!("degenerate_s{seed}"), problem, x0 }
}

/// `f(x) = 0.5 x^T Q x + q^T x` with sparse symmetric `Q`.
pub struct SparseQuadratic {
    pub q_mat: CooMatrix,
    pub q: Vec<f64>,
}

impl SmoothCost for SparseQuadratic {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.q_mat.mul(x, grad);
        let v = 0.5 * dot(x, grad) + dot(&self.q, x);
        for (g, q) in grad.iter_mut().zip(&self.q) {
            *g += q;
        }
        v
    }
}

/// `c(x) = A x`.
pub struct LinearMap {
    pub a: CooMatrix,
}

impl ConstraintMap for LinearMap {
    fn rows(&self) -> usize {
        self.a.rows
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.a.mul(x, out);
    }
    fn jac_t_mul(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.a.mul_t_add(v, out);
    }
}

fn sparse_normal(r: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> CooMatrix {
    let mut m = CooMatrix::new(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if r.random::<f64>() < density {
                m.push(i, j, normal(r));
            }
        }
    }
    m
}

/// Box-constrained nonconvex QP with `m` linear equalities that are feasible by
/// construction. Returns the native problem and the same problem with every
/// equality stated as a pair of inequalities.
pub fn gen_eq_qp(n: usize, m: usize, seed: u64) -> Result<(Instance, Instance), BenchError> {
    if n == 0 || m == 0 {
        return Err(invalid("eq_qp needs n >= 1 and m >= 1"));
    }
    let mut r = rng(seed);
    let mmat = sparse_normal(&mut r, n, n, 0.1);
    let mut q_mat = CooMatrix::new(n, n);
    for &(i, j, v) in &mmat.entries {
        q_mat.push(i, j, 0.5 * v);
        q_mat.push(j, i, 0.5 * v);
    }
    let q: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let lo: Vec<f64> = (0..n).map(|_| -r.random::<f64>()).collect();
    let hi: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    let a = sparse_normal(&mut r, m, n, 0.1);
    let xhat: Vec<f64> = (0..n).map(|i| lo[i] + (hi[i] - lo[i]) * r.random::<f64>()).collect();
    let mut b = vec![0.0; m];
    a.mul(&xhat, &mut b);
    let x0: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();

    let native = ProblemSpec::new(
        n,
        Arc::new(SparseQuadratic { q_mat, q }),
        Arc::new(BoxIndicator { lo, hi }),
        Arc::new(LinearMap { a }),
        b.clone(),
        b,
    )?;
    let split = native.split_equalities();
    let name = format!("eqqp_m{m}_n{n}_s{seed}");
    Ok((
        Instance { name: name.clone(), problem: native, x0: x0.clone() },
        Instance { name, problem: split, x0 },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RosenbrockVariant {
    /// Disk constraint as one inequality.
    Inequality,
    /// Disk constraint as `c(x) - z = 0` with `z <= 0`.
    EqualitySlack,
}

const DISK_CENTER: [f64; 2] = [-0.25, 0.25];
const DISK_RADIUS: f64 = 0.5;

fn disk_margin(x: &[f64]) -> f64 {
    let (a, b) = (x[0] - DISK_CENTER[0], x[1] - DISK_CENTER[1]);
    DISK_RADIUS * DISK_RADIUS - a * a - b * b
}

/// `100 (x2 + 1 - (x1 + 1)^2)^2`, ignoring any trailing coordinates.
struct ShiftedRosenbrock;

impl SmoothCost for ShiftedRosenbrock {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let r = x[1] + 1.0 - (x[0] + 1.0) * (x[0] + 1.0);
        grad[0] = -400.0 * r * (x[0] + 1.0);
        grad[1] = 200.0 * r;
        100.0 * r * r
    }
}

/// `r^2 - ||x - C||^2`, minus the slack coordinate when present.
struct DiskConstraint {
    slack: bool,
}

impl ConstraintMap for DiskConstraint {
    fn rows(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = disk_margin(x) - if self.slack { x[2] } else { 0.0 };
    }
    fn jac_t_mul(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * (x[0] - DISK_CENTER[0]) * v[0];
        out[1] = -2.0 * (x[1] - DISK_CENTER[1]) * v[0];
        if self.slack {
            out[2] = -v[0];
        }
    }
}

/// Shifted Rosenbrock with a half-norm regularizer outside a disk.
pub fn gen_rosenbrock(variant: RosenbrockVariant, seed: u64) -> Instance {
    let mut r = rng(seed);
    let u = Uniform::new(-5.0, 5.0).expect("valid range");
    let mut x: Vec<f64> = vec![u.sample(&mut r), u.sample(&mut r)];
    if variant == RosenbrockVariant::Inequality {
        while disk_margin(&x) >= 0.0 {
            x = vec![u.sample(&mut r), u.sample(&mut r)];
        }
    }
    let (problem, x0, tag) = match variant {
        RosenbrockVariant::Inequality => (
            ProblemSpec::new(
                2,
                Arc::new(ShiftedRosenbrock),
                Arc::new(HalfNorm { lambda: 1.0 }),
                Arc::new(DiskConstraint { slack: false }),
                vec![f64::NEG_INFINITY],
                vec![0.0],
            ),
            x,
            "ineq",
        ),
        RosenbrockVariant::EqualitySlack => {
            let g = Separable::new(vec![
                (0..2, Box::new(HalfNorm { lambda: 1.0 }) as Box<dyn ProxFriendly>),
                (2..3, Box::new(NonPositive)),
            ])
            .expect("blocks tile the variable");
            (
                ProblemSpec::new(3, Arc::new(ShiftedRosenbrock), Arc::new(g), Arc::new(DiskConstraint { slack: true }), vec![0.0], vec![0.0]),
                vec![x[0], x[1], 0.0],
                "eq",
            )
        }
    };
    Instance { name: format!("rosenbrock_{tag}_s{seed}"), problem: problem.expect("static dimensions"), x0 }
}

/// Mean squared error over observed entries of `U V^T`, with `x = [vec(U); vec(V)]` row-major.
pub struct CompletionCost {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub observed: Vec<(usize, usize, f64)>,
}

impl SmoothCost for CompletionCost {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let k = self.rank;
        let voff = self.users * k;
        let w = 1.0 / self.observed.len().max(1) as f64;
        let mut f = 0.0;
        for &(i, j, y) in &self.observed {
            let (ui, vj) = (i * k, voff + j * k);
            let pred = dot(&x[ui..ui + k], &x[vj..vj + k]);
            let res = pred - y;
            f += w * res * res;
            for t in 0..k {
                grad[ui + t] += 2.0 * w * res * x[vj + t];
                grad[vj + t] += 2.0 * w * res * x[ui + t];
            }
        }
        f
    }
}

/// All entries `<U_i, V_j>`, row index `i * items + j`.
pub struct BilinearEntries {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
}

impl ConstraintMap for BilinearEntries {
    fn rows(&self) -> usize {
        self.users * self.items
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let k = self.rank;
        let voff = self.users * k;
        for i in 0..self.users {
            for j in 0..self.items {
                out[i * self.items + j] = dot(&x[i * k..(i + 1) * k], &x[voff + j * k..voff + (j + 1) * k]);
            }
        }
    }
    fn jac_t_mul(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let k = self.rank;
        let voff = self.users * k;
        for i in 0..self.users {
            for j in 0..self.items {
                let w = v[i * self.items + j];
                if w == 0.0 {
                    continue;
                }
                for t in 0..k {
                    out[i * k + t] += w * x[voff + j * k + t];
                    out[voff + j * k + t] += w * x[i * k + t];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionParams {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    /// Probability that an entry is observed in synthetic data.
    pub density: f64,
    pub lambda: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self { users: 10, items: 20, rank: 3, density: 0.3, lambda: 1e-2 }
    }
}

/// Reads `user item rating [...]` lines separated by whitespace, tabs or commas.
pub fn load_ratings(path: &Path) -> Result<Vec<(u64, u64, f64)>, BenchError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        let parse_err = || invalid(format!("{}:{}: expected `user item rating`", path.display(), ln + 1));
        if f.len() < 3 {
            return Err(parse_err());
        }
        let u = f[0].parse().map_err(|_| parse_err())?;
        let i = f[1].parse().map_err(|_| parse_err())?;
        let y: f64 = f[2].parse().map_err(|_| parse_err())?;
        out.push((u, i, y));
    }
    Ok(out)
}

fn completion_instance(p: CompletionParams, observed: Vec<(usize, usize, f64)>, seed: u64, r: &mut ChaCha8Rng) -> Result<Instance, BenchError> {
    let (nu, nm, k) = (p.users, p.items, p.rank);
    if observed.is_empty() {
        return Err(invalid("matrix completion needs at least one observed rating"));
    }
    let mut lower = vec![1.0; nu * nm];
    let mut upper = vec![5.0; nu * nm];
    for &(i, j, y) in &observed {
        lower[i * nm + j] = (y - 1.0).max(1.0);
        upper[i * nm + j] = (y + 1.0).min(5.0);
    }
    let mut blocks: Vec<(std::ops::Range<usize>, Box<dyn ProxFriendly>)> = Vec::new();
    for i in 0..nu {
        blocks.push((i * k..(i + 1) * k, Box::new(UnitSphere)));
    }
    blocks.push((nu * k..(nu + nm) * k, Box::new(L0 { lambda: p.lambda / nm as f64 })));
    let g = Separable::new(blocks)?;

    let mut x0 = Vec::with_capacity((nu + nm) * k);
    for _ in 0..nu {
        let mut row: Vec<f64> = (0..k).map(|_| normal(r)).collect();
        let n = crate::model::linalg::norm2(&row).max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|v| *v /= n);
        x0.extend(row);
    }
    for _ in 0..nm * k {
        x0.push(normal(r));
    }
    let problem = ProblemSpec::new(
        (nu + nm) * k,
        Arc::new(CompletionCost { users: nu, items: nm, rank: k, observed }),
        Arc::new(g),
        Arc::new(BilinearEntries { users: nu, items: nm, rank: k }),
        lower,
        upper,
    )?;
    Ok(Instance { name: format!("completion_u{nu}_m{nm}_a{k}_s{seed}"), problem, x0 })
}

/// Synthetic ratings from a planted factorization with unit-norm user rows,
/// so the planted point satisfies every rating bound.
pub fn gen_matrix_completion(p: CompletionParams, seed: u64) -> Result<Instance, BenchError> {
    let (nu, nm, k) = (p.users, p.items, p.rank);
    if nu == 0 || nm == 0 || k == 0 || !(p.density > 0.0 && p.density <= 1.0) || !(p.lambda >= 0.0) {
        return Err(invalid(format!("matrix completion parameters out of range: {p:?}")));
    }
    let mut r = rng(seed);
    let planted_rank = k.div_ceil(2);
    let spread = Normal::new(0.0, 0.25).expect("positive std");
    let level = Uniform::new(2.0, 4.5).expect("valid range");
    let ratings = loop {
        let users: Vec<Vec<f64>> = (0..nu)
            .map(|_| {
                let mut u: Vec<f64> = (0..planted_rank).map(|t| if t == 0 { 1.0 } else { spread.sample(&mut r) }).collect();
                let n = crate::model::linalg::norm2(&u);
                u.iter_mut().for_each(|v| *v /= n);
                u
            })
            .collect();
        let items: Vec<Vec<f64>> = (0..nm)
            .map(|_| (0..planted_rank).map(|t| if t == 0 { level.sample(&mut r) } else { normal(&mut r) * 0.5 }).collect())
            .collect();
        let x: Vec<Vec<f64>> = users.iter().map(|u| items.iter().map(|v| dot(u, v)).collect()).collect();
        if x.iter().flatten().all(|&v| (1.0..=5.0).contains(&v)) {
            break x;
        }
    };
    let mut observed = Vec::new();
    for (i, row) in ratings.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if r.random::<f64>() < p.density {
                observed.push((i, j, v.round().clamp(1.0, 5.0)));
            }
        }
    }
    if observed.is_empty() {
        observed.push((0, 0, ratings[0][0].round().clamp(1.0, 5.0)));
    }
    completion_instance(p, observed, seed, &mut r)
}

/// Completion instance on the first `users` users and `items` items of a ratings list.
pub fn gen_matrix_completion_from_ratings(p: CompletionParams, ratings: &[(u64, u64, f64)], seed: u64) -> Result<Instance, BenchError> {
    let users: BTreeSet<u64> = ratings.iter().map(|r| r.0).collect();
    let items: BTreeSet<u64> = ratings.iter().map(|r| r.1).collect();
    let umap: BTreeMap<u64, usize> = users.into_iter().take(p.users).enumerate().map(|(a, b)| (b, a)).collect();
    let imap: BTreeMap<u64, usize> = items.into_iter().take(p.items).enumerate().map(|(a, b)| (b, a)).collect();
    let observed: Vec<(usize, usize, f64)> = ratings
        .iter()
        .filter_map(|&(u, i, y)| Some((*umap.get(&u)?, *imap.get(&i)?, y)))
        .collect();
    let p = CompletionParams { users: umap.len(), items: imap.len(), ..p };
    let mut r = rng(seed);
    completion_instance(p, observed, seed, &mut r)
}
