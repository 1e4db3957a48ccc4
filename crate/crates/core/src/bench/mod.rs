//! Benchmark suites: seeded instance families, a parallel run harness that
//! writes one JSON record per run, and profile computations over records.

pub mod generators;
pub mod profiles;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::Barrier;
use crate::inner::InnerKind;
use crate::model::{Formulation, ModelError};
use crate::outer::{self, OuterConfig, OuterError, RunRecord};

pub use generators::{
    gen_degenerate, gen_eq_qp, gen_matrix_completion, gen_matrix_completion_from_ratings, gen_nonneg_pca, gen_rosenbrock, load_ratings,
    CompletionParams, Instance, RosenbrockVariant,
};
pub use profiles::{curve_at, data_profile, pairwise_profile, Metric};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Outer(#[from] OuterError),
}

/// Noise levels cycled through by the PCA suite.
pub const PCA_SIGMA_N: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];
/// Sparsity levels cycled through by the PCA suite.
pub const PCA_SIGMA_S: [f64; 4] = [0.1, 0.3, 0.7, 0.9];

/// PCA parameters for the `i`-th seed of a suite: all 20 combinations in turn.
pub fn pca_params(i: usize) -> (f64, f64) {
    (PCA_SIGMA_N[i % PCA_SIGMA_N.len()], PCA_SIGMA_S[(i / PCA_SIGMA_N.len()) % PCA_SIGMA_S.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    PcaSmall,
    EqQp,
    Degenerate,
    Rosenbrock,
    CompletionSmall,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::PcaSmall, Suite::EqQp, Suite::Degenerate, Suite::Rosenbrock, Suite::CompletionSmall];

    pub fn id(self) -> &'static str {
        match self {
            Suite::PcaSmall => "pca_small",
            Suite::EqQp => "eq_qp",
            Suite::Degenerate => "degenerate",
            Suite::Rosenbrock => "rosenbrock",
            Suite::CompletionSmall => "completion_small",
        }
    }

    /// Seeds, sizes, variants and tolerances used when nothing is overridden.
    pub fn default_options(self) -> SuiteOptions {
        let base = SuiteOptions {
            seeds: 10,
            seed_base: 0,
            sizes: Vec::new(),
            barriers: vec![Barrier::LogLike],
            inners: vec![InnerKind::Accelerated],
            formulations: vec![Formulation::Native],
            eps: vec![1e-5],
            base: OuterConfig::default(),
            workers: 0,
        };
        match self {
            Suite::PcaSmall => SuiteOptions {
                seeds: 20,
                sizes: vec![10, 30],
                barriers: vec![Barrier::LogLike, Barrier::INVERSE],
                inners: vec![InnerKind::Spectral, InnerKind::Accelerated],
                eps: vec![1e-3, 1e-4],
                ..base
            },
            Suite::EqQp => SuiteOptions { sizes: vec![1, 2, 3, 4, 5], formulations: vec![Formulation::Native, Formulation::SplitEqualities], ..base },
            Suite::Degenerate => SuiteOptions { seeds: 100, eps: vec![1e-7], ..base },
            Suite::Rosenbrock => SuiteOptions { seeds: 100, eps: vec![1e-4], ..base },
            Suite::CompletionSmall => SuiteOptions { eps: vec![1e-3], ..base },
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.id() == s)
            .ok_or_else(|| format!("unknown suite `{s}`; expected one of {}", Suite::ALL.map(Suite::id).join(", ")))
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seeds: usize,
    pub seed_base: u64,
    /// PCA dimensions, or equality counts `m` (with `n = 10 m`) for the QP suite.
    pub sizes: Vec<usize>,
    pub barriers: Vec<Barrier>,
    pub inners: Vec<InnerKind>,
    /// Only the QP suite has equality rows; other suites ignore this list.
    pub formulations: Vec<Formulation>,
    /// Each value sets both `eps_p` and `eps_d`.
    pub eps: Vec<f64>,
    pub base: OuterConfig,
    /// Worker threads; 0 picks the number of cores.
    pub workers: usize,
}

/// One point of the variant matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub barrier: Barrier,
    pub inner: InnerKind,
    pub formulation: Formulation,
    pub eps: f64,
}

impl Variant {
    pub fn label(&self) -> String {
        format!("{}-{}-{}-e{:e}", self.barrier, self.inner.label(), self.formulation.label(), self.eps)
    }

    pub fn apply(&self, base: &OuterConfig) -> OuterConfig {
        let mut cfg = base.clone();
        cfg.barrier = self.barrier;
        cfg.inner.kind = self.inner;
        cfg.formulation = self.formulation;
        cfg.eps_p = self.eps;
        cfg.eps_d = self.eps;
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub instance: Instance,
    pub variant: Variant,
}

impl Job {
    /// File stem of the record written for this job.
    pub fn key(&self) -> String {
        format!("{}__{}", self.instance.name, self.variant.label())
    }
}

fn instances(suite: Suite, o: &SuiteOptions) -> Result<Vec<Instance>, BenchError> {
    let seeds = (0..o.seeds).map(|i| (i, o.seed_base + i as u64));
    let mut out = Vec::new();
    match suite {
        Suite::PcaSmall => {
            for &n in &o.sizes {
                for (i, seed) in seeds.clone() {
                    let (sn, ss) = pca_params(i);
                    out.push(gen_nonneg_pca(n, sn, ss, seed)?);
                }
            }
        }
        Suite::EqQp => {
            for &m in &o.sizes {
                for (_, seed) in seeds.clone() {
                    out.push(gen_eq_qp(10 * m, m, seed)?.0);
                }
            }
        }
        Suite::Degenerate => out.extend(seeds.map(|(_, s)| gen_degenerate(s))),
        Suite::Rosenbrock => {
            for v in [RosenbrockVariant::Inequality, RosenbrockVariant::EqualitySlack] {
                out.extend(seeds.clone().map(|(_, s)| gen_rosenbrock(v, s)));
            }
        }
        Suite::CompletionSmall => {
            for (_, seed) in seeds {
                out.push(gen_matrix_completion(CompletionParams::default(), seed)?);
            }
        }
    }
    Ok(out)
}

/// Every (instance, variant) pair of a suite, in a fixed order.
pub fn suite_jobs(suite: Suite, o: &SuiteOptions) -> Result<Vec<Job>, BenchError> {
    if o.barriers.is_empty() || o.inners.is_empty() || o.eps.is_empty() {
        return Err(BenchError::Invalid("variant matrix is empty".into()));
    }
    let formulations: Vec<Formulation> = match suite {
        Suite::EqQp if !o.formulations.is_empty() => o.formulations.clone(),
        Suite::EqQp => return Err(BenchError::Invalid("variant matrix is empty".into())),
        _ => vec![Formulation::Native],
    };
    let mut jobs = Vec::new();
    for inst in instances(suite, o)? {
        for &barrier in &o.barriers {
            for &inner in &o.inners {
                for &formulation in &formulations {
                    for &eps in &o.eps {
                        jobs.push(Job { instance: inst.clone(), variant: Variant { barrier, inner, formulation, eps } });
                    }
                }
            }
        }
    }
    Ok(jobs)
}

/// Solves one job and labels the record with its instance and variant.
pub fn run_job(job: &Job, base: &OuterConfig) -> Result<RunRecord, BenchError> {
    let cfg = job.variant.apply(base);
    let mut rec = outer::run(&job.instance.problem, &job.instance.x0, &cfg)?;
    rec.config.instance = job.instance.name.clone();
    rec.config.variant = job.variant.label();
    Ok(rec)
}

/// Runs jobs on a pool of `workers` threads (0 = all cores); results keep the job order.
pub fn run_jobs(jobs: &[Job], base: &OuterConfig, workers: usize) -> Result<Vec<Result<RunRecord, BenchError>>, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Invalid(format!("worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(|j| run_job(j, base)).collect()))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance: String,
    pub variant: String,
    /// Record file name, absent when the run failed before producing a record.
    pub file: Option<String>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub suite: Suite,
    pub seeds: usize,
    pub seed_base: u64,
    pub runs: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug)]
pub struct SuiteOutcome {
    pub records: Vec<RunRecord>,
    pub manifest: Manifest,
}

/// Runs a suite and, when `out_dir` is given, writes `<instance>__<variant>.json`
/// per run plus a manifest.
pub fn run_suite(suite: Suite, o: &SuiteOptions, out_dir: Option<&Path>) -> Result<SuiteOutcome, BenchError> {
    o.base.validate()?;
    let jobs = suite_jobs(suite, o)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let results = run_jobs(&jobs, &o.base, o.workers)?;
    let mut records = Vec::new();
    let mut runs = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let (file, status) = match res {
            Ok(rec) => {
                let status = serde_json::to_value(rec.exit.status)?.as_str().unwrap_or_default().to_string();
                let file = match out_dir {
                    Some(dir) => {
                        let name = format!("{}.json", job.key());
                        write_atomic(&dir.join(&name), rec.to_json().as_bytes())?;
                        Some(name)
                    }
                    None => None,
                };
                records.push(rec);
                (file, status)
            }
            Err(e) => (None, format!("error: {e}")),
        };
        runs.push(ManifestEntry { instance: job.instance.name.clone(), variant: job.variant.label(), file, status });
    }
    let manifest = Manifest { suite, seeds: o.seeds, seed_base: o.seed_base, runs };
    if let Some(dir) = out_dir {
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    }
    Ok(SuiteOutcome { records, manifest })
}

/// Reads every record in a directory written by [`run_suite`], sorted by file name.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != MANIFEST_FILE));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| BenchError::Invalid(format!("{}: {e}", p.display())))
        })
        .collect()
}
