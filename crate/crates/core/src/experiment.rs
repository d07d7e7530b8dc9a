//! Repeated end-to-end runs (simulate, standardize, impute, evaluate) with a
//! mean-imputation baseline, and runtime benchmarking over a size grid.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::metrics::{evaluate, MetricReport, WassMethod};
use crate::missingness::{simulate, simulate_mcar, Mechanism, MissingSpec};
use crate::score_net::DsmConfig;
use crate::tabular::{standardize, TabularDataset};
use crate::wgf::{knewimp, mean_impute, TrajectoryPoint, WgfConfig};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "KNEWIMP_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seeds: Vec<u64>,
    pub dsm: DsmConfig,
    pub kernel: KernelConfig,
    pub wgf: WgfConfig,
    pub hidden: usize,
    pub wass_method: WassMethod,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Mcar,
            rate: 0.3,
            seeds: (0..5).collect(),
            dsm: DsmConfig::default(),
            kernel: KernelConfig::default(),
            wgf: WgfConfig::default(),
            hidden: 256,
            wass_method: WassMethod::Auto,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::param("at least one seed is required"));
        }
        if self.hidden == 0 {
            return Err(Error::param("hidden width must be >= 1"));
        }
        MissingSpec::new(self.mechanism, self.rate, 0).validate(d)?;
        self.dsm.validate()?;
        self.kernel.validate()?;
        self.wgf.validate()
    }
}

/// Everything produced for one seed, in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub missing_rate: f64,
    pub knewimp: MetricReport,
    pub mean_baseline: MetricReport,
    /// MAE of the initialization the flow starts from.
    pub initial_mae: Option<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub estimate_seconds: f64,
    pub impute_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mae_mean: f64,
    pub mae_std: f64,
    pub wass_mean: f64,
    pub wass_std: f64,
}

/// Aggregate over seeds. Carries no timings so it is reproducible byte for
/// byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seeds: Vec<u64>,
    pub knewimp: MetricSummary,
    pub mean_baseline: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    pub per_seed: Vec<SeedReport>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn summarize(reports: &[&MetricReport]) -> MetricSummary {
    let mae: Vec<f64> = reports.iter().map(|r| r.mae).collect();
    let wass: Vec<f64> = reports.iter().map(|r| r.wass).collect();
    let (mae_mean, mae_std) = mean_and_std(&mae);
    let (wass_mean, wass_std) = mean_and_std(&wass);
    MetricSummary {
        mae_mean,
        mae_std,
        wass_mean,
        wass_std,
    }
}

/// Worker pool sized by [`THREADS_ENV`] when set, otherwise by rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let threads: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::param(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| Error::Invariant(format!("cannot start worker pool: {e}")))
}

/// One seed of the protocol on a complete `truth` matrix.
pub fn run_seed(truth: &Array2<f64>, cfg: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let spec = MissingSpec::new(cfg.mechanism, cfg.rate, seed);
    let mask = simulate(truth, &spec)?;
    let raw = TabularDataset::from_truth_and_mask(truth.clone(), mask)?;
    let (ds, _) = standardize(&raw)?;

    let result = knewimp(&ds, &cfg.dsm, &cfg.kernel, &cfg.wgf, cfg.hidden, seed)?;
    let baseline = mean_impute(&ds)?;
    Ok(SeedReport {
        seed,
        missing_rate: ds.missing_rate(),
        knewimp: evaluate(&ds, &result.imputed, cfg.wass_method)?,
        mean_baseline: evaluate(&ds, &baseline, cfg.wass_method)?,
        initial_mae: result.trajectory.first().and_then(|p| p.mae),
        trajectory: result.trajectory,
        estimate_seconds: result.estimate_seconds,
        impute_seconds: result.impute_seconds,
    })
}

/// All seeds, in parallel on the worker pool; any failure names its seed.
pub fn run_experiment(truth: &Array2<f64>, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate(truth.ncols())?;
    if truth.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("experiment input must be complete and finite"));
    }
    let pool = thread_pool()?;
    let per_seed: Vec<SeedReport> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                run_seed(truth, cfg, seed).map_err(|e| Error::Seed {
                    seed,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = ExperimentSummary {
        mechanism: cfg.mechanism,
        rate: cfg.rate,
        seeds: cfg.seeds.clone(),
        knewimp: summarize(&per_seed.iter().map(|r| &r.knewimp).collect::<Vec<_>>()),
        mean_baseline: summarize(&per_seed.iter().map(|r| &r.mean_baseline).collect::<Vec<_>>()),
    };
    Ok(ExperimentOutcome { summary, per_seed })
}

/// Writes `summary.json` and one `seed_<seed>.json` per seed into `dir`.
pub fn write_outcome(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: String, text: String| {
        let path = dir.join(name);
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    };
    write("summary.json".into(), serde_json::to_string_pretty(&outcome.summary)?)?;
    for report in &outcome.per_seed {
        write(format!("seed_{}.json", report.seed), serde_json::to_string_pretty(report)?)?;
    }
    Ok(())
}

/// `n x d` draws from a zero-mean Gaussian with AR(1) correlation
/// `rho^|i - j|` between columns (for `d = 2`, plain correlation `rho`).
pub fn correlated_gaussian(n: usize, d: usize, rho: f64, seed: u64) -> Result<Array2<f64>> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::param(format!("rho must lie in (-1, 1), got {rho}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        let mut prev = 0.0;
        for (k, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            prev = if k == 0 { z } else { rho * prev + tail * z };
            *v = prev;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub rate: f64,
    pub rho: f64,
    pub seed: u64,
    pub dsm: DsmConfig,
    pub kernel: KernelConfig,
    pub wgf: WgfConfig,
    pub hidden: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            sizes: vec![250, 500, 1000],
            dims: vec![4, 8],
            rate: 0.3,
            rho: 0.5,
            seed: 0,
            dsm: DsmConfig::default(),
            kernel: KernelConfig::default(),
            wgf: WgfConfig::default(),
            hidden: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub n: usize,
    pub d: usize,
    pub estimate_seconds: f64,
    pub impute_seconds: f64,
    /// Whether training took longer than the flow; informational only.
    pub estimate_dominates: bool,
}

/// Times the Estimate and Impute parts on synthetic data for every `(n, d)`.
pub fn benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRecord>> {
    if cfg.sizes.is_empty() || cfg.dims.is_empty() {
        return Err(Error::param("benchmark grid is empty"));
    }
    let mut records = Vec::with_capacity(cfg.sizes.len() * cfg.dims.len());
    for &n in &cfg.sizes {
        for &d in &cfg.dims {
            let truth = correlated_gaussian(n, d, cfg.rho, cfg.seed)?;
            let mut mask = simulate_mcar(n, d, cfg.rate, cfg.seed)?;
            // keep every column identifiable
            for j in 0..d {
                mask[[j % n, j]] = 1;
            }
            let raw = TabularDataset::from_truth_and_mask(truth, mask)?;
            let (ds, _) = standardize(&raw)?;
            let result = knewimp(&ds, &cfg.dsm, &cfg.kernel, &cfg.wgf, cfg.hidden, cfg.seed)?;
            records.push(BenchmarkRecord {
                n,
                d,
                estimate_seconds: result.estimate_seconds,
                impute_seconds: result.impute_seconds,
                estimate_dominates: result.estimate_seconds > result.impute_seconds,
            });
        }
    }
    Ok(records)
}
