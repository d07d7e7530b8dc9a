//! The Impute part: masked score, the kernelized velocity field with its
//! negative-entropy term, forward-Euler particle simulation, and the
//! alternating Estimate/Impute loop.

use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis, Zip};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram_self, KernelConfig};
use crate::metrics::{self, WassMethod, EXACT_LIMIT};
use crate::score_net::{train, DsmConfig, ScoreNetwork};
use crate::tabular::{check_shape, initialize_missing, Mask, TabularDataset};

/// Anything that maps an `N x D` batch to per-row score vectors.
pub trait ScoreField {
    fn score(&self, x: &Array2<f64>) -> Result<Array2<f64>>;
}

impl ScoreField for ScoreNetwork {
    fn score(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward(x)
    }
}

impl<F: Fn(&Array2<f64>) -> Array2<f64>> ScoreField for F {
    fn score(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WgfConfig {
    /// Weight of the negative-entropy term.
    pub lambda: f64,
    /// Euler step size.
    pub step: f64,
    /// Euler steps per Impute phase.
    pub steps: usize,
    /// Estimate/Impute repetitions.
    pub loops: usize,
    /// Trajectory sampling stride.
    pub record_every: usize,
    /// Scale of the Gaussian jitter around column means at initialization.
    pub init_noise: f64,
    /// Mask kernel gradients by the source row's missingness pattern.
    pub source_masking: bool,
}

impl Default for WgfConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            step: 0.1,
            steps: 500,
            loops: 2,
            record_every: 25,
            init_noise: 0.1,
            source_masking: true,
        }
    }
}

impl WgfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::param(format!("step size must be > 0, got {}", self.step)));
        }
        if self.steps == 0 {
            return Err(Error::param("steps must be >= 1"));
        }
        if self.loops == 0 {
            return Err(Error::param("loops must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every must be >= 1"));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return Err(Error::param(format!("init noise must be >= 0, got {}", self.init_noise)));
        }
        Ok(())
    }
}

/// Metrics sampled along the flow. `wass` is recorded only while the exact
/// solver applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub loop_index: usize,
    pub step: usize,
    pub mae: Option<f64>,
    pub wass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub imputed: Array2<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Per-loop DSM losses.
    pub losses: Vec<Vec<f64>>,
    pub estimate_seconds: f64,
    pub impute_seconds: f64,
}

/// Score with observed coordinates set to exactly `0.0`.
pub fn masked_score<F: ScoreField + ?Sized>(field: &F, x: &Array2<f64>, mask: &Mask) -> Result<Array2<f64>> {
    check_shape("mask", x.dim(), mask.dim())?;
    let mut s = field.score(x)?;
    check_shape("score output", x.dim(), s.dim())?;
    Zip::from(&mut s).and(mask).for_each(|s, &m| {
        if m == 1 {
            *s = 0.0;
        }
    });
    Ok(s)
}

/// Velocity of every particle:
///
/// `v_i = (1/N) sum_j [K(x_i, x_j) s_j - lambda * grad_y K(x_i, x_j) * w_j]`
///
/// with `s` the masked score and `w = 1 - mask` (all ones when source masking
/// is off), then zeroed at observed coordinates. All pairwise sums are
/// collapsed into one product of the Gram matrix with `[S | W | X * W]`.
pub fn velocity<F: ScoreField + ?Sized>(
    x: &Array2<f64>,
    mask: &Mask,
    field: &F,
    h: f64,
    lambda: f64,
    source_masking: bool,
) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::param("velocity needs at least one particle"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("particle state"));
    }
    let score = masked_score(field, x, mask)?;
    let gram = gram_self(x, h)?;

    let w: Array2<f64> = if source_masking {
        mask.mapv(|m| f64::from(1 - m))
    } else {
        Array2::ones((n, d))
    };
    let xw = x * &w;
    let stacked = concatenate![Axis(1), score, w, xw];
    let prod = gram.dot(&stacked);
    let (gs, gw, gxw) = (
        prod.slice(s![.., ..d]),
        prod.slice(s![.., d..2 * d]),
        prod.slice(s![.., 2 * d..]),
    );

    let c = lambda / (h * h);
    let inv_n = 1.0 / n as f64;
    let mut v = Array2::zeros((n, d));
    Zip::from(&mut v)
        .and(gs)
        .and(gw)
        .and(gxw)
        .and(x)
        .and(mask)
        .for_each(|v, &gs, &gw, &gxw, &xi, &m| {
            if m == 0 {
                // sum_j K_ij (x_i - x_j) w_j = x_i (K w)_i - (K (x w))_i
                *v = inv_n * (gs - c * (xi * gw - gxw));
            }
        });
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("velocity"));
    }
    Ok(v)
}

/// Forward Euler on the missing coordinates only: `x <- x + step * f(x)`.
/// `observe(t, x)` runs before the first step and after every step.
pub fn euler_integrate<V, O>(
    x0: &Array2<f64>,
    mask: &Mask,
    step: f64,
    steps: usize,
    mut field: V,
    mut observe: O,
) -> Result<Array2<f64>>
where
    V: FnMut(&Array2<f64>) -> Result<Array2<f64>>,
    O: FnMut(usize, &Array2<f64>) -> Result<()>,
{
    check_shape("mask", x0.dim(), mask.dim())?;
    let mut x = x0.clone();
    observe(0, &x)?;
    for t in 1..=steps {
        let v = field(&x).map_err(|e| match e {
            Error::NonFinite(_) => Error::EulerBlowup { step: t },
            other => other,
        })?;
        check_shape("velocity", x.dim(), v.dim())?;
        let mut finite = true;
        Zip::from(&mut x).and(&v).and(mask).for_each(|x, &v, &m| {
            if m == 0 {
                *x += step * v;
                finite &= x.is_finite();
            }
        });
        if !finite {
            return Err(Error::EulerBlowup { step: t });
        }
        observe(t, &x)?;
    }
    Ok(x)
}

/// One Impute phase: `wcfg.steps` Euler steps of [`velocity`] from `x0`.
/// With `truth`, MAE (and Wass where exact) is recorded every
/// `wcfg.record_every` steps and at the last step.
pub fn euler_impute<F: ScoreField + ?Sized>(
    x0: &Array2<f64>,
    mask: &Mask,
    field: &F,
    kcfg: &KernelConfig,
    wcfg: &WgfConfig,
    truth: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, Vec<TrajectoryPoint>)> {
    wcfg.validate()?;
    kcfg.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial particle state"));
    }
    if let Some(t) = truth {
        check_shape("truth", x0.dim(), t.dim())?;
    }
    let incomplete = metrics::incomplete_rows(mask);
    let track_wass = !incomplete.is_empty() && incomplete.len() <= EXACT_LIMIT;
    let mut trajectory = Vec::new();
    let observe = |t: usize, x: &Array2<f64>| -> Result<()> {
        let Some(truth) = truth else { return Ok(()) };
        if incomplete.is_empty() || (t % wcfg.record_every != 0 && t != wcfg.steps) {
            return Ok(());
        }
        let mae = metrics::mae(truth, x, mask)?;
        let wass = if track_wass {
            Some(metrics::wasserstein2(
                &truth.select(Axis(0), &incomplete),
                &x.select(Axis(0), &incomplete),
                WassMethod::Exact,
            )?)
        } else {
            None
        };
        trajectory.push(TrajectoryPoint {
            loop_index: 0,
            step: t,
            mae: Some(mae),
            wass,
        });
        Ok(())
    };
    let fixed_h = (!kcfg.use_median_heuristic).then_some(kcfg.bandwidth);
    let field_fn = |x: &Array2<f64>| {
        let h = match fixed_h {
            Some(h) => h,
            None => kcfg.resolve(x)?,
        };
        velocity(x, mask, field, h, wcfg.lambda, wcfg.source_masking)
    };
    let x = euler_integrate(x0, mask, wcfg.step, wcfg.steps, field_fn, observe)?;
    Ok((x, trajectory))
}

/// Column-mean imputation.
pub fn mean_impute(ds: &TabularDataset) -> Result<Array2<f64>> {
    let means = ds.observed_means()?;
    let mut out = ds.values().clone();
    Zip::indexed(&mut out).and(ds.mask()).for_each(|(_, j), x, &m| {
        if m == 0 {
            *x = means[j];
        }
    });
    Ok(out)
}

/// Seeds for the initializer, the network and each training phase, all drawn
/// from one stream so a single seed fixes the whole run.
struct RunSeeds {
    init: u64,
    network: u64,
    training: Vec<u64>,
}

impl RunSeeds {
    fn new(seed: u64, loops: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = rng.next_u64();
        let network = rng.next_u64();
        let training = (0..loops).map(|_| rng.next_u64()).collect();
        Self { init, network, training }
    }
}

/// The freshly initialized network [`knewimp`] starts from.
pub fn initial_network(d: usize, hidden: usize, seed: u64) -> Result<ScoreNetwork> {
    ScoreNetwork::new(d, hidden, RunSeeds::new(seed, 0).network)
}

/// Full imputation from a fresh network of width `hidden`.
pub fn knewimp(
    ds: &TabularDataset,
    dcfg: &DsmConfig,
    kcfg: &KernelConfig,
    wcfg: &WgfConfig,
    hidden: usize,
    seed: u64,
) -> Result<ImputationResult> {
    let net = initial_network(ds.ncols(), hidden, seed)?;
    knewimp_with_network(ds, dcfg, kcfg, wcfg, net, seed).map(|(result, _)| result)
}

/// Full imputation starting from `net`; returns the final network as well.
/// The network is warm-started across loops, each Estimate phase with a
/// fresh optimizer and its own noise stream.
pub fn knewimp_with_network(
    ds: &TabularDataset,
    dcfg: &DsmConfig,
    kcfg: &KernelConfig,
    wcfg: &WgfConfig,
    net: ScoreNetwork,
    seed: u64,
) -> Result<(ImputationResult, ScoreNetwork)> {
    dcfg.validate()?;
    kcfg.validate()?;
    wcfg.validate()?;
    ds.check_observed_columns()?;
    if net.input_dim() != ds.ncols() {
        return Err(Error::Shape {
            context: "score network input",
            expected: (ds.nrows(), ds.ncols()),
            found: (ds.nrows(), net.input_dim()),
        });
    }
    let seeds = RunSeeds::new(seed, wcfg.loops);
    let mask = ds.mask();
    let mut x = initialize_missing(ds, seeds.init, wcfg.init_noise)?;
    let mut net = net;
    let mut trajectory = Vec::new();
    let mut losses = Vec::with_capacity(wcfg.loops);
    let mut estimate_seconds = 0.0;
    let mut impute_seconds = 0.0;

    for (loop_index, &train_seed) in seeds.training.iter().enumerate() {
        let started = Instant::now();
        let cfg = DsmConfig {
            seed: train_seed ^ dcfg.seed,
            ..dcfg.clone()
        };
        let (trained, loss) = train(&net, &x, &cfg)?;
        net = trained;
        losses.push(loss);
        estimate_seconds += started.elapsed().as_secs_f64();

        let started = Instant::now();
        let (next, points) = euler_impute(&x, mask, &net, kcfg, wcfg, ds.truth())?;
        impute_seconds += started.elapsed().as_secs_f64();
        x = next;
        trajectory.extend(points.into_iter().map(|p| TrajectoryPoint { loop_index, ..p }));
    }

    check_observed_preserved(ds, &x)?;
    Ok((
        ImputationResult {
            imputed: x,
            trajectory,
            losses,
            estimate_seconds,
            impute_seconds,
        },
        net,
    ))
}

fn check_observed_preserved(ds: &TabularDataset, x: &Array2<f64>) -> Result<()> {
    let mut ok = true;
    Zip::from(ds.values()).and(x).and(ds.mask()).for_each(|a, b, &m| {
        if m == 1 && a.to_bits() != b.to_bits() {
            ok = false;
        }
    });
    if ok {
        Ok(())
    } else {
        Err(Error::Invariant("observed entries changed during imputation".into()))
    }
}
