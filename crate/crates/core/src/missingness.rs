//! MCAR, MAR and MNAR mask simulation over complete data.
//!
//! MAR keeps a random subset of `ceil(observed_fraction * D)` columns fully
//! observed and masks every other column through a logistic model of the
//! kept (z-scored) columns. Weights are standard normal; each masked column
//! gets its own bias, found by bisection, so its expected missing rate is
//! exactly the target. MNAR runs the same MAR stage and then masks the
//! logistic inputs themselves with an independent MCAR overlay.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Mask, STD_FLOOR};

/// How many reseeded draws [`simulate`] tries before giving up on a mask
/// that leaves some column fully missing.
pub const MAX_REDRAWS: u64 = 100;

const CALIBRATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            "mnar" => Ok(Mechanism::Mnar),
            other => Err(Error::param(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingSpec {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub observed_fraction: f64,
    pub mcar_overlay_rate: f64,
    pub seed: u64,
}

impl MissingSpec {
    /// Defaults: 30% of columns kept observed, MNAR overlay at the main rate.
    pub fn new(mechanism: Mechanism, rate: f64, seed: u64) -> Self {
        Self {
            mechanism,
            rate,
            observed_fraction: 0.3,
            mcar_overlay_rate: rate,
            seed,
        }
    }

    /// Number of fully observed columns for a table with `d` columns.
    pub fn observed_columns(&self, d: usize) -> usize {
        (self.observed_fraction * d as f64).ceil() as usize
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        check_rate("rate", self.rate)?;
        if self.mechanism != Mechanism::Mcar {
            check_rate("observed_fraction", self.observed_fraction)?;
            let k = self.observed_columns(d);
            if k == 0 || k >= d {
                return Err(Error::param(format!(
                    "{} needs 1 <= ceil(observed_fraction * D) < D, got {k} of {d} columns",
                    self.mechanism
                )));
            }
        }
        if self.mechanism == Mechanism::Mnar {
            check_rate("mcar_overlay_rate", self.mcar_overlay_rate)?;
        }
        Ok(())
    }
}

fn check_rate(name: &str, rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in (0, 1), got {rate}")))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean_sigmoid(logits: &[f64], bias: f64) -> f64 {
    logits.iter().map(|&l| sigmoid(l + bias)).sum::<f64>() / logits.len() as f64
}

/// Bias `b` such that `mean(sigmoid(logit_i + b))` equals `target_rate`,
/// found by bisection on a bracket grown until it contains the root.
pub fn calibrate_bias(logits_without_bias: &[f64], target_rate: f64) -> Result<f64> {
    check_rate("target_rate", target_rate)?;
    if logits_without_bias.is_empty() {
        return Err(Error::param("calibrate_bias needs at least one logit"));
    }
    if logits_without_bias.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut lo = -1.0;
    let mut hi = 1.0;
    while mean_sigmoid(logits_without_bias, lo) > target_rate {
        lo *= 2.0;
    }
    while mean_sigmoid(logits_without_bias, hi) < target_rate {
        hi *= 2.0;
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = mean_sigmoid(logits_without_bias, mid);
        if (f - target_rate).abs() <= CALIBRATION_TOL {
            break;
        }
        if f < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
    }
    Ok(mid)
}

/// Each cell missing independently with probability `rate`.
pub fn simulate_mcar(n: usize, d: usize, rate: f64, seed: u64) -> Result<Mask> {
    check_rate("rate", rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(mcar_draw(n, d, rate, &mut rng))
}

fn mcar_draw(n: usize, d: usize, rate: f64, rng: &mut ChaCha8Rng) -> Mask {
    Array2::from_shape_simple_fn((n, d), || u8::from(rng.random::<f64>() >= rate))
}

/// MAR mask. The returned mask keeps `spec.observed_columns(D)` columns
/// fully observed.
pub fn simulate_mar(truth: &Array2<f64>, spec: &MissingSpec) -> Result<Mask> {
    if spec.mechanism != Mechanism::Mar {
        return Err(Error::param(format!("simulate_mar called with {} spec", spec.mechanism)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(mar_stage(truth, spec, 1.0, &mut rng)?.0)
}

/// MNAR mask: the MAR stage followed by an MCAR overlay on the logistic
/// input columns, drawn from the same stream.
pub fn simulate_mnar(truth: &Array2<f64>, spec: &MissingSpec) -> Result<Mask> {
    if spec.mechanism != Mechanism::Mnar {
        return Err(Error::param(format!("simulate_mnar called with {} spec", spec.mechanism)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut mask, inputs) = mar_stage(truth, spec, 1.0, &mut rng)?;
    for i in 0..mask.nrows() {
        for &j in &inputs {
            if rng.random::<f64>() < spec.mcar_overlay_rate {
                mask[[i, j]] = 0;
            }
        }
    }
    Ok(mask)
}

/// Shared MAR machinery. `weight_scale = 0` turns the logistic model into a
/// constant, which reduces MAR to MCAR on the maskable columns.
pub(crate) fn mar_stage(
    truth: &Array2<f64>,
    spec: &MissingSpec,
    weight_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Mask, Vec<usize>)> {
    let (n, d) = truth.dim();
    spec.validate(d)?;
    if n == 0 {
        return Err(Error::param("cannot simulate a mask for zero rows"));
    }
    if truth.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("complete data for mask simulation"));
    }
    let k = spec.observed_columns(d);
    let mut columns: Vec<usize> = (0..d).collect();
    columns.shuffle(rng);
    let mut inputs = columns[..k].to_vec();
    let mut maskable = columns[k..].to_vec();
    inputs.sort_unstable();
    maskable.sort_unstable();

    let z = zscore_columns(&truth.select(Axis(1), &inputs));
    let weights = Array2::from_shape_simple_fn((k, maskable.len()), || {
        let w: f64 = StandardNormal.sample(rng);
        weight_scale * w
    });
    let logits = z.dot(&weights);

    let mut mask = Array2::<u8>::ones((n, d));
    for (c, &j) in maskable.iter().enumerate() {
        let column: Vec<f64> = logits.column(c).to_vec();
        let bias = calibrate_bias(&column, spec.rate)?;
        for (i, &l) in column.iter().enumerate() {
            if rng.random::<f64>() < sigmoid(l + bias) {
                mask[[i, j]] = 0;
            }
        }
    }
    Ok((mask, inputs))
}

fn zscore_columns(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mean: Array1<f64> = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let mut out = x - &mean;
    for mut col in out.columns_mut() {
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt().max(STD_FLOOR);
        col.mapv_inplace(|v| v / sd);
    }
    out
}

/// Dispatches on the mechanism and redraws with `seed + attempt` while any
/// column comes out fully missing.
pub fn simulate(truth: &Array2<f64>, spec: &MissingSpec) -> Result<Mask> {
    let (n, d) = truth.dim();
    spec.validate(d)?;
    for attempt in 0..MAX_REDRAWS {
        let trial = MissingSpec {
            seed: spec.seed.wrapping_add(attempt),
            ..spec.clone()
        };
        let mask = match spec.mechanism {
            Mechanism::Mcar => simulate_mcar(n, d, spec.rate, trial.seed)?,
            Mechanism::Mar => simulate_mar(truth, &trial)?,
            Mechanism::Mnar => simulate_mnar(truth, &trial)?,
        };
        if mask.axis_iter(Axis(1)).all(|col| col.iter().any(|&m| m == 1)) {
            return Ok(mask);
        }
    }
    Err(Error::Simulation(format!(
        "every one of {MAX_REDRAWS} draws left a column fully missing"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
    }

    fn missing_fraction<'a>(cells: impl Iterator<Item = &'a u8>) -> f64 {
        let (miss, total) = cells.fold((0usize, 0usize), |(m, t), &c| (m + usize::from(c == 0), t + 1));
        miss as f64 / total as f64
    }

    #[test]
    fn mcar_rejects_closed_interval_endpoints() {
        assert!(simulate_mcar(3, 3, 0.0, 1).is_err());
        assert!(simulate_mcar(3, 3, 1.0, 1).is_err());
        assert!(simulate_mcar(3, 3, f64::NAN, 1).is_err());
    }

    #[test]
    fn mcar_rate_concentrates() {
        let mask = simulate_mcar(1000, 100, 0.3, 42).unwrap();
        let p = missing_fraction(mask.iter());
        assert!((0.285..=0.315).contains(&p), "rate {p}");
    }

    #[test]
    fn mcar_is_deterministic() {
        assert_eq!(simulate_mcar(50, 7, 0.4, 9).unwrap(), simulate_mcar(50, 7, 0.4, 9).unwrap());
        assert_ne!(simulate_mcar(50, 7, 0.4, 9).unwrap(), simulate_mcar(50, 7, 0.4, 10).unwrap());
    }

    #[test]
    fn calibrate_bias_closed_forms() {
        let zeros = vec![0.0; 17];
        assert!(calibrate_bias(&zeros, 0.5).unwrap().abs() < 1e-9);
        let b = calibrate_bias(&zeros, 0.3).unwrap();
        let logit = (0.3f64 / 0.7).ln();
        assert!((b - logit).abs() < 1e-6, "{b} vs {logit}");
        assert!((b + 0.8473).abs() < 1e-4);
    }

    #[test]
    fn calibrate_bias_hits_target_on_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<f64> = (0..500).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        for target in [0.01, 0.3, 0.77, 0.99] {
            let b = calibrate_bias(&logits, target).unwrap();
            // independent evaluation of the mean probability
            let p: f64 = logits.iter().map(|l| 1.0 / (1.0 + (-(l + b)).exp())).sum::<f64>() / 500.0;
            assert!((p - target).abs() <= 1e-6, "target {target}, got {p}");
        }
    }

    #[test]
    fn mar_keeps_ceil_fraction_of_columns_observed() {
        let truth = gaussian(400, 10, 1);
        let spec = MissingSpec::new(Mechanism::Mar, 0.3, 3);
        let mask = simulate_mar(&truth, &spec).unwrap();
        let full = mask.axis_iter(Axis(1)).filter(|c| c.iter().all(|&m| m == 1)).count();
        assert_eq!(full, 3);
    }

    #[test]
    fn mar_hits_rate_on_maskable_cells() {
        let truth = gaussian(30_000, 7, 2);
        let spec = MissingSpec::new(Mechanism::Mar, 0.3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (mask, inputs) = mar_stage(&truth, &spec, 1.0, &mut rng).unwrap();
        assert_eq!(mask, simulate_mar(&truth, &spec).unwrap());
        let maskable: Vec<usize> = (0..7).filter(|j| !inputs.contains(j)).collect();
        assert!(30_000 * maskable.len() >= 100_000);
        let p = missing_fraction(maskable.iter().flat_map(|&j| mask.column(j).to_vec()).collect::<Vec<_>>().iter());
        assert!((0.27..=0.33).contains(&p), "rate {p}");
    }

    #[test]
    fn mar_with_zero_weights_is_mcar_on_maskable_columns() {
        let truth = gaussian(30_000, 4, 3);
        let spec = MissingSpec::new(Mechanism::Mar, 0.25, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (mask, inputs) = mar_stage(&truth, &spec, 0.0, &mut rng).unwrap();
        for j in (0..4).filter(|j| !inputs.contains(j)) {
            let p = missing_fraction(mask.column(j).iter());
            assert!((p - 0.25).abs() < 0.015, "column {j}: {p}");
        }
        // constant logits carry no information about the inputs
        let logits = vec![0.0; 10];
        let b = calibrate_bias(&logits, 0.25).unwrap();
        assert!((sigmoid(b) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn mar_rejects_degenerate_column_split() {
        let truth = gaussian(10, 1, 0);
        let spec = MissingSpec::new(Mechanism::Mar, 0.3, 0);
        assert!(simulate_mar(&truth, &spec).is_err());
        let truth = gaussian(10, 4, 0);
        let mut spec = MissingSpec::new(Mechanism::Mar, 0.3, 0);
        spec.observed_fraction = 0.99;
        assert!(simulate_mar(&truth, &spec).is_err());
    }

    #[test]
    fn mnar_with_vanishing_overlay_equals_mar() {
        let truth = gaussian(300, 6, 4);
        let mut spec = MissingSpec::new(Mechanism::Mnar, 0.3, 12);
        spec.mcar_overlay_rate = 1e-15;
        let mnar = simulate_mnar(&truth, &spec).unwrap();
        spec.mechanism = Mechanism::Mar;
        assert_eq!(mnar, simulate_mar(&truth, &spec).unwrap());
    }

    #[test]
    fn mnar_overlay_and_maskable_rates() {
        let truth = gaussian(60_000, 5, 6);
        let mut spec = MissingSpec::new(Mechanism::Mnar, 0.3, 21);
        spec.mcar_overlay_rate = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (_, inputs) = mar_stage(&truth, &spec, 1.0, &mut rng).unwrap();
        let mask = simulate_mnar(&truth, &spec).unwrap();
        assert!(60_000 * inputs.len() >= 100_000);
        let overlay: Vec<u8> = inputs.iter().flat_map(|&j| mask.column(j).to_vec()).collect();
        let p = missing_fraction(overlay.iter());
        assert!((p - 0.2).abs() <= 0.02, "overlay rate {p}");
        let rest: Vec<u8> = (0..5)
            .filter(|j| !inputs.contains(j))
            .flat_map(|j| mask.column(j).to_vec())
            .collect();
        let q = missing_fraction(rest.iter());
        assert!((q - 0.3).abs() <= 0.03, "maskable rate {q}");
    }

    #[test]
    fn simulate_guards_against_fully_missing_columns() {
        let truth = gaussian(2, 3, 0);
        let spec = MissingSpec::new(Mechanism::Mcar, 0.6, 0);
        let mask = simulate(&truth, &spec).unwrap();
        assert!(mask.axis_iter(Axis(1)).all(|c| c.iter().any(|&m| m == 1)));
        let truth = gaussian(1, 3, 0);
        let spec = MissingSpec::new(Mechanism::Mcar, 0.999_999, 0);
        assert!(matches!(simulate(&truth, &spec), Err(Error::Simulation(_))));
    }

    #[test]
    fn mechanism_parses() {
        assert_eq!("MNAR".parse::<Mechanism>().unwrap(), Mechanism::Mnar);
        assert!("xyz".parse::<Mechanism>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn masks_are_binary_shaped_and_deterministic(
            n in 5usize..40, d in 2usize..8, rate in 0.05f64..0.9, seed in 0u64..1000, mech in 0usize..3
        ) {
            let truth = gaussian(n, d, seed ^ 0xabc);
            let mechanism = [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar][mech];
            let spec = MissingSpec::new(mechanism, rate, seed);
            let a = match mechanism {
                Mechanism::Mcar => simulate_mcar(n, d, rate, seed).unwrap(),
                Mechanism::Mar => simulate_mar(&truth, &spec).unwrap(),
                Mechanism::Mnar => simulate_mnar(&truth, &spec).unwrap(),
            };
            prop_assert_eq!(a.dim(), (n, d));
            prop_assert!(a.iter().all(|&m| m <= 1));
            let b = match mechanism {
                Mechanism::Mcar => simulate_mcar(n, d, rate, seed).unwrap(),
                Mechanism::Mar => simulate_mar(&truth, &spec).unwrap(),
                Mechanism::Mnar => simulate_mnar(&truth, &spec).unwrap(),
            };
            prop_assert_eq!(a, b);
        }

        #[test]
        fn calibrate_bias_is_monotone_in_target(
            logits in proptest::collection::vec(-5.0f64..5.0, 1..50),
            t1 in 0.01f64..0.98, dt in 0.001f64..0.5
        ) {
            let t2 = (t1 + dt).min(0.99);
            let b1 = calibrate_bias(&logits, t1).unwrap();
            let b2 = calibrate_bias(&logits, t2).unwrap();
            prop_assert!(b2 >= b1);
        }
    }
}
