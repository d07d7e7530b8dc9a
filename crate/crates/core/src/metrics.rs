//! Imputation quality: MAE over missing cells and the squared 2-Wasserstein
//! distance between imputed and true versions of the incomplete rows.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::sinkhorn::{sinkhorn, SinkhornConfig};
use crate::tabular::{check_shape, Mask, TabularDataset};

/// Largest row count solved exactly under [`WassMethod::Auto`].
pub const EXACT_LIMIT: usize = 512;

/// Largest cloud size accepted by [`wasserstein2_bruteforce`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WassMethod {
    Exact,
    Sinkhorn,
    /// Exact up to [`EXACT_LIMIT`] rows, Sinkhorn beyond.
    Auto,
}

impl WassMethod {
    pub fn resolve(self, m: usize) -> WassMethod {
        match self {
            WassMethod::Auto if m <= EXACT_LIMIT => WassMethod::Exact,
            WassMethod::Auto => WassMethod::Sinkhorn,
            other => other,
        }
    }
}

impl fmt::Display for WassMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WassMethod::Exact => "exact",
            WassMethod::Sinkhorn => "sinkhorn",
            WassMethod::Auto => "auto",
        })
    }
}

impl FromStr for WassMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(WassMethod::Exact),
            "sinkhorn" => Ok(WassMethod::Sinkhorn),
            "auto" => Ok(WassMethod::Auto),
            other => Err(Error::param(format!("unknown wasserstein method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub wass: f64,
    pub m0: usize,
    pub m1: usize,
    pub wass_method: WassMethod,
}

pub fn mae(truth: &Array2<f64>, imputed: &Array2<f64>, mask: &Mask) -> Result<f64> {
    check_shape("imputed", truth.dim(), imputed.dim())?;
    check_shape("mask", truth.dim(), mask.dim())?;
    let mut total = 0.0;
    let mut m0 = 0usize;
    for ((t, x), &m) in truth.iter().zip(imputed.iter()).zip(mask.iter()) {
        if m == 0 {
            total += (t - x).abs();
            m0 += 1;
        }
    }
    if m0 == 0 {
        return Err(Error::NoMissing);
    }
    let value = total / m0 as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("mae"));
    }
    Ok(value)
}

pub(crate) fn squared_cost(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut cost = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ai) in a.rows().into_iter().enumerate() {
        for (j, bj) in b.rows().into_iter().enumerate() {
            cost[[i, j]] = ai.iter().zip(bj.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    cost
}

fn check_clouds(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    check_shape("wasserstein point clouds", a.dim(), b.dim())?;
    if a.nrows() == 0 {
        return Err(Error::param("wasserstein distance needs at least one point"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wasserstein point clouds"));
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between the uniform empirical measures on
/// the rows of `truth_rows` and `imputed_rows`. `Auto` picks by size.
pub fn wasserstein2(truth_rows: &Array2<f64>, imputed_rows: &Array2<f64>, method: WassMethod) -> Result<f64> {
    check_clouds(truth_rows, imputed_rows)?;
    let m = truth_rows.nrows();
    let cost = squared_cost(truth_rows, imputed_rows);
    match method.resolve(m) {
        WassMethod::Exact => {
            let plan = assignment::solve(&cost)?;
            Ok(assignment::assignment_cost(&cost, &plan) / m as f64)
        }
        _ => Ok(sinkhorn(&cost, &SinkhornConfig::default())?.cost),
    }
}

/// Minimum mean pairing cost over all `m!` permutations.
pub fn wasserstein2_bruteforce(truth_rows: &Array2<f64>, imputed_rows: &Array2<f64>) -> Result<f64> {
    check_clouds(truth_rows, imputed_rows)?;
    let m = truth_rows.nrows();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::param(format!(
            "brute-force wasserstein limited to {BRUTE_FORCE_LIMIT} points, got {m}"
        )));
    }
    let cost = squared_cost(truth_rows, imputed_rows);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
        best = best.min(total);
    });
    Ok(best / m as f64)
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Row indices with at least one missing cell.
pub fn incomplete_rows(mask: &Mask) -> Vec<usize> {
    mask.axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| row.iter().any(|&m| m == 0))
        .map(|(i, _)| i)
        .collect()
}

/// MAE over missing cells and Wass over the incomplete rows.
pub fn evaluate(ds: &TabularDataset, imputed: &Array2<f64>, method: WassMethod) -> Result<MetricReport> {
    let truth = ds.truth().ok_or(Error::TruthAbsent)?;
    evaluate_against(truth, imputed, ds.mask(), method)
}

pub fn evaluate_against(truth: &Array2<f64>, imputed: &Array2<f64>, mask: &Mask, method: WassMethod) -> Result<MetricReport> {
    let m0 = mask.iter().filter(|&&m| m == 0).count();
    if m0 == 0 {
        return Err(Error::NoMissing);
    }
    let mae = mae(truth, imputed, mask)?;
    let rows = incomplete_rows(mask);
    let resolved = method.resolve(rows.len());
    let wass = wasserstein2(
        &truth.select(Axis(0), &rows),
        &imputed.select(Axis(0), &rows),
        resolved,
    )?;
    Ok(MetricReport {
        mae,
        wass,
        m0,
        m1: rows.len(),
        wass_method: resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
    }

    #[test]
    fn mae_examples() {
        let truth = array![[1.0, 3.0]];
        let imp = array![[1.5, 2.5]];
        let mask = array![[0u8, 0]];
        assert_eq!(mae(&truth, &imp, &mask).unwrap(), 0.5);
        assert_eq!(mae(&truth, &truth, &mask).unwrap(), 0.0);
        assert!(matches!(mae(&truth, &imp, &array![[1u8, 1]]), Err(Error::NoMissing)));
    }

    #[test]
    fn mae_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = randn((5, 3), &mut rng);
        let imp = randn((5, 3), &mut rng);
        let mask = Array2::from_shape_simple_fn((5, 3), || u8::from(rng.random::<f64>() < 0.5));
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                if mask[[i, j]] == 0 {
                    sum += (truth[[i, j]] - imp[[i, j]]).abs();
                    count += 1.0;
                }
            }
        }
        assert!((mae(&truth, &imp, &mask).unwrap() - sum / count).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_examples() {
        let a = array![[0.0, 0.0]];
        let b = array![[3.0, 4.0]];
        assert_eq!(wasserstein2(&a, &b, WassMethod::Exact).unwrap(), 25.0);

        let c = array![[0.5, 1.0], [-2.0, 0.0], [1.0, 1.0]];
        assert_eq!(wasserstein2(&c, &c, WassMethod::Exact).unwrap(), 0.0);

        let p = array![[0.0, 0.0], [2.0, 0.0]];
        let q = array![[1.0, 0.0], [3.0, 0.0]];
        assert_eq!(wasserstein2(&p, &q, WassMethod::Exact).unwrap(), 1.0);
        assert_eq!(wasserstein2_bruteforce(&p, &q).unwrap(), 1.0);
        assert!(wasserstein2(&p, &a, WassMethod::Exact).is_err());
    }

    #[test]
    fn bruteforce_limits_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = randn((1, 3), &mut rng);
        let b = randn((1, 3), &mut rng);
        let d2: f64 = (&a - &b).mapv(|v| v * v).sum();
        assert!((wasserstein2_bruteforce(&a, &b).unwrap() - d2).abs() < 1e-15);

        let a = randn((5, 2), &mut rng);
        let b = randn((5, 2), &mut rng);
        let w = wasserstein2_bruteforce(&a, &b).unwrap();
        let shuffled = b.select(Axis(0), &[3, 0, 4, 1, 2]);
        assert!((wasserstein2_bruteforce(&a, &shuffled).unwrap() - w).abs() < 1e-12);
        assert!(wasserstein2_bruteforce(&randn((9, 1), &mut rng), &randn((9, 1), &mut rng)).is_err());
    }

    #[test]
    fn exact_matches_bruteforce_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..150 {
            let m = rng.random_range(1..=6);
            let d = rng.random_range(1..=4);
            let a = randn((m, d), &mut rng);
            let b = randn((m, d), &mut rng);
            let exact = wasserstein2(&a, &b, WassMethod::Exact).unwrap();
            let brute = wasserstein2_bruteforce(&a, &b).unwrap();
            assert!((exact - brute).abs() < 1e-9, "{exact} vs {brute}");
        }
    }

    #[test]
    fn evaluate_filters_incomplete_rows() {
        let truth = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5], [3.0, 3.0]];
        let mask = array![[1u8, 1], [0, 1], [1, 1], [1, 0]];
        let ds = TabularDataset::from_truth_and_mask(truth.clone(), mask.clone()).unwrap();
        let mut imputed = truth.clone();
        imputed[[1, 0]] = 1.0;
        imputed[[3, 1]] = 2.5;
        let report = evaluate(&ds, &imputed, WassMethod::Exact).unwrap();
        assert_eq!(report.m0, 2);
        assert_eq!(report.m1, 2);
        assert!((report.mae - 0.75).abs() < 1e-15);
        let hand = wasserstein2(
            &array![[2.0, -1.0], [3.0, 3.0]],
            &array![[1.0, -1.0], [3.0, 2.5]],
            WassMethod::Exact,
        )
        .unwrap();
        assert_eq!(report.wass, hand);

        let perfect = evaluate(&ds, &truth, WassMethod::Auto).unwrap();
        assert_eq!((perfect.mae, perfect.wass), (0.0, 0.0));
        assert_eq!(perfect.wass_method, WassMethod::Exact);
    }

    #[test]
    fn evaluate_errors() {
        let truth = array![[0.0, 1.0]];
        let full = TabularDataset::from_truth_and_mask(truth.clone(), array![[1u8, 1]]).unwrap();
        assert!(matches!(evaluate(&full, &truth, WassMethod::Exact), Err(Error::NoMissing)));
        let no_truth = TabularDataset::from_values(array![[0.0, f64::NAN]]).unwrap();
        assert!(matches!(evaluate(&no_truth, &truth, WassMethod::Exact), Err(Error::TruthAbsent)));
    }

    #[test]
    fn report_json_has_expected_keys() {
        let r = MetricReport {
            mae: 0.0,
            wass: 0.0,
            m0: 3,
            m1: 2,
            wass_method: WassMethod::Exact,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["wass_method"], "exact");
        assert_eq!(v.as_object().unwrap().len(), 5);
    }

    #[test]
    fn sinkhorn_tracks_exact_on_standardized_clouds() {
        for seed in 0..12 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3 + seed as usize % 5;
            let a = randn((64, d), &mut rng);
            let b = randn((64, d), &mut rng);
            let exact = wasserstein2(&a, &b, WassMethod::Exact).unwrap();
            let approx = wasserstein2(&a, &b, WassMethod::Sinkhorn).unwrap();
            assert!((approx - exact).abs() / exact.max(1e-9) <= 0.05, "seed {seed}: {approx} vs {exact}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_is_symmetric_and_scales_quadratically(
            pts in proptest::collection::vec(-3.0f64..3.0, 24), c in 0.1f64..4.0
        ) {
            let a = Array2::from_shape_vec((6, 2), pts[..12].to_vec()).unwrap();
            let b = Array2::from_shape_vec((6, 2), pts[12..].to_vec()).unwrap();
            let ab = wasserstein2(&a, &b, WassMethod::Exact).unwrap();
            let ba = wasserstein2(&b, &a, WassMethod::Exact).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            let scaled = wasserstein2(&(&a * c), &(&b * c), WassMethod::Exact).unwrap();
            prop_assert!((scaled - c * c * ab).abs() <= 1e-9 * scaled.max(1.0));
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn exact_is_zero_only_for_equal_multisets(
            pts in proptest::collection::vec(-3.0f64..3.0, 8), swap in 0usize..4
        ) {
            let a = Array2::from_shape_vec((4, 2), pts).unwrap();
            let mut order: Vec<usize> = (0..4).collect();
            order.swap(0, swap);
            let permuted = a.select(Axis(0), &order);
            prop_assert!(wasserstein2(&a, &permuted, WassMethod::Exact).unwrap().abs() < 1e-12);
            let mut moved = a.clone();
            moved[[0, 0]] += 0.5;
            prop_assert!(wasserstein2(&a, &moved, WassMethod::Exact).unwrap() > 0.0);
        }
    }
}
