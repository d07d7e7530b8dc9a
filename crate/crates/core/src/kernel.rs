//! RBF kernel `K(x, y) = exp(-||x - y||^2 / (2 h^2))` and its gradient.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest bandwidth the median heuristic will return.
pub const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: f64,
    pub use_median_heuristic: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.5,
            use_median_heuristic: false,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        check_bandwidth(self.bandwidth)
    }

    /// Bandwidth to use for the point cloud `x`.
    pub fn resolve(&self, x: &Array2<f64>) -> Result<f64> {
        if self.use_median_heuristic && x.nrows() >= 2 {
            median_bandwidth(x)
        } else {
            self.validate()?;
            Ok(self.bandwidth)
        }
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("bandwidth must be > 0, got {h}")))
    }
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf(x: ArrayView1<f64>, y: ArrayView1<f64>, h: f64) -> f64 {
    (-sq_dist(x, y) / (2.0 * h * h)).exp()
}

#[inline]
fn sq_dist_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dense Gram matrix `G[i, j] = K(x_i, y_j)`.
pub fn gram(x: &Array2<f64>, y: &Array2<f64>, h: f64) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::Shape {
            context: "gram",
            expected: (y.nrows(), x.ncols()),
            found: y.dim(),
        });
    }
    check_bandwidth(h)?;
    let scale = -1.0 / (2.0 * h * h);
    let (x, y) = (x.as_standard_layout(), y.as_standard_layout());
    let d = x.ncols().max(1);
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice().expect("standard layout");
    let mut g = Array2::zeros((x.nrows(), y.nrows()));
    g.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        let xi = &xs[i * x.ncols()..(i + 1) * x.ncols()];
        for (out, yj) in row.iter_mut().zip(ys.chunks_exact(d)) {
            *out = (scale * sq_dist_slice(xi, yj)).exp();
        }
    });
    Ok(g)
}

/// `gram(x, x, h)` computed on the upper triangle and mirrored, so the
/// result is exactly symmetric with a unit diagonal.
pub fn gram_self(x: &Array2<f64>, h: f64) -> Result<Array2<f64>> {
    check_bandwidth(h)?;
    let (n, d) = x.dim();
    let scale = -1.0 / (2.0 * h * h);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let row = |i: usize| &xs[i * d..(i + 1) * d];
    let mut g = Array2::zeros((n, n));
    g.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut out)| {
        let xi = row(i);
        out[i] = 1.0;
        for j in i + 1..n {
            out[j] = (scale * sq_dist_slice(xi, row(j))).exp();
        }
    });
    for i in 1..n {
        for j in 0..i {
            g[[i, j]] = g[[j, i]];
        }
    }
    Ok(g)
}

/// `grad_y K(x, y) = (x - y) / h^2 * K(x, y)`.
pub fn grad_gram_second(x: ArrayView1<f64>, y: ArrayView1<f64>, h: f64) -> Array1<f64> {
    let c = rbf(x, y, h) / (h * h);
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * c).collect()
}

/// Median of the pairwise Euclidean distances divided by `sqrt(2)`, so that
/// `2 h^2` equals the median squared distance. Floored at [`MIN_BANDWIDTH`].
pub fn median_bandwidth(x: &Array2<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::param("median bandwidth needs at least two points"));
    }
    let mut dists: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = x.row(i);
            (i + 1..n).map(move |j| sq_dist(xi, x.row(j)).sqrt())
        })
        .collect();
    let m = dists.len();
    let mid = m / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok((median / std::f64::consts::SQRT_2).max(MIN_BANDWIDTH))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn gram_closed_forms() {
        let x = array![[0.3, -1.2]];
        assert_eq!(gram(&x, &x, 0.5).unwrap(), array![[1.0]]);

        let h: f64 = 0.7;
        // ||x - y||^2 = 2 h^2
        let y = array![[0.3 + 2f64.sqrt() * h, -1.2]];
        assert!((gram(&x, &y, h).unwrap()[[0, 0]] - (-1f64).exp()).abs() < 1e-12);

        let g = gram(&array![[0.0, 0.0]], &array![[1.0, 1.0]], 1.0).unwrap();
        assert!((g[[0, 0]] - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!(gram(&x, &array![[1.0]], 1.0).is_err());
        assert!(gram(&x, &x, 0.0).is_err());
    }

    #[test]
    fn gram_self_matches_gram() {
        let x = randn((13, 3), 1);
        let a = gram(&x, &x, 0.8).unwrap();
        let b = gram_self(&x, 0.8).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-15);
        }
        assert_eq!(b, b.t());
    }

    #[test]
    fn grad_examples() {
        let x = array![0.4, -2.0];
        assert!(grad_gram_second(x.view(), x.view(), 0.5).iter().all(|&g| g == 0.0));

        let g = grad_gram_second(array![1.0, 0.0].view(), array![0.0, 0.0].view(), 1.0);
        assert!((g[0] - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
    }

    /// Central differences of the kernel value in its second argument.
    fn fd_grad_second(x: &Array1<f64>, y: &Array1<f64>, h: f64) -> Array1<f64> {
        let step = 1e-6;
        (0..y.len())
            .map(|k| {
                let mut yp = y.clone();
                yp[k] += step;
                let mut ym = y.clone();
                ym[k] -= step;
                (rbf(x.view(), yp.view(), h) - rbf(x.view(), ym.view(), h)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn grad_matches_finite_differences() {
        let xs = randn((100, 3), 2);
        let ys = randn((100, 3), 3);
        for (x, y) in xs.rows().into_iter().zip(ys.rows()) {
            let an = grad_gram_second(x, y, 1.3);
            let fd = fd_grad_second(&x.to_owned(), &y.to_owned(), 1.3);
            for (a, f) in an.iter().zip(fd.iter()) {
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-4);
                assert!(rel < 1e-6, "analytic {a} vs fd {f}");
            }
        }
    }

    #[test]
    fn median_bandwidth_examples() {
        let two = array![[0.0, 0.0], [1.0, 1.0]];
        assert!((median_bandwidth(&two).unwrap() - 1.0).abs() < 1e-12);

        let line = array![[0.0], [1.0], [3.0]];
        let doubled = array![[0.0], [1.0], [3.0], [0.0], [1.0], [3.0]];
        assert_eq!(median_bandwidth(&line).unwrap(), median_bandwidth(&doubled).unwrap());

        let same = array![[2.0, 2.0], [2.0, 2.0], [2.0, 2.0]];
        assert_eq!(median_bandwidth(&same).unwrap(), MIN_BANDWIDTH);
        assert!(median_bandwidth(&array![[1.0]]).is_err());
    }

    #[test]
    fn median_bandwidth_matches_sorted_oracle() {
        for (n, seed) in [(9, 1), (10, 2), (31, 3)] {
            let x = randn((n, 4), seed);
            let mut all = Vec::new();
            for i in 0..n {
                for j in 0..i {
                    let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                    all.push(d.sqrt());
                }
            }
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = all.len();
            let median = if m % 2 == 1 { all[m / 2] } else { 0.5 * (all[m / 2 - 1] + all[m / 2]) };
            let h = median_bandwidth(&x).unwrap();
            assert!((h - median / 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn config_resolution() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        assert_eq!(KernelConfig::default().resolve(&x).unwrap(), 0.5);
        let med = KernelConfig {
            use_median_heuristic: true,
            ..KernelConfig::default()
        };
        assert!((med.resolve(&x).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gradient_is_antisymmetric(
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            y in proptest::collection::vec(-3.0f64..3.0, 3),
            h in 0.1f64..3.0
        ) {
            let (x, y) = (Array1::from(x), Array1::from(y));
            let gy = grad_gram_second(x.view(), y.view(), h);
            // grad_x K(x, y) = grad_y K(y, x) by symmetry of K
            let gx = grad_gram_second(y.view(), x.view(), h);
            for (a, b) in gy.iter().zip(gx.iter()) {
                prop_assert!((a + b).abs() < 1e-14);
            }
        }

        #[test]
        fn kernel_decays_strictly_with_distance(r1 in 0.0f64..3.0, dr in 1e-3f64..2.0, h in 0.2f64..2.0) {
            let o = array![0.0, 0.0];
            let a = array![r1, 0.0];
            let b = array![r1 + dr, 0.0];
            prop_assert!(rbf(o.view(), b.view(), h) < rbf(o.view(), a.view(), h));
        }
    }
}
