//! Entropic optimal transport between two uniform empirical measures.
//!
//! Scaling iterations run on a stabilized kernel: potentials `f, g` are
//! absorbed into the kernel whenever the scaling vectors leave a safe range,
//! so small regularization does not under- or overflow. The regularization
//! is annealed geometrically from the mean cost down to its target, and the
//! last stage is finished with Newton steps on the dual once the marginals
//! are close, since plain scaling converges very slowly at small epsilon.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig {
    /// Regularization as a fraction of the mean pairwise cost.
    pub relative_epsilon: f64,
    /// Cap on scaling iterations; a Newton step counts as one.
    pub max_iterations: usize,
    /// L1 bound on the row-marginal violation.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            relative_epsilon: 0.01,
            max_iterations: 10_000,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    /// `<P, C>` in the caller's cost units.
    pub cost: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
}

const ABSORB_THRESHOLD: f64 = 1e100;
const CHECK_EVERY: usize = 10;
const STAGE_FACTOR: f64 = 0.5;
const STAGE_TOLERANCE: f64 = 1e-4;
/// Violation below which the final stage switches to Newton steps.
const NEWTON_START: f64 = 1e-5;

/// Transport cost of the entropic plan between uniform measures with cost
/// matrix `cost` (rows: source points, columns: target points).
pub fn sinkhorn(cost: &Array2<f64>, cfg: &SinkhornConfig) -> Result<SinkhornOutput> {
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Err(Error::param("sinkhorn needs non-empty measures"));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::NonFinite("sinkhorn cost matrix"));
    }
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    if max_cost == 0.0 {
        return Ok(SinkhornOutput {
            cost: 0.0,
            iterations: 0,
            marginal_violation: 0.0,
        });
    }
    // max-normalized cost keeps the kernel exponent in a fixed range
    let c = cost / max_cost;
    let mean_cost = c.mean().unwrap_or(0.0);
    let eps = cfg.relative_epsilon * mean_cost;
    if !(eps > 0.0) {
        return Err(Error::param("sinkhorn regularization must be > 0"));
    }

    let mut st = State::new(c, mean_cost.max(eps));
    let mut violation = f64::INFINITY;
    let mut it = 0;
    while it < cfg.max_iterations {
        it += 1;
        st.scale()?;
        if it % CHECK_EVERY != 0 && it != cfg.max_iterations {
            continue;
        }
        violation = st.row_violation();
        let final_stage = st.eps <= eps;
        if final_stage && violation < cfg.tolerance {
            break;
        }
        if !final_stage && violation < STAGE_TOLERANCE {
            st.absorb();
            st.eps = (st.eps * STAGE_FACTOR).max(eps);
            st.rebuild();
        } else if final_stage && violation < NEWTON_START {
            st.newton_step()?;
            it += 1;
            st.scale()?;
            violation = st.row_violation();
            if violation < cfg.tolerance {
                break;
            }
        }
    }
    if !(violation < cfg.tolerance) {
        return Err(Error::SinkhornNoConvergence {
            iterations: cfg.max_iterations,
            violation,
        });
    }
    Ok(SinkhornOutput {
        cost: st.transport_cost() * max_cost,
        iterations: it.min(cfg.max_iterations),
        marginal_violation: violation,
    })
}

/// Plan `diag(u) K diag(v)` with `K = exp((f + g - c) / eps)`.
struct State {
    c: Array2<f64>,
    eps: f64,
    a: f64,
    b: f64,
    f: Array1<f64>,
    g: Array1<f64>,
    u: Array1<f64>,
    v: Array1<f64>,
    kernel: Array2<f64>,
}

impl State {
    fn new(c: Array2<f64>, eps: f64) -> Self {
        let (n, m) = c.dim();
        // potentials that put a unit entry in every row and column
        let f: Array1<f64> = c
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let g: Array1<f64> = (0..m)
            .map(|j| (0..n).map(|i| c[[i, j]] - f[i]).fold(f64::INFINITY, f64::min))
            .collect();
        let mut st = Self {
            kernel: Array2::zeros((n, m)),
            c,
            eps,
            a: 1.0 / n as f64,
            b: 1.0 / m as f64,
            f,
            g,
            u: Array1::ones(n),
            v: Array1::ones(m),
        };
        st.rebuild();
        st
    }

    fn rebuild(&mut self) {
        let (f, g, eps) = (&self.f, &self.g, self.eps);
        Zip::indexed(&mut self.kernel).and(&self.c).for_each(|(i, j), k, &c| {
            *k = ((f[i] + g[j] - c) / eps).exp();
        });
    }

    fn absorb(&mut self) {
        let eps = self.eps;
        Zip::from(&mut self.f).and(&self.u).for_each(|f, &u| *f += eps * u.ln());
        Zip::from(&mut self.g).and(&self.v).for_each(|g, &v| *g += eps * v.ln());
        self.u.fill(1.0);
        self.v.fill(1.0);
    }

    /// One row then column scaling update.
    fn scale(&mut self) -> Result<()> {
        let (a, b) = (self.a, self.b);
        let kv = self.kernel.dot(&self.v);
        Zip::from(&mut self.u).and(&kv).for_each(|u, &s| *u = a / s);
        let ktu = self.kernel.t().dot(&self.u);
        Zip::from(&mut self.v).and(&ktu).for_each(|v, &s| *v = b / s);

        let out_of_range = |x: &f64| !x.is_finite() || *x > ABSORB_THRESHOLD || *x < 1.0 / ABSORB_THRESHOLD;
        if self.u.iter().chain(self.v.iter()).any(out_of_range) {
            if self.u.iter().chain(self.v.iter()).any(|x| !x.is_finite() || *x == 0.0) {
                return Err(Error::NonFinite("sinkhorn scaling"));
            }
            self.absorb();
            self.rebuild();
        }
        Ok(())
    }

    fn row_violation(&self) -> f64 {
        let kv = self.kernel.dot(&self.v);
        self.u.iter().zip(kv.iter()).map(|(u, s)| (u * s - self.a).abs()).sum()
    }

    fn transport_cost(&self) -> f64 {
        let mut total = 0.0;
        Zip::indexed(&self.kernel).and(&self.c).for_each(|(i, j), k, c| {
            total += self.u[i] * k * self.v[j] * c;
        });
        total
    }

    /// Entropic dual `<a, f> + <b, g> - eps * sum(P)` at the current kernel.
    fn dual(&self, kernel: &Array2<f64>, f: &Array1<f64>, g: &Array1<f64>) -> f64 {
        self.a * f.sum() + self.b * g.sum() - self.eps * kernel.sum()
    }

    /// Newton step on the dual potentials followed by a backtracking line
    /// search. The row block of the Hessian is eliminated and the remaining
    /// Schur complement is factored by Cholesky.
    fn newton_step(&mut self) -> Result<()> {
        self.absorb();
        self.rebuild();
        let (n, m) = self.c.dim();
        let p = &self.kernel;
        let row = p.sum_axis(Axis(1)).mapv(|x| x.max(f64::MIN_POSITIVE));
        let col = p.sum_axis(Axis(0));
        // dual gradient: marginal residuals
        let rf = row.mapv(|r| self.a - r);
        let rg = col.mapv(|c| self.b - c);

        // eps * Hessian of the negated dual is [[diag(row), P], [P^T, diag(col)]]
        let mut q = p.clone();
        Zip::from(q.rows_mut()).and(&row).for_each(|mut r, &s| r /= s.sqrt());
        let mut schur = -q.t().dot(&q);
        // the Schur complement annihilates constants; pin that direction
        let pin = col.mean().unwrap_or(1.0);
        schur.mapv_inplace(|x| x + pin);
        for (j, c) in col.iter().enumerate() {
            schur[[j, j]] += c;
        }
        let rhs_g = &rg - &p.t().dot(&(&rf / &row));
        let mut dense = DMatrix::from_row_slice(m, m, schur.as_slice().expect("standard layout"));
        // rounding can leave the factorization marginally indefinite
        let mut jitter = 1e-14 * pin;
        let chol = loop {
            match dense.clone().cholesky() {
                Some(chol) => break chol,
                None if jitter < 1e-6 * pin => {
                    for j in 0..m {
                        dense[(j, j)] += jitter;
                    }
                    jitter *= 100.0;
                }
                // leave the potentials to the scaling iterations
                None => return Ok(()),
            }
        };
        let dg = Array1::from(chol.solve(&DVector::from_vec(rhs_g.to_vec())).as_slice().to_vec());
        let df = (&rf - &p.dot(&dg)) / &row;

        let (df, dg) = (df * self.eps, dg * self.eps);
        let base = self.dual(p, &self.f, &self.g);
        let slope = rf.dot(&df) + rg.dot(&dg);
        let mut t = 1.0;
        let mut trial = Array2::zeros((n, m));
        while t > 1e-8 {
            let f = &self.f + &(&df * t);
            let g = &self.g + &(&dg * t);
            let eps = self.eps;
            Zip::indexed(&mut trial).and(&self.c).for_each(|(i, j), k, &c| {
                *k = ((f[i] + g[j] - c) / eps).exp();
            });
            let value = self.dual(&trial, &f, &g);
            if value.is_finite() && value >= base + 1e-4 * t * slope {
                self.f = f;
                self.g = g;
                self.kernel = trial;
                return Ok(());
            }
            t *= 0.5;
        }
        Ok(())
    }
}
