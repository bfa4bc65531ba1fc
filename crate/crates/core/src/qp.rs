//! Small dense convex QPs
//!
//! ```text
//!     minimize    ½ wᵀPw + qᵀw
//!     subject to  G w + g t ≥ h
//! ```
//!
//! with `P ≻ 0` and an optional unpenalised scalar `t` (the classifier bias).
//!
//! A Mehrotra predictor-corrector interior-point method finds the active set; the KKT system
//! restricted to that set is then solved directly ("polishing"), which turns the interior
//! iterate into an exact vertex solution. A previous multiplier vector can be passed as a
//! warm start, in which case its support is tried first.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Objective gain over the unconstrained minimum that is treated as divergence.
pub(crate) const DIVERGENCE_THRESHOLD: f64 = 1e8;

const STEP_FRACTION: f64 = 0.99;
const CERT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub w: DVector<f64>,
    pub t: f64,
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DenseQp {
    p: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    g: DMatrix<f64>,
    free: Option<DVector<f64>>,
    h: DVector<f64>,
    /// `[G g]`, the constraint matrix over the stacked variable `[w; t]`.
    a: DMatrix<f64>,
    a_scale: f64,
    /// Objective gain above which a solution is reported as infeasible.
    objective_limit: f64,
}

impl DenseQp {
    pub fn new(p: DMatrix<f64>, g: DMatrix<f64>, free: Option<DVector<f64>>, h: DVector<f64>) -> Result<Self> {
        let m = p.nrows();
        let n = g.nrows();
        if !p.is_square() || g.ncols() != m {
            return Err(Error::DimensionMismatch {
                what: "constraint matrix columns",
                expected: m,
                actual: g.ncols(),
            });
        }
        if h.len() != n || free.as_ref().is_some_and(|f| f.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "constraint rows",
                expected: n,
                actual: h.len(),
            });
        }
        let chol = Cholesky::new(p.clone()).ok_or(Error::SingularGram {
            min_eigenvalue: f64::NAN,
        })?;
        let f = usize::from(free.is_some());
        let mut a = DMatrix::zeros(n, m + f);
        a.view_mut((0, 0), (n, m)).copy_from(&g);
        if let Some(col) = &free {
            a.set_column(m, col);
        }
        let a_scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        Ok(Self {
            p,
            chol,
            g,
            free,
            h,
            a,
            a_scale,
            objective_limit: DIVERGENCE_THRESHOLD,
        })
    }

    /// Replaces the objective-gain divergence limit (`f64::INFINITY` disables it).
    pub fn with_objective_limit(mut self, limit: f64) -> Self {
        self.objective_limit = limit;
        self
    }

    pub fn n_constraints(&self) -> usize {
        self.g.nrows()
    }

    fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    /// `½ wᵀPw + qᵀw`.
    pub fn objective(&self, q: &DVector<f64>, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.p * w)) + q.dot(w)
    }

    fn unconstrained_value(&self, q: &DVector<f64>) -> f64 {
        -0.5 * q.dot(&self.chol.solve(q))
    }

    fn slack(&self, w: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut s = &self.g * w - &self.h;
        if let Some(g) = &self.free {
            s += g * t;
        }
        s
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let m = self.p.nrows();
        let t = if self.free.is_some() { x[m] } else { 0.0 };
        (x.rows(0, m).into_owned(), t)
    }

    /// `P̂ x` for the stacked variable, where `t` carries no curvature.
    fn hess_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.p.nrows();
        let mut out = DVector::zeros(x.len());
        out.rows_mut(0, m).copy_from(&(&self.p * x.rows(0, m)));
        out
    }

    pub fn solve(&self, q: &DVector<f64>, warm: Option<&DVector<f64>>, opts: QpOptions) -> QpSolution {
        let n = self.n_constraints();
        if n == 0 {
            return QpSolution {
                w: -self.chol.solve(q),
                t: 0.0,
                lambda: DVector::zeros(0),
                status: QpStatus::Optimal,
                iterations: 0,
            };
        }
        let base = self.unconstrained_value(q);

        if let Some(l) = warm.filter(|l| l.len() == n) {
            let support: Vec<usize> = (0..n).filter(|&i| l[i] > 0.0).collect();
            if let Some(sol) = self.polish_on(q, &support, opts.tol, base) {
                return sol;
            }
        }
        self.interior_point(q, opts, base)
    }

    fn interior_point(&self, q: &DVector<f64>, opts: QpOptions, base: f64) -> QpSolution {
        let n = self.n_constraints();
        let nv = self.n_vars();
        let m = self.p.nrows();
        let a = &self.a;
        let b = &self.h;
        let mut qh = DVector::zeros(nv);
        qh.rows_mut(0, m).copy_from(q);

        // start from the least-squares point of the stacked system
        let mut x = {
            let mut mtx = a.tr_mul(a);
            for i in 0..m {
                for j in 0..m {
                    mtx[(i, j)] += self.p[(i, j)];
                }
            }
            let rhs = a.tr_mul(b) - &qh;
            factor_solve(&mtx, &rhs).unwrap_or_else(|| DVector::zeros(nv))
        };
        let mut s = (a * &x - b).map(|v| v.abs().max(1.0));
        let mut lambda = DVector::from_element(n, 1.0);

        for k in 1..=opts.max_iter {
            let r_d = self.hess_mul(&x) + &qh - a.tr_mul(&lambda);
            let r_p = a * &x - &s - b;
            let mu = s.dot(&lambda) / n as f64;

            let scale_d = 1.0 + qh.amax().max(a.tr_mul(&lambda).amax());
            if r_d.amax() <= opts.tol * scale_d && r_p.amax() <= opts.tol && mu <= 0.1 * opts.tol {
                return self.finish(q, x, lambda, &s, opts.tol, base, k);
            }
            if self.is_farkas_direction(&lambda) {
                return self.infeasible(lambda, k);
            }
            if r_p.amax() <= opts.tol && {
                let (w, _) = self.split(&x);
                self.objective(q, &w) - base > self.objective_limit
            } {
                return self.infeasible(lambda, k);
            }

            let d = lambda.component_div(&s);
            let mut mtx = a.tr_mul(&DMatrix::from_fn(n, nv, |i, j| d[i] * a[(i, j)]));
            for i in 0..m {
                for j in 0..m {
                    mtx[(i, j)] += self.p[(i, j)];
                }
            }
            let Some(fac) = Factor::new(&mtx) else {
                break;
            };
            let direction = |r_c: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
                let inner = (r_c - lambda.component_mul(&r_p)).component_div(&s);
                let dx = fac.solve(&(a.tr_mul(&inner) - &r_d));
                let ds = a * &dx + &r_p;
                let dl = (r_c - lambda.component_mul(&ds)).component_div(&s);
                (dx, ds, dl)
            };

            let r_aff = -s.component_mul(&lambda);
            let (_, ds_a, dl_a) = direction(&r_aff);
            let alpha_a = max_step(&s, &ds_a).min(max_step(&lambda, &dl_a));
            let mu_aff = (&s + &ds_a * alpha_a).dot(&(&lambda + &dl_a * alpha_a)) / n as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

            let r_c = r_aff - ds_a.component_mul(&dl_a) + DVector::from_element(n, sigma * mu);
            let (dx, ds, dl) = direction(&r_c);
            let alpha = (STEP_FRACTION * max_step(&s, &ds).min(max_step(&lambda, &dl))).min(1.0);
            if !(alpha > 0.0) || !dx.iter().all(|v| v.is_finite()) {
                break;
            }
            x += dx * alpha;
            s += ds * alpha;
            lambda += dl * alpha;
        }

        // no convergence: still try the support the iterate points at
        let support: Vec<usize> = (0..n).filter(|&i| lambda[i] > s[i]).collect();
        if let Some(sol) = self.polish_on(q, &support, opts.tol, base) {
            return QpSolution {
                iterations: opts.max_iter,
                ..sol
            };
        }
        let (w, t) = self.split(&x);
        QpSolution {
            w,
            t,
            lambda,
            status: QpStatus::MaxIter,
            iterations: opts.max_iter,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        q: &DVector<f64>,
        x: DVector<f64>,
        lambda: DVector<f64>,
        s: &DVector<f64>,
        tol: f64,
        base: f64,
        k: usize,
    ) -> QpSolution {
        let n = self.n_constraints();
        let support: Vec<usize> = (0..n).filter(|&i| lambda[i] > s[i]).collect();
        if let Some(sol) = self.polish_on(q, &support, tol, base) {
            return QpSolution { iterations: k, ..sol };
        }
        let (w, t) = self.split(&x);
        let status = if self.objective(q, &w) - base > self.objective_limit {
            QpStatus::Infeasible
        } else {
            QpStatus::Optimal
        };
        QpSolution {
            w,
            t,
            lambda,
            status,
            iterations: k,
        }
    }

    fn infeasible(&self, lambda: DVector<f64>, k: usize) -> QpSolution {
        QpSolution {
            w: DVector::zeros(self.p.nrows()),
            t: 0.0,
            lambda,
            status: QpStatus::Infeasible,
            iterations: k,
        }
    }

    /// `d ≥ 0`, `[G g]ᵀd ≈ 0` and `hᵀd > 0` certify that `Gw + gt ≥ h` has no solution.
    fn is_farkas_direction(&self, d: &DVector<f64>) -> bool {
        let total: f64 = d.iter().map(|v| v.max(0.0)).sum();
        if !(total > 0.0) || !total.is_finite() {
            return false;
        }
        let dh = d.map(|v| v.max(0.0) / total);
        if self.a.tr_mul(&dh).amax() > CERT_TOL * self.a_scale {
            return false;
        }
        self.h.dot(&dh) > 1e-6
    }

    /// Equality-constrained KKT solve with `active` rows held tight. Multipliers are returned
    /// unclipped, indexed by constraint row.
    fn kkt_solve(&self, q: &DVector<f64>, active: &[usize]) -> Option<(DVector<f64>, f64, DVector<f64>)> {
        let m = self.p.nrows();
        let f = usize::from(self.free.is_some());
        let k = active.len();
        let dim = m + f + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (m, m)).copy_from(&self.p);
        for i in 0..m {
            rhs[i] = -q[i];
        }
        for (col, &row) in active.iter().enumerate() {
            for j in 0..m + f {
                kkt[(j, m + f + col)] = -self.a[(row, j)];
                kkt[(m + f + col, j)] = self.a[(row, j)];
            }
            rhs[m + f + col] = self.h[row];
        }
        let sol = match kkt.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            // repeated or dependent active rows: minimum-norm multipliers
            _ => kkt.svd(true, true).solve(&rhs, 1e-12).ok()?,
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let t = if f == 1 { sol[m] } else { 0.0 };
        let mut lambda = DVector::zeros(self.n_constraints());
        for (col, &row) in active.iter().enumerate() {
            lambda[row] = sol[m + f + col];
        }
        Some((sol.rows(0, m).into_owned(), t, lambda))
    }

    /// Active-set refinement from a guessed support: drop the most negative multiplier or add
    /// the most violated row until the KKT point is primal and dual feasible.
    fn polish_on(&self, q: &DVector<f64>, support: &[usize], tol: f64, base: f64) -> Option<QpSolution> {
        let n = self.n_constraints();
        let mut active = support.to_vec();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2 * n + 8 {
            active.sort_unstable();
            if !seen.insert(active.clone()) {
                return None;
            }
            let (w, t, lambda) = self.kkt_solve(q, &active)?;
            let lmax = lambda.amax();
            let worst_dual = active
                .iter()
                .copied()
                .min_by(|&i, &j| lambda[i].total_cmp(&lambda[j]))
                .filter(|&i| lambda[i] < -tol * (1.0 + lmax));
            if let Some(i) = worst_dual {
                active.retain(|&r| r != i);
                continue;
            }
            let s = self.slack(&w, t);
            let worst_primal = (0..n)
                .filter(|i| !active.contains(i))
                .min_by(|&i, &j| s[i].total_cmp(&s[j]))
                .filter(|&i| s[i] < -tol);
            if let Some(i) = worst_primal {
                active.push(i);
                continue;
            }
            return self.accept(q, w, t, lambda.map(|l| l.max(0.0)), tol, base);
        }
        None
    }

    fn accept(
        &self,
        q: &DVector<f64>,
        w: DVector<f64>,
        t: f64,
        lambda: DVector<f64>,
        tol: f64,
        base: f64,
    ) -> Option<QpSolution> {
        let s = self.slack(&w, t);
        let lmax = lambda.amax();
        if s.iter().any(|&v| v < -tol) {
            return None;
        }
        if s.iter()
            .zip(lambda.iter())
            .any(|(s, l)| (s * l).abs() > tol * (1.0 + lmax))
        {
            return None;
        }
        let stat = &self.p * &w + q - self.g.tr_mul(&lambda);
        if stat.amax() > tol * (1.0 + w.amax()) {
            return None;
        }
        if let Some(g) = &self.free {
            if g.dot(&lambda).abs() > tol * (1.0 + lmax) {
                return None;
            }
        }
        let status = if self.objective(q, &w) - base > self.objective_limit {
            QpStatus::Infeasible
        } else {
            QpStatus::Optimal
        };
        Some(QpSolution {
            w,
            t,
            lambda,
            status,
            iterations: 0,
        })
    }
}

/// Largest `α ∈ [0, 1]` keeping `v + α·dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(1.0, f64::min)
}

enum Factor {
    Chol(Cholesky<f64, Dyn>),
    Lu(nalgebra::LU<f64, Dyn, Dyn>),
}

impl Factor {
    fn new(mtx: &DMatrix<f64>) -> Option<Self> {
        if let Some(c) = Cholesky::new(mtx.clone()) {
            return Some(Factor::Chol(c));
        }
        let lu = mtx.clone().lu();
        lu.is_invertible().then_some(Factor::Lu(lu))
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Chol(c) => c.solve(rhs),
            Factor::Lu(lu) => lu
                .solve(rhs)
                .unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN)),
        }
    }
}

fn factor_solve(mtx: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let x = Factor::new(mtx)?.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}
