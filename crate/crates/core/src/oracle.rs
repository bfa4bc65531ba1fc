//! Reference solvers used to check the iterative ones.
//!
//! Neither is meant for production use: [`brute_force_small`] is exponential in the number
//! of samples, and [`solve_centralized`] needs every robot's data in one place.

use nalgebra::{DMatrix, DVector};

use crate::datagen::{GridBasis, LabeledDataset};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::local_qp::{self, Basis, ClassifierSolution, LocalProblem, SolveStatus};

pub const BRUTE_FORCE_LIMIT: usize = 12;

const FEAS_TOL: f64 = 1e-9;

/// Pools every agent's samples under the consensus constraint `[cˡ; γˡ] = z` and solves
/// the resulting single QP over the grid basis.
///
/// The pooled objective is `N·½cᵀK_G c`; the reported objective is the per-agent `½cᵀK_G c`.
pub fn solve_centralized(
    datasets: &[LabeledDataset],
    grid: &GridBasis,
    cfg: &KernelConfig,
) -> Result<ClassifierSolution> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("no datasets to pool".into()));
    }
    let pooled = LabeledDataset::pooled(0, datasets);
    let p = local_qp::build_local(&pooled, Basis::Grid(grid.clone()), cfg)?;
    Ok(local_qp::solve_local(
        &p,
        local_qp::DEFAULT_TOL,
        local_qp::DEFAULT_MAX_ITER,
    ))
}

/// Tries every subset of constraints as the active set and solves its KKT system.
///
/// Any candidate that is primal and dual feasible is a global optimum of the convex QP;
/// the one with the lowest objective (ties: lowest bitmask) is returned.
pub fn brute_force_small(p: &LocalProblem) -> Result<ClassifierSolution> {
    let n = p.n_constraints();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let m = p.dim();
    let k = p.gram().entries();
    let rows = p.kernel_rows();
    let theta: Vec<f64> = p.labels().iter().map(|&l| f64::from(l)).collect();

    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    for mask in 0u32..(1u32 << n) {
        let active: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let Some((c, gamma)) = solve_active(k, &rows, &theta, &active, m) else {
            continue;
        };
        let feasible = (0..n).all(|i| {
            let f: f64 = (0..m).map(|j| rows[(i, j)] * c[j]).sum();
            theta[i] * (f + gamma) >= 1.0 - FEAS_TOL
        });
        if !feasible {
            continue;
        }
        let obj = 0.5 * c.dot(&(k * &c));
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, c, gamma));
        }
    }
    Ok(match best {
        Some((_, c, gamma)) => ClassifierSolution::finish(p, c, gamma, SolveStatus::Optimal, 0),
        None => ClassifierSolution::infeasible(m, 0),
    })
}

/// KKT system with the `active` rows held at equality:
///
/// ```text
///     K c - Σ_{i∈A} λᵢ θᵢ rᵢ = 0
///         Σ_{i∈A} λᵢ θᵢ      = 0
///     θᵢ (rᵢ·c + γ)          = 1,   i ∈ A
/// ```
///
/// Returns `None` for singular systems or negative multipliers.
fn solve_active(
    k: &DMatrix<f64>,
    rows: &DMatrix<f64>,
    theta: &[f64],
    active: &[usize],
    m: usize,
) -> Option<(DVector<f64>, f64)> {
    if active.is_empty() {
        // c = 0, γ unconstrained by stationarity: take the smallest |γ| that is feasible
        let lo = theta
            .iter()
            .filter(|&&t| t > 0.0)
            .map(|_| 1.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = theta
            .iter()
            .filter(|&&t| t < 0.0)
            .map(|_| -1.0)
            .fold(f64::INFINITY, f64::min);
        let gamma = if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        };
        return Some((DVector::zeros(m), gamma));
    }
    let a = active.len();
    let dim = m + 1 + a;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt.view_mut((0, 0), (m, m)).copy_from(k);
    for (col, &i) in active.iter().enumerate() {
        for j in 0..m {
            kkt[(j, m + 1 + col)] = -theta[i] * rows[(i, j)];
            kkt[(m + 1 + col, j)] = theta[i] * rows[(i, j)];
        }
        kkt[(m, m + 1 + col)] = theta[i];
        kkt[(m + 1 + col, m)] = theta[i];
        rhs[m + 1 + col] = 1.0;
    }
    let lu = kkt.clone().full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    let scale = sol.amax().max(1.0);
    // reject numerically singular systems
    if (0..dim).any(|i| !sol[i].is_finite()) || (&kkt * &sol - &rhs).amax() > 1e-9 * scale {
        return None;
    }
    if (0..a).any(|c| sol[m + 1 + c] < -1e-12 * scale) {
        return None;
    }
    Some((sol.rows(0, m).into_owned(), sol[m]))
}
