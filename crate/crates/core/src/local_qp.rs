//! Single-agent hard-margin kernel classifier.
//!
//! ```text
//!     minimize    ½ cᵀKc
//!     subject to  θᵢ (Σⱼ cⱼ k(dᵢ, bⱼ) + γ) ≥ 1     for every sample i
//! ```
//!
//! The basis points `bⱼ` are either the samples themselves (`Basis::Data`) or the shared
//! grid (`Basis::Grid`); `K` is the Gram matrix of the basis. `γ` carries no penalty.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::datagen::{GridBasis, LabeledDataset};
use crate::error::{Error, Result};
use crate::kernel::{self, GramMatrix, KernelConfig, DEFAULT_DATA_JITTER};
use crate::qp::{DenseQp, QpOptions, QpStatus};
use crate::space::Point;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Data,
    Grid(GridBasis),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIter => "max_iter",
        }
    }
}

impl From<QpStatus> for SolveStatus {
    fn from(s: QpStatus) -> Self {
        match s {
            QpStatus::Optimal => SolveStatus::Optimal,
            QpStatus::Infeasible => SolveStatus::Infeasible,
            QpStatus::MaxIter => SolveStatus::MaxIter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalProblem {
    gram: GramMatrix,
    /// Row i is `-θᵢ·[k-rowᵢ, 1]`; the constraints read `constraint_matrix·[c; γ] ≤ -1`.
    constraint_matrix: DMatrix<f64>,
    labels: Vec<i8>,
    basis: Basis,
    basis_points: Vec<Point>,
    kernel: KernelConfig,
}

impl LocalProblem {
    /// Assembles a problem from raw parts. `kernel_rows[i][j]` must be `k(dᵢ, bⱼ)`.
    pub fn from_parts(
        gram: GramMatrix,
        kernel_rows: &DMatrix<f64>,
        labels: Vec<i8>,
        basis: Basis,
        basis_points: Vec<Point>,
        kernel: KernelConfig,
    ) -> Result<Self> {
        let m = gram.dim();
        if kernel_rows.ncols() != m || basis_points.len() != m {
            return Err(Error::DimensionMismatch {
                what: "basis size",
                expected: m,
                actual: kernel_rows.ncols(),
            });
        }
        if kernel_rows.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels per kernel row",
                expected: kernel_rows.nrows(),
                actual: labels.len(),
            });
        }
        let n = labels.len();
        let mut constraint_matrix = DMatrix::zeros(n, m + 1);
        for i in 0..n {
            let th = f64::from(labels[i]);
            for j in 0..m {
                constraint_matrix[(i, j)] = -th * kernel_rows[(i, j)];
            }
            constraint_matrix[(i, m)] = -th;
        }
        Ok(Self {
            gram,
            constraint_matrix,
            labels,
            basis,
            basis_points,
            kernel,
        })
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.constraint_matrix
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn basis_points(&self) -> &[Point] {
        &self.basis_points
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    /// Number of coefficients `c` (excluding γ).
    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.labels.len()
    }

    /// `k(dᵢ, bⱼ)` recovered from the constraint rows.
    pub fn kernel_rows(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(self.n_constraints(), m, |i, j| {
            -f64::from(self.labels[i]) * self.constraint_matrix[(i, j)]
        })
    }

    /// `θᵢ(f(dᵢ) + γ)` for every sample, through the matrix-product path.
    pub fn margins(&self, coefficients: &DVector<f64>, bias: f64) -> DVector<f64> {
        let m = self.dim();
        let mut out = DVector::zeros(self.n_constraints());
        for i in 0..self.n_constraints() {
            let mut acc = self.constraint_matrix[(i, m)] * bias;
            for j in 0..m {
                acc += self.constraint_matrix[(i, j)] * coefficients[j];
            }
            out[i] = -acc;
        }
        out
    }
}

/// Builds the local problem with the default data jitter.
pub fn build_local(dataset: &LabeledDataset, basis: Basis, cfg: &KernelConfig) -> Result<LocalProblem> {
    build_local_with_jitter(dataset, basis, cfg, DEFAULT_DATA_JITTER)
}

/// `jitter` only applies to the data basis; grid Gram matrices are built exactly.
pub fn build_local_with_jitter(
    dataset: &LabeledDataset,
    basis: Basis,
    cfg: &KernelConfig,
    jitter: f64,
) -> Result<LocalProblem> {
    let (basis_points, gram) = match &basis {
        Basis::Data => {
            if dataset.is_empty() {
                return Err(Error::InvalidArgument("data basis needs at least one sample".into()));
            }
            (dataset.points.clone(), kernel::gram(&dataset.points, cfg, jitter)?)
        }
        Basis::Grid(g) => (g.points().to_vec(), kernel::gram(g.points(), cfg, 0.0)?),
    };
    let rows = kernel::cross_kernel(&dataset.points, &basis_points, cfg);
    LocalProblem::from_parts(gram, rows.entries(), dataset.labels.clone(), basis, basis_points, *cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSolution {
    pub coefficients: DVector<f64>,
    pub bias: f64,
    pub objective: f64,
    pub status: SolveStatus,
    /// `max(0, max_i 1 - θᵢ(f(dᵢ) + γ))` on the problem it was solved for.
    pub max_violation: f64,
    pub iterations: usize,
}

impl ClassifierSolution {
    pub(crate) fn finish(
        p: &LocalProblem,
        coefficients: DVector<f64>,
        bias: f64,
        status: SolveStatus,
        iterations: usize,
    ) -> Self {
        let objective = 0.5 * coefficients.dot(&(p.gram.entries() * &coefficients));
        let max_violation = p
            .margins(&coefficients, bias)
            .iter()
            .fold(0.0f64, |a, &m| a.max(1.0 - m));
        Self {
            coefficients,
            bias,
            objective,
            status,
            max_violation,
            iterations,
        }
    }

    pub fn infeasible(dim: usize, iterations: usize) -> Self {
        Self {
            coefficients: DVector::zeros(dim),
            bias: 0.0,
            objective: f64::NAN,
            status: SolveStatus::Infeasible,
            max_violation: f64::NAN,
            iterations,
        }
    }

    /// `[c; γ]` as one vector.
    pub fn stacked(&self) -> DVector<f64> {
        let m = self.coefficients.len();
        DVector::from_fn(m + 1, |i, _| if i < m { self.coefficients[i] } else { self.bias })
    }
}

pub fn solve_local(p: &LocalProblem, tol: f64, max_iter: usize) -> ClassifierSolution {
    let m = p.dim();
    let n = p.n_constraints();
    let g = DMatrix::from_fn(n, m, |i, j| -p.constraint_matrix[(i, j)]);
    let free = DVector::from_fn(n, |i, _| f64::from(p.labels[i]));
    let qp = match DenseQp::new(p.gram.entries().clone(), g, Some(free), DVector::from_element(n, 1.0)) {
        Ok(qp) => qp,
        Err(_) => return ClassifierSolution::infeasible(m, 0),
    };
    let sol = qp.solve(&DVector::zeros(m), None, QpOptions { tol, max_iter });
    match sol.status {
        QpStatus::Infeasible => ClassifierSolution::infeasible(m, sol.iterations),
        s => ClassifierSolution::finish(p, sol.w, sol.t, s.into(), sol.iterations),
    }
}

/// `Σⱼ cⱼ·k(x, bⱼ) + γ`.
pub fn evaluate(sol: &ClassifierSolution, basis_points: &[Point], x: &Point, cfg: &KernelConfig) -> Result<f64> {
    if sol.coefficients.len() != basis_points.len() {
        return Err(Error::DimensionMismatch {
            what: "coefficients per basis point",
            expected: basis_points.len(),
            actual: sol.coefficients.len(),
        });
    }
    Ok(kernel::expansion(
        sol.coefficients.as_slice(),
        basis_points,
        sol.bias,
        x,
        cfg,
    ))
}

/// Structured text: one `key = value` line each, coefficients space-separated.
pub fn write_solution(sol: &ClassifierSolution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "status = {}", sol.status.as_str());
    let _ = writeln!(out, "gamma = {}", sol.bias);
    let coeffs: Vec<String> = sol.coefficients.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(out, "coefficients = {}", coeffs.join(" "));
    let _ = writeln!(out, "objective = {}", sol.objective);
    let _ = writeln!(out, "max_margin_violation = {}", sol.max_violation);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> LabeledDataset {
        LabeledDataset::new(1, vec![Point::new(-1.0, 0.0), Point::new(1.0, 0.0)], vec![-1, 1]).unwrap()
    }

    #[test]
    fn dimensions() {
        let p = build_local(&two_points(), Basis::Data, &KernelConfig::default()).unwrap();
        assert_eq!(p.constraint_matrix().shape(), (2, 3));
        assert_eq!(p.gram().entries().shape(), (2, 2));

        let pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64 * 0.1, 0.0)).collect();
        let labels = (0..20).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let d = LabeledDataset::new(1, pts, labels).unwrap();
        let grid = crate::datagen::make_grid(&crate::space::Bbox::from_corners(-1.0, -1.0, 1.0, 1.0), 3, 3).unwrap();
        let p = build_local(&d, Basis::Grid(grid), &KernelConfig::default()).unwrap();
        assert_eq!(p.constraint_matrix().shape(), (20, 10));
        assert_eq!(p.gram().entries().shape(), (9, 9));
        assert_eq!(p.gram().jitter_applied(), 0.0);
    }

    #[test]
    fn single_point_row() {
        let d = LabeledDataset::new(1, vec![Point::origin()], vec![1]).unwrap();
        let p = build_local_with_jitter(&d, Basis::Data, &KernelConfig::default(), 0.0).unwrap();
        assert_eq!(
            p.constraint_matrix().row(0).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, -1.0]
        );
    }

    #[test]
    fn two_point_closed_form() {
        let p = build_local(&two_points(), Basis::Data, &KernelConfig::default()).unwrap();
        let sol = solve_local(&p, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let c2 = 1.0 / (1.0 - (-2.0f64).exp());
        assert!(sol.bias.abs() < 1e-9);
        assert!((sol.coefficients[0] + sol.coefficients[1]).abs() < 1e-9);
        assert!((sol.coefficients[1] - c2).abs() < 1e-8);
        assert!((sol.objective - c2).abs() < 1e-8);

        let cfg = KernelConfig::default();
        let f2 = evaluate(&sol, p.basis_points(), &Point::new(1.0, 0.0), &cfg).unwrap();
        assert!((f2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_labels_are_infeasible() {
        let d = LabeledDataset::new(1, vec![Point::origin(), Point::origin()], vec![1, -1]).unwrap();
        let p = build_local(&d, Basis::Data, &KernelConfig::default()).unwrap();
        let sol = solve_local(&p, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn evaluate_examples() {
        let cfg = KernelConfig::default();
        let mut sol = ClassifierSolution {
            coefficients: DVector::from_element(1, 1.0),
            bias: 0.0,
            objective: 0.5,
            status: SolveStatus::Optimal,
            max_violation: 0.0,
            iterations: 0,
        };
        assert_eq!(evaluate(&sol, &[Point::origin()], &Point::origin(), &cfg).unwrap(), 1.0);
        sol.bias = -(-0.5f64).exp();
        assert!(
            evaluate(&sol, &[Point::origin()], &Point::new(1.0, 0.0), &cfg)
                .unwrap()
                .abs()
                < 1e-16
        );
        assert!(matches!(
            evaluate(&sol, &[Point::origin(), Point::new(1.0, 1.0)], &Point::origin(), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_class_has_zero_coefficients() {
        let d = LabeledDataset::new(1, vec![Point::origin(), Point::new(1.0, 0.0)], vec![1, 1]).unwrap();
        let p = build_local(&d, Basis::Data, &KernelConfig::default()).unwrap();
        let sol = solve_local(&p, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.coefficients.amax() < 1e-12);
        assert!(sol.bias >= 1.0 - 1e-12);
    }

    #[test]
    fn solution_text() {
        let p = build_local(&two_points(), Basis::Data, &KernelConfig::default()).unwrap();
        let sol = solve_local(&p, DEFAULT_TOL, DEFAULT_MAX_ITER);
        let text = write_solution(&sol);
        assert!(text.starts_with("status = optimal\n"));
        assert!(text.contains("max_margin_violation = "));
        assert_eq!(text.lines().count(), 5);
    }
}
