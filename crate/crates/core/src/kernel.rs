//! Gaussian kernel, Gram matrices and symmetric matrix square roots.
//!
//! The kernel is `k(x, y) = exp(-‖x - y‖² / (2σ²))`. With the default `σ² = 1` this is the
//! plain `exp(-‖x - y‖² / 2)` form. Gram matrices of distinct points are strictly
//! positive definite, which is what makes the change of variables `x = K^{1/2} c`
//! used by the consensus solver well defined.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::space::Point;

/// Diagonal jitter added when a Gram matrix is built from sensor data.
pub const DEFAULT_DATA_JITTER: f64 = 1e-10;

/// Eigenvalues at or below this are treated as numerically zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    bandwidth_sq: f64,
}

impl KernelConfig {
    pub fn new(bandwidth_sq: f64) -> Result<Self> {
        if !(bandwidth_sq > 0.0 && bandwidth_sq.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth_sq must be positive and finite, got {bandwidth_sq}"
            )));
        }
        Ok(Self { bandwidth_sq })
    }

    pub fn bandwidth_sq(&self) -> f64 {
        self.bandwidth_sq
    }

    #[inline]
    pub fn eval(&self, x: &Point, y: &Point) -> f64 {
        kernel_eval(x, y, self)
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { bandwidth_sq: 1.0 }
    }
}

#[inline]
pub fn kernel_eval(x: &Point, y: &Point, cfg: &KernelConfig) -> f64 {
    let dx = x.x - y.x;
    let dy = x.y - y.y;
    (-(dx * dx + dy * dy) / (2.0 * cfg.bandwidth_sq)).exp()
}

/// `Σ_j coeffs[j]·k(x, basis[j]) + bias`, summed in index order.
///
/// Every evaluation path of a kernel expansion in this crate goes through here so
/// that pointwise evaluation, raster evaluation and margin checks agree bit for bit.
pub fn expansion(coeffs: &[f64], basis: &[Point], bias: f64, x: &Point, cfg: &KernelConfig) -> f64 {
    debug_assert_eq!(coeffs.len(), basis.len());
    let mut acc = 0.0;
    for (c, g) in coeffs.iter().zip(basis) {
        acc += c * kernel_eval(x, g, cfg);
    }
    acc + bias
}

/// Symmetric kernel matrix over one point set, possibly with diagonal jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    jitter_applied: f64,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Smallest eigenvalue of the (symmetric) entries.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.entries)
    }

    /// Wraps an arbitrary symmetric positive definite matrix, e.g. for testing the
    /// square-root routine on inputs that are not kernel matrices.
    pub fn from_spd(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch {
                what: "square matrix columns",
                expected: entries.nrows(),
                actual: entries.ncols(),
            });
        }
        let min = min_eigenvalue(&entries);
        if !(min > EIGEN_FLOOR) {
            return Err(Error::SingularGram { min_eigenvalue: min });
        }
        Ok(Self {
            entries,
            jitter_applied: 0.0,
        })
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

pub fn gram(points: &[Point], cfg: &KernelConfig, jitter: f64) -> Result<GramMatrix> {
    if !(jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "jitter must be non-negative, got {jitter}"
        )));
    }
    let n = points.len();
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        entries[(i, i)] = 1.0 + jitter;
        for j in 0..i {
            let v = kernel_eval(&points[i], &points[j], cfg);
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    let min = min_eigenvalue(&entries);
    if !(min > EIGEN_FLOOR) {
        return Err(Error::SingularGram { min_eigenvalue: min });
    }
    Ok(GramMatrix {
        entries,
        jitter_applied: jitter,
    })
}

/// `k(data[i], grid[j])` for every data point `i` and grid point `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossKernelMatrix {
    entries: DMatrix<f64>,
}

impl CrossKernelMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

pub fn cross_kernel(data: &[Point], grid: &[Point], cfg: &KernelConfig) -> CrossKernelMatrix {
    let entries = DMatrix::from_fn(data.len(), grid.len(), |i, j| kernel_eval(&data[i], &grid[j], cfg));
    CrossKernelMatrix { entries }
}

/// Symmetric `S = G^{1/2}` and `S⁻¹ = G^{-1/2}` from the eigendecomposition of `G`.
pub fn sqrt_and_inv_sqrt(g: &GramMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(g.entries.clone());
    let min = eig.eigenvalues.min();
    if !(min > EIGEN_FLOOR) {
        return Err(Error::SingularGram { min_eigenvalue: min });
    }
    let v = &eig.eigenvectors;
    let root: DVector<f64> = eig.eigenvalues.map(f64::sqrt);
    let sqrt = v * DMatrix::from_diagonal(&root) * v.transpose();
    let inv_sqrt = v * DMatrix::from_diagonal(&root.map(|r| 1.0 / r)) * v.transpose();
    Ok((symmetrize(sqrt), symmetrize(inv_sqrt)))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
