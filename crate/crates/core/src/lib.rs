//! Distributed learning of a planar object's shape from multi-robot point clouds.
//!
//! Each robot holds a labelled point cloud (outside `+1`, inside `-1`) and fits a
//! hard-margin Gaussian-kernel classifier whose function space is spanned by the
//! kernel sections of a grid shared by all robots. Because every robot's function
//! is then described by the same `M + 1` numbers `[c; γ]`, agreement between robots
//! is a finite set of equality constraints, which consensus ADMM enforces.
//!
//! Module map:
//!
//! * [`kernel`]: Gaussian kernel, Gram and cross-kernel matrices, symmetric square roots.
//! * [`datagen`]: object shapes, simulated LiDAR returns, grid layouts, dataset tables.
//! * [`local_qp`]: the single-agent hard-margin QP (data or grid basis).
//! * [`consensus`]: the per-agent ADMM form and the consensus engine.
//! * [`oracle`]: centralized and brute-force reference solvers used by tests.
//! * [`geometry`]: learned model evaluation, marching squares, metrics, SVG export.

// `!(x > 0.0)` is used on purpose to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod datagen;
mod error;
pub mod geometry;
pub mod kernel;
pub mod local_qp;
pub mod oracle;
mod qp;
pub mod space;

pub use consensus::{
    assemble_agent, run, AgentProblem, AgentState, ConsensusAdmm, ConsensusState, ConvergenceReport, RunOutcome,
    RunStatus, SolverConfig, SolverMode,
};
pub use datagen::{GridBasis, LabeledDataset, ObjectShape};
pub use error::{Error, Result};
pub use geometry::{Contour, ShapeMetrics, ShapeModel};
pub use kernel::{CrossKernelMatrix, GramMatrix, KernelConfig};
pub use local_qp::{Basis, ClassifierSolution, LocalProblem, SolveStatus};
pub use space::{Bbox, Point};
