//! Consensus ADMM over the shared grid basis.
//!
//! Every agent ℓ restricts its classifier to `fˡ = Σⱼ cˡⱼ k(·, gⱼ)` and keeps `[cˡ; γˡ]`
//! equal to a shared `z`. In the variables `xˡ = K_G^{1/2} cˡ` and slack `yˡ ≥ 0` an agent
//! owns the equality block
//!
//! ```text
//!     ⎡ -Θˡ[K_DG K_G^{-1/2}  𝟏]   I   0 ⎤ ⎡ xˡ ⎤   ⎡ -𝟏 ⎤
//!     ⎣ -diag(K_G^{-1/2}, 1)      0   I ⎦ ⎢ γˡ ⎥ = ⎣  0 ⎦
//!                                         ⎢ yˡ ⎥
//!                                         ⎣ z  ⎦
//! ```
//!
//! and the objective `β/2 ‖xˡ‖² = β/2 (cˡ)ᵀK_G cˡ`. The engine runs scaled consensus ADMM:
//! each agent solves its margin-constrained proximal step exactly (dual QP with polishing),
//! the aggregator averages, and the scaled duals accumulate the disagreement.
//!
//! [`SolverMode::EulerFlow`] integrates `T_sp·ξ̇ = T(ξ) − ξ` with explicit Euler, where `T`
//! is the ADMM (Douglas–Rachford) map. With step `h` this is ADMM relaxed by `α = h/T_sp`,
//! so both modes share the same fixed points.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::datagen::{GridBasis, LabeledDataset};
use crate::error::{Error, Result};
use crate::geometry::ShapeModel;
use crate::kernel::{self, CrossKernelMatrix, GramMatrix, KernelConfig};
use crate::qp::{DenseQp, QpOptions, QpStatus};

/// Residuals above this are classified as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Largest `‖[cˡ; γˡ] − z‖∞` accepted by [`extract_model`].
pub const CONSENSUS_LIMIT: f64 = 1e-4;

const HISTORY_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    DiscreteAdmm,
    EulerFlow,
}

impl SolverMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverMode::DiscreteAdmm => "discrete_admm",
            SolverMode::EulerFlow => "euler_flow",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub beta_x: f64,
    pub rho: f64,
    /// Diagonal of Qˡ per agent id, length `nˡ + M + 1`. Missing agents use the identity.
    pub q_scale: BTreeMap<usize, Vec<f64>>,
    pub mode: SolverMode,
    /// Euler step (the sampling period).
    pub step_size: f64,
    /// Time constant `T_sp` of the flow.
    pub time_scale: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub subproblem_tol: f64,
    pub subproblem_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta_x: 1.0,
            rho: 1.0,
            q_scale: BTreeMap::new(),
            mode: SolverMode::DiscreteAdmm,
            step_size: 0.001,
            time_scale: 0.01,
            max_iter: 50_000,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            subproblem_tol: 1e-10,
            subproblem_max_iter: 500,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta_x", self.beta_x),
            ("rho", self.rho),
            ("step_size", self.step_size),
            ("time_scale", self.time_scale),
            ("tol_primal", self.tol_primal),
            ("tol_dual", self.tol_dual),
            ("subproblem_tol", self.subproblem_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mode == SolverMode::EulerFlow && self.step_size > self.time_scale {
            return Err(Error::InvalidArgument("step_size must not exceed time_scale".into()));
        }
        Ok(())
    }

    /// Relaxation applied to each ADMM map evaluation: 1 for discrete ADMM, `h / T_sp` for the flow.
    pub fn relaxation(&self) -> f64 {
        match self.mode {
            SolverMode::DiscreteAdmm => 1.0,
            SolverMode::EulerFlow => self.step_size / self.time_scale,
        }
    }
}

/// One agent's fixed data in ADMM form.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProblem {
    agent_id: usize,
    grid: GridBasis,
    kernel: KernelConfig,
    cross: CrossKernelMatrix,
    labels: Vec<i8>,
    grid_gram: GramMatrix,
    grid_gram_sqrt: DMatrix<f64>,
    grid_gram_inv_sqrt: DMatrix<f64>,
    constraint_matrix: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl AgentProblem {
    pub fn agent_id(&self) -> usize {
        self.agent_id
    }

    pub fn grid(&self) -> &GridBasis {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn cross(&self) -> &CrossKernelMatrix {
        &self.cross
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn grid_gram(&self) -> &GramMatrix {
        &self.grid_gram
    }

    pub fn grid_gram_sqrt(&self) -> &DMatrix<f64> {
        &self.grid_gram_sqrt
    }

    pub fn grid_gram_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.grid_gram_inv_sqrt
    }

    /// The block matrix `Aˡ`, columns ordered `[x, γ, y, z]`.
    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.constraint_matrix
    }

    /// `[-𝟏; 0]`.
    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn grid_dim(&self) -> usize {
        self.grid.len()
    }

    pub fn c_to_x(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.grid_gram_sqrt * c
    }

    pub fn x_to_c(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.grid_gram_inv_sqrt * x
    }

    /// `Aˡ·[x; γ; y; z] − rhs`.
    pub fn equality_residual(&self, x: &DVector<f64>, gamma: f64, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let m = self.grid_dim();
        let n = self.n_samples();
        let mut v = DVector::zeros(2 * m + 2 + n);
        v.rows_mut(0, m).copy_from(x);
        v[m] = gamma;
        v.rows_mut(m + 1, n).copy_from(y);
        v.rows_mut(m + 1 + n, m + 1).copy_from(z);
        &self.constraint_matrix * v - &self.rhs
    }
}

pub fn assemble_agent(dataset: &LabeledDataset, grid: &GridBasis, cfg: &KernelConfig) -> Result<AgentProblem> {
    let m = grid.len();
    let n = dataset.len();
    let grid_gram = kernel::gram(grid.points(), cfg, 0.0)?;
    let (grid_gram_sqrt, grid_gram_inv_sqrt) = kernel::sqrt_and_inv_sqrt(&grid_gram)?;
    let cross = kernel::cross_kernel(&dataset.points, grid.points(), cfg);
    let scaled = cross.entries() * &grid_gram_inv_sqrt;

    let rows = n + m + 1;
    let cols = m + 1 + n + m + 1;
    let mut a = DMatrix::zeros(rows, cols);
    for i in 0..n {
        let th = f64::from(dataset.labels[i]);
        for j in 0..m {
            a[(i, j)] = -th * scaled[(i, j)];
        }
        a[(i, m)] = -th;
        a[(i, m + 1 + i)] = 1.0;
    }
    for r in 0..m {
        for j in 0..m {
            a[(n + r, j)] = -grid_gram_inv_sqrt[(r, j)];
        }
    }
    a[(n + m, m)] = -1.0;
    for r in 0..=m {
        a[(n + r, m + 1 + n + r)] = 1.0;
    }
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, n).fill(-1.0);

    Ok(AgentProblem {
        agent_id: dataset.agent_id,
        grid: grid.clone(),
        kernel: *cfg,
        cross,
        labels: dataset.labels.clone(),
        grid_gram,
        grid_gram_sqrt,
        grid_gram_inv_sqrt,
        constraint_matrix: a,
        rhs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub agent_id: usize,
    /// `K_G^{1/2} c`.
    pub x: DVector<f64>,
    pub c: DVector<f64>,
    pub gamma: f64,
    /// Margin slack, `θᵢ(f(dᵢ) + γ) − 1 ≥ 0`.
    pub y: DVector<f64>,
    /// Multipliers of the `Aˡ` rows: margin rows first, then the consensus rows (`ρ·u`).
    pub dual_eq: DVector<f64>,
    /// Scaled consensus dual `u`.
    pub u: DVector<f64>,
    /// Most recent `[c; γ]` iterates, newest last.
    pub history: VecDeque<DVector<f64>>,
}

impl AgentState {
    fn new(p: &AgentProblem) -> Self {
        let m = p.grid_dim();
        let n = p.n_samples();
        Self {
            agent_id: p.agent_id,
            x: DVector::zeros(m),
            c: DVector::zeros(m),
            gamma: 0.0,
            y: DVector::zeros(n),
            dual_eq: DVector::zeros(n + m + 1),
            u: DVector::zeros(m + 1),
            history: VecDeque::with_capacity(HISTORY_LEN),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let m = self.c.len();
        DVector::from_fn(m + 1, |i, _| if i < m { self.c[i] } else { self.gamma })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    /// Shared `[c; γ]`.
    pub z: DVector<f64>,
    pub iteration: usize,
    /// `max_ℓ ‖[cˡ; γˡ] − z‖∞`.
    pub primal_residual: f64,
    /// `ρ‖Δz‖∞ / α`.
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIter,
    Diverged,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIter => "max_iter",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Mean over agents of `½ (cˡ)ᵀK_G cˡ`.
    pub objective: f64,
    /// `‖xˡ‖` per agent, in agent-id order.
    pub x_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub status: RunStatus,
    pub mode: SolverMode,
    pub iterations: usize,
    pub relaxation: f64,
    pub agent_ids: Vec<usize>,
    pub rows: Vec<TraceRow>,
    pub divergence: Option<String>,
}

impl ConvergenceReport {
    /// Elapsed flow time in units of `T_sp` (equals the iteration count for discrete ADMM).
    pub fn time_in_time_scale_units(&self) -> f64 {
        self.iterations as f64 * self.relaxation
    }

    /// Largest ratio `r_j / r_i` of primal residuals with `i < j ≤ i + window`.
    pub fn max_window_growth(&self, window: usize) -> f64 {
        let r: Vec<f64> = self.rows.iter().map(|row| row.primal_residual).collect();
        let mut worst: f64 = 1.0;
        for i in 0..r.len() {
            let hi = (i + window).min(r.len() - 1);
            let peak = r[i + 1..=hi].iter().copied().fold(0.0, f64::max);
            if peak == 0.0 {
                continue;
            }
            if r[i] == 0.0 {
                return f64::INFINITY;
            }
            worst = worst.max(peak / r[i]);
        }
        worst
    }

    /// Tab-separated trace: `iteration primal_residual dual_residual objective x_norm_<id>...`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# iteration\tprimal_residual\tdual_residual\tobjective");
        for id in &self.agent_ids {
            let _ = write!(out, "\tx_norm_{id}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}",
                row.iteration, row.primal_residual, row.dual_residual, row.objective
            );
            for v in &row.x_norms {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

struct Agent {
    problem: AgentProblem,
    state: AgentState,
    qp: DenseQp,
    /// Per-coordinate penalty `ρ·q²` on `[c; γ]`.
    penalty: DVector<f64>,
    lambda: DVector<f64>,
}

/// The consensus ADMM engine: agents sorted by id around one aggregator.
pub struct ConsensusAdmm {
    agents: Vec<Agent>,
    consensus: ConsensusState,
    cfg: SolverConfig,
    grid: GridBasis,
    kernel: KernelConfig,
    trace: Vec<TraceRow>,
}

impl ConsensusAdmm {
    pub fn new(mut problems: Vec<AgentProblem>, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if problems.is_empty() {
            return Err(Error::InvalidArgument("consensus needs at least one agent".into()));
        }
        problems.sort_by_key(|p| p.agent_id);
        for w in problems.windows(2) {
            if w[0].agent_id == w[1].agent_id {
                return Err(Error::InvalidArgument(format!("duplicate agent id {}", w[0].agent_id)));
            }
        }
        let grid = problems[0].grid.clone();
        let kernel = problems[0].kernel;
        let m = grid.len();
        for p in &problems {
            if p.grid_dim() != m {
                return Err(Error::DimensionMismatch {
                    what: "grid points per agent",
                    expected: m,
                    actual: p.grid_dim(),
                });
            }
            if p.grid != grid || p.kernel != kernel {
                return Err(Error::InvalidArgument(format!(
                    "agent {} uses a different grid or kernel",
                    p.agent_id
                )));
            }
        }

        let mut agents = Vec::with_capacity(problems.len());
        for problem in problems {
            let n = problem.n_samples();
            let penalty = match cfg.q_scale.get(&problem.agent_id) {
                None => DVector::from_element(m + 1, cfg.rho),
                Some(q) => {
                    if q.len() != n + m + 1 {
                        return Err(Error::DimensionMismatch {
                            what: "q_scale diagonal length",
                            expected: n + m + 1,
                            actual: q.len(),
                        });
                    }
                    if q.iter().any(|v| !(*v > 0.0)) {
                        return Err(Error::InvalidArgument("q_scale entries must be positive".into()));
                    }
                    DVector::from_fn(m + 1, |j, _| cfg.rho * q[n + j] * q[n + j])
                }
            };
            let mut p = DMatrix::zeros(m + 1, m + 1);
            p.view_mut((0, 0), (m, m))
                .copy_from(&(problem.grid_gram.entries() * cfg.beta_x));
            for j in 0..=m {
                p[(j, j)] += penalty[j];
            }
            let g = DMatrix::from_fn(n, m + 1, |i, j| {
                let th = f64::from(problem.labels[i]);
                if j < m {
                    th * problem.cross.entries()[(i, j)]
                } else {
                    th
                }
            });
            // the proximal term makes large objective gains legitimate; divergence is judged on residuals
            let qp = DenseQp::new(p, g, None, DVector::from_element(n, 1.0))?.with_objective_limit(f64::INFINITY);
            agents.push(Agent {
                state: AgentState::new(&problem),
                problem,
                qp,
                penalty,
                lambda: DVector::zeros(n),
            });
        }

        Ok(Self {
            agents,
            consensus: ConsensusState {
                z: DVector::zeros(m + 1),
                iteration: 0,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
            },
            cfg,
            grid,
            kernel,
            trace: Vec::new(),
        })
    }

    pub fn consensus(&self) -> &ConsensusState {
        &self.consensus
    }

    pub fn agent_states(&self) -> Vec<AgentState> {
        self.agents.iter().map(|a| a.state.clone()).collect()
    }

    pub fn agent_problems(&self) -> impl Iterator<Item = &AgentProblem> {
        self.agents.iter().map(|a| &a.problem)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// One round: local proximal solves, averaging, dual update, residuals.
    pub fn admm_step(&mut self) -> Result<()> {
        let m = self.grid.len();
        let alpha = self.cfg.relaxation();
        let z = self.consensus.z.clone();
        let iteration = self.consensus.iteration + 1;
        let opts = QpOptions {
            tol: self.cfg.subproblem_tol,
            max_iter: self.cfg.subproblem_max_iter,
        };

        let mut relaxed = Vec::with_capacity(self.agents.len());
        for agent in &mut self.agents {
            let target = &z - &agent.state.u;
            let q = -agent.penalty.component_mul(&target);
            let sol = agent.qp.solve(&q, Some(&agent.lambda), opts);
            if sol.status == QpStatus::Infeasible {
                return Err(Error::NumericalDivergence {
                    iteration,
                    reason: format!("agent {} has no margin-feasible update", agent.problem.agent_id),
                });
            }
            agent.lambda = sol.lambda;
            let st = &mut agent.state;
            st.c = sol.w.rows(0, m).into_owned();
            st.gamma = sol.w[m];
            st.x = agent.problem.c_to_x(&st.c);
            let f = agent.problem.cross.entries() * &st.c;
            st.y = DVector::from_fn(f.len(), |i, _| {
                f64::from(agent.problem.labels[i]) * (f[i] + st.gamma) - 1.0
            });
            let w = st.stacked();
            if st.history.len() == HISTORY_LEN {
                st.history.pop_front();
            }
            st.history.push_back(w.clone());
            relaxed.push(&w * alpha + &z * (1.0 - alpha));
        }

        // weighted mean, summed in agent-id order
        let mut num = DVector::zeros(m + 1);
        let mut den = DVector::zeros(m + 1);
        for (agent, w_hat) in self.agents.iter().zip(&relaxed) {
            num += (w_hat + &agent.state.u).component_mul(&agent.penalty);
            den += &agent.penalty;
        }
        let z_new = num.component_div(&den);

        let mut primal: f64 = 0.0;
        for (agent, w_hat) in self.agents.iter_mut().zip(&relaxed) {
            let st = &mut agent.state;
            st.u += w_hat - &z_new;
            primal = primal.max((st.stacked() - &z_new).amax());
            let n = agent.problem.n_samples();
            st.dual_eq.rows_mut(0, n).copy_from(&agent.lambda);
            st.dual_eq
                .rows_mut(n, m + 1)
                .copy_from(&st.u.component_mul(&agent.penalty));
        }
        let dual = self.cfg.rho * (&z_new - &z).amax() / alpha;

        self.consensus = ConsensusState {
            z: z_new,
            iteration,
            primal_residual: primal,
            dual_residual: dual,
        };
        let objective =
            self.agents.iter().map(|a| 0.5 * a.state.x.norm_squared()).sum::<f64>() / self.agents.len() as f64;
        self.trace.push(TraceRow {
            iteration,
            primal_residual: primal,
            dual_residual: dual,
            objective,
            x_norms: self.agents.iter().map(|a| a.state.x.norm()).collect(),
        });

        if !(primal.is_finite() && dual.is_finite()) || primal > DIVERGENCE_LIMIT || dual > DIVERGENCE_LIMIT {
            return Err(Error::NumericalDivergence {
                iteration,
                reason: format!("residuals {primal:e} / {dual:e} exceed {DIVERGENCE_LIMIT:e}"),
            });
        }
        Ok(())
    }

    pub fn converged(&self) -> bool {
        self.consensus.iteration > 0
            && self.consensus.primal_residual <= self.cfg.tol_primal
            && self.consensus.dual_residual <= self.cfg.tol_dual
    }

    /// Iterates until both residuals are within tolerance, `max_iter` is hit, or divergence.
    pub fn run(mut self) -> RunOutcome {
        let mut status = RunStatus::MaxIter;
        let mut divergence = None;
        while self.consensus.iteration < self.cfg.max_iter {
            if let Err(e) = self.admm_step() {
                status = RunStatus::Diverged;
                divergence = Some(e.to_string());
                break;
            }
            if self.converged() {
                status = RunStatus::Converged;
                break;
            }
        }
        self.finish(status, divergence)
    }

    fn finish(self, status: RunStatus, divergence: Option<String>) -> RunOutcome {
        let model = ShapeModel::from_stacked(self.grid.clone(), &self.consensus.z, self.kernel)
            .expect("z has length M + 1 by construction");
        let agents: Vec<AgentState> = self.agents.iter().map(|a| a.state.clone()).collect();
        let agent_models = agents
            .iter()
            .map(|s| ShapeModel::from_stacked(self.grid.clone(), &s.stacked(), self.kernel).expect("length M + 1"))
            .collect();
        RunOutcome {
            status,
            report: ConvergenceReport {
                status,
                mode: self.cfg.mode,
                iterations: self.consensus.iteration,
                relaxation: self.cfg.relaxation(),
                agent_ids: agents.iter().map(|a| a.agent_id).collect(),
                rows: self.trace,
                divergence,
            },
            model,
            agent_models,
            consensus: self.consensus,
            agents,
            grid: self.grid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Model built from `z`, whatever the status.
    pub model: ShapeModel,
    /// Each agent's own `[cˡ; γˡ]` as a model, in agent-id order.
    pub agent_models: Vec<ShapeModel>,
    pub report: ConvergenceReport,
    pub consensus: ConsensusState,
    pub agents: Vec<AgentState>,
    pub grid: GridBasis,
}

pub fn run(problems: Vec<AgentProblem>, cfg: SolverConfig) -> Result<RunOutcome> {
    Ok(ConsensusAdmm::new(problems, cfg)?.run())
}

/// Consensus model `F(x) = Σ c*ⱼ k(x, gⱼ) + γ*`, after checking every agent agrees with `z`.
pub fn extract_model(
    consensus: &ConsensusState,
    grid: &GridBasis,
    kernel: &KernelConfig,
    agents: &[AgentState],
) -> Result<ShapeModel> {
    for a in agents {
        let deviation = (a.stacked() - &consensus.z).amax();
        if !(deviation <= CONSENSUS_LIMIT) {
            return Err(Error::ConsensusViolation {
                agent_id: a.agent_id,
                deviation,
                limit: CONSENSUS_LIMIT,
            });
        }
    }
    ShapeModel::from_stacked(grid.clone(), &consensus.z, *kernel)
}
