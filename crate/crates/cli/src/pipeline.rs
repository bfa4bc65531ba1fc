//! Scenario execution and the files each command writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kshape_core::datagen::{self, write_dataset_table};
use kshape_core::geometry::{self, Figure, Polyline};
use kshape_core::{
    assemble_agent, consensus, Contour, GridBasis, LabeledDataset, RunOutcome, RunStatus, ShapeMetrics, ShapeModel,
};

use crate::scenario::{Mode, Scenario};
use crate::CliError;

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const DATASETS_FILE: &str = "datasets.tsv";
pub const CONVERGENCE_FILE: &str = "convergence.tsv";
pub const CONTOURS_FILE: &str = "contours.tsv";
pub const FIGURE_FILE: &str = "figure.svg";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const COMPARE_FILE: &str = "compare.txt";
pub const CONSENSUS_SOLUTION_FILE: &str = "solution_consensus.txt";

const TRUTH_SAMPLES: usize = 720;

pub fn agent_solution_file(agent_id: usize) -> String {
    format!("solution_agent_{agent_id}.txt")
}

/// One dataset per robot, ids starting at 1.
pub fn generate(s: &Scenario) -> Result<Vec<LabeledDataset>, CliError> {
    let shape = s.object()?;
    let robots = s.robot_positions()?;
    robots
        .into_iter()
        .enumerate()
        .map(|(i, pos)| {
            datagen::sample_lidar(i + 1, &shape, pos, &s.lidar(i))
                .map_err(|e| CliError::Config(vec![format!("robots[{i}]: {e}")]))
        })
        .collect()
}

pub fn grid(s: &Scenario) -> Result<GridBasis, CliError> {
    Ok(datagen::make_grid(&s.grid_bbox(), s.grid.rows, s.grid.cols)?)
}

/// Everything a finished run produced, before it is written out.
#[derive(Debug)]
pub struct RunResult {
    pub outcome: RunOutcome,
    pub datasets: Vec<LabeledDataset>,
    pub contour: Contour,
    pub agent_contours: Vec<Contour>,
    pub metrics: ShapeMetrics,
    pub wall_time: f64,
}

impl RunResult {
    pub fn status(&self) -> RunStatus {
        self.outcome.status
    }

    /// Converged with every sample on the correct side.
    pub fn success(&self) -> bool {
        self.outcome.status == RunStatus::Converged && self.metrics.separation_fraction == 1.0
    }

    pub fn exit_code(&self) -> i32 {
        if self.success() {
            0
        } else {
            2
        }
    }

    pub fn consensus_error(&self) -> f64 {
        self.outcome.consensus.primal_residual
    }
}

pub fn solve(s: &Scenario) -> Result<RunResult, CliError> {
    let datasets = generate(s)?;
    solve_with(s, datasets)
}

pub fn solve_with(s: &Scenario, datasets: Vec<LabeledDataset>) -> Result<RunResult, CliError> {
    let grid = grid(s)?;
    let kernel = s.kernel_config()?;
    let problems = datasets
        .iter()
        .map(|d| assemble_agent(d, &grid, &kernel))
        .collect::<kshape_core::Result<Vec<_>>>()?;
    let start = Instant::now();
    let outcome = consensus::run(problems, s.solver_config())?;
    let wall_time = start.elapsed().as_secs_f64();

    let window = geometry::default_window(&datasets).expect("datasets are never empty");
    let contour_of = |m: &ShapeModel| -> Result<Contour, CliError> {
        Ok(geometry::marching_squares(&geometry::raster_eval(
            m,
            window,
            s.output.resolution,
        )?))
    };
    let contour = contour_of(&outcome.model)?;
    let agent_contours = outcome
        .agent_models
        .iter()
        .map(contour_of)
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = geometry::shape_metrics(&contour, &s.object()?, &datasets, &outcome.model);
    Ok(RunResult {
        outcome,
        datasets,
        contour,
        agent_contours,
        metrics,
        wall_time,
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

fn read(dir: &Path, name: &str) -> Result<String, CliError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Same `key = value` layout as the local solver's solution files.
fn solution_text(status: &str, model: &ShapeModel, datasets: &[LabeledDataset]) -> String {
    let (_, min_margin) = geometry::separation(datasets, model);
    let coeffs: Vec<String> = model.coefficients().iter().map(|c| c.to_string()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "status = {status}");
    let _ = writeln!(out, "gamma = {}", model.bias());
    let _ = writeln!(out, "coefficients = {}", coeffs.join(" "));
    let _ = writeln!(out, "objective = {}", model.objective());
    let _ = writeln!(out, "max_margin_violation = {}", (1.0 - min_margin).max(0.0));
    out
}

fn summary_text(r: &RunResult) -> String {
    let report = &r.outcome.report;
    let m = &r.metrics;
    let mut out = String::new();
    let _ = writeln!(out, "status = {}", r.status().as_str());
    let _ = writeln!(out, "mode = {}", report.mode.as_str());
    let _ = writeln!(out, "iterations = {}", report.iterations);
    let _ = writeln!(out, "time_tsp = {}", report.time_in_time_scale_units());
    let _ = writeln!(out, "objective = {}", r.outcome.model.objective());
    let _ = writeln!(out, "consensus_error = {}", r.consensus_error());
    let _ = writeln!(out, "dual_residual = {}", r.outcome.consensus.dual_residual);
    let _ = writeln!(out, "separation_fraction = {}", m.separation_fraction);
    let _ = writeln!(out, "min_margin = {}", m.min_margin);
    let _ = writeln!(out, "hausdorff = {}", m.hausdorff);
    let _ = writeln!(out, "agreement = {}", m.agreement);
    if let Some(reason) = &report.divergence {
        let _ = writeln!(out, "divergence = {reason}");
    }
    out
}

/// Runs the scenario and writes every artifact into `out`.
///
/// Wall time is printed but kept out of the files so repeated runs are byte-identical.
pub fn run_scenario(s: &Scenario, out: &Path) -> Result<RunResult, CliError> {
    let result = solve(s)?;
    create_dir(out)?;
    write(out, SCENARIO_FILE, &s.to_toml())?;
    write(out, DATASETS_FILE, &write_dataset_table(&result.datasets))?;
    write(out, CONVERGENCE_FILE, &result.outcome.report.to_table())?;
    let status = result.status().as_str();
    write(
        out,
        CONSENSUS_SOLUTION_FILE,
        &solution_text(status, &result.outcome.model, &result.datasets),
    )?;
    for (model, data) in result.outcome.agent_models.iter().zip(&result.datasets) {
        write(
            out,
            &agent_solution_file(data.agent_id),
            &solution_text(status, model, std::slice::from_ref(data)),
        )?;
    }
    let mut named = vec![("consensus".to_string(), &result.contour)];
    for (c, d) in result.agent_contours.iter().zip(&result.datasets) {
        named.push((format!("agent_{}", d.agent_id), c));
    }
    write(out, CONTOURS_FILE, &geometry::write_contour_table(&named))?;
    write(out, SUMMARY_FILE, &summary_text(&result))?;
    let curves: Vec<(String, Vec<Polyline>)> = named.iter().map(|(n, c)| (n.clone(), c.polylines.clone())).collect();
    write(out, FIGURE_FILE, &figure(s, &result.datasets, &curves)?)?;
    Ok(result)
}

fn figure(s: &Scenario, datasets: &[LabeledDataset], curves: &[(String, Vec<Polyline>)]) -> Result<String, CliError> {
    let grid = grid(s)?;
    let truth = s.object()?.boundary(TRUTH_SAMPLES);
    let window = kshape_core::Bbox::around(
        datasets
            .iter()
            .flat_map(|d| d.points.iter())
            .chain(grid.points())
            .chain(&truth),
    )
    .map(|b| b.inflate(0.1));
    Ok(geometry::render_svg(&Figure {
        window,
        truth: Some(truth),
        curves: curves.iter().map(|(n, p)| (n.clone(), p.as_slice())).collect(),
        datasets,
        grid: Some(&grid),
    }))
}

/// Writes only the scenario and its datasets.
pub fn gen_data(s: &Scenario, out: &Path) -> Result<Vec<LabeledDataset>, CliError> {
    let datasets = generate(s)?;
    create_dir(out)?;
    write(out, SCENARIO_FILE, &s.to_toml())?;
    write(out, DATASETS_FILE, &write_dataset_table(&datasets))?;
    Ok(datasets)
}

/// Re-renders `figure.svg` in a run directory from its saved files.
pub fn plot(run_dir: &Path) -> Result<PathBuf, CliError> {
    let s = Scenario::from_toml(&read(run_dir, SCENARIO_FILE)?)?;
    let datasets = datagen::read_dataset_table(&read(run_dir, DATASETS_FILE)?)?;
    let curves = match read(run_dir, CONTOURS_FILE) {
        Ok(text) => geometry::read_contour_table(&text)?,
        Err(CliError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    write(run_dir, FIGURE_FILE, &figure(&s, &datasets, &curves)?)?;
    Ok(run_dir.join(FIGURE_FILE))
}

#[derive(Debug)]
pub struct Comparison {
    pub discrete: RunResult,
    pub euler: RunResult,
    /// `‖z_discrete − z_euler‖∞`.
    pub z_gap: f64,
}

impl Comparison {
    pub fn exit_code(&self) -> i32 {
        self.discrete.exit_code().max(self.euler.exit_code())
    }
}

/// Solves the same data with both modes and writes `compare.txt`.
pub fn compare_modes(s: &Scenario, out: &Path) -> Result<Comparison, CliError> {
    let datasets = generate(s)?;
    let with_mode = |mode: Mode| {
        let mut s = s.clone();
        s.solver.mode = mode;
        s
    };
    let discrete = solve_with(&with_mode(Mode::DiscreteAdmm), datasets.clone())?;
    let euler = solve_with(&with_mode(Mode::EulerFlow), datasets)?;
    let z_gap = (&discrete.outcome.consensus.z - &euler.outcome.consensus.z).amax();

    let mut text =
        String::from("# mode\tstatus\titerations\ttime_tsp\tobjective\tconsensus_error\tseparation_fraction\n");
    for r in [&discrete, &euler] {
        let rep = &r.outcome.report;
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            rep.mode.as_str(),
            r.status().as_str(),
            rep.iterations,
            rep.time_in_time_scale_units(),
            r.outcome.model.objective(),
            r.consensus_error(),
            r.metrics.separation_fraction
        );
    }
    let _ = writeln!(text, "# z_gap = {z_gap}");
    create_dir(out)?;
    write(out, SCENARIO_FILE, &s.to_toml())?;
    write(out, COMPARE_FILE, &text)?;
    Ok(Comparison { discrete, euler, z_gap })
}
