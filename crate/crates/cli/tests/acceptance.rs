//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::cell::Cell;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use kshape_cli::pipeline;
use kshape_cli::{Mode, Scenario};
use kshape_core::geometry::{self, ShapeModel};
use kshape_core::kernel::{self, KernelConfig};
use kshape_core::local_qp::{self, Basis};
use kshape_core::{assemble_agent, consensus, datagen, oracle};
use kshape_core::{Bbox, GridBasis, LabeledDataset, Point, RunStatus, SolveStatus, SolverConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

const CONSENSUS_TOL: f64 = 1e-6;
const MARGIN_TOL: f64 = 1e-4;
const DEFAULT_RUN_BUDGET: Duration = Duration::from_secs(30);
const ORACLE_CASES: u32 = 100;
const ORACLE_OBJECTIVE_REL: f64 = 1e-4;
const ORACLE_Z_TOL: f64 = 1e-3;
const ORACLE_BUDGET: Duration = Duration::from_secs(300);
const LOCAL_CASES: u32 = 200;
const LOCAL_REL: f64 = 1e-8;
const LOCAL_BUDGET: Duration = Duration::from_secs(120);
const TSP_RANGE: (f64, f64) = (200.0, 2000.0);
const GROWTH_WINDOW: usize = 200;
const GROWTH_LIMIT: f64 = 10.0;
const ALGEBRA_CASES: u32 = 64;
const SQRT_TOL: f64 = 1e-9;
const CHANGE_OF_VARIABLES_TOL: f64 = 1e-9;
const EVAL_TOL: f64 = 1e-12;
const CONTOUR_TOL: f64 = 1e-3;
const CONTOUR_RATIO: f64 = 1.8;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn default_feasible_run() -> Result<String, String> {
    let s = Scenario::load(&scenario_path("default.toml")).map_err(|e| e.to_string())?;
    check(s.robots.len() == 3, "default scenario must have three robots")?;
    check(
        matches!(s.shape, kshape_cli::scenario::ShapeSpec::Star { .. }),
        "default object must be a star",
    )?;
    let start = Instant::now();
    let r = pipeline::solve(&s).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let sizes: Vec<usize> = r.datasets.iter().map(|d| d.len()).collect();
    check(
        sizes.iter().all(|&n| n == 20),
        format!("samples per robot {sizes:?}, want 20"),
    )?;
    check(
        r.status() == RunStatus::Converged,
        format!("status {}", r.status().as_str()),
    )?;
    check(
        r.consensus_error() < CONSENSUS_TOL,
        format!("consensus error {:e}", r.consensus_error()),
    )?;
    let m = &r.metrics;
    check(
        m.separation_fraction == 1.0,
        format!("separation {}", m.separation_fraction),
    )?;
    check(m.min_margin >= 1.0 - MARGIN_TOL, format!("min margin {}", m.min_margin))?;
    check(elapsed < DEFAULT_RUN_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} iterations, consensus error {:.2e}, min margin {:.7}, {:.2?}",
        r.outcome.report.iterations,
        r.consensus_error(),
        m.min_margin,
        elapsed
    ))
}

/// A feasible multi-agent instance: labels come from a random grid-basis function, keeping
/// only points it classifies with a clear margin.
fn instance() -> impl Strategy<Value = (GridBasis, Vec<LabeledDataset>)> {
    (
        1usize..=3,
        prop_oneof![Just((2usize, 2usize)), Just((2, 3)), Just((3, 3))],
        proptest::collection::vec(-2.0..2.0f64, 9),
        -0.5..0.5f64,
        proptest::collection::vec(proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 30), 3),
        proptest::collection::vec(1usize..=10, 3),
    )
        .prop_filter_map(
            "too few clear points",
            |(agents, (rows, cols), coeffs, bias, clouds, sizes)| {
                let grid = datagen::make_grid(&Bbox::from_corners(-1.5, -1.5, 1.5, 1.5), rows, cols).ok()?;
                let cfg = KernelConfig::default();
                let c = &coeffs[..grid.len()];
                let f = |p: &Point| kernel::expansion(c, grid.points(), bias, p, &cfg);
                let spread = grid.points().iter().map(|g| f(g).abs()).fold(0.0, f64::max);
                let mut sets: Vec<LabeledDataset> = Vec::new();
                for a in 0..agents {
                    let (mut points, mut labels) = (Vec::new(), Vec::new());
                    for &(x, y) in &clouds[a] {
                        let p = Point::new(x, y);
                        let v = f(&p);
                        let fresh = sets
                            .iter()
                            .flat_map(|d| d.points.iter())
                            .chain(points.iter())
                            .all(|q| (q - p).norm() > 0.05);
                        if v.abs() >= 0.2 * spread && points.len() < sizes[a] && fresh {
                            points.push(p);
                            labels.push(if v > 0.0 { 1 } else { -1 });
                        }
                    }
                    if points.is_empty() {
                        return None;
                    }
                    sets.push(LabeledDataset::new(a + 1, points, labels).ok()?);
                }
                let labels: Vec<i8> = sets.iter().flat_map(|d| d.labels.iter().copied()).collect();
                (labels.contains(&1) && labels.contains(&-1)).then_some((grid, sets))
            },
        )
}

fn oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let worst_rel = Cell::new(0.0f64);
    let worst_z = Cell::new(0.0f64);
    let cfg = KernelConfig::default();
    runner(ORACLE_CASES)
        .run(&instance(), |(grid, sets)| {
            let central = oracle::solve_centralized(&sets, &grid, &cfg).unwrap();
            prop_assert_eq!(central.status, SolveStatus::Optimal);
            let problems = sets.iter().map(|d| assemble_agent(d, &grid, &cfg).unwrap()).collect();
            let out = consensus::run(problems, SolverConfig::default()).unwrap();
            prop_assert_eq!(out.status, RunStatus::Converged);
            let rel = (out.model.objective() - central.objective).abs() / central.objective.max(1e-12);
            let dz = (&out.consensus.z - central.stacked()).amax();
            worst_rel.set(worst_rel.get().max(rel));
            worst_z.set(worst_z.get().max(dz));
            prop_assert!(rel <= ORACLE_OBJECTIVE_REL);
            prop_assert!(dz <= ORACLE_Z_TOL);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(elapsed < ORACLE_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{ORACLE_CASES} instances, worst objective rel {:.1e}, worst z gap {:.1e}, {elapsed:.2?}",
        worst_rel.get(),
        worst_z.get()
    ))
}

/// `n` points in distinct cells of a 10×10 lattice, jittered within a quarter cell.
fn spread_points(n: usize, spacing: f64) -> impl Strategy<Value = Vec<Point>> {
    (
        proptest::sample::subsequence((0..100).collect::<Vec<usize>>(), n),
        proptest::collection::vec((-0.25..0.25f64, -0.25..0.25f64), n),
    )
        .prop_map(move |(cells, jitter)| {
            cells
                .iter()
                .zip(jitter)
                .map(|(&c, (jx, jy))| {
                    Point::new(
                        ((c % 10) as f64 - 4.5 + jx) * spacing,
                        ((c / 10) as f64 - 4.5 + jy) * spacing,
                    )
                })
                .collect()
        })
}

fn local_solver() -> Result<String, String> {
    let start = Instant::now();
    let worst = Cell::new(0.0f64);
    let strategy = (1usize..=8).prop_flat_map(|n| (spread_points(n, 0.6), proptest::collection::vec(any::<bool>(), n)));
    runner(LOCAL_CASES)
        .run(&strategy, |(pts, flips)| {
            let labels = flips.iter().map(|&f| if f { 1 } else { -1 }).collect();
            let d = LabeledDataset::new(1, pts, labels).unwrap();
            let p = local_qp::build_local(&d, Basis::Data, &KernelConfig::default()).unwrap();
            let sol = local_qp::solve_local(&p, local_qp::DEFAULT_TOL, local_qp::DEFAULT_MAX_ITER);
            let brute = oracle::brute_force_small(&p).unwrap();
            prop_assert_eq!(sol.status, SolveStatus::Optimal);
            prop_assert_eq!(brute.status, SolveStatus::Optimal);
            let rel = (sol.objective - brute.objective).abs() / brute.objective.max(1e-12);
            worst.set(worst.get().max(rel));
            prop_assert!(rel <= LOCAL_REL, "{} vs {}", sol.objective, brute.objective);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(elapsed < LOCAL_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{LOCAL_CASES} instances, worst rel {:.1e}, {elapsed:.2?}",
        worst.get()
    ))
}

fn euler_convergence_order() -> Result<String, String> {
    let mut s = Scenario::load(&scenario_path("default.toml")).map_err(|e| e.to_string())?;
    s.solver.mode = Mode::EulerFlow;
    s.solver.step_size = 0.001;
    s.solver.time_scale = 0.01;
    let r = pipeline::solve(&s).map_err(|e| e.to_string())?;
    let report = &r.outcome.report;
    let tsp = report.time_in_time_scale_units();
    let growth = report.max_window_growth(GROWTH_WINDOW);
    check(
        r.status() == RunStatus::Converged,
        format!("status {}", r.status().as_str()),
    )?;
    check((TSP_RANGE.0..=TSP_RANGE.1).contains(&tsp), format!("{tsp} T_sp"))?;
    check(
        growth <= GROWTH_LIMIT,
        format!("residual grew {growth}x within a window"),
    )?;
    Ok(format!(
        "{tsp:.1} T_sp ({} steps), max window growth {growth:.2}",
        report.iterations
    ))
}

fn summary_value(dir: &Path, key: &str) -> Result<String, String> {
    let text = std::fs::read_to_string(dir.join(pipeline::SUMMARY_FILE)).map_err(|e| e.to_string())?;
    text.lines()
        .find_map(|l| {
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(" = "))
                .map(str::to_string)
        })
        .ok_or_else(|| format!("summary has no {key}"))
}

fn infeasible_grid() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for (file, extra) in [("infeasible.toml", None), ("shrunk_grid.toml", Some("300"))] {
        let out = tmp.path().join(file);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_kshape"));
        cmd.arg("run").arg(scenario_path(file)).arg("--out").arg(&out);
        if let Some(n) = extra {
            cmd.args(["--max-iter", n]);
        }
        let code = cmd.output().map_err(|e| e.to_string())?.status.code();
        let status = summary_value(&out, "status")?;
        let sep: f64 = summary_value(&out, "separation_fraction")?
            .parse()
            .map_err(|e| format!("{e}"))?;
        check(code == Some(2), format!("{file}: exit code {code:?}"))?;
        check(
            status == "diverged" || status == "max_iter",
            format!("{file}: status {status}"),
        )?;
        check(sep < 1.0, format!("{file}: separation {sep}"))?;
        seen.push(format!("{file}: {status}, separation {sep:.3}, exit 2"));
    }
    Ok(seen.join("; "))
}

fn kernel_algebra() -> Result<String, String> {
    let cfg = KernelConfig::default();
    runner(ALGEBRA_CASES)
        .run(
            &(2usize..30, 0.5..1.5f64).prop_flat_map(|(n, s)| spread_points(n, s)),
            |pts| {
                let g = kernel::gram(&pts, &cfg, 0.0).unwrap();
                prop_assert!(g.entries().clone().symmetric_eigenvalues().min() > 0.0);
                Ok(())
            },
        )
        .map_err(|e| format!("gram: {e}"))?;
    runner(ALGEBRA_CASES)
        .run(&(1usize..=50).prop_flat_map(|n| spread_points(n, 1.5)), |pts| {
            let m = pts.len();
            let g = kernel::gram(&pts, &cfg, 0.0).unwrap();
            let (s, si) = kernel::sqrt_and_inv_sqrt(&g).unwrap();
            prop_assert!((&s * &s - g.entries()).amax() < SQRT_TOL);
            prop_assert!((&s * &si - DMatrix::<f64>::identity(m, m)).amax() < SQRT_TOL);
            Ok(())
        })
        .map_err(|e| format!("sqrt: {e}"))?;
    let cov = (
        (1usize..=9).prop_flat_map(|n| spread_points(n, 1.0)),
        proptest::collection::vec(-5.0..5.0f64, 9),
    );
    runner(ALGEBRA_CASES)
        .run(&cov, |(pts, c)| {
            let grid = GridBasis::new(pts).unwrap();
            let d = LabeledDataset::new(1, vec![Point::new(7.0, 7.0)], vec![1]).unwrap();
            let a = assemble_agent(&d, &grid, &cfg).unwrap();
            let c = DVector::from_column_slice(&c[..grid.len()]);
            prop_assert!((a.x_to_c(&a.c_to_x(&c)) - &c).amax() < CHANGE_OF_VARIABLES_TOL);
            Ok(())
        })
        .map_err(|e| format!("change of variables: {e}"))?;
    let eval = (
        (1usize..=12).prop_flat_map(|n| spread_points(n, 0.8)),
        proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..20),
        proptest::collection::vec(-3.0..3.0f64, 12),
        -2.0..2.0f64,
    );
    runner(ALGEBRA_CASES)
        .run(&eval, |(basis, probes, coeffs, bias)| {
            let c = DVector::from_column_slice(&coeffs[..basis.len()]);
            let probes: Vec<Point> = probes.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let by_product = kernel::cross_kernel(&probes, &basis, &cfg).entries() * &c;
            for (i, p) in probes.iter().enumerate() {
                let direct = kernel::expansion(c.as_slice(), &basis, bias, p, &cfg);
                prop_assert!((direct - (by_product[i] + bias)).abs() < EVAL_TOL);
            }
            Ok(())
        })
        .map_err(|e| format!("evaluation: {e}"))?;
    Ok(format!("4 properties x {ALGEBRA_CASES} cases"))
}

fn analytic_contour() -> Result<String, String> {
    let grid = GridBasis::new(vec![Point::origin()]).map_err(|e| e.to_string())?;
    let model = ShapeModel::new(
        grid,
        DVector::from_element(1, 1.0),
        -(-0.5f64).exp(),
        KernelConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let window = Bbox::from_corners(-2.0, -2.0, 2.0, 2.0);
    let trace = |res: usize| -> Result<(usize, bool, f64), String> {
        let field = geometry::raster_eval(&model, window, res).map_err(|e| e.to_string())?;
        let c = geometry::marching_squares(&field);
        let err = c.vertices().map(|v| (v.coords.norm() - 1.0).abs()).fold(0.0, f64::max);
        Ok((c.polylines.len(), c.polylines.iter().all(|p| p.closed), err))
    };
    let (n_fine, closed, e_fine) = trace(201)?;
    let (_, _, e_coarse) = trace(101)?;
    check(n_fine == 1 && closed, format!("{n_fine} polylines, closed {closed}"))?;
    check(e_fine < CONTOUR_TOL, format!("radial error {e_fine:e}"))?;
    let ratio = e_coarse / e_fine;
    check(ratio >= CONTOUR_RATIO, format!("error ratio {ratio}"))?;
    Ok(format!("radial error {e_fine:.2e} at 201, ratio {ratio:.2}"))
}

type Criterion = (&'static str, fn() -> Result<String, String>);

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 default scenario converges and separates", default_feasible_run),
        ("2 distributed matches centralized oracle", oracle_equivalence),
        ("3 local solver matches brute force", local_solver),
        ("4 euler flow convergence time", euler_convergence_order),
        ("5 infeasible grid fails cleanly", infeasible_grid),
        ("6 kernel and linear algebra properties", kernel_algebra),
        ("7 analytic circle contour", analytic_contour),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
