use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kshape_cli::pipeline;

fn kshape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kshape")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .display()
        .to_string()
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kshape(&["run", &scenario("default.toml"), "--out", dir_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        pipeline::SCENARIO_FILE,
        pipeline::DATASETS_FILE,
        pipeline::CONVERGENCE_FILE,
        pipeline::CONTOURS_FILE,
        pipeline::FIGURE_FILE,
        pipeline::SUMMARY_FILE,
        pipeline::CONSENSUS_SOLUTION_FILE,
        "solution_agent_1.txt",
        "solution_agent_2.txt",
        "solution_agent_3.txt",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let summary = fs::read_to_string(out.join(pipeline::SUMMARY_FILE)).unwrap();
    assert!(summary.contains("status = converged"));
    let solution = fs::read_to_string(out.join(pipeline::CONSENSUS_SOLUTION_FILE)).unwrap();
    assert!(solution.starts_with("status = converged\ngamma = "));
    assert_eq!(
        solution
            .lines()
            .find(|l| l.starts_with("coefficients"))
            .unwrap()
            .split_whitespace()
            .count(),
        2 + 36
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        assert_eq!(
            kshape(&["run", &scenario("default.toml"), "--out", dir_str(d)])
                .status
                .code(),
            Some(0)
        );
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn plot_reproduces_the_run_figure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    kshape(&["run", &scenario("default.toml"), "--out", dir_str(&out)]);
    let before = fs::read(out.join(pipeline::FIGURE_FILE)).unwrap();
    fs::remove_file(out.join(pipeline::FIGURE_FILE)).unwrap();
    assert_eq!(kshape(&["plot", dir_str(&out)]).status.code(), Some(0));
    assert_eq!(fs::read(out.join(pipeline::FIGURE_FILE)).unwrap(), before);
}

#[test]
fn gen_data_honours_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let src = tmp.path().join("jitter.toml");
    let text = fs::read_to_string(scenario("default.toml"))
        .unwrap()
        .replace("offset = 0.3", "offset = 0.3\nangle_jitter = 0.5");
    fs::write(&src, text).unwrap();
    let src = dir_str(&src);
    assert_eq!(
        kshape(&["gen-data", src, "--out", dir_str(&a), "--seed", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        kshape(&["gen-data", src, "--out", dir_str(&b), "--seed", "2"])
            .status
            .code(),
        Some(0)
    );
    let da = fs::read_to_string(a.join(pipeline::DATASETS_FILE)).unwrap();
    let db = fs::read_to_string(b.join(pipeline::DATASETS_FILE)).unwrap();
    assert_ne!(da, db);
    assert!(fs::read_to_string(b.join(pipeline::SCENARIO_FILE))
        .unwrap()
        .contains("seed = 2"));
    assert!(!b.join(pipeline::SUMMARY_FILE).exists());
}

#[test]
fn compare_runs_both_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let o = kshape(&["compare", &scenario("default.toml"), "--out", dir_str(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(out.join(pipeline::COMPARE_FILE)).unwrap();
    assert!(text.contains("\ndiscrete_admm\tconverged\t"));
    assert!(text.contains("\neuler_flow\tconverged\t"));
}

#[test]
fn max_iter_override_stops_early_with_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("short");
    let o = kshape(&[
        "run",
        &scenario("default.toml"),
        "--out",
        dir_str(&out),
        "--max-iter",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let summary = fs::read_to_string(out.join(pipeline::SUMMARY_FILE)).unwrap();
    assert!(summary.contains("status = max_iter\n") && summary.contains("iterations = 5\n"));
}

#[test]
fn malformed_config_lists_fields_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = fs::read_to_string(scenario("default.toml"))
        .unwrap()
        .replace("rows = 6", "rows = 0")
        .replace("rho = 1.0", "rho = -2.0");
    fs::write(&bad, text).unwrap();
    let o = kshape(&["run", dir_str(&bad), "--out", dir_str(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grid.rows") && err.contains("solver.rho"), "{err}");
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn unknown_key_and_bad_usage_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("typo.toml");
    fs::write(
        &bad,
        fs::read_to_string(scenario("default.toml"))
            .unwrap()
            .replace("[kernel]", "[kernel]\nbandwidth = 2.0"),
    )
    .unwrap();
    let o = kshape(&["run", dir_str(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bandwidth"));
    assert_eq!(kshape(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kshape(&["run", "/nonexistent/config.toml"]).status.code(), Some(1));
    assert_eq!(
        kshape(&["run", &scenario("default.toml"), "--mode", "sideways"])
            .status
            .code(),
        Some(1)
    );
}
