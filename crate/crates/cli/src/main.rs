use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kshape_cli::pipeline;
use kshape_cli::{CliError, Mode, Scenario};

/// Distributed kernel shape learning from simulated LiDAR scans.
#[derive(Debug, Parser)]
#[command(name = "kshape", version)]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the scenario's `output_dir`, else `runs/<config name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `solver.max_iter`.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Overrides `solver.mode`.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate data, run consensus ADMM and write all artifacts.
    Run { config: PathBuf },
    /// Run both solver modes on the same data.
    Compare { config: PathBuf },
    /// Write the scenario's datasets only.
    GenData { config: PathBuf },
    /// Redraw figure.svg for an existing run directory.
    Plot { run_dir: PathBuf },
}

impl Cli {
    fn scenario(&self, config: &Path) -> Result<(Scenario, PathBuf), CliError> {
        let mut s = Scenario::load(config)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(n) = self.max_iter {
            s.solver.max_iter = n;
        }
        if let Some(mode) = self.mode {
            s.solver.mode = mode;
        }
        s.validate()?;
        let out = self.out.clone().or_else(|| s.output_dir.clone()).unwrap_or_else(|| {
            let stem = config
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Path::new("runs").join(stem)
        });
        Ok((s, out))
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Run { config } => {
            let (s, out) = cli.scenario(config)?;
            let r = pipeline::run_scenario(&s, &out)?;
            println!(
                "{}: {} iterations, consensus error {:e}, separation {}, wall time {:.3} s",
                r.status().as_str(),
                r.outcome.report.iterations,
                r.consensus_error(),
                r.metrics.separation_fraction,
                r.wall_time
            );
            if let Some(reason) = &r.outcome.report.divergence {
                println!("diverged: {reason}");
            }
            println!("wrote {}", out.display());
            Ok(r.exit_code())
        }
        Command::Compare { config } => {
            let (s, out) = cli.scenario(config)?;
            let c = pipeline::compare_modes(&s, &out)?;
            for r in [&c.discrete, &c.euler] {
                let rep = &r.outcome.report;
                println!(
                    "{}: {} after {} iterations ({} time units)",
                    rep.mode.as_str(),
                    r.status().as_str(),
                    rep.iterations,
                    rep.time_in_time_scale_units()
                );
            }
            println!("max |z_discrete - z_euler| = {:e}", c.z_gap);
            println!("wrote {}", out.join(pipeline::COMPARE_FILE).display());
            Ok(c.exit_code())
        }
        Command::GenData { config } => {
            let (s, out) = cli.scenario(config)?;
            let sets = pipeline::gen_data(&s, &out)?;
            let n: usize = sets.iter().map(|d| d.len()).sum();
            println!("{} samples from {} robots, wrote {}", n, sets.len(), out.display());
            Ok(0)
        }
        Command::Plot { run_dir } => {
            let path = pipeline::plot(run_dir)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
