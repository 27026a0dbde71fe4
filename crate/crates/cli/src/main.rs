use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iscd_cli::{run_doa, run_experiment, CliError, ExperimentConfig, GridSpec};
use iscd_mpc::plants::BenchmarkKind;

#[derive(Debug, Parser)]
#[command(
    name = "iscd",
    version,
    about = "Run the ISCD-MPC benchmark experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one benchmark and write its trajectory CSV and metadata.
    Run {
        /// kapitza, nonholonomic, emag or triple_integrator
        benchmark: String,
        /// Horizon length.
        #[arg(long)]
        l: Option<usize>,
        /// Iteration cap.
        #[arg(long)]
        rho: Option<usize>,
        /// Stopping tolerance.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// `key = value` file; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Domain-of-attraction sweep of the triple integrator over an (x1, x2) grid.
    Doa {
        #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 200])]
        l: Vec<usize>,
        /// `min:step:max`, used for both axes.
        #[arg(long, default_value = "-10:1:10", allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            benchmark,
            l,
            rho,
            eps,
            steps,
            x0,
            out,
            config,
        } => {
            let kind: BenchmarkKind = benchmark
                .parse()
                .map_err(|e: iscd_mpc::plants::UnknownBenchmark| CliError::Usage(e.to_string()))?;
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|source| CliError::Io { path, source })?;
                    ExperimentConfig::parse(&text, Some(kind))?
                }
                None => ExperimentConfig::new(kind),
            };
            cfg.horizon = l.or(cfg.horizon);
            cfg.max_iterations = rho.or(cfg.max_iterations);
            cfg.tolerance = eps.or(cfg.tolerance);
            cfg.steps = steps.or(cfg.steps);
            cfg.x0 = x0.or(cfg.x0);
            let output = run_experiment(&cfg, &out)?;
            println!(
                "wrote {} and {}",
                output.trajectory.display(),
                output.metadata.display()
            );
        }
        Command::Doa { l, grid, out } => {
            let grid: GridSpec = grid.parse()?;
            let cfg = ExperimentConfig::new(BenchmarkKind::TripleIntegrator);
            let result = run_doa(&cfg, &l, &grid, &out)?;
            for &h in &l {
                println!(
                    "l = {h}: {} of {} converged",
                    result.converged_count(h),
                    result.grid.len()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
