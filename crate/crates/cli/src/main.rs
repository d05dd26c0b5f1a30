use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cdf_mpc::scenario::Scenario;
use cdf_mpc::Error;
use cdf_mpc_cli::suites::{self, SuiteReport};
use cdf_mpc_cli::{cmd_run, cmd_sweep, default_scenario_dir, output_dir, parse_values, Exit};
use clap::{Args, Parser, Subcommand};

/// Safety-critical MPC scenario runner.
///
/// Exit codes: 0 safe and converged, 1 usage or scenario error, 2 safety
/// violation, 3 solver abort, 4 safe but not converged, 5 a reproduction
/// assertion failed.
#[derive(Parser)]
#[command(name = "cdf-mpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Concurrent runs (initial states or sweep values).
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Reserved; every run is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (every initial state it lists).
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory; defaults to the scenario's `output` or `results/`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario once per parameter value and write a comparison table.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// One of sense_radius, gamma, alpha, N, dt.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a reproduction suite and check its assertions.
    Reproduce {
        /// table1, auv_ex1, auv_ex2 or pf_check.
        #[arg(long)]
        suite: String,
        /// Directory holding the shipped scenario files.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Also write per-run CSV/JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the transfer-operator convergence report as JSON.
    ValidatePf {
        #[arg(long, default_value_t = suites::PF_DT)]
        dt: f64,
    },
}

fn usage(e: Error) -> Exit {
    eprintln!("error: {e}");
    Exit::Usage
}

fn print_report(rep: &SuiteReport) {
    for c in &rep.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn load(path: &Path) -> Result<Scenario, Exit> {
    Scenario::load(path).map_err(usage)
}

fn dispatch(cli: Cli) -> Result<Exit, Exit> {
    match cli.command {
        Command::Run { scenario, out, common } => {
            let sc = load(&scenario)?;
            let dir = output_dir(&sc, out.as_deref());
            let (summaries, exit) = cmd_run(&sc, &dir, common.jobs).map_err(usage)?;
            for s in &summaries {
                println!(
                    "{}: {:?}, min distance {:?}, final error {:.4} m, mean solve {:.2} ms",
                    s.scenario,
                    s.outcome,
                    s.min_distance,
                    s.final_position_error,
                    s.mean_solve_time * 1e3
                );
            }
            Ok(exit)
        }
        Command::Sweep { scenario, param, values, out, common } => {
            let sc = load(&scenario)?;
            let values = parse_values(&values).map_err(usage)?;
            let dir = output_dir(&sc, out.as_deref());
            let (rows, exit) = cmd_sweep(&sc, &param, &values, &dir, common.jobs).map_err(usage)?;
            for r in &rows {
                println!(
                    "{} {} start {}: min distance {:.4} m, solve {:.2}±{:.2} ms, exit {}",
                    r.controller,
                    r.tuning,
                    r.start,
                    r.min_distance,
                    r.solve_time_mean * 1e3,
                    r.solve_time_std * 1e3,
                    r.exit_code
                );
            }
            Ok(exit)
        }
        Command::Reproduce { suite, scenarios, out, common } => {
            let dir = scenarios.unwrap_or_else(default_scenario_dir);
            let rep = suites::run_suite(&suite, &dir, out.as_deref(), common.jobs).map_err(usage)?;
            print_report(&rep);
            let runs = Exit::worst(rep.summaries.iter().map(Exit::of_summary));
            Ok(match (rep.passed(), runs) {
                (true, _) => Exit::Ok,
                (false, Exit::Ok | Exit::NotConverged) => Exit::AssertionFailed,
                (false, worst) => worst,
            })
        }
        Command::ValidatePf { dt } => {
            let reports = cdf_mpc::pf::standard_checks(dt).map_err(usage)?;
            println!("{}", serde_json::to_string_pretty(&reports).expect("report serializes"));
            Ok(if reports.iter().all(|r| r.is_second_order()) { Exit::Ok } else { Exit::AssertionFailed })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports bad arguments with status 2, which here means a safety violation
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Usage.code() as u8 } else { 0 });
        }
    };
    let exit = dispatch(cli).unwrap_or_else(|e| e);
    ExitCode::from(exit.code() as u8)
}
