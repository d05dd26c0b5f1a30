//! Scenario runner: single runs, parameter sweeps and the reproduction
//! suites. `main.rs` only parses arguments and maps results to exit codes.

pub mod suites;

use std::path::{Path, PathBuf};

use cdf_mpc::runtime::{self, RunOutcome, Summary, TrajectoryLog};
use cdf_mpc::scenario::Scenario;
use cdf_mpc::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    /// Safe throughout but the final state is outside the convergence radius.
    NotConverged = 4,
    SolverAbort = 3,
    SafetyViolation = 2,
    Usage = 1,
    /// Runs finished but a reproduction assertion did not hold.
    AssertionFailed = 5,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn severity(self) -> u8 {
        match self {
            Exit::Ok => 0,
            Exit::NotConverged => 1,
            Exit::AssertionFailed => 2,
            Exit::SolverAbort => 3,
            Exit::SafetyViolation => 4,
            Exit::Usage => 5,
        }
    }

    pub fn of_summary(s: &Summary) -> Self {
        if s.safety_violations > 0 {
            Exit::SafetyViolation
        } else if s.outcome == RunOutcome::Aborted {
            Exit::SolverAbort
        } else if !s.converged {
            Exit::NotConverged
        } else {
            Exit::Ok
        }
    }

    /// Worst of a set of statuses.
    pub fn worst(items: impl IntoIterator<Item = Exit>) -> Self {
        items.into_iter().max_by_key(|e| e.severity()).unwrap_or(Exit::Ok)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// One closed-loop run per initial state of `sc`, executed in parallel.
/// Logs come back in initial-state order.
pub fn run_all(sc: &Scenario, jobs: usize) -> Result<Vec<TrajectoryLog>> {
    let ocp = sc.build_ocp()?;
    let cfg = sc.run_config();
    let starts = sc.initial_states();
    let multi = starts.len() > 1;
    let stems: Vec<String> = (0..starts.len()).map(|k| sc.output_stem(multi.then_some(k))).collect();
    pool(jobs)?.install(|| {
        starts
            .par_iter()
            .zip(&stems)
            .map(|(x0, stem)| runtime::run(stem, &ocp, x0, &cfg))
            .collect()
    })
}

pub(crate) fn write_logs(logs: &[TrajectoryLog], out: &Path) -> Result<()> {
    for log in logs {
        runtime::write_outputs(log, out, &log.scenario)?;
    }
    Ok(())
}

pub fn output_dir(sc: &Scenario, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| sc.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// `run`: executes every initial state and writes `<stem>.csv/.json`.
pub fn cmd_run(sc: &Scenario, out: &Path, jobs: usize) -> Result<(Vec<Summary>, Exit)> {
    let logs = run_all(sc, jobs)?;
    write_logs(&logs, out)?;
    let summaries: Vec<Summary> = logs.into_iter().map(|l| l.summary).collect();
    let exit = Exit::worst(summaries.iter().map(Exit::of_summary));
    Ok((summaries, exit))
}

/// One line of the sweep comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub controller: String,
    pub tuning: String,
    pub start: usize,
    pub solve_time_mean: f64,
    pub solve_time_std: f64,
    /// Smallest surface distance over all obstacles.
    pub min_distance: f64,
    pub final_position_error: f64,
    pub exit_code: i32,
}

fn controller_name(sc: &Scenario) -> String {
    format!("MPC-{}", sc.safety.mode.as_str().to_uppercase())
}

pub fn parse_values(list: &str) -> Result<Vec<f64>> {
    let vals = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidParameter(format!("bad sweep value '{s}': {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    Ok(vals)
}

/// `sweep`: one scenario per value. A child that fails to build or run is
/// reported in its row (exit code 1 or 3) and the sweep carries on.
pub fn cmd_sweep(sc: &Scenario, param: &str, values: &[f64], out: &Path, jobs: usize) -> Result<(Vec<SweepRow>, Exit)> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    let children = values.iter().map(|&v| sc.with_param(param, v)).collect::<Result<Vec<_>>>()?;
    let results: Vec<(Scenario, Result<Vec<TrajectoryLog>>)> =
        pool(jobs)?.install(|| children.into_par_iter().map(|c| {
            let r = run_all(&c, 1);
            (c, r)
        }).collect());

    let mut rows = Vec::new();
    for (child, result) in results {
        match result {
            Ok(logs) => {
                write_logs(&logs, out)?;
                for (k, log) in logs.iter().enumerate() {
                    let s = &log.summary;
                    rows.push(SweepRow {
                        controller: controller_name(&child),
                        tuning: child.tuning_label(),
                        start: k,
                        solve_time_mean: s.mean_solve_time,
                        solve_time_std: s.std_solve_time,
                        min_distance: s.min_distance.iter().copied().fold(f64::INFINITY, f64::min),
                        final_position_error: s.final_position_error,
                        exit_code: Exit::of_summary(s).code(),
                    });
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", child.output_stem(None));
                rows.push(SweepRow {
                    controller: controller_name(&child),
                    tuning: child.tuning_label(),
                    start: 0,
                    solve_time_mean: f64::NAN,
                    solve_time_std: f64::NAN,
                    min_distance: f64::NAN,
                    final_position_error: f64::NAN,
                    exit_code: Exit::SolverAbort.code(),
                });
            }
        }
    }
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("{}_{}_sweep_{param}.csv", sc.name, sc.safety.mode.as_str()));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io(e.to_string()))?;
    for row in &rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    let exit = Exit::worst(rows.iter().map(|r| match r.exit_code {
        0 => Exit::Ok,
        2 => Exit::SafetyViolation,
        4 => Exit::NotConverged,
        _ => Exit::SolverAbort,
    }));
    Ok((rows, exit))
}

/// Loads `<dir>/<name>.toml`.
pub fn load_shipped(dir: &Path, name: &str) -> Result<Scenario> {
    Scenario::load(&dir.join(format!("{name}.toml")))
}

/// The repository's `scenarios/` directory.
pub fn default_scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}
