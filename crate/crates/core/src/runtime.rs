//! Closed-loop receding-horizon execution, post-hoc audit and result files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{discretize, rk4_step, euler_step, Scheme};
use crate::error::{check_dim, Error, Result};
use crate::geometry::min_distance;
use crate::scalar::all_finite;
use crate::solver::{solve, warm_start_shift, Nlp, SolveStatus, SolverConfig};
use crate::transcription::{OcpProblem, Safety, SafetyMode};

/// Distance to the target position below which a run counts as converged.
pub const CONVERGENCE_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub duration: f64,
    pub plant: Scheme,
    pub solver: SolverConfig,
    /// Consecutive solver failures tolerated before the run is aborted.
    pub max_failures: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { duration: 10.0, plant: Scheme::Rk4, solver: SolverConfig::default(), max_failures: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub x: Vec<f64>,
    /// Input applied over `[t, t + δt)`; empty on the final record.
    pub u: Vec<f64>,
    /// Unscaled safety rows at `(x, u)`.
    pub residuals: Vec<f64>,
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub solve_time: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    /// Stopped after repeated solver failures or a non-finite plant state.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub model: String,
    pub mode: SafetyMode,
    pub outcome: RunOutcome,
    pub steps: usize,
    pub dt: f64,
    /// Per obstacle, in declaration order.
    pub min_distance: Vec<f64>,
    pub final_position_error: f64,
    pub converged: bool,
    pub mean_solve_time: f64,
    pub std_solve_time: f64,
    pub safety_violations: usize,
    pub fallback_steps: usize,
    pub infeasible_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub scenario: String,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub residual_labels: Vec<String>,
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

impl TrajectoryLog {
    pub fn states(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.x.as_slice()).collect()
    }
}

fn residual_labels(safety: &Safety) -> Vec<String> {
    match safety {
        Safety::Cdf(_) => vec!["cdf".into()],
        Safety::Cbf(b) => (0..b.obstacles.len()).map(|j| format!("cbf_{j}")).collect(),
        Safety::Euclidean(o) => (0..o.len()).map(|j| format!("h_next_{j}")).collect(),
        Safety::None => vec![],
    }
}

fn position_error(ocp: &OcpProblem, x: &[f64]) -> f64 {
    let pd = ocp.model.position_dim();
    x[..pd].iter().zip(&ocp.target[..pd]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs the closed loop from `x0` for `cfg.duration`.
pub fn run(scenario: &str, ocp: &OcpProblem, x0: &[f64], cfg: &RunConfig) -> Result<TrajectoryLog> {
    ocp.validate()?;
    cfg.solver.validate()?;
    check_dim("initial state", ocp.model.state_dim(), x0.len())?;
    if !all_finite(x0) {
        return Err(Error::NonFinite("initial state"));
    }
    if !(cfg.duration > 0.0) || !cfg.duration.is_finite() {
        return Err(Error::InvalidParameter(format!("duration must be positive, got {}", cfg.duration)));
    }
    let lay = ocp.layout();
    let steps = (cfg.duration / ocp.dt).round() as usize;
    let model = &*ocp.model;
    let bounds = &ocp.input_bounds;

    let mut records = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut z_prev: Option<Vec<f64>> = None;
    let mut u_prev = ocp.input_ref.clone();
    let mut failures = 0;
    let mut outcome = RunOutcome::Completed;

    for k in 0..steps {
        let t = k as f64 * ocp.dt;
        let nlp = ocp.build(&x)?;
        let z0 = match &z_prev {
            Some(z) => warm_start_shift(z, lay.horizon, lay.state_dim, lay.input_dim)?,
            None => ocp.cold_start(&x),
        };
        let result = solve(&nlp, &z0, &cfg.solver)?;
        let usable = result.status != SolveStatus::NumericFailure && all_finite(&result.z);
        let (u, fallback) = if usable {
            failures = 0;
            let u0 = &result.z[lay.u(0)..lay.u(0) + lay.input_dim];
            (u0.to_vec(), false)
        } else {
            failures += 1;
            let decayed = u_prev.iter().zip(&ocp.input_ref).map(|(u, r)| r + 0.5 * (u - r)).collect();
            (decayed, true)
        };
        let u: Vec<f64> = u.iter().zip(bounds).map(|(&v, &(lo, hi))| v.clamp(lo, hi)).collect();
        let mut residuals = vec![0.0; nlp.num_ineq() / lay.horizon.max(1)];
        ocp.stage_safety(&x, &u, &mut residuals);
        records.push(StepRecord {
            t,
            x: x.clone(),
            u: u.clone(),
            residuals,
            status: Some(result.status),
            iterations: result.iterations,
            solve_time: result.wall_time,
            fallback,
        });
        z_prev = if usable { Some(result.z) } else { None };
        u_prev = u.clone();
        x = match cfg.plant {
            Scheme::Rk4 => rk4_step(model, &x, &u, ocp.dt),
            Scheme::Euler => euler_step(model, &x, &u, ocp.dt),
        };
        if failures >= cfg.max_failures || !all_finite(&x) {
            outcome = RunOutcome::Aborted;
            break;
        }
    }
    if all_finite(&x) {
        records.push(StepRecord {
            t: records.len() as f64 * ocp.dt,
            x,
            u: vec![],
            residuals: vec![],
            status: None,
            iterations: 0,
            solve_time: 0.0,
            fallback: false,
        });
    }

    let summary = summarize(scenario, ocp, &records, outcome)?;
    Ok(TrajectoryLog {
        scenario: scenario.to_string(),
        state_labels: model.state_labels(),
        input_labels: model.input_labels(),
        residual_labels: residual_labels(&ocp.safety),
        records,
        summary,
    })
}

fn summarize(scenario: &str, ocp: &OcpProblem, records: &[StepRecord], outcome: RunOutcome) -> Result<Summary> {
    let states: Vec<&[f64]> = records.iter().map(|r| r.x.as_slice()).collect();
    let obstacles = ocp.safety.obstacles();
    let min_distance = obstacles.iter().map(|o| min_distance(o, &states)).collect::<Result<Vec<_>>>()?;
    let safety_violations = records
        .iter()
        .filter(|r| obstacles.iter().any(|o| o.h_unchecked(&r.x[..o.dim()]) < 0.0))
        .count();
    let times: Vec<f64> = records.iter().filter(|r| r.status.is_some()).map(|r| r.solve_time).collect();
    let (mean_solve_time, std_solve_time) = mean_std(&times);
    let final_position_error = records.last().map_or(f64::INFINITY, |r| position_error(ocp, &r.x));
    Ok(Summary {
        scenario: scenario.to_string(),
        model: ocp.model.name().to_string(),
        mode: ocp.safety.mode(),
        outcome,
        steps: records.len().saturating_sub(1),
        dt: ocp.dt,
        min_distance,
        final_position_error,
        converged: final_position_error < CONVERGENCE_RADIUS,
        mean_solve_time,
        std_solve_time,
        safety_violations,
        fallback_steps: records.iter().filter(|r| r.fallback).count(),
        infeasible_steps: records
            .iter()
            .filter(|r| matches!(r.status, Some(SolveStatus::InfeasibleStationary)))
            .count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `h_j(x_k) < 0`.
    Unsafe,
    /// The discrete safety condition of the run's mode fails at the applied input.
    Residual,
    /// Logged successor differs from the plant step.
    Plant,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub step: usize,
    pub kind: ViolationKind,
    pub obstacle: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
    pub min_h: Vec<f64>,
    pub min_distance: Vec<f64>,
    pub final_position_error: f64,
    pub converged: bool,
    pub max_plant_error: f64,
}

impl AuditReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn unsafe_steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.violations.iter().filter(|v| v.kind == ViolationKind::Unsafe).map(|v| v.step).collect();
        s.dedup();
        s
    }
}

/// Recomputes safety, the discrete safety condition at the applied inputs,
/// plant consistency and convergence from the logged states alone.
/// `residual_tol` is the slack allowed on the (unscaled) residual rows.
pub fn audit(log: &TrajectoryLog, ocp: &OcpProblem, plant: Scheme, residual_tol: f64) -> AuditReport {
    let obstacles = ocp.safety.obstacles();
    let mut violations = Vec::new();
    let mut min_h = vec![f64::INFINITY; obstacles.len()];
    let mut max_plant_error: f64 = 0.0;
    let recs = &log.records;
    for (k, r) in recs.iter().enumerate() {
        for (j, o) in obstacles.iter().enumerate() {
            let h = o.h_unchecked(&r.x[..o.dim()]);
            min_h[j] = min_h[j].min(h);
            if h < 0.0 {
                violations.push(Violation { step: k, kind: ViolationKind::Unsafe, obstacle: Some(j), value: h });
            }
        }
        if r.u.is_empty() {
            continue;
        }
        let mut rows = vec![0.0; ocp.safety.rows_per_stage()];
        ocp.stage_safety(&r.x, &r.u, &mut rows);
        for (j, &v) in rows.iter().enumerate() {
            if v < -residual_tol {
                let obstacle = (ocp.safety.mode() != SafetyMode::Cdf).then_some(j);
                violations.push(Violation { step: k, kind: ViolationKind::Residual, obstacle, value: v });
            }
        }
        if let Some(next) = recs.get(k + 1) {
            if let Ok(pred) = discretize(&*ocp.model, &r.x, &r.u, ocp.dt, plant) {
                let err = pred.iter().zip(&next.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                max_plant_error = max_plant_error.max(err);
                if err > 1e-12 {
                    violations.push(Violation { step: k, kind: ViolationKind::Plant, obstacle: None, value: err });
                }
            }
            let gap = next.t - r.t;
            if !(gap > 0.0) || (gap - ocp.dt).abs() > 1e-9 {
                violations.push(Violation { step: k, kind: ViolationKind::Time, obstacle: None, value: gap });
            }
        }
    }
    let states: Vec<&[f64]> = recs.iter().map(|r| r.x.as_slice()).collect();
    let min_distance = obstacles.iter().map(|o| min_distance(o, &states).unwrap_or(f64::NAN)).collect();
    let final_position_error = recs.last().map_or(f64::INFINITY, |r| position_error(ocp, &r.x));
    AuditReport {
        violations,
        min_h,
        min_distance,
        final_position_error,
        converged: final_position_error < CONVERGENCE_RADIUS,
        max_plant_error,
    }
}

/// First step at which `|u[channel]|` exceeds `threshold`, with the distance
/// to the nearest obstacle surface at that step.
pub fn input_onset(log: &TrajectoryLog, ocp: &OcpProblem, channel: usize, threshold: f64) -> Option<(usize, f64)> {
    log.records.iter().enumerate().find_map(|(k, r)| {
        let v = *r.u.get(channel)?;
        if v.abs() <= threshold {
            return None;
        }
        let d = ocp
            .safety
            .obstacles()
            .iter()
            .filter_map(|o| o.surface_distance(&r.x[..o.dim()]).ok())
            .fold(f64::INFINITY, f64::min);
        Some((k, d))
    })
}

/// First line of every trajectory CSV; bump when the column order changes.
pub const CSV_VERSION_LINE: &str = "# cdf-mpc trajectory v1";

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

/// Columns: `t`, states, inputs, residuals, `solve_time`, `status`,
/// `iterations`, `fallback`. The final row has empty input/residual cells.
pub fn write_csv<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "{CSV_VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(log.state_labels.iter().cloned());
    header.extend(log.input_labels.iter().cloned());
    header.extend(log.residual_labels.iter().cloned());
    header.extend(["solve_time", "status", "iterations", "fallback"].map(String::from));
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    let (nu, nr) = (log.input_labels.len(), log.residual_labels.len());
    for r in &log.records {
        let mut row = vec![fmt_num(r.t)];
        row.extend(r.x.iter().map(|&v| fmt_num(v)));
        if r.u.is_empty() {
            row.extend(std::iter::repeat_n(String::new(), nu + nr));
        } else {
            row.extend(r.u.iter().map(|&v| fmt_num(v)));
            row.extend(r.residuals.iter().map(|&v| fmt_num(v)));
        }
        row.push(fmt_num(r.solve_time));
        row.push(r.status.map_or(String::new(), |s| serde_json::to_value(s).unwrap().as_str().unwrap_or("").to_string()));
        row.push(r.iterations.to_string());
        row.push(r.fallback.to_string());
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_outputs(log: &TrajectoryLog, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv_file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_csv(log, std::io::BufWriter::new(csv_file))?;
    let json = serde_json::to_string_pretty(&log.summary).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}
