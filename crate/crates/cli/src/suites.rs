//! Reproduction suites: run the shipped scenarios and check the published
//! qualitative results.

use std::path::Path;

use cdf_mpc::pf;
use cdf_mpc::runtime::{Summary, CONVERGENCE_RADIUS};
use cdf_mpc::{Error, Result};
use serde::Serialize;

use crate::{load_shipped, run_all, write_logs};

pub const SUITES: [&str; 4] = ["table1", "auv_ex1", "auv_ex2", "pf_check"];

/// Published minimum distances for s = 2, 3, 4 and γ = 0.3, 0.5, 0.7.
pub const TABLE1_CDF: [(&str, f64); 3] = [("unicycle_cdf_s2", 0.8483), ("unicycle_cdf_s3", 1.1664), ("unicycle_cdf_s4", 1.4712)];
pub const TABLE1_CBF: [(&str, f64); 3] = [("unicycle_cbf_g0.3", 0.7180), ("unicycle_cbf_g0.5", 0.3319), ("unicycle_cbf_g0.7", 0.1096)];
pub const TABLE1_TOL: f64 = 0.25;
pub const SOLVE_TIME_LIMIT: f64 = 0.05;
/// Solve time reported alongside the published controller's, for context.
pub const PUBLISHED_SOLVE_TIME: f64 = 0.008;
pub const EX2_RATIO: f64 = 1.5;
pub const PF_DT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Reproduction,
    Safety,
    Timing,
    PfOrder,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub group: Group,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub summaries: Vec<Summary>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn group_passed(&self, group: Group) -> bool {
        self.checks.iter().filter(|c| c.group == group).all(|c| c.passed)
    }

    fn check(&mut self, group: Group, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { group, name: name.into(), passed, detail: detail.into() });
    }

    /// Safe at every logged step and inside the convergence radius at the end.
    fn safety_checks(&mut self) {
        for s in self.summaries.clone() {
            self.check(
                Group::Safety,
                format!("{} safe", s.scenario),
                s.safety_violations == 0,
                format!("{} unsafe steps, min distance {:?}", s.safety_violations, s.min_distance),
            );
            self.check(
                Group::Safety,
                format!("{} converged", s.scenario),
                s.final_position_error < CONVERGENCE_RADIUS,
                format!("final position error {:.4} m ({:?})", s.final_position_error, s.outcome),
            );
        }
    }
}

fn new_report(suite: &str) -> SuiteReport {
    SuiteReport { suite: suite.to_string(), checks: Vec::new(), summaries: Vec::new() }
}

fn strictly(vals: &[f64], increasing: bool) -> bool {
    vals.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

/// Runs every initial state of each named scenario, optionally writing logs.
fn run_named(dir: &Path, names: &[&str], out: Option<&Path>, jobs: usize) -> Result<Vec<Summary>> {
    let mut summaries = Vec::new();
    for name in names {
        let sc = load_shipped(dir, name)?;
        let logs = run_all(&sc, jobs)?;
        if let Some(out) = out {
            write_logs(&logs, out)?;
        }
        summaries.extend(logs.into_iter().map(|l| l.summary));
    }
    Ok(summaries)
}

pub fn table1(dir: &Path, out: Option<&Path>, jobs: usize) -> Result<SuiteReport> {
    let mut rep = new_report("table1");
    let names: Vec<&str> = TABLE1_CDF.iter().chain(&TABLE1_CBF).map(|(n, _)| *n).collect();
    rep.summaries = run_named(dir, &names, out, jobs)?;
    let dist: Vec<f64> = rep.summaries.iter().map(|s| s.min_distance[0]).collect();

    for (label, refs, offset, increasing) in [("MPC-CDF", &TABLE1_CDF, 0, true), ("MPC-CBF", &TABLE1_CBF, 3, false)] {
        let d = &dist[offset..offset + 3];
        rep.check(
            Group::Reproduction,
            format!("{label} min distance strictly {}", if increasing { "increasing" } else { "decreasing" }),
            strictly(d, increasing),
            format!("{d:.4?}"),
        );
        for ((name, r), &v) in refs.iter().zip(d) {
            rep.check(
                Group::Reproduction,
                format!("{name} min distance within {TABLE1_TOL} m of {r}"),
                (v - r).abs() <= TABLE1_TOL,
                format!("{v:.4} m"),
            );
        }
    }
    let mean = rep.summaries.iter().map(|s| s.mean_solve_time).fold(0.0, f64::max);
    rep.check(
        Group::Timing,
        format!("mean solve time below {} ms", SOLVE_TIME_LIMIT * 1e3),
        mean < SOLVE_TIME_LIMIT,
        format!("worst scenario mean {:.2} ms (published controller ~{} ms)", mean * 1e3, PUBLISHED_SOLVE_TIME * 1e3),
    );
    rep.safety_checks();
    Ok(rep)
}

pub fn auv_ex1(dir: &Path, out: Option<&Path>, jobs: usize) -> Result<SuiteReport> {
    let mut rep = new_report("auv_ex1");
    rep.summaries = run_named(dir, &["auv_ex1"], out, jobs)?;
    rep.check(
        Group::Reproduction,
        "every start converges safely",
        rep.summaries.iter().all(|s| s.safety_violations == 0 && s.converged),
        format!("{} starts", rep.summaries.len()),
    );
    rep.safety_checks();
    Ok(rep)
}

/// Index of the sphere among the example's obstacles.
const EX2_SPHERE: usize = 3;

pub fn auv_ex2(dir: &Path, out: Option<&Path>, jobs: usize) -> Result<SuiteReport> {
    let mut rep = new_report("auv_ex2");
    rep.summaries = run_named(dir, &["auv_ex2_cdf", "auv_ex2_cbf"], out, jobs)?;
    let sphere = |s: &Summary| s.min_distance.get(EX2_SPHERE).copied().unwrap_or(f64::NAN);
    let (cdf, cbf) = (sphere(&rep.summaries[0]), sphere(&rep.summaries[1]));
    let ratio = cdf / cbf;
    rep.check(
        Group::Reproduction,
        format!("MPC-CDF sphere clearance exceeds MPC-CBF by more than {EX2_RATIO}x"),
        cdf > cbf && cbf > 0.0 && ratio > EX2_RATIO,
        format!("cdf {cdf:.3} m, cbf {cbf:.3} m, ratio {ratio:.2}"),
    );
    rep.safety_checks();
    Ok(rep)
}

pub fn pf_check() -> Result<(SuiteReport, Vec<pf::ErrorReport>)> {
    let mut rep = new_report("pf_check");
    let reports = pf::standard_checks(PF_DT)?;
    for r in &reports {
        rep.check(
            Group::PfOrder,
            format!("{} residual ratio in [3.2, 4.8]", r.system),
            r.is_second_order(),
            format!("e(dt)={:.3e} e(dt/2)={:.3e} ratio {:.3}", r.e_dt, r.e_half, r.ratio),
        );
    }
    Ok((rep, reports))
}

pub fn run_suite(name: &str, dir: &Path, out: Option<&Path>, jobs: usize) -> Result<SuiteReport> {
    match name {
        "table1" => table1(dir, out, jobs),
        "auv_ex1" => auv_ex1(dir, out, jobs),
        "auv_ex2" => auv_ex2(dir, out, jobs),
        "pf_check" => pf_check().map(|(r, _)| r),
        other => Err(Error::InvalidParameter(format!("unknown suite '{other}', expected one of {}", SUITES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_ordering() {
        assert!(strictly(&[1.0, 2.0, 3.0], true));
        assert!(!strictly(&[1.0, 1.0, 3.0], true));
        assert!(strictly(&[0.7, 0.3, 0.1], false));
        assert!(!strictly(&[0.7, 0.8, 0.1], false));
    }

    #[test]
    fn unknown_suite() {
        let err = run_suite("table2", Path::new("."), None, 1).unwrap_err().to_string();
        assert!(err.contains("table1, auv_ex1, auv_ex2, pf_check"), "{err}");
    }

    #[test]
    fn pf_suite_passes() {
        let (rep, reports) = pf_check().unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        assert_eq!(reports.len(), 2);
    }
}
