//! Line-search SQP with an ℓ1 exact-penalty merit function.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nlp::Nlp;
use super::qp::{self, QpError};
use crate::error::{check_dim, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Powell-damped BFGS on the Lagrangian, seeded with the objective Hessian.
    Bfgs,
    /// Constant objective Hessian only.
    GaussNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub constraint_tol: f64,
    pub penalty_init: f64,
    pub penalty_factor: f64,
    pub penalty_max: f64,
    /// Smallest eigenvalue floor enforced on the seed Hessian diagonal.
    pub hessian_floor: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub min_step: f64,
    pub hessian: HessianMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            kkt_tol: 1e-6,
            constraint_tol: 1e-8,
            penalty_init: 1.0,
            penalty_factor: 10.0,
            penalty_max: 1e8,
            hessian_floor: 1e-8,
            backtrack: 0.5,
            armijo: 1e-4,
            min_step: 1e-10,
            hessian: HessianMode::Bfgs,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kkt_tol", self.kkt_tol),
            ("constraint_tol", self.constraint_tol),
            ("penalty_init", self.penalty_init),
            ("hessian_floor", self.hessian_floor),
            ("armijo", self.armijo),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(crate::Error::InvalidParameter(format!("solver {name} must be positive")));
            }
        }
        if self.max_iter == 0 {
            return Err(crate::Error::InvalidParameter("solver max_iter must be at least 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.penalty_factor > 1.0) {
            return Err(crate::Error::InvalidParameter("invalid line search or penalty factor".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Line search stalled at a feasible point above the stationarity tolerance.
    Acceptable,
    MaxIter,
    InfeasibleStationary,
    NumericFailure,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    /// `max(stationarity, complementarity)`.
    pub kkt_residual: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub constraint_violation: f64,
    pub iterations: usize,
    pub wall_time: f64,
    /// Equality multipliers.
    pub lambda: Vec<f64>,
    /// Inequality multipliers (`c_in ≥ 0` rows).
    pub mu: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    /// `(merit before, merit after)` for every accepted step at a fixed penalty.
    pub merit_log: Vec<(f64, f64)>,
}

struct Point {
    z: DVector<f64>,
    f: f64,
    grad: DVector<f64>,
    c_eq: DVector<f64>,
    c_in: DVector<f64>,
    j_eq: DMatrix<f64>,
    j_in: DMatrix<f64>,
}

/// Inequality rows: general constraints followed by finite lower and upper bounds.
struct BoundRows {
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
}

impl BoundRows {
    fn new(lb: &[f64], ub: &[f64]) -> Self {
        let lower = lb.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| (i, v)).collect();
        let upper = ub.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| (i, v)).collect();
        Self { lower, upper }
    }

    fn count(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    fn values(&self, c_in: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mut out = Vec::with_capacity(c_in.len() + self.count());
        out.extend(c_in.iter().copied());
        out.extend(self.lower.iter().map(|&(i, b)| z[i] - b));
        out.extend(self.upper.iter().map(|&(i, b)| b - z[i]));
        DVector::from_vec(out)
    }

    fn jacobian(&self, j_in: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = j_in.shape();
        let mut a = DMatrix::zeros(m + self.count(), n);
        a.rows_mut(0, m).copy_from(j_in);
        for (k, &(i, _)) in self.lower.iter().enumerate() {
            a[(m + k, i)] = 1.0;
        }
        let off = m + self.lower.len();
        for (k, &(i, _)) in self.upper.iter().enumerate() {
            a[(off + k, i)] = -1.0;
        }
        a
    }
}

fn violation(c_eq: &DVector<f64>, g_all: &DVector<f64>) -> (f64, f64) {
    let l1 = c_eq.iter().map(|v| v.abs()).sum::<f64>() + g_all.iter().map(|v| (-v).max(0.0)).sum::<f64>();
    let linf = c_eq.iter().map(|v| v.abs()).chain(g_all.iter().map(|v| (-v).max(0.0))).fold(0.0, f64::max);
    (l1, linf)
}

fn evaluate<N: Nlp + ?Sized>(nlp: &N, z: DVector<f64>) -> Result<Point> {
    let (n, me, mi) = (nlp.num_vars(), nlp.num_eq(), nlp.num_ineq());
    let f = nlp.objective(z.as_slice())?;
    let grad = DVector::from_vec(nlp.gradient(z.as_slice())?);
    let mut c_eq = DVector::zeros(me);
    let mut c_in = DVector::zeros(mi);
    nlp.constraints(z.as_slice(), c_eq.as_mut_slice(), c_in.as_mut_slice())?;
    let mut j_eq = DMatrix::zeros(me, n);
    let mut j_in = DMatrix::zeros(mi, n);
    nlp.jacobians(z.as_slice(), &mut j_eq, &mut j_in)?;
    Ok(Point { z, f, grad, c_eq, c_in, j_eq, j_in })
}

fn finite(p: &Point) -> bool {
    p.f.is_finite()
        && p.grad.iter().all(|v| v.is_finite())
        && p.c_eq.iter().all(|v| v.is_finite())
        && p.c_in.iter().all(|v| v.is_finite())
}

fn merit_at<N: Nlp + ?Sized>(nlp: &N, rows: &BoundRows, z: &DVector<f64>, penalty: f64) -> f64 {
    let Ok(f) = nlp.objective(z.as_slice()) else {
        return f64::INFINITY;
    };
    let mut c_eq = DVector::zeros(nlp.num_eq());
    let mut c_in = DVector::zeros(nlp.num_ineq());
    if nlp.constraints(z.as_slice(), c_eq.as_mut_slice(), c_in.as_mut_slice()).is_err() {
        return f64::INFINITY;
    }
    let (l1, _) = violation(&c_eq, &rows.values(&c_in, z));
    let m = f + penalty * l1;
    if m.is_finite() {
        m
    } else {
        f64::INFINITY
    }
}

struct Kkt {
    stationarity: f64,
    complementarity: f64,
    violation: f64,
}

fn kkt(p: &Point, a_all: &DMatrix<f64>, g_all: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> Kkt {
    let grad_l = &p.grad - p.j_eq.transpose() * lambda - a_all.transpose() * mu;
    let complementarity = mu.iter().zip(g_all.iter()).map(|(m, g)| (m * g).abs()).fold(0.0, f64::max);
    Kkt {
        stationarity: grad_l.amax(),
        complementarity,
        violation: violation(&p.c_eq, g_all).1,
    }
}

fn seed_hessian<N: Nlp + ?Sized>(nlp: &N, cfg: &SolverConfig) -> DMatrix<f64> {
    let n = nlp.num_vars();
    let mut h = nlp.objective_hessian().unwrap_or_else(|| DMatrix::identity(n, n));
    for i in 0..n {
        if h[(i, i)] < cfg.hessian_floor {
            h[(i, i)] = cfg.hessian_floor.max(1e-4);
        }
    }
    h
}

fn damped_bfgs(h: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let hs = &*h * s;
    let shs = s.dot(&hs);
    if !(shs > 1e-16) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * shs { 1.0 } else { 0.8 * shs / (shs - sy) };
    let r = theta * y + (1.0 - theta) * &hs;
    let sr = s.dot(&r);
    if !(sr > 1e-16) {
        return;
    }
    h.ger(1.0 / sr, &r, &r, 1.0);
    h.ger(-1.0 / shs, &hs, &hs, 1.0);
}

/// Solves `nlp` from `z0`. The result is deterministic for fixed inputs.
pub fn solve<N: Nlp + ?Sized>(nlp: &N, z0: &[f64], cfg: &SolverConfig) -> Result<SolveResult> {
    let start = Instant::now();
    let n = nlp.num_vars();
    check_dim("initial guess", n, z0.len())?;
    cfg.validate()?;
    let (me, mi) = (nlp.num_eq(), nlp.num_ineq());
    let (lb, ub) = nlp.bounds();
    let rows = BoundRows::new(&lb, &ub);
    let m_all = mi + rows.count();

    let z_init = DVector::from_fn(n, |i, _| z0[i].clamp(lb[i], ub[i]));

    let failure = |z: Vec<f64>, iterations: usize| SolveResult {
        z,
        status: SolveStatus::NumericFailure,
        objective: f64::NAN,
        kkt_residual: f64::INFINITY,
        stationarity: f64::INFINITY,
        complementarity: f64::INFINITY,
        constraint_violation: f64::INFINITY,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        lambda: vec![0.0; me],
        mu: vec![0.0; mi],
        mu_lower: vec![0.0; n],
        mu_upper: vec![0.0; n],
        merit_log: Vec::new(),
    };

    let mut point = match evaluate(nlp, z_init.clone()) {
        Ok(p) if finite(&p) => p,
        _ => return Ok(failure(z_init.as_slice().to_vec(), 0)),
    };

    let seed = seed_hessian(nlp, cfg);
    let mut hess = seed.clone();
    let mut penalty = cfg.penalty_init;
    let mut lambda = DVector::zeros(me);
    let mut mu = DVector::zeros(m_all);
    let mut merit_log = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut stalls = 0;

    let mut a_all = rows.jacobian(&point.j_in);
    let mut g_all = rows.values(&point.c_in, &point.z);

    loop {
        let check = kkt(&point, &a_all, &g_all, &lambda, &mu);
        if check.violation <= cfg.constraint_tol
            && check.stationarity <= cfg.kkt_tol
            && check.complementarity <= cfg.kkt_tol
        {
            status = SolveStatus::Optimal;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        // QP subproblem, raising the penalty while the linearization stays inconsistent
        let neg_c_eq = -&point.c_eq;
        let neg_g = -&g_all;
        let mut sol = None;
        for attempt in 0..2 {
            match qp::solve(&hess, &point.grad, &point.j_eq, &neg_c_eq, &a_all, &neg_g, penalty) {
                Ok(s) => {
                    sol = Some(s);
                    break;
                }
                Err(QpError::NotConvex) if attempt == 0 => hess = seed.clone(),
                Err(_) => break,
            }
        }
        let Some(mut qp_sol) = sol else {
            status = SolveStatus::NumericFailure;
            break;
        };
        let lin_violation = |d: &DVector<f64>| violation(&(&point.c_eq + &point.j_eq * d), &(&g_all + &a_all * d)).0;
        let mut lin_l1 = lin_violation(&qp_sol.d);
        // scan larger penalties: take the first that makes the linearization
        // consistent, otherwise the best one if it cuts the violation by 10%
        if lin_l1 > cfg.constraint_tol {
            let mut best: Option<(f64, qp::QpSolution, f64)> = None;
            let mut trial = penalty;
            while trial < cfg.penalty_max {
                trial = (trial * cfg.penalty_factor).min(cfg.penalty_max);
                let Ok(s) = qp::solve(&hess, &point.grad, &point.j_eq, &neg_c_eq, &a_all, &neg_g, trial) else {
                    break;
                };
                let l1 = lin_violation(&s.d);
                let done = l1 <= cfg.constraint_tol;
                if best.as_ref().is_none_or(|b| l1 < b.2) {
                    best = Some((trial, s, l1));
                }
                if done {
                    break;
                }
            }
            if let Some((p, s, l1)) = best {
                if l1 <= cfg.constraint_tol || l1 < 0.9 * lin_l1 {
                    penalty = p;
                    qp_sol = s;
                    lin_l1 = l1;
                }
            }
        }
        let max_mult = qp_sol.lambda.amax().max(qp_sol.mu.amax());
        while penalty < 1.1 * max_mult && penalty < cfg.penalty_max {
            penalty = (penalty * cfg.penalty_factor).min(cfg.penalty_max);
        }

        let d = &qp_sol.d;
        let (viol_l1, viol_inf) = violation(&point.c_eq, &g_all);
        let slope = point.grad.dot(d) - penalty * (viol_l1 - lin_l1);
        let merit0 = point.f + penalty * viol_l1;
        let elastic = lin_l1 > cfg.constraint_tol;

        let d_norm = d.amax();
        let tiny = if elastic { 1e-9 } else { 1e-14 };
        if d_norm <= tiny * (1.0 + point.z.amax()) {
            lambda = qp_sol.lambda;
            mu = qp_sol.mu;
            status = if viol_inf <= cfg.constraint_tol {
                let check = kkt(&point, &a_all, &g_all, &lambda, &mu);
                if check.stationarity <= cfg.kkt_tol && check.complementarity <= cfg.kkt_tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Acceptable
                }
            } else {
                SolveStatus::InfeasibleStationary
            };
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        if slope < 0.0 {
            while alpha >= cfg.min_step {
                let trial = &point.z + alpha * d;
                let m = merit_at(nlp, &rows, &trial, penalty);
                if m <= merit0 + cfg.armijo * alpha * slope {
                    accepted = Some((trial, m));
                    break;
                }
                alpha *= cfg.backtrack;
            }
        }

        let Some((z_new, merit_new)) = accepted else {
            stalls += 1;
            if stalls == 1 && hess != seed {
                hess = seed.clone();
                continue;
            }
            lambda = qp_sol.lambda;
            mu = qp_sol.mu;
            status = if viol_inf <= cfg.constraint_tol {
                // steps below rounding of the merit can still end at a KKT point
                let check = kkt(&point, &a_all, &g_all, &lambda, &mu);
                if check.stationarity <= cfg.kkt_tol && check.complementarity <= cfg.kkt_tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Acceptable
                }
            } else if elastic {
                SolveStatus::InfeasibleStationary
            } else {
                SolveStatus::NumericFailure
            };
            break;
        };
        stalls = 0;
        merit_log.push((merit0, merit_new));

        let next = match evaluate(nlp, z_new) {
            Ok(p) if finite(&p) => p,
            _ => {
                status = SolveStatus::NumericFailure;
                break;
            }
        };
        let a_next = rows.jacobian(&next.j_in);
        let g_next = rows.values(&next.c_in, &next.z);

        lambda = qp_sol.lambda;
        mu = qp_sol.mu;
        if cfg.hessian == HessianMode::Bfgs {
            let s = &next.z - &point.z;
            let grad_l_new = &next.grad - next.j_eq.transpose() * &lambda - a_next.transpose() * &mu;
            let grad_l_old = &point.grad - point.j_eq.transpose() * &lambda - a_all.transpose() * &mu;
            damped_bfgs(&mut hess, &s, &(grad_l_new - grad_l_old));
        }
        point = next;
        a_all = a_next;
        g_all = g_next;
    }

    let check = kkt(&point, &a_all, &g_all, &lambda, &mu);
    if status == SolveStatus::Optimal && !(check.violation <= cfg.constraint_tol) {
        status = SolveStatus::Acceptable;
    }
    let mut mu_lower = vec![0.0; n];
    let mut mu_upper = vec![0.0; n];
    for (k, &(i, _)) in rows.lower.iter().enumerate() {
        mu_lower[i] = mu[mi + k];
    }
    for (k, &(i, _)) in rows.upper.iter().enumerate() {
        mu_upper[i] = mu[mi + rows.lower.len() + k];
    }
    Ok(SolveResult {
        z: point.z.as_slice().to_vec(),
        status,
        objective: point.f,
        kkt_residual: check.stationarity.max(check.complementarity),
        stationarity: check.stationarity,
        complementarity: check.complementarity,
        constraint_violation: check.violation,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        lambda: lambda.as_slice().to_vec(),
        mu: mu.rows(0, mi).into_owned().as_slice().to_vec(),
        mu_lower,
        mu_upper,
        merit_log,
    })
}
