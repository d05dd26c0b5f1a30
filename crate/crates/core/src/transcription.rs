//! Direct multiple-shooting transcription of the finite-horizon safety OCP.
//!
//! Decision vector `z = [x₁..x_N, u₀..u_{N−1}]`; `x₀` is the measured state.
//! Dynamics defects `x_{k+1} − (x_k + δt·f(x_k, u_k)) = 0` are the equality
//! rows and the selected safety condition gives the inequality rows.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::barrier::{cbf_residual_unchecked, BarrierSpec};
use crate::density::{cdf_residual_unchecked, DensityField};
use crate::dynamics::{euler_step, Dynamics};
use crate::error::{check_dim, Error, Result};
use crate::geometry::Obstacle;
use crate::scalar::all_finite;
use crate::solver::Nlp;

pub type Model = Arc<dyn Dynamics<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyMode {
    Cdf,
    Cbf,
    Euclidean,
    None,
}

impl SafetyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cdf => "cdf",
            Self::Cbf => "cbf",
            Self::Euclidean => "euclidean",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Safety {
    Cdf(DensityField<f64>),
    Cbf(BarrierSpec<f64>),
    /// Plain `h_j(x_k) ≥ 0` on the predicted states.
    Euclidean(Vec<Obstacle<f64>>),
    None,
}

impl Safety {
    pub fn mode(&self) -> SafetyMode {
        match self {
            Self::Cdf(_) => SafetyMode::Cdf,
            Self::Cbf(_) => SafetyMode::Cbf,
            Self::Euclidean(_) => SafetyMode::Euclidean,
            Self::None => SafetyMode::None,
        }
    }

    pub fn obstacles(&self) -> &[Obstacle<f64>] {
        match self {
            Self::Cdf(f) => &f.obstacles,
            Self::Cbf(b) => &b.obstacles,
            Self::Euclidean(o) => o,
            Self::None => &[],
        }
    }

    /// Inequality rows per stage.
    pub fn rows_per_stage(&self) -> usize {
        match self {
            Self::Cdf(_) => 1,
            Self::Cbf(b) => b.obstacles.len(),
            Self::Euclidean(o) => o.len(),
            Self::None => 0,
        }
    }
}

/// Diagonal weights of `Σ (x−x_T)ᵀQ(x−x_T) + (u−u_ref)ᵀR(u−u_ref)` plus the
/// terminal `(x_N−x_T)ᵀP(x_N−x_T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.horizon * (self.state_dim + self.input_dim)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of `x_k`, `1 ≤ k ≤ N`.
    pub fn x(&self, k: usize) -> usize {
        (k - 1) * self.state_dim
    }

    /// Offset of `u_k`, `0 ≤ k < N`.
    pub fn u(&self, k: usize) -> usize {
        self.horizon * self.state_dim + k * self.input_dim
    }
}

#[derive(Clone)]
pub struct OcpProblem {
    pub model: Model,
    pub horizon: usize,
    pub dt: f64,
    pub cost: CostWeights,
    pub target: Vec<f64>,
    /// Input the cost pulls towards; the model's hold input at the target.
    pub input_ref: Vec<f64>,
    pub safety: Safety,
    pub input_bounds: Vec<(f64, f64)>,
    pub state_bounds: Option<Vec<(f64, f64)>>,
}

impl std::fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("model", &self.model.name())
            .field("horizon", &self.horizon)
            .field("dt", &self.dt)
            .field("mode", &self.safety.mode())
            .finish_non_exhaustive()
    }
}

impl OcpProblem {
    /// Problem with the model's input bounds, `u_ref = hold_input(x_T)` and
    /// no state box.
    pub fn new(model: Model, horizon: usize, dt: f64, cost: CostWeights, target: Vec<f64>, safety: Safety) -> Result<Self> {
        let input_ref = model.hold_input(&target);
        let input_bounds = model.input_bounds();
        let ocp = Self { model, horizon, dt, cost, target, input_ref, safety, input_bounds, state_bounds: None };
        ocp.validate()?;
        Ok(ocp)
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.model.state_dim(), self.model.input_dim());
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        check_dim("target", nx, self.target.len())?;
        check_dim("input reference", nu, self.input_ref.len())?;
        check_dim("Q diagonal", nx, self.cost.q.len())?;
        check_dim("P diagonal", nx, self.cost.p.len())?;
        check_dim("R diagonal", nu, self.cost.r.len())?;
        check_dim("input bounds", nu, self.input_bounds.len())?;
        if let Some(b) = &self.state_bounds {
            check_dim("state bounds", nx, b.len())?;
        }
        if self.cost.q.iter().chain(&self.cost.p).any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("Q and P weights must be finite and non-negative".into()));
        }
        if self.cost.r.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("R weights must be finite and positive".into()));
        }
        if !all_finite(&self.target) || !all_finite(&self.input_ref) {
            return Err(Error::NonFinite("target"));
        }
        for &(lo, hi) in self.input_bounds.iter().chain(self.state_bounds.iter().flatten()) {
            if !(lo <= hi) {
                return Err(Error::InvalidParameter(format!("bound [{lo}, {hi}] is empty")));
            }
        }
        match &self.safety {
            Safety::Cdf(field) => check_dim("density target", nx, field.dim())?,
            Safety::Cbf(_) | Safety::Euclidean(_) | Safety::None => {}
        }
        let pd = self.model.position_dim();
        if let Some(o) = self.safety.obstacles().iter().find(|o| o.dim() > pd) {
            return Err(Error::Dimension { what: "obstacle position", expected: pd, got: o.dim() });
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { horizon: self.horizon, state_dim: self.model.state_dim(), input_dim: self.model.input_dim() }
    }

    pub fn num_ineq(&self) -> usize {
        self.horizon * self.safety.rows_per_stage()
    }

    /// Instantiates the NLP at the measured state.
    pub fn build(&self, x_now: &[f64]) -> Result<OcpNlp<'_>> {
        check_dim("current state", self.model.state_dim(), x_now.len())?;
        if !all_finite(x_now) {
            return Err(Error::NonFinite("current state"));
        }
        // density rows are O(δt·ρ); normalize them by the value at the current state
        let cdf_scale = match &self.safety {
            Safety::Cdf(field) => {
                let rho = field.rho_unchecked(x_now);
                1.0 / (self.dt * rho.max(1e-8))
            }
            _ => 1.0,
        };
        // With an Euler prediction the first-stage rows are fixed by the measured
        // state for position-based safety functions; plant mismatch can leave them
        // slightly violated, which no input can repair. Relax them by the violation
        // seen under the reference input.
        let mut stage0_relax = vec![0.0; self.safety.rows_per_stage()];
        self.stage_safety_scaled(x_now, &self.input_ref, cdf_scale, &mut stage0_relax);
        for r in &mut stage0_relax {
            *r = if r.is_finite() { (-*r).max(0.0) } else { 0.0 };
        }
        Ok(OcpNlp { ocp: self, x_now: x_now.to_vec(), cdf_scale, stage0_relax })
    }

    /// Safety rows of stage `(x, u)` written into `out`.
    pub fn stage_safety(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.stage_safety_scaled(x, u, 1.0, out)
    }

    fn stage_safety_scaled(&self, x: &[f64], u: &[f64], cdf_scale: f64, out: &mut [f64]) {
        match &self.safety {
            Safety::Cdf(field) => {
                // the constraint is not imposed inside the excluded target ball
                out[0] = if field.in_target_ball(x) {
                    1.0
                } else {
                    cdf_scale * cdf_residual_unchecked(field, &*self.model, x, u, self.dt)
                };
            }
            Safety::Cbf(spec) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = cbf_residual_unchecked(spec, &*self.model, j, x, u, self.dt);
                }
            }
            Safety::Euclidean(obs) => {
                let next = euler_step(&*self.model, x, u, self.dt);
                for (o, ob) in out.iter_mut().zip(obs) {
                    *o = ob.h_unchecked(&next[..ob.dim()]);
                }
            }
            Safety::None => {}
        }
    }

    /// Cold-start guess: the reference input held over the horizon and the
    /// states it produces. A straight line to the target would cut through
    /// obstacles, where the linearized safety rows degenerate.
    pub fn cold_start(&self, x_now: &[f64]) -> Vec<f64> {
        self.rollout(x_now, &vec![self.input_ref.clone(); self.horizon])
    }

    /// States and inputs obtained by rolling `inputs` through the Euler model.
    pub fn rollout(&self, x_now: &[f64], inputs: &[Vec<f64>]) -> Vec<f64> {
        let lay = self.layout();
        let mut z = vec![0.0; lay.len()];
        let mut x = x_now.to_vec();
        for (k, u) in inputs.iter().enumerate().take(self.horizon) {
            x = euler_step(&*self.model, &x, u, self.dt);
            z[lay.x(k + 1)..lay.x(k + 1) + lay.state_dim].copy_from_slice(&x);
            z[lay.u(k)..lay.u(k) + lay.input_dim].copy_from_slice(u);
        }
        z
    }
}

/// The OCP instantiated at a measured state.
pub struct OcpNlp<'a> {
    ocp: &'a OcpProblem,
    x_now: Vec<f64>,
    cdf_scale: f64,
    stage0_relax: Vec<f64>,
}

impl OcpNlp<'_> {
    pub fn layout(&self) -> Layout {
        self.ocp.layout()
    }

    pub fn x_now(&self) -> &[f64] {
        &self.x_now
    }

    /// Positive factor applied to the density rows.
    pub fn cdf_scale(&self) -> f64 {
        self.cdf_scale
    }

    /// Amount added to each first-stage safety row.
    pub fn stage0_relax(&self) -> &[f64] {
        &self.stage0_relax
    }

    fn state<'z>(&'z self, z: &'z [f64], k: usize) -> &'z [f64] {
        let lay = self.layout();
        if k == 0 {
            &self.x_now
        } else {
            &z[lay.x(k)..lay.x(k) + lay.state_dim]
        }
    }

    fn input<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        let lay = self.layout();
        &z[lay.u(k)..lay.u(k) + lay.input_dim]
    }

    fn stage_ineq(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.ocp.stage_safety_scaled(x, u, self.cdf_scale, out)
    }

    /// Unscaled safety rows at `z`, stage-major.
    pub fn safety_values(&self, z: &[f64]) -> Vec<f64> {
        let m = self.ocp.safety.rows_per_stage();
        let mut out = vec![0.0; self.ocp.num_ineq()];
        for k in 0..self.ocp.horizon {
            self.ocp.stage_safety(self.state(z, k), self.input(z, k), &mut out[k * m..(k + 1) * m]);
        }
        out
    }
}

fn weighted_sq(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a.iter().zip(b)).map(|(w, (a, b))| w * (a - b) * (a - b)).sum()
}

impl Nlp for OcpNlp<'_> {
    fn num_vars(&self) -> usize {
        self.layout().len()
    }

    fn num_eq(&self) -> usize {
        self.ocp.horizon * self.ocp.model.state_dim()
    }

    fn num_ineq(&self) -> usize {
        self.ocp.num_ineq()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lay = self.layout();
        let mut lo = vec![f64::NEG_INFINITY; lay.len()];
        let mut hi = vec![f64::INFINITY; lay.len()];
        for k in 0..lay.horizon {
            for (i, &(l, h)) in self.ocp.input_bounds.iter().enumerate() {
                lo[lay.u(k) + i] = l;
                hi[lay.u(k) + i] = h;
            }
            if let Some(sb) = &self.ocp.state_bounds {
                for (i, &(l, h)) in sb.iter().enumerate() {
                    lo[lay.x(k + 1) + i] = l;
                    hi[lay.x(k + 1) + i] = h;
                }
            }
        }
        (lo, hi)
    }

    fn objective(&self, z: &[f64]) -> Result<f64> {
        check_dim("decision vector", self.num_vars(), z.len())?;
        let c = &self.ocp.cost;
        let xt = &self.ocp.target;
        let mut f = 0.0;
        for k in 0..self.ocp.horizon {
            f += weighted_sq(&c.q, self.state(z, k), xt);
            f += weighted_sq(&c.r, self.input(z, k), &self.ocp.input_ref);
        }
        f += weighted_sq(&c.p, self.state(z, self.ocp.horizon), xt);
        if !f.is_finite() {
            return Err(Error::Numeric { stage: None, msg: "objective is not finite".into() });
        }
        Ok(f)
    }

    fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let lay = self.layout();
        let c = &self.ocp.cost;
        let xt = &self.ocp.target;
        let mut g = vec![0.0; lay.len()];
        for k in 1..=lay.horizon {
            let w = if k == lay.horizon { &c.p } else { &c.q };
            for i in 0..lay.state_dim {
                g[lay.x(k) + i] = 2.0 * w[i] * (z[lay.x(k) + i] - xt[i]);
            }
        }
        for k in 0..lay.horizon {
            for i in 0..lay.input_dim {
                g[lay.u(k) + i] = 2.0 * c.r[i] * (z[lay.u(k) + i] - self.ocp.input_ref[i]);
            }
        }
        Ok(g)
    }

    fn objective_hessian(&self) -> Option<DMatrix<f64>> {
        let lay = self.layout();
        let c = &self.ocp.cost;
        let mut d = vec![0.0; lay.len()];
        for k in 1..=lay.horizon {
            let w = if k == lay.horizon { &c.p } else { &c.q };
            for i in 0..lay.state_dim {
                d[lay.x(k) + i] = 2.0 * w[i];
            }
        }
        for k in 0..lay.horizon {
            for i in 0..lay.input_dim {
                d[lay.u(k) + i] = 2.0 * c.r[i];
            }
        }
        Some(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)))
    }

    fn constraints(&self, z: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> Result<()> {
        check_dim("decision vector", self.num_vars(), z.len())?;
        let lay = self.layout();
        let (nx, m) = (lay.state_dim, self.ocp.safety.rows_per_stage());
        for k in 0..lay.horizon {
            let (x, u) = (self.state(z, k), self.input(z, k));
            let next = euler_step(&*self.ocp.model, x, u, self.ocp.dt);
            let x_next = self.state(z, k + 1);
            for i in 0..nx {
                eq[k * nx + i] = x_next[i] - next[i];
            }
            let rows = &mut ineq[k * m..(k + 1) * m];
            self.stage_ineq(x, u, rows);
            if k == 0 {
                rows.iter_mut().zip(&self.stage0_relax).for_each(|(r, s)| *r += s);
            }
            if !all_finite(&eq[k * nx..(k + 1) * nx]) || !all_finite(rows) {
                return Err(Error::Numeric { stage: Some(k), msg: "non-finite constraint value".into() });
            }
        }
        Ok(())
    }

    /// Forward differences restricted to the stage band: column `x_k` only
    /// touches defects `k−1` (identity) and `k`, and stage `k` safety rows;
    /// column `u_k` only defect `k` and stage `k` safety rows.
    fn jacobians(&self, z: &[f64], eq_jac: &mut DMatrix<f64>, in_jac: &mut DMatrix<f64>) -> Result<()> {
        check_dim("decision vector", self.num_vars(), z.len())?;
        let lay = self.layout();
        let (nx, nu, m) = (lay.state_dim, lay.input_dim, self.ocp.safety.rows_per_stage());
        let model = &*self.ocp.model;
        let dt = self.ocp.dt;
        eq_jac.fill(0.0);
        in_jac.fill(0.0);
        let mut g0 = vec![0.0; m];
        let mut g1 = vec![0.0; m];
        for k in 0..lay.horizon {
            let mut x = self.state(z, k).to_vec();
            let mut u = self.input(z, k).to_vec();
            let f0 = euler_step(model, &x, &u, dt);
            self.stage_ineq(&x, &u, &mut g0);
            if k > 0 {
                for i in 0..nx {
                    eq_jac[((k - 1) * nx + i, lay.x(k) + i)] = 1.0;
                }
                for j in 0..nx {
                    let h = 1e-7 * x[j].abs().max(1.0);
                    let orig = x[j];
                    x[j] = orig + h;
                    let f1 = euler_step(model, &x, &u, dt);
                    self.stage_ineq(&x, &u, &mut g1);
                    x[j] = orig;
                    let col = lay.x(k) + j;
                    for i in 0..nx {
                        eq_jac[(k * nx + i, col)] = -(f1[i] - f0[i]) / h;
                    }
                    for r in 0..m {
                        in_jac[(k * m + r, col)] = (g1[r] - g0[r]) / h;
                    }
                }
            }
            for j in 0..nu {
                let h = 1e-7 * u[j].abs().max(1.0);
                let orig = u[j];
                u[j] = orig + h;
                let f1 = euler_step(model, &x, &u, dt);
                self.stage_ineq(&x, &u, &mut g1);
                u[j] = orig;
                let col = lay.u(k) + j;
                for i in 0..nx {
                    eq_jac[(k * nx + i, col)] = -(f1[i] - f0[i]) / h;
                }
                for r in 0..m {
                    in_jac[(k * m + r, col)] = (g1[r] - g0[r]) / h;
                }
            }
        }
        for i in 0..nx {
            eq_jac[((lay.horizon - 1) * nx + i, lay.x(lay.horizon) + i)] = 1.0;
        }
        if eq_jac.iter().chain(in_jac.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric { stage: None, msg: "non-finite Jacobian entry".into() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Unicycle;
    use crate::solver::nlp::dense_forward_jacobians;
    use proptest::prelude::*;

    fn unicycle_cost() -> CostWeights {
        CostWeights { q: vec![10.0, 10.0, 1.0, 1.0], r: vec![1.0, 1.0], p: vec![100.0, 100.0, 10.0, 10.0] }
    }

    fn circle() -> Obstacle<f64> {
        Obstacle::circle([5.0, 0.0], 1.0, 2.0).unwrap()
    }

    fn unicycle_ocp(horizon: usize, safety: Safety) -> OcpProblem {
        OcpProblem::new(Arc::new(Unicycle), horizon, 0.1, unicycle_cost(), vec![10.0, 0.0, 0.0, 0.0], safety).unwrap()
    }

    fn cdf_safety() -> Safety {
        let field = DensityField::new(vec![circle()], 0.1, vec![10.0, 0.0, 0.0, 0.0], 0.01).unwrap().with_v_dims(2).unwrap();
        Safety::Cdf(field)
    }

    #[test]
    fn row_counts() {
        let ocp = unicycle_ocp(1, Safety::None);
        let nlp = ocp.build(&[0.0; 4]).unwrap();
        assert_eq!((nlp.num_vars(), nlp.num_eq(), nlp.num_ineq()), (6, 4, 0));

        let ocp = unicycle_ocp(10, cdf_safety());
        let nlp = ocp.build(&[0.0; 4]).unwrap();
        assert_eq!((nlp.num_vars(), nlp.num_eq(), nlp.num_ineq()), (60, 40, 10));

        let obstacles = vec![circle(), Obstacle::circle([2.0, 3.0], 0.5, 1.0).unwrap()];
        let ocp = unicycle_ocp(10, Safety::Cbf(BarrierSpec::new(obstacles, 0.3).unwrap()));
        assert_eq!(ocp.build(&[0.0; 4]).unwrap().num_ineq(), 20);
    }

    #[test]
    fn rollout_has_zero_defects() {
        let ocp = unicycle_ocp(10, cdf_safety());
        let x0 = [0.0, 0.5, 1.0, 0.2];
        let inputs: Vec<Vec<f64>> = (0..10).map(|k| vec![0.3 * k as f64, -0.2]).collect();
        let z = ocp.rollout(&x0, &inputs);
        let nlp = ocp.build(&x0).unwrap();
        let mut eq = vec![0.0; 40];
        let mut ineq = vec![0.0; 10];
        nlp.constraints(&z, &mut eq, &mut ineq).unwrap();
        assert!(eq.iter().all(|e| e.abs() <= 1e-14), "{eq:?}");
    }

    #[test]
    fn objective_vanishes_at_rest_on_target() {
        let ocp = unicycle_ocp(10, cdf_safety());
        let xt = ocp.target.clone();
        let z = ocp.rollout(&xt, &vec![vec![0.0, 0.0]; 10]);
        assert_eq!(ocp.build(&xt).unwrap().objective(&z).unwrap(), 0.0);
    }

    #[test]
    fn gradient_and_hessian_match_objective() {
        let ocp = unicycle_ocp(3, Safety::None);
        let nlp = ocp.build(&[0.0, 1.0, 0.5, 0.1]).unwrap();
        let z: Vec<f64> = (0..nlp.num_vars()).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = nlp.gradient(&z).unwrap();
        let h = nlp.objective_hessian().unwrap();
        for i in 0..z.len() {
            let step = 1e-5;
            let mut zp = z.clone();
            zp[i] += step;
            let mut zm = z.clone();
            zm[i] -= step;
            let fd = (nlp.objective(&zp).unwrap() - nlp.objective(&zm).unwrap()) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0));
            let gp = nlp.gradient(&zp).unwrap();
            assert!(((gp[i] - g[i]) / step - h[(i, i)]).abs() < 1e-6 * h[(i, i)].max(1.0));
        }
    }

    fn jacobians_of(nlp: &OcpNlp<'_>, z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut je = DMatrix::zeros(nlp.num_eq(), nlp.num_vars());
        let mut ji = DMatrix::zeros(nlp.num_ineq(), nlp.num_vars());
        nlp.jacobians(z, &mut je, &mut ji).unwrap();
        (je, ji)
    }

    #[test]
    fn banded_jacobian_matches_dense_and_directional_oracle() {
        let ocp = unicycle_ocp(5, cdf_safety());
        let x0 = [3.0, 0.8, 1.0, 0.1];
        let inputs: Vec<Vec<f64>> = (0..5).map(|k| vec![0.5 - 0.1 * k as f64, 0.1]).collect();
        let z = ocp.rollout(&x0, &inputs);
        let nlp = ocp.build(&x0).unwrap();
        let (je, ji) = jacobians_of(&nlp, &z);
        let mut de = DMatrix::zeros(nlp.num_eq(), nlp.num_vars());
        let mut di = DMatrix::zeros(nlp.num_ineq(), nlp.num_vars());
        dense_forward_jacobians(&nlp, &z, &mut de, &mut di).unwrap();
        assert!((&je - &de).amax() < 1e-6, "{}", (&je - &de).amax());
        assert!((&ji - &di).amax() < 1e-6 * di.amax().max(1.0));

        // central-difference directional derivative with Richardson extrapolation
        let dir: Vec<f64> = (0..z.len()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.1).collect();
        let eval = |t: f64| {
            let zt: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let mut eq = vec![0.0; nlp.num_eq()];
            let mut ineq = vec![0.0; nlp.num_ineq()];
            nlp.constraints(&zt, &mut eq, &mut ineq).unwrap();
            (eq, ineq)
        };
        let central = |t: f64| {
            let (ep, ip) = eval(t);
            let (em, im) = eval(-t);
            let e: Vec<f64> = ep.iter().zip(&em).map(|(a, b)| (a - b) / (2.0 * t)).collect();
            let i: Vec<f64> = ip.iter().zip(&im).map(|(a, b)| (a - b) / (2.0 * t)).collect();
            (e, i)
        };
        let (e1, i1) = central(1e-3);
        let (e2, i2) = central(5e-4);
        let d = nalgebra::DVector::from_vec(dir.clone());
        let (jd_e, jd_i) = (&je * &d, &ji * &d);
        for (r, (a, b)) in e1.iter().zip(&e2).enumerate() {
            let oracle = (4.0 * b - a) / 3.0;
            assert!((jd_e[r] - oracle).abs() <= 1e-5 * oracle.abs().max(1.0), "eq row {r}");
        }
        for (r, (a, b)) in i1.iter().zip(&i2).enumerate() {
            let oracle = (4.0 * b - a) / 3.0;
            assert!((jd_i[r] - oracle).abs() <= 1e-5 * oracle.abs().max(1.0), "ineq row {r}: {} vs {oracle}", jd_i[r]);
        }
    }

    #[test]
    fn equality_jacobian_is_stage_banded() {
        let ocp = unicycle_ocp(6, cdf_safety());
        let x0 = [1.0, -0.5, 0.7, 0.3];
        let z: Vec<f64> = (0..ocp.layout().len()).map(|i| (i as f64).cos()).collect();
        let nlp = ocp.build(&x0).unwrap();
        let (je, ji) = jacobians_of(&nlp, &z);
        let lay = ocp.layout();
        let stage_of = |col: usize| if col < lay.horizon * lay.state_dim { (col / lay.state_dim + 1, true) } else { ((col - lay.horizon * lay.state_dim) / lay.input_dim, false) };
        for r in 0..je.nrows() {
            let defect = r / lay.state_dim;
            for c in 0..je.ncols() {
                if je[(r, c)] != 0.0 {
                    let (k, is_x) = stage_of(c);
                    let ok = if is_x { k == defect || k == defect + 1 } else { k == defect };
                    assert!(ok, "row {r} col {c}");
                }
            }
        }
        for r in 0..ji.nrows() {
            for c in 0..ji.ncols() {
                if ji[(r, c)] != 0.0 {
                    assert_eq!(stage_of(c).0, r, "row {r} col {c}");
                }
            }
        }
    }

    #[test]
    fn non_finite_values_name_the_stage() {
        let ocp = unicycle_ocp(3, Safety::None);
        let nlp = ocp.build(&[0.0; 4]).unwrap();
        let mut z = vec![0.0; nlp.num_vars()];
        let lay = ocp.layout();
        z[lay.u(1)] = f64::INFINITY;
        let mut eq = vec![0.0; 12];
        let err = nlp.constraints(&z, &mut eq, &mut []).unwrap_err();
        assert!(matches!(err, Error::Numeric { stage: Some(1), .. }), "{err:?}");
    }

    #[test]
    fn cdf_row_dropped_inside_target_ball() {
        let ocp = unicycle_ocp(2, cdf_safety());
        let nlp = ocp.build(&[10.0, 0.001, 0.0, 0.0]).unwrap();
        let z = ocp.rollout(&[10.0, 0.001, 0.0, 0.0], &vec![vec![0.0, 0.0]; 2]);
        let mut eq = vec![0.0; 8];
        let mut ineq = vec![0.0; 2];
        nlp.constraints(&z, &mut eq, &mut ineq).unwrap();
        assert_eq!(ineq, vec![1.0, 1.0]);
    }

    #[test]
    fn usage_errors() {
        let bad_r = CostWeights { r: vec![0.0, 1.0], ..unicycle_cost() };
        assert!(OcpProblem::new(Arc::new(Unicycle), 10, 0.1, bad_r, vec![0.0; 4], Safety::None).is_err());
        assert!(OcpProblem::new(Arc::new(Unicycle), 0, 0.1, unicycle_cost(), vec![0.0; 4], Safety::None).is_err());
        let ocp = unicycle_ocp(2, Safety::None);
        assert!(ocp.build(&[0.0; 3]).is_err());
        assert!(ocp.build(&[f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(ocp.build(&[0.0; 4]).unwrap().objective(&[0.0; 3]).is_err());
    }

    #[test]
    fn cold_start_is_a_feasible_rollout() {
        let ocp = unicycle_ocp(4, cdf_safety());
        let x0 = [2.0, 0.0, 1.0, 0.0];
        let z = ocp.cold_start(&x0);
        let lay = ocp.layout();
        assert!((z[lay.x(4)] - 2.4).abs() < 1e-12);
        assert!(z[lay.u(0)..].iter().all(|&u| u == 0.0));
        let mut eq = vec![0.0; 16];
        let mut ineq = vec![0.0; 4];
        ocp.build(&x0).unwrap().constraints(&z, &mut eq, &mut ineq).unwrap();
        assert!(eq.iter().all(|e| *e == 0.0));
    }

    fn shifted(ocp: &OcpProblem, off: [f64; 2]) -> OcpProblem {
        let shift = |s: &Safety| match s {
            Safety::Cdf(f) => {
                let mut g = f.clone();
                g.obstacles = f.obstacles.iter().map(|o| o.translated(&off)).collect();
                g.target[0] += off[0];
                g.target[1] += off[1];
                Safety::Cdf(g)
            }
            Safety::Cbf(b) => Safety::Cbf(BarrierSpec::new(b.obstacles.iter().map(|o| o.translated(&off)).collect(), b.gamma).unwrap()),
            Safety::Euclidean(o) => Safety::Euclidean(o.iter().map(|o| o.translated(&off)).collect()),
            Safety::None => Safety::None,
        };
        let mut out = ocp.clone();
        out.target[0] += off[0];
        out.target[1] += off[1];
        out.safety = shift(&ocp.safety);
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn translation_equivariance(
            ox in -20.0..20.0f64, oy in -20.0..20.0f64,
            px in 0.0..9.0f64, py in -3.0..3.0f64, v in 0.0..2.0f64, th in -1.0..1.0f64,
            a in -2.0..2.0f64, w in -1.0..1.0f64, mode in 0usize..3,
        ) {
            let safety = match mode {
                0 => cdf_safety(),
                1 => Safety::Cbf(BarrierSpec::new(vec![circle()], 0.5).unwrap()),
                _ => Safety::Euclidean(vec![circle()]),
            };
            let ocp = unicycle_ocp(4, safety);
            let moved = shifted(&ocp, [ox, oy]);
            let x0 = [px, py, v, th];
            let x0m = [px + ox, py + oy, v, th];
            let inputs = vec![vec![a, w]; 4];
            let z = ocp.rollout(&x0, &inputs);
            let zm = moved.rollout(&x0m, &inputs);
            let (n1, n2) = (ocp.build(&x0).unwrap(), moved.build(&x0m).unwrap());
            let (f1, f2) = (n1.objective(&z).unwrap(), n2.objective(&zm).unwrap());
            prop_assert!((f1 - f2).abs() <= 1e-9 * f1.abs().max(1.0));
            let (s1, s2) = (n1.safety_values(&z), n2.safety_values(&zm));
            for (a, b) in s1.iter().zip(&s2) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-3), "{} vs {}", a, b);
            }
        }
    }
}
