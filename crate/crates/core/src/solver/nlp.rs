use nalgebra::DMatrix;

use crate::error::Result;

/// Smooth nonlinear program
///
/// ```text
/// min f(z)   s.t.  c_eq(z) = 0,  c_in(z) ≥ 0,  lb ≤ z ≤ ub
/// ```
///
/// Only values are mandatory; derivatives default to finite differences.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Variable bounds; infinite entries are ignored.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.num_vars();
        (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    fn objective(&self, z: &[f64]) -> Result<f64>;

    /// Writes `c_eq(z)` and `c_in(z)`.
    fn constraints(&self, z: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> Result<()>;

    fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut zp = z.to_vec();
        let mut out = vec![0.0; z.len()];
        for i in 0..z.len() {
            let h = 1e-6 * z[i].abs().max(1.0);
            zp[i] = z[i] + h;
            let fp = self.objective(&zp)?;
            zp[i] = z[i] - h;
            let fm = self.objective(&zp)?;
            zp[i] = z[i];
            out[i] = (fp - fm) / (2.0 * h);
        }
        Ok(out)
    }

    /// Constraint Jacobians, forward differences by default.
    fn jacobians(&self, z: &[f64], eq_jac: &mut DMatrix<f64>, in_jac: &mut DMatrix<f64>) -> Result<()> {
        dense_forward_jacobians(self, z, eq_jac, in_jac)
    }

    /// Constant objective Hessian when the objective is quadratic; used to
    /// seed the quasi-Newton approximation.
    fn objective_hessian(&self) -> Option<DMatrix<f64>> {
        None
    }
}

/// Forward-difference Jacobians touching every column.
pub fn dense_forward_jacobians<N: Nlp + ?Sized>(
    nlp: &N,
    z: &[f64],
    eq_jac: &mut DMatrix<f64>,
    in_jac: &mut DMatrix<f64>,
) -> Result<()> {
    let (me, mi) = (nlp.num_eq(), nlp.num_ineq());
    let mut eq0 = vec![0.0; me];
    let mut in0 = vec![0.0; mi];
    nlp.constraints(z, &mut eq0, &mut in0)?;
    let mut eq1 = vec![0.0; me];
    let mut in1 = vec![0.0; mi];
    let mut zp = z.to_vec();
    for j in 0..z.len() {
        let h = 1e-7 * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        nlp.constraints(&zp, &mut eq1, &mut in1)?;
        zp[j] = z[j];
        for i in 0..me {
            eq_jac[(i, j)] = (eq1[i] - eq0[i]) / h;
        }
        for i in 0..mi {
            in_jac[(i, j)] = (in1[i] - in0[i]) / h;
        }
    }
    Ok(())
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Closure-backed program, handy for small standalone problems.
pub struct ClosureNlp {
    pub n: usize,
    pub m_eq: usize,
    pub m_in: usize,
    pub objective: ScalarFn,
    pub gradient: Option<VectorFn>,
    pub eq: Option<VectorFn>,
    pub ineq: Option<VectorFn>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ClosureNlp {
    pub fn unconstrained(n: usize, objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            n,
            m_eq: 0,
            m_in: 0,
            objective: Box::new(objective),
            gradient: None,
            eq: None,
            ineq: None,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Box::new(g));
        self
    }

    pub fn with_eq(mut self, m: usize, c: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.m_eq = m;
        self.eq = Some(Box::new(c));
        self
    }

    pub fn with_ineq(mut self, m: usize, c: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.m_in = m;
        self.ineq = Some(Box::new(c));
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }
}

impl Nlp for ClosureNlp {
    fn num_vars(&self) -> usize {
        self.n
    }
    fn num_eq(&self) -> usize {
        self.m_eq
    }
    fn num_ineq(&self) -> usize {
        self.m_in
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }
    fn objective(&self, z: &[f64]) -> Result<f64> {
        Ok((self.objective)(z))
    }
    fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        match &self.gradient {
            Some(g) => Ok(g(z)),
            None => {
                let mut zp = z.to_vec();
                let mut out = vec![0.0; z.len()];
                for i in 0..z.len() {
                    let h = 1e-6 * z[i].abs().max(1.0);
                    zp[i] = z[i] + h;
                    let fp = (self.objective)(&zp);
                    zp[i] = z[i] - h;
                    let fm = (self.objective)(&zp);
                    zp[i] = z[i];
                    out[i] = (fp - fm) / (2.0 * h);
                }
                Ok(out)
            }
        }
    }
    fn constraints(&self, z: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> Result<()> {
        if let Some(c) = &self.eq {
            eq.copy_from_slice(&c(z));
        }
        if let Some(c) = &self.ineq {
            ineq.copy_from_slice(&c(z));
        }
        Ok(())
    }
}
