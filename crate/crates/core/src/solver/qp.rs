//! Dense convex QP subproblem
//!
//! ```text
//! min ½ dᵀH d + gᵀd   s.t.  A_eq d = b_eq,  A_in d ≥ b_in
//! ```
//!
//! Equalities are eliminated with a null-space basis from a QR factorization
//! of `A_eqᵀ`; the remaining inequalities are handled by a Mehrotra
//! predictor-corrector interior point on an elastic (ℓ1-penalized)
//! reformulation, so the subproblem is always feasible.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub d: DVector<f64>,
    /// Equality multipliers (`H d + g − A_eqᵀλ − A_inᵀμ = 0`).
    pub lambda: DVector<f64>,
    /// Inequality multipliers, `0 ≤ μ ≤ penalty`.
    pub mu: DVector<f64>,
    /// Elastic slack per inequality row; nonzero where the linearization is
    /// inconsistent.
    pub elastic: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    /// Reduced Hessian not positive definite even after regularization.
    NotConvex,
    /// Equality rows are rank deficient.
    RankDeficient,
    NonFinite,
}

const IPM_MAX_ITER: usize = 80;
const IPM_TOL: f64 = 1e-10;

pub fn solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    penalty: f64,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let m_eq = a_eq.nrows();

    // null-space split d = Y p_y + Z p_z
    let (y, z, r) = if m_eq > 0 {
        let qr = a_eq.transpose().qr();
        let mut qt = DMatrix::<f64>::identity(n, n);
        qr.q_tr_mul(&mut qt);
        let q = qt.transpose();
        let r = qr.r();
        let y = q.columns(0, m_eq).into_owned();
        let z = q.columns(m_eq, n - m_eq).into_owned();
        (y, z, Some(r))
    } else {
        (DMatrix::zeros(n, 0), DMatrix::identity(n, n), None)
    };

    let p_y = match &r {
        Some(r) => {
            let scale = r.diagonal().amax();
            if r.diagonal().iter().any(|v| v.abs() <= 1e-12 * scale.max(1.0)) {
                return Err(QpError::RankDeficient);
            }
            // A_eq Y = Rᵀ
            r.transpose().solve_lower_triangular(b_eq).ok_or(QpError::RankDeficient)?
        }
        None => DVector::zeros(0),
    };
    let d_y = &y * &p_y;

    let hz = h * &z;
    let reduced_h = z.transpose() * &hz;
    let reduced_g = z.transpose() * (g + h * &d_y);
    let c = a_in * &z;
    let rhs = b_in - a_in * &d_y;

    let (p_z, mu, elastic, iterations) = elastic_ipm(&reduced_h, &reduced_g, &c, &rhs, penalty)?;

    let d = d_y + &z * &p_z;
    let lambda = match &r {
        Some(r) => {
            let grad_l = h * &d + g - a_in.transpose() * &mu;
            let rhs = y.transpose() * grad_l;
            r.solve_upper_triangular(&rhs).ok_or(QpError::RankDeficient)?
        }
        None => DVector::zeros(0),
    };
    if d.iter().chain(lambda.iter()).chain(mu.iter()).any(|v| !v.is_finite()) {
        return Err(QpError::NonFinite);
    }
    Ok(QpSolution { d, lambda, mu, elastic, iterations })
}

fn cholesky_regularized(k: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, QpError> {
    if let Some(ch) = k.clone().cholesky() {
        return Ok(ch);
    }
    let scale = k.diagonal().amax().max(1.0);
    let mut reg = 1e-10 * scale;
    for _ in 0..8 {
        let mut kr = k.clone();
        for i in 0..kr.nrows() {
            kr[(i, i)] += reg;
        }
        if let Some(ch) = kr.cholesky() {
            return Ok(ch);
        }
        reg *= 100.0;
    }
    Err(QpError::NotConvex)
}

struct Direction {
    p: DVector<f64>,
    t: DVector<f64>,
    s: DVector<f64>,
    mu: DVector<f64>,
    eta: DVector<f64>,
}

/// Interior point on
/// `min ½pᵀGp + cᵀp + ν·Σt  s.t.  C p + t − r = s,  s ≥ 0,  t ≥ 0`.
fn elastic_ipm(
    gm: &DMatrix<f64>,
    cv: &DVector<f64>,
    cm: &DMatrix<f64>,
    r: &DVector<f64>,
    penalty: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, usize), QpError> {
    let n = cv.len();
    let m = r.len();
    if m == 0 {
        let ch = cholesky_regularized(gm)?;
        let p = ch.solve(&(-cv));
        return Ok((p, DVector::zeros(0), DVector::zeros(0), 0));
    }

    let mut p = DVector::<f64>::zeros(n);
    let cp = cm * &p;
    let mut t = DVector::from_fn(m, |i, _| (r[i] - cp[i]).max(0.0) + 1.0);
    let mut s = DVector::from_fn(m, |i, _| cp[i] + t[i] - r[i]);
    let mu0 = (0.5 * penalty).min(1.0);
    let mut mu = DVector::from_element(m, mu0);
    let mut eta = DVector::from_element(m, penalty - mu0);

    let scale_d = 1.0 + cv.amax();
    let scale_p = 1.0 + r.amax();

    for iter in 0..IPM_MAX_ITER {
        let r_d = gm * &p + cv - cm.transpose() * &mu;
        let r_t = DVector::from_fn(m, |i, _| penalty - mu[i] - eta[i]);
        let r_p = cm * &p + &t - r - &s;
        let gap = (s.dot(&mu) + t.dot(&eta)) / (2 * m) as f64;

        if r_d.amax() <= IPM_TOL * scale_d
            && r_p.amax() <= IPM_TOL * scale_p
            && r_t.amax() <= IPM_TOL * (1.0 + penalty)
            && gap <= IPM_TOL * (1.0 + penalty)
        {
            return Ok((p, mu, t, iter));
        }

        let w = DVector::from_fn(m, |i, _| 1.0 / (s[i] / mu[i] + t[i] / eta[i]));
        let mut k = gm.clone();
        // K = G + Cᵀ W C
        let mut wc = cm.clone();
        for (i, mut row) in wc.row_iter_mut().enumerate() {
            row *= w[i];
        }
        k.gemm_tr(1.0, cm, &wc, 1.0);
        let ch = cholesky_regularized(&k)?;

        let solve_dir = |rc_s: &DVector<f64>, rc_t: &DVector<f64>| -> Direction {
            let a = DVector::from_fn(m, |i, _| (rc_t[i] - t[i] * r_t[i]) / eta[i] - rc_s[i] / mu[i]);
            let wa = DVector::from_fn(m, |i, _| w[i] * (r_p[i] + a[i]));
            let rhs = -&r_d - cm.transpose() * wa;
            let dp = ch.solve(&rhs);
            let cdp = cm * &dp;
            let dmu = DVector::from_fn(m, |i, _| w[i] * (-r_p[i] - cdp[i] - a[i]));
            let deta = DVector::from_fn(m, |i, _| r_t[i] - dmu[i]);
            let dt = DVector::from_fn(m, |i, _| (rc_t[i] - t[i] * r_t[i] + t[i] * dmu[i]) / eta[i]);
            let ds = DVector::from_fn(m, |i, _| (rc_s[i] - s[i] * dmu[i]) / mu[i]);
            Direction { p: dp, t: dt, s: ds, mu: dmu, eta: deta }
        };

        let max_step = |v: &DVector<f64>, dv: &DVector<f64>| -> f64 {
            v.iter()
                .zip(dv.iter())
                .filter(|(_, &d)| d < 0.0)
                .map(|(&x, &d)| -x / d)
                .fold(1.0, f64::min)
        };

        // predictor
        let rc_s = DVector::from_fn(m, |i, _| -s[i] * mu[i]);
        let rc_t = DVector::from_fn(m, |i, _| -t[i] * eta[i]);
        let aff = solve_dir(&rc_s, &rc_t);
        let a_primal = max_step(&s, &aff.s).min(max_step(&t, &aff.t));
        let a_dual = max_step(&mu, &aff.mu).min(max_step(&eta, &aff.eta));
        let gap_aff = ((&s + a_primal * &aff.s).dot(&(&mu + a_dual * &aff.mu))
            + (&t + a_primal * &aff.t).dot(&(&eta + a_dual * &aff.eta)))
            / (2 * m) as f64;
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);

        // corrector
        let target = sigma * gap;
        let rc_s = DVector::from_fn(m, |i, _| target - s[i] * mu[i] - aff.s[i] * aff.mu[i]);
        let rc_t = DVector::from_fn(m, |i, _| target - t[i] * eta[i] - aff.t[i] * aff.eta[i]);
        let dir = solve_dir(&rc_s, &rc_t);

        let frac = 0.995;
        let a_primal = (frac * max_step(&s, &dir.s).min(max_step(&t, &dir.t))).min(1.0);
        let a_dual = (frac * max_step(&mu, &dir.mu).min(max_step(&eta, &dir.eta))).min(1.0);

        p += a_primal * &dir.p;
        t += a_primal * &dir.t;
        s += a_primal * &dir.s;
        mu += a_dual * &dir.mu;
        eta += a_dual * &dir.eta;

        if p.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite);
        }
    }
    // best effort after the iteration cap
    Ok((p, mu, t, IPM_MAX_ITER))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    #[test]
    fn equality_only() {
        // min (d1-1)² + (d2-2)² s.t. d1 + d2 = 1
        let h = DMatrix::from_diagonal_element(2, 2, 2.0);
        let g = DVector::from_vec(vec![-2.0, -4.0]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0]);
        let (ai, bi) = empty(2);
        let sol = solve(&h, &g, &a, &b, &ai, &bi, 100.0).unwrap();
        assert!((sol.d[0] - 0.0).abs() < 1e-9 && (sol.d[1] - 1.0).abs() < 1e-9);
        // stationarity: 2(d-c) = λ·[1,1] → λ = -2
        assert!((sol.lambda[0] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn active_inequality() {
        // min d² s.t. d ≥ 1
        let h = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::zeros(1);
        let (ae, be) = empty(1);
        let ai = DMatrix::from_element(1, 1, 1.0);
        let bi = DVector::from_element(1, 1.0);
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 100.0).unwrap();
        assert!((sol.d[0] - 1.0).abs() < 1e-8);
        assert!((sol.mu[0] - 2.0).abs() < 1e-7);
        assert!(sol.elastic[0] < 1e-8);
    }

    #[test]
    fn inconsistent_rows_become_elastic() {
        // d ≥ 1 and -d ≥ 1 cannot both hold; the ℓ1 penalty picks d = 0
        let h = DMatrix::from_element(1, 1, 1.0);
        let g = DVector::zeros(1);
        let (ae, be) = empty(1);
        let ai = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let bi = DVector::from_vec(vec![1.0, 1.0]);
        let sol = solve(&h, &g, &ae, &be, &ai, &bi, 10.0).unwrap();
        assert!(sol.d[0].abs() < 1e-7);
        assert!((sol.elastic[0] - 1.0).abs() < 1e-7 && (sol.elastic[1] - 1.0).abs() < 1e-7);
        assert!(sol.mu.iter().all(|&m| m <= 10.0 + 1e-8));
    }
}
