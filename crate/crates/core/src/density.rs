//! Analytic control density `ρ(x) = ∏ⱼ Ψⱼ(x) / V(x)^α` built from a chain of
//! smooth bump functions, and the discrete-time density constraint
//! `ρ(F(x, u)) − ρ(x) + δt·(∇·f)(x, u)·ρ(x) ≥ 0`.

use crate::dynamics::{divergence_unchecked, euler_step, Dynamics};
use crate::error::{check_dim, Error, Result};
use crate::geometry::Obstacle;
use crate::scalar::{all_finite, Scalar};

/// `exp(−1/t)` for `t > 0`, zero otherwise.
pub fn bump_f<T: Scalar>(t: T) -> T {
    if t > T::zero() {
        (-t.recip()).exp()
    } else {
        T::zero()
    }
}

/// Smooth step `f(t) / (f(t) + f(1 − t))`: 0 for `t ≤ 0`, 1 for `t ≥ 1`.
pub fn bump_step<T: Scalar>(t: T) -> T {
    if t <= T::zero() {
        T::zero()
    } else if t >= T::one() {
        T::one()
    } else {
        // same ratio with the exponentials divided out, which avoids 0/0 near the ends
        let e = (t.recip() - (T::one() - t).recip()).exp();
        (T::one() + e).recip()
    }
}

/// Inverse bump `Ψ`: 0 on the unsafe set, 1 outside the sensing set and
/// `f̄(h / (h − s))` in between. `p` holds position coordinates.
pub fn psi<T: Scalar>(obs: &Obstacle<T>, p: &[T]) -> T {
    let h = obs.h_unchecked(p);
    if h <= T::zero() {
        return T::zero();
    }
    let s = obs.sense_unchecked(p);
    if s >= T::zero() {
        return T::one();
    }
    let denom = h - s;
    if denom.abs() < T::lit(1e-12) {
        // h > 0 and s < 0 cannot both be this close; fall back to membership
        return if s > T::zero() { T::one() } else { T::zero() };
    }
    bump_step(h / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityField<T> {
    pub obstacles: Vec<Obstacle<T>>,
    pub alpha: T,
    pub target: Vec<T>,
    /// Radius of the excluded ball around the target.
    pub delta: T,
    /// Lower clamp on `V`, `δ²`.
    pub v_floor: T,
    /// Number of leading state coordinates entering `V`.
    pub v_dims: usize,
}

impl<T: Scalar> DensityField<T> {
    pub fn new(obstacles: Vec<Obstacle<T>>, alpha: T, target: Vec<T>, delta: T) -> Result<Self> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha:?}")));
        }
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta:?}")));
        }
        if !all_finite(&target) {
            return Err(Error::NonFinite("density target"));
        }
        for obs in &obstacles {
            if obs.dim() > target.len() {
                return Err(Error::Dimension { what: "obstacle vs state", expected: target.len(), got: obs.dim() });
            }
        }
        let v_dims = target.len();
        Ok(Self { obstacles, alpha, target, delta, v_floor: delta * delta, v_dims })
    }

    /// Restricts `V` to the first `n` coordinates (e.g. positions only).
    pub fn with_v_dims(mut self, n: usize) -> Result<Self> {
        let min = self.obstacles.iter().map(|o| o.dim()).max().unwrap_or(1);
        if n < min || n > self.target.len() {
            return Err(Error::InvalidParameter(format!(
                "V must use between {min} and {} coordinates, got {n}",
                self.target.len()
            )));
        }
        self.v_dims = n;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    /// `V(x) = ‖x − x_T‖²` over the first `v_dims` coordinates, unclamped.
    pub fn v(&self, x: &[T]) -> T {
        x.iter().zip(&self.target).take(self.v_dims).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
    }

    /// Whether `x` lies in the excluded ball `B_δ` around the target.
    pub fn in_target_ball(&self, x: &[T]) -> bool {
        self.v(x) < self.v_floor
    }

    pub fn psi_product(&self, x: &[T]) -> T {
        let mut prod = T::one();
        for obs in &self.obstacles {
            prod = prod * psi(obs, &x[..obs.dim()]);
            if prod == T::zero() {
                break;
            }
        }
        prod
    }

    pub fn rho_unchecked(&self, x: &[T]) -> T {
        let prod = self.psi_product(x);
        if prod == T::zero() {
            return T::zero();
        }
        prod / self.v(x).max(self.v_floor).powf(self.alpha)
    }

    pub fn rho(&self, x: &[T]) -> Result<T> {
        check_dim("density state", self.dim(), x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("density state"));
        }
        Ok(self.rho_unchecked(x))
    }

    /// Central differences with step `1e-6·max(1, |xᵢ|)`.
    pub fn grad_rho(&self, x: &[T]) -> Result<Vec<T>> {
        self.rho(x)?;
        Ok(self.grad_rho_with_step(x, T::lit(1e-6).max(T::epsilon().cbrt())))
    }

    pub fn grad_rho_with_step(&self, x: &[T], base: T) -> Vec<T> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = base * T::one().max(x[i].abs());
                xp[i] = x[i] + h;
                let fp = self.rho_unchecked(&xp);
                xp[i] = x[i] - h;
                let fm = self.rho_unchecked(&xp);
                xp[i] = x[i];
                (fp - fm) / (h + h)
            })
            .collect()
    }

    /// Copy with every sensing radius replaced.
    pub fn with_sense_radius(&self, s: T) -> Result<Self> {
        let obstacles = self.obstacles.iter().map(|o| o.with_sense_radius(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self { obstacles, ..self.clone() })
    }
}

/// `ρ(x + δt·f) − ρ(x) + δt·(∇·f)·ρ(x)` without argument checks.
pub fn cdf_residual_unchecked<T: Scalar, M: Dynamics<T> + ?Sized>(
    field: &DensityField<T>,
    model: &M,
    x: &[T],
    u: &[T],
    dt: T,
) -> T {
    let next = euler_step(model, x, u, dt);
    let rho_now = field.rho_unchecked(x);
    let div = if rho_now == T::zero() { T::zero() } else { divergence_unchecked(model, x, u) };
    field.rho_unchecked(&next) - rho_now + dt * div * rho_now
}

pub fn cdf_residual<T: Scalar, M: Dynamics<T> + ?Sized>(
    field: &DensityField<T>,
    model: &M,
    x: &[T],
    u: &[T],
    dt: T,
) -> Result<T> {
    check_dim("density state", field.dim(), model.state_dim())?;
    // validates dims, finiteness and dt
    let next = crate::dynamics::discretize(model, x, u, dt, crate::dynamics::Scheme::Euler)?;
    let rho_now = field.rho_unchecked(x);
    let div = divergence_unchecked(model, x, u);
    let rho_next = field.rho_unchecked(&next);
    if !rho_next.is_finite() || !div.is_finite() {
        return Err(Error::Numeric { stage: None, msg: "non-finite density residual".into() });
    }
    Ok(rho_next - rho_now + dt * div * rho_now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Auv, Unicycle};
    use approx::assert_relative_eq;

    fn circle_field(s: f64) -> DensityField<f64> {
        DensityField::new(vec![Obstacle::circle([5.0, 0.0], 1.0, s).unwrap()], 0.1, vec![10.0, 0.0, 0.0, 0.0], 0.01)
            .unwrap()
    }

    #[test]
    fn bump_f_values() {
        assert_relative_eq!(bump_f(1.0), 0.367_879_441_171_442_3, max_relative = 1e-15);
        assert_eq!(bump_f(0.0), 0.0);
        assert_eq!(bump_f(-3.0), 0.0);
        assert_relative_eq!(bump_f(0.5), 0.135_335_283_236_612_7, max_relative = 1e-15);
    }

    #[test]
    fn bump_step_values() {
        assert_eq!(bump_step(0.5), 0.5);
        assert_eq!(bump_step(-1.0), 0.0);
        assert_eq!(bump_step(2.0), 1.0);
        // hand value: e^-4 / (e^-4 + e^-4/3) = 1 / (1 + e^(4 − 4/3))
        let oracle = bump_f(0.25) / (bump_f(0.25) + bump_f(0.75));
        assert_relative_eq!(bump_step(0.25), oracle, max_relative = 1e-14);
        assert_relative_eq!(bump_step(0.25), 0.064_969_169_128_664_06, max_relative = 1e-12);
    }

    #[test]
    fn bump_step_partition_and_monotone() {
        let mut prev = 0.0;
        for i in 0..=1000 {
            let t = -0.5 + 2.0 * i as f64 / 1000.0;
            let v = bump_step(t);
            assert!((v + bump_step(1.0 - t) - 1.0).abs() <= 1e-12, "t={t}");
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn psi_branches() {
        let obs = Obstacle::circle([5.0, 0.0], 1.0, 2.0).unwrap();
        assert_eq!(psi(&obs, &[5.0, 0.5]), 0.0);
        assert_eq!(psi(&obs, &[5.0, 3.0]), 1.0);
        assert_eq!(psi(&obs, &[6.0, 0.0]), 0.0);
        assert_eq!(psi(&obs, &[7.0, 0.0]), 1.0);
        // close to the outer boundary the transition is within rounding of 1
        let mut prev = 0.0;
        for k in 1..100 {
            let d = 1.0 + k as f64 / 100.0;
            let v = psi(&obs, &[5.0 + d, 0.0]);
            assert!(v > 0.0 && v <= 1.0 && v >= prev, "d={d} psi={v}");
            if d <= 1.9 {
                assert!(v < 1.0, "d={d} psi={v}");
            }
            prev = v;
        }
    }

    #[test]
    fn rho_examples() {
        let free = DensityField::new(vec![], 1.0, vec![0.0; 4], 0.01).unwrap();
        assert_relative_eq!(free.rho(&[3.0, 4.0, 0.0, 0.0]).unwrap(), 0.04, max_relative = 1e-15);
        assert_relative_eq!(free.rho(&[0.0; 4]).unwrap(), 1.0 / 1e-4, max_relative = 1e-12);
        let field = circle_field(2.0);
        assert_eq!(field.rho(&[5.2, 0.3, 1.0, 0.0]).unwrap(), 0.0);
        assert!(field.rho(&[f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(field.rho(&[0.0; 3]).is_err());
    }

    #[test]
    fn grad_rho_examples() {
        let free = DensityField::new(vec![], 1.0, vec![0.0; 4], 0.01).unwrap();
        let g: Vec<f64> = free.grad_rho(&[3.0, 4.0, 0.0, 0.0]).unwrap();
        for (gi, want) in g.iter().zip([-0.0096, -0.0128, 0.0, 0.0]) {
            assert!((gi - want).abs() < 1e-10, "{gi} vs {want}");
        }
        let field = circle_field(2.0);
        assert_eq!(field.grad_rho(&[5.1, 0.1, 0.0, 0.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn grad_rho_richardson_self_consistent() {
        let field = circle_field(3.0);
        for x in [[3.2, 1.1, 0.4, 0.2], [6.5, -1.7, 1.0, -0.3], [4.0, 2.2, 0.0, 0.5]] {
            let g1 = field.grad_rho_with_step(&x, 2e-4);
            let g2 = field.grad_rho_with_step(&x, 1e-4);
            let g = field.grad_rho(&x).unwrap();
            for i in 0..4 {
                let rich = (4.0 * g2[i] - g1[i]) / 3.0;
                assert!((rich - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3), "{i}: {rich} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn residual_examples() {
        let free = DensityField::new(vec![], 0.1, vec![10.0, 0.0, 0.0, 0.0], 0.01).unwrap();
        // moving toward the target along +x
        let r = cdf_residual(&free, &Unicycle, &[2.0, 0.0, 1.0, 0.0], &[0.0, 0.0], 0.1).unwrap();
        assert!(r > 0.0);
        let x = [2.0, 1.0, 0.0, 0.3];
        let r = cdf_residual(&free, &Unicycle, &x, &[0.0, 1.7], 0.1).unwrap();
        let rho_next = free.rho(&[2.0, 1.0, 0.0, 0.3 + 0.17]).unwrap();
        assert_relative_eq!(r, rho_next - free.rho(&x).unwrap(), max_relative = 1e-12);
        let still = cdf_residual(&free, &Unicycle, &x, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(still, 0.0);
        assert!(cdf_residual(&free, &Unicycle, &x, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn residual_includes_divergence_term() {
        let auv = Auv::<f64>::default();
        let target = vec![4.0, 4.0, 8.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let field = DensityField::new(vec![], 0.1, target, 0.01).unwrap();
        let x = [0.0, -1.0, 2.0, 0.3, 0.8, -0.4, 0.5, 0.1];
        let u = [10.0, -5.0, -480.0, 1.0];
        let dt = 0.02;
        let next = euler_step(&auv, &x, &u, dt);
        let div = auv.analytic_divergence(&x, &u).unwrap();
        let rho = field.rho(&x).unwrap();
        let want = field.rho(&next).unwrap() - rho + dt * div * rho;
        assert_relative_eq!(cdf_residual(&field, &auv, &x, &u, dt).unwrap(), want, max_relative = 1e-12);
    }
}
