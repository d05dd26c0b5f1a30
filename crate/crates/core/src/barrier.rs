//! Discrete-time barrier constraint `h(x⁺) − h(x) + γ·h(x) ≥ 0` used by the
//! MPC-CBF baseline.

use crate::dynamics::{discretize, euler_step, Dynamics, Scheme};
use crate::error::{Error, Result};
use crate::geometry::Obstacle;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSpec<T> {
    pub obstacles: Vec<Obstacle<T>>,
    pub gamma: T,
}

impl<T: Scalar> BarrierSpec<T> {
    pub fn new(obstacles: Vec<Obstacle<T>>, gamma: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma <= T::one()) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1], got {gamma:?}")));
        }
        Ok(Self { obstacles, gamma })
    }
}

/// `Δh + γ·h` from the two level-set values.
#[inline]
pub fn barrier_condition<T: Scalar>(h_now: T, h_next: T, gamma: T) -> T {
    h_next - h_now + gamma * h_now
}

pub fn cbf_residual_unchecked<T: Scalar, M: Dynamics<T> + ?Sized>(
    spec: &BarrierSpec<T>,
    model: &M,
    obs_index: usize,
    x: &[T],
    u: &[T],
    dt: T,
) -> T {
    let obs = &spec.obstacles[obs_index];
    let d = obs.dim();
    let next = euler_step(model, x, u, dt);
    barrier_condition(obs.h_unchecked(&x[..d]), obs.h_unchecked(&next[..d]), spec.gamma)
}

pub fn cbf_residual<T: Scalar, M: Dynamics<T> + ?Sized>(
    spec: &BarrierSpec<T>,
    model: &M,
    obs_index: usize,
    x: &[T],
    u: &[T],
    dt: T,
) -> Result<T> {
    let obs = spec.obstacles.get(obs_index).ok_or_else(|| {
        Error::InvalidParameter(format!("obstacle index {obs_index} out of range ({} obstacles)", spec.obstacles.len()))
    })?;
    let next = discretize(model, x, u, dt, Scheme::Euler)?;
    let d = obs.dim();
    if model.position_dim() < d {
        return Err(Error::Dimension { what: "model position", expected: d, got: model.position_dim() });
    }
    Ok(barrier_condition(obs.h_unchecked(&x[..d]), obs.h_unchecked(&next[..d]), spec.gamma))
}
