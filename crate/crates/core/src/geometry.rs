//! Obstacle primitives: the unsafe-set function `h` (negative inside the
//! obstacle) and the sensing-set function `s` (negative inside the enlarged
//! reaction region), both over position coordinates only.

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Obstacle<T> {
    /// Disc (2-D) or ball (3-D): `h = ‖p − c‖² − r²`.
    Ball { center: Vec<T>, radius: T, sense_radius: T },
    /// Finite cylinder with its axis along `z`.
    Cylinder { center: [T; 3], radius: T, half_height: T, sense_radius: T },
    /// Torus around the `z` axis: `h = (√(dx² + dy²) − R)² + dz² − r²`.
    Torus { center: [T; 3], major_radius: T, tube_radius: T, sense_radius: T },
}

impl<T: Scalar> Obstacle<T> {
    pub fn circle(center: [T; 2], radius: T, sense_radius: T) -> Result<Self> {
        Self::Ball { center: center.to_vec(), radius, sense_radius }.validated()
    }

    pub fn sphere(center: [T; 3], radius: T, sense_radius: T) -> Result<Self> {
        Self::Ball { center: center.to_vec(), radius, sense_radius }.validated()
    }

    pub fn cylinder(center: [T; 3], radius: T, half_height: T, sense_radius: T) -> Result<Self> {
        Self::Cylinder { center, radius, half_height, sense_radius }.validated()
    }

    pub fn torus(center: [T; 3], major_radius: T, tube_radius: T, sense_radius: T) -> Result<Self> {
        Self::Torus { center, major_radius, tube_radius, sense_radius }.validated()
    }

    fn validated(self) -> Result<Self> {
        let (r, s) = (self.radius(), self.sense_radius());
        if !(r > T::zero()) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("obstacle radius must be positive, got {r:?}")));
        }
        if !(s > r) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sense radius ({s:?}) must exceed the obstacle radius ({r:?})"
            )));
        }
        match &self {
            Self::Ball { center, .. } if center.len() != 2 && center.len() != 3 => {
                return Err(Error::InvalidParameter(format!("ball center must be 2-D or 3-D, got {}-D", center.len())))
            }
            Self::Cylinder { half_height, .. } if !(*half_height > T::zero()) => {
                return Err(Error::InvalidParameter("cylinder half height must be positive".into()))
            }
            Self::Torus { major_radius, .. } if !(*major_radius > s) => {
                return Err(Error::InvalidParameter("torus major radius must exceed its sensing tube radius".into()))
            }
            _ => {}
        }
        Ok(self)
    }

    pub fn shape_name(&self) -> &'static str {
        match self {
            Self::Ball { center, .. } if center.len() == 2 => "circle2d",
            Self::Ball { .. } => "sphere3d",
            Self::Cylinder { .. } => "cylinder3d",
            Self::Torus { .. } => "torus3d",
        }
    }

    /// Position dimension the obstacle lives in.
    pub fn dim(&self) -> usize {
        match self {
            Self::Ball { center, .. } => center.len(),
            _ => 3,
        }
    }

    /// Obstacle radius (tube radius for the torus).
    pub fn radius(&self) -> T {
        match self {
            Self::Ball { radius, .. } | Self::Cylinder { radius, .. } => *radius,
            Self::Torus { tube_radius, .. } => *tube_radius,
        }
    }

    pub fn sense_radius(&self) -> T {
        match self {
            Self::Ball { sense_radius, .. }
            | Self::Cylinder { sense_radius, .. }
            | Self::Torus { sense_radius, .. } => *sense_radius,
        }
    }

    pub fn center(&self) -> Vec<T> {
        match self {
            Self::Ball { center, .. } => center.clone(),
            Self::Cylinder { center, .. } | Self::Torus { center, .. } => center.to_vec(),
        }
    }

    /// Copy with a different sensing radius.
    pub fn with_sense_radius(&self, s: T) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            Self::Ball { sense_radius, .. }
            | Self::Cylinder { sense_radius, .. }
            | Self::Torus { sense_radius, .. } => *sense_radius = s,
        }
        out.validated()
    }

    /// Copy shifted by `offset` (position coordinates).
    pub fn translated(&self, offset: &[T]) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::Ball { center, .. } => center.iter_mut().zip(offset).for_each(|(c, &o)| *c = *c + o),
            Self::Cylinder { center, .. } | Self::Torus { center, .. } => {
                center.iter_mut().zip(offset).for_each(|(c, &o)| *c = *c + o)
            }
        }
        out
    }

    /// Level function for tube/ball radius `r`; `inflate` is the extra
    /// cylinder half-height of the sensing set.
    fn level(&self, p: &[T], r: T, inflate: T) -> T {
        match self {
            Self::Ball { center, .. } => {
                center.iter().zip(p).fold(T::zero(), |acc, (&c, &x)| acc + (x - c) * (x - c)) - r * r
            }
            Self::Cylinder { center, half_height, .. } => {
                let (a, b) = cylinder_terms(center, p, r, *half_height + inflate);
                r * r * (a + b + (a * a + b * b).sqrt())
            }
            Self::Torus { center, major_radius, .. } => {
                let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
                let radial = (dx * dx + dy * dy).sqrt() - *major_radius;
                radial * radial + dz * dz - r * r
            }
        }
    }

    /// `h` without dimension checks.
    #[inline]
    pub fn h_unchecked(&self, p: &[T]) -> T {
        self.level(p, self.radius(), T::zero())
    }

    /// `s` without dimension checks.
    #[inline]
    pub fn sense_unchecked(&self, p: &[T]) -> T {
        let s = self.sense_radius();
        self.level(p, s, s - self.radius())
    }

    pub fn h(&self, p: &[T]) -> Result<T> {
        check_dim("obstacle position", self.dim(), p.len())?;
        Ok(self.h_unchecked(p))
    }

    pub fn sense(&self, p: &[T]) -> Result<T> {
        check_dim("obstacle position", self.dim(), p.len())?;
        Ok(self.sense_unchecked(p))
    }

    /// Analytic `∇h` with respect to position.
    pub fn grad_h(&self, p: &[T]) -> Result<Vec<T>> {
        check_dim("obstacle position", self.dim(), p.len())?;
        let two = T::lit(2.0);
        Ok(match self {
            Self::Ball { center, .. } => center.iter().zip(p).map(|(&c, &x)| two * (x - c)).collect(),
            Self::Cylinder { center, radius, half_height, .. } => {
                let (r, hh) = (*radius, *half_height);
                let (a, b) = cylinder_terms(center, p, r, hh);
                let norm = (a * a + b * b).sqrt();
                let (ga, gb) = if norm > T::zero() {
                    (T::one() + a / norm, T::one() + b / norm)
                } else {
                    (T::one(), T::one())
                };
                let r2 = r * r;
                // a = (ρ² − r²)/r², b = (dz² − H²)/H²
                vec![
                    r2 * ga * two * (p[0] - center[0]) / r2,
                    r2 * ga * two * (p[1] - center[1]) / r2,
                    r2 * gb * two * (p[2] - center[2]) / (hh * hh),
                ]
            }
            Self::Torus { center, major_radius, .. } => {
                let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
                let rho = (dx * dx + dy * dy).sqrt();
                let scale = if rho > T::zero() { two * (rho - *major_radius) / rho } else { T::zero() };
                vec![scale * dx, scale * dy, two * dz]
            }
        })
    }

    /// Signed Euclidean distance from `p` to the obstacle surface (negative inside).
    pub fn surface_distance(&self, p: &[T]) -> Result<T> {
        check_dim("obstacle position", self.dim(), p.len())?;
        Ok(match self {
            Self::Ball { center, radius, .. } => {
                center.iter().zip(p).fold(T::zero(), |acc, (&c, &x)| acc + (x - c) * (x - c)).sqrt() - *radius
            }
            Self::Cylinder { center, radius, half_height, .. } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let qr = (dx * dx + dy * dy).sqrt() - *radius;
                let qz = (p[2] - center[2]).abs() - *half_height;
                let (er, ez) = (qr.max(T::zero()), qz.max(T::zero()));
                (er * er + ez * ez).sqrt() + qr.max(qz).min(T::zero())
            }
            Self::Torus { center, major_radius, tube_radius, .. } => {
                let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
                let radial = (dx * dx + dy * dy).sqrt() - *major_radius;
                (radial * radial + dz * dz).sqrt() - *tube_radius
            }
        })
    }
}

/// Normalized radial and axial terms of a capped cylinder; both are `≤ 0`
/// exactly inside. Combined with the R-conjunction `a + b + √(a² + b²)` the
/// zero level set is the cylinder surface itself.
fn cylinder_terms<T: Scalar>(center: &[T; 3], p: &[T], r: T, half_height: T) -> (T, T) {
    let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
    let a = (dx * dx + dy * dy - r * r) / (r * r);
    let b = (dz * dz - half_height * half_height) / (half_height * half_height);
    (a, b)
}

/// Minimum over the trajectory of the signed distance to the obstacle surface.
/// Positions are the leading `obs.dim()` coordinates of each state.
pub fn min_distance<T: Scalar, S: AsRef<[T]>>(obs: &Obstacle<T>, trajectory: &[S]) -> Result<T> {
    if trajectory.is_empty() {
        return Err(Error::InvalidParameter("trajectory must not be empty".into()));
    }
    let d = obs.dim();
    let mut best = T::infinity();
    for state in trajectory {
        let state = state.as_ref();
        if state.len() < d {
            return Err(Error::Dimension { what: "trajectory state", expected: d, got: state.len() });
        }
        best = best.min(obs.surface_distance(&state[..d])?);
    }
    Ok(best)
}
