//! Perron–Frobenius oracle on small invertible maps.
//!
//! For the Euler map `F(x) = x + δt·f(x)` of an affine field the inverse and
//! its Jacobian determinant are exact, so `[Pρ](x) = ρ(F⁻¹(x))·|det ∂F⁻¹/∂x|`
//! can be compared against the first-order surrogate `−δt·∇·(fρ)(x)` and the
//! residual's order in `δt` measured directly.

use serde::Serialize;

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

type MapFn<T> = Box<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;
type DetFn<T> = Box<dyn Fn(&[T]) -> T + Send + Sync>;

/// A map of dimension 1 or 2 with an analytic inverse.
pub struct InvertibleMap<T> {
    dim: usize,
    forward: MapFn<T>,
    inverse: MapFn<T>,
    inv_jac_det: DetFn<T>,
}

impl<T: Scalar> InvertibleMap<T> {
    pub fn new(
        dim: usize,
        forward: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static,
        inverse: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static,
        inv_jac_det: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter(format!("map dimension must be 1 or 2, got {dim}")));
        }
        Ok(Self { dim, forward: Box::new(forward), inverse: Box::new(inverse), inv_jac_det: Box::new(inv_jac_det) })
    }

    /// `x ↦ M x + c`. Fails when `M` is singular.
    pub fn affine(m: Vec<Vec<T>>, c: Vec<T>) -> Result<Self> {
        let dim = m.len();
        if !(1..=2).contains(&dim) || m.iter().any(|r| r.len() != dim) || c.len() != dim {
            return Err(Error::InvalidParameter("affine map must be square of dimension 1 or 2".into()));
        }
        let det = if dim == 1 { m[0][0] } else { m[0][0] * m[1][1] - m[0][1] * m[1][0] };
        let scale = m.iter().flatten().fold(T::zero(), |a, &v| a.max(v.abs()));
        if !det.is_finite() || det.abs() <= T::lit(1e-12) * scale.powi(dim as i32) {
            return Err(Error::InvalidParameter("map is not invertible (singular matrix)".into()));
        }
        let inv: Vec<Vec<T>> = if dim == 1 {
            vec![vec![det.recip()]]
        } else {
            vec![vec![m[1][1] / det, -m[0][1] / det], vec![-m[1][0] / det, m[0][0] / det]]
        };
        let apply = |a: &[Vec<T>], x: &[T]| -> Vec<T> {
            a.iter().map(|row| row.iter().zip(x).fold(T::zero(), |s, (&r, &v)| s + r * v)).collect()
        };
        let (mf, cf, ci) = (m.clone(), c.clone(), c);
        let inv_det = det.recip().abs();
        Self::new(
            dim,
            move |x| apply(&mf, x).into_iter().zip(&cf).map(|(a, &b)| a + b).collect(),
            move |y| {
                let shifted: Vec<T> = y.iter().zip(&ci).map(|(&a, &b)| a - b).collect();
                apply(&inv, &shifted)
            },
            move |_| inv_det,
        )
    }

    /// Euler step `x ↦ x + dt·(A x + b)` of an affine field.
    pub fn euler_linear(a: &[Vec<T>], b: &[T], dt: T) -> Result<Self> {
        let m = a
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(j, &v)| if i == j { T::one() + dt * v } else { dt * v }).collect())
            .collect();
        Self::affine(m, b.iter().map(|&v| dt * v).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (self.forward)(x)
    }

    pub fn inverse(&self, y: &[T]) -> Vec<T> {
        (self.inverse)(y)
    }

    pub fn inv_jac_det(&self, y: &[T]) -> T {
        (self.inv_jac_det)(y)
    }
}

/// `[Pψ](x) = ψ(F⁻¹(x))·|det ∂F⁻¹/∂x|`.
pub fn pf_apply<T: Scalar>(map: &InvertibleMap<T>, psi: impl Fn(&[T]) -> T, x: &[T]) -> Result<T> {
    if x.len() != map.dim {
        return Err(Error::Dimension { what: "transfer operator point", expected: map.dim, got: x.len() });
    }
    if !all_finite(x) {
        return Err(Error::NonFinite("transfer operator point"));
    }
    Ok(psi(&map.inverse(x)) * map.inv_jac_det(x).abs())
}

/// A scalar field with a gradient, as needed by the divergence surrogate.
pub trait SmoothField<T> {
    fn value(&self, x: &[T]) -> T;
    fn grad(&self, x: &[T]) -> Vec<T>;
}

impl<T: Scalar> SmoothField<T> for DensityField<T> {
    fn value(&self, x: &[T]) -> T {
        self.rho_unchecked(x)
    }
    fn grad(&self, x: &[T]) -> Vec<T> {
        self.grad_rho_with_step(x, T::lit(1e-6).max(T::epsilon().cbrt()))
    }
}

/// A field given by closed-form value and gradient.
pub struct AnalyticField<V, G> {
    pub value: V,
    pub grad: G,
}

impl<T, V, G> SmoothField<T> for AnalyticField<V, G>
where
    V: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    fn value(&self, x: &[T]) -> T {
        (self.value)(x)
    }
    fn grad(&self, x: &[T]) -> Vec<T> {
        (self.grad)(x)
    }
}

/// An affine test field `f(x) = A x + b` of dimension 1 or 2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineField {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffineField {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(row, &bi)| row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>() + bi).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.a.len()).map(|i| self.a[i][i]).sum()
    }

    pub fn euler_map(&self, dt: f64) -> Result<InvertibleMap<f64>> {
        InvertibleMap::euler_linear(&self.a, &self.b, dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub system: String,
    pub dt: f64,
    pub points: usize,
    /// `max |([Pρ] − ρ) − (−dt·∇·(fρ))|` over the grid at `dt`.
    pub e_dt: f64,
    /// Same at `dt/2`.
    pub e_half: f64,
    pub ratio: f64,
}

impl ErrorReport {
    /// Second order means halving the step divides the residual by four.
    pub fn is_second_order(&self) -> bool {
        (3.2..=4.8).contains(&self.ratio)
    }
}

fn chain_error(field: &AffineField, rho: &dyn SmoothField<f64>, grid: &[Vec<f64>], dt: f64) -> Result<f64> {
    let map = field.euler_map(dt)?;
    let div = field.trace();
    let mut worst = 0.0f64;
    for x in grid {
        let r = rho.value(x);
        let lhs = pf_apply(&map, |y| rho.value(y), x)? - r;
        let f = field.eval(x);
        let f_dot_grad: f64 = f.iter().zip(rho.grad(x)).map(|(a, b)| a * b).sum();
        let rhs = -dt * (div * r + f_dot_grad);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Residual of the Euler divergence surrogate at `dt` and `dt/2` over `grid`.
/// The grid must stay clear of the target ball and obstacle interiors.
pub fn check_euler_chain(
    system: &str,
    field: &AffineField,
    rho: &dyn SmoothField<f64>,
    grid: &[Vec<f64>],
    dt: f64,
) -> Result<ErrorReport> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be non-negative, got {dt}")));
    }
    if grid.iter().any(|p| p.len() != field.a.len()) {
        return Err(Error::Dimension { what: "grid point", expected: field.a.len(), got: grid[0].len() });
    }
    let m = InvertibleMap::affine(field.a.clone(), field.b.clone());
    if m.is_err() {
        return Err(Error::InvalidParameter("field matrix A is singular".into()));
    }
    let e_dt = chain_error(field, rho, grid, dt)?;
    let e_half = chain_error(field, rho, grid, dt / 2.0)?;
    let ratio = if e_half > 0.0 { e_dt / e_half } else { f64::NAN };
    Ok(ErrorReport { system: system.to_string(), dt, points: grid.len(), e_dt, e_half, ratio })
}

/// `n` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn grid_1d(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    linspace(lo, hi, n).into_iter().map(|x| vec![x]).collect()
}

pub fn grid_2d(x: (f64, f64), y: (f64, f64), n: usize) -> Vec<Vec<f64>> {
    let ys = linspace(y.0, y.1, n);
    linspace(x.0, x.1, n).into_iter().flat_map(|a| ys.iter().map(move |&b| vec![a, b])).collect()
}

/// The two shipped test systems: `ẋ = −x` with `ρ = 1/(x² + 1)` on
/// `[0.5, 2]`, and a damped rotation with an obstacle density on a 50×50
/// box that crosses the obstacle's sensing band.
pub fn standard_checks(dt: f64) -> Result<Vec<ErrorReport>> {
    let c = 1.0;
    let decay = AffineField { a: vec![vec![-1.0]], b: vec![0.0] };
    let rho1 = AnalyticField {
        value: move |x: &[f64]| 1.0 / (x[0] * x[0] + c),
        grad: move |x: &[f64]| vec![-2.0 * x[0] / (x[0] * x[0] + c).powi(2)],
    };
    let r1 = check_euler_chain("decay_1d", &decay, &rho1, &grid_1d(0.5, 2.0, 50), dt)?;

    let spiral = AffineField { a: vec![vec![-0.5, 1.0], vec![-1.0, -0.5]], b: vec![0.0, 0.0] };
    let obs = crate::geometry::Obstacle::circle([3.0, 0.0], 0.5, 1.5)?;
    let rho2 = DensityField::new(vec![obs], 0.5, vec![0.0, 0.0], 0.01)?;
    let r2 = check_euler_chain("spiral_2d", &spiral, &rho2, &grid_2d((1.0, 2.0), (-0.8, 0.8), 50), dt)?;
    Ok(vec![r1, r2])
}
