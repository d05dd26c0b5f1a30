//! Continuous-time control-affine models, their one-step discretizations and
//! the state divergence `∇ₓ·f(x, u)` used by the density constraint.

use crate::error::{check_dim, Error, Result};
use crate::scalar::{all_finite, Scalar};

/// A continuous-time vector field `ẋ = f(x, u)` with fixed dimensions.
///
/// Implementors provide the raw, unchecked [`Dynamics::field`]; the free
/// functions [`eval_field`], [`discretize`] and [`divergence`] add the
/// dimension and finiteness checks.
pub trait Dynamics<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn state_labels(&self) -> Vec<String>;
    fn input_labels(&self) -> Vec<String>;
    /// Per-channel `[lo, hi]` input bounds.
    fn input_bounds(&self) -> Vec<(T, T)>;
    /// Number of leading state coordinates that are Cartesian positions.
    fn position_dim(&self) -> usize;

    /// Writes `f(x, u)` into `dx`. Callers guarantee the slice lengths.
    fn field(&self, x: &[T], u: &[T], dx: &mut [T]);

    /// Closed-form divergence when the model has one.
    fn analytic_divergence(&self, _x: &[T], _u: &[T]) -> Option<T> {
        None
    }

    /// Input that keeps a zero-velocity configuration at rest.
    fn hold_input(&self, _x: &[T]) -> Vec<T> {
        vec![T::zero(); self.input_dim()]
    }
}

/// One-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

fn check_args<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T]) -> Result<()> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.input_dim(), u.len())?;
    if !all_finite(x) {
        return Err(Error::NonFinite("state"));
    }
    if !all_finite(u) {
        return Err(Error::NonFinite("input"));
    }
    Ok(())
}

pub fn eval_field<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T]) -> Result<Vec<T>> {
    check_args(model, x, u)?;
    let mut dx = vec![T::zero(); x.len()];
    model.field(x, u, &mut dx);
    Ok(dx)
}

/// `x + dt·f(x, u)` without argument checks.
pub fn euler_step<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T], dt: T) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    model.field(x, u, &mut dx);
    x.iter().zip(&dx).map(|(&xi, &di)| xi + dt * di).collect()
}

/// Classical four-stage Runge-Kutta step with `u` held constant.
pub fn rk4_step<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T], dt: T) -> Vec<T> {
    let n = x.len();
    let half = T::lit(0.5) * dt;
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];

    model.field(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + half * k1[i];
    }
    model.field(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + half * k2[i];
    }
    model.field(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    model.field(&tmp, u, &mut k4);

    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    (0..n)
        .map(|i| x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect()
}

pub fn discretize<T: Scalar, M: Dynamics<T> + ?Sized>(
    model: &M,
    x: &[T],
    u: &[T],
    dt: T,
    scheme: Scheme,
) -> Result<Vec<T>> {
    check_args(model, x, u)?;
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt:?}")));
    }
    Ok(match scheme {
        Scheme::Euler => euler_step(model, x, u, dt),
        Scheme::Rk4 => rk4_step(model, x, u, dt),
    })
}

/// Central-difference divergence with step `h_i = h·max(1, |x_i|)`.
///
/// `h` is `1e-5` in double precision and `cbrt(ε)` for coarser types.
pub fn fd_divergence<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T]) -> T {
    let base = T::lit(1e-5).max(T::epsilon().cbrt());
    fd_divergence_with_step(model, x, u, base)
}

pub fn fd_divergence_with_step<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T], base: T) -> T {
    let n = x.len();
    let mut xp = x.to_vec();
    let mut fp = vec![T::zero(); n];
    let mut fm = vec![T::zero(); n];
    let mut div = T::zero();
    for i in 0..n {
        let h = base * T::one().max(x[i].abs());
        xp[i] = x[i] + h;
        model.field(&xp, u, &mut fp);
        xp[i] = x[i] - h;
        model.field(&xp, u, &mut fm);
        xp[i] = x[i];
        div = div + (fp[i] - fm[i]) / (h + h);
    }
    div
}

/// Unchecked divergence: analytic when available, otherwise central differences.
pub fn divergence_unchecked<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T]) -> T {
    model
        .analytic_divergence(x, u)
        .unwrap_or_else(|| fd_divergence(model, x, u))
}

pub fn divergence<T: Scalar, M: Dynamics<T> + ?Sized>(model: &M, x: &[T], u: &[T]) -> Result<T> {
    check_args(model, x, u)?;
    Ok(divergence_unchecked(model, x, u))
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Planar unicycle with acceleration and turn-rate inputs.
///
/// State `[x, y, v, θ]`, input `[a, ω]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unicycle;

impl<T: Scalar> Dynamics<T> for Unicycle {
    fn name(&self) -> &str {
        "unicycle"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn state_labels(&self) -> Vec<String> {
        labels(&["x", "y", "v", "theta"])
    }
    fn input_labels(&self) -> Vec<String> {
        labels(&["a", "omega"])
    }
    fn input_bounds(&self) -> Vec<(T, T)> {
        vec![(T::lit(-5.0), T::lit(5.0)), (-T::PI(), T::PI())]
    }
    fn position_dim(&self) -> usize {
        2
    }
    fn field(&self, x: &[T], u: &[T], dx: &mut [T]) {
        let (v, theta) = (x[2], x[3]);
        dx[0] = v * theta.cos();
        dx[1] = v * theta.sin();
        dx[2] = u[0];
        dx[3] = u[1];
    }
    fn analytic_divergence(&self, _x: &[T], _u: &[T]) -> Option<T> {
        Some(T::zero())
    }
}

/// `ṗ = u` in the plane.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleIntegrator2d;

impl<T: Scalar> Dynamics<T> for SingleIntegrator2d {
    fn name(&self) -> &str {
        "single_integrator_2d"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn state_labels(&self) -> Vec<String> {
        labels(&["x", "y"])
    }
    fn input_labels(&self) -> Vec<String> {
        labels(&["vx", "vy"])
    }
    fn input_bounds(&self) -> Vec<(T, T)> {
        vec![(T::lit(-5.0), T::lit(5.0)); 2]
    }
    fn position_dim(&self) -> usize {
        2
    }
    fn field(&self, _x: &[T], u: &[T], dx: &mut [T]) {
        dx[0] = u[0];
        dx[1] = u[1];
    }
    fn analytic_divergence(&self, _x: &[T], _u: &[T]) -> Option<T> {
        Some(T::zero())
    }
}

/// Affine field `f(x, u) = A x + B u + c` (row-major `A`, `B`).
#[derive(Debug, Clone)]
pub struct LinearField<T> {
    pub a: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
    pub c: Vec<T>,
}

impl<T: Scalar> LinearField<T> {
    /// Autonomous `ẋ = A x`.
    pub fn autonomous(a: Vec<Vec<T>>) -> Self {
        let n = a.len();
        Self {
            a,
            b: vec![Vec::new(); n],
            c: vec![T::zero(); n],
        }
    }

    pub fn trace(&self) -> T {
        (0..self.a.len()).fold(T::zero(), |acc, i| acc + self.a[i][i])
    }
}

impl<T: Scalar> Dynamics<T> for LinearField<T> {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.len()
    }
    fn input_dim(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }
    fn state_labels(&self) -> Vec<String> {
        (0..self.a.len()).map(|i| format!("x{i}")).collect()
    }
    fn input_labels(&self) -> Vec<String> {
        (0..<Self as Dynamics<T>>::input_dim(self)).map(|i| format!("u{i}")).collect()
    }
    fn input_bounds(&self) -> Vec<(T, T)> {
        vec![(-T::infinity(), T::infinity()); <Self as Dynamics<T>>::input_dim(self)]
    }
    fn position_dim(&self) -> usize {
        self.a.len()
    }
    fn field(&self, x: &[T], u: &[T], dx: &mut [T]) {
        for (i, out) in dx.iter_mut().enumerate() {
            let ax = self.a[i].iter().zip(x).fold(T::zero(), |acc, (&aij, &xj)| acc + aij * xj);
            let bu = self.b[i].iter().zip(u).fold(T::zero(), |acc, (&bij, &uj)| acc + bij * uj);
            *out = ax + bu + self.c[i];
        }
    }
    fn analytic_divergence(&self, _x: &[T], _u: &[T]) -> Option<T> {
        Some(self.trace())
    }
}

/// Hydrodynamic and rigid-body constants of the 4-DOF vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuvParams<T> {
    pub mass: T,
    pub iz: T,
    pub x_udot: T,
    pub y_vdot: T,
    pub z_wdot: T,
    pub n_rdot: T,
    pub x_u: T,
    pub y_v: T,
    pub z_w: T,
    pub n_r: T,
    pub x_uu: T,
    pub y_vv: T,
    pub z_ww: T,
    pub n_rr: T,
    /// Weight (N).
    pub gravity: T,
    /// Buoyancy (N).
    pub buoyancy: T,
    pub tau_limit: T,
}

impl<T: Scalar> Default for AuvParams<T> {
    fn default() -> Self {
        Self {
            mass: T::lit(54.54),
            iz: T::lit(13.587),
            x_udot: T::lit(-7.6e-3),
            y_vdot: T::lit(-5.5e-2),
            z_wdot: T::lit(-2.4e-1),
            n_rdot: T::lit(-3.4e-3),
            x_u: T::lit(2e-3),
            y_v: T::lit(-1e-1),
            z_w: T::lit(-3e-1),
            // no linear yaw damping coefficient is published for this vehicle
            n_r: T::zero(),
            x_uu: T::lit(2.3e-2),
            y_vv: T::lit(5.3e-2),
            z_ww: T::lit(1.7e-1),
            n_rr: T::lit(2.9e-3),
            gravity: T::lit(535.0),
            buoyancy: T::lit(53.4),
            tau_limit: T::lit(500.0),
        }
    }
}

pub type Mat4<T> = [[T; 4]; 4];

fn mat4_mul<T: Scalar>(a: &Mat4<T>, b: &Mat4<T>) -> Mat4<T> {
    let mut out = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).fold(T::zero(), |acc, k| acc + a[i][k] * b[k][j]);
        }
    }
    out
}

fn mat4_vec<T: Scalar>(a: &Mat4<T>, v: &[T; 4]) -> [T; 4] {
    let mut out = [T::zero(); 4];
    for i in 0..4 {
        out[i] = (0..4).fold(T::zero(), |acc, k| acc + a[i][k] * v[k]);
    }
    out
}

fn mat4_transpose<T: Scalar>(a: &Mat4<T>) -> Mat4<T> {
    let mut out = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn mat4_sub<T: Scalar>(a: &Mat4<T>, b: &Mat4<T>) -> Mat4<T> {
    let mut out = *a;
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = out[i][j] - b[i][j];
        }
    }
    out
}

fn diag4<T: Scalar>(d: [T; 4]) -> Mat4<T> {
    let mut out = [[T::zero(); 4]; 4];
    for i in 0..4 {
        out[i][i] = d[i];
    }
    out
}

/// Gaussian elimination with partial pivoting on a 4×4 system.
fn solve4<T: Scalar>(mut a: Mat4<T>, mut b: [T; 4]) -> [T; 4] {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] = a[row][k] - factor * a[col][k];
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    let mut x = [T::zero(); 4];
    for row in (0..4).rev() {
        let s = (row + 1..4).fold(b[row], |acc, k| acc - a[row][k] * x[k]);
        x[row] = s / a[row][row];
    }
    x
}

/// Fully actuated 4-DOF underwater vehicle (surge, sway, heave, yaw).
///
/// State `[x, y, z, ψ, ẋ, ẏ, ż, ψ̇]` in the earth frame, input the body-frame
/// generalized forces `τ`. The earth-frame inertia, Coriolis and damping
/// matrices are assembled from the body-frame ones through `J(η)` at every
/// evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Auv<T> {
    pub params: AuvParams<T>,
}

impl<T: Scalar> Default for Auv<T> {
    fn default() -> Self {
        Self::new(AuvParams::default())
    }
}

impl<T: Scalar> Auv<T> {
    pub fn new(params: AuvParams<T>) -> Self {
        Self { params }
    }

    /// Rigid-body plus added mass, `M = diag(m − X_u̇, m − Y_v̇, m − Z_ẇ, I_z − N_ṙ)`.
    pub fn mass_diag(&self) -> [T; 4] {
        let p = &self.params;
        [p.mass - p.x_udot, p.mass - p.y_vdot, p.mass - p.z_wdot, p.iz - p.n_rdot]
    }

    pub fn mass_matrix(&self) -> Mat4<T> {
        diag4(self.mass_diag())
    }

    /// Earth-from-body transform for yaw `psi`.
    pub fn rotation(psi: T) -> Mat4<T> {
        let (s, c) = psi.sin_cos();
        let (o, l) = (T::zero(), T::one());
        [[c, -s, o, o], [s, c, o, o], [o, o, l, o], [o, o, o, l]]
    }

    /// `dJ/dψ`.
    pub fn rotation_derivative(psi: T) -> Mat4<T> {
        let (s, c) = psi.sin_cos();
        let o = T::zero();
        [[-s, -c, o, o], [c, -s, o, o], [o, o, o, o], [o, o, o, o]]
    }

    pub fn coriolis(&self, v: &[T; 4]) -> Mat4<T> {
        let m = self.mass_diag();
        let (u, sway) = (v[0], v[1]);
        let o = T::zero();
        [
            [o, o, o, -m[1] * sway],
            [o, o, o, m[0] * u],
            [o, o, o, o],
            [m[1] * sway, -m[0] * u, o, o],
        ]
    }

    pub fn damping(&self, v: &[T; 4]) -> Mat4<T> {
        let p = &self.params;
        diag4([
            -(p.x_u + p.x_uu * v[0].abs()),
            -(p.y_v + p.y_vv * v[1].abs()),
            -(p.z_w + p.z_ww * v[2].abs()),
            -(p.n_r + p.n_rr * v[3].abs()),
        ])
    }

    /// Gravity/buoyancy restoring vector `[0, 0, −(G − B), 0]`.
    pub fn restoring(&self) -> [T; 4] {
        let p = &self.params;
        [T::zero(), T::zero(), -(p.gravity - p.buoyancy), T::zero()]
    }

    /// Earth-frame `(M(η), C(η̇, η), D(η̇, η))`.
    pub fn earth_frame_matrices(&self, eta: &[T; 4], eta_dot: &[T; 4]) -> (Mat4<T>, Mat4<T>, Mat4<T>) {
        let j = Self::rotation(eta[3]);
        let jt = mat4_transpose(&j);
        // J is orthogonal: J⁻¹ = Jᵀ and J⁻ᵀ = J.
        let (j_inv, j_inv_t) = (jt, j);
        let mut j_dot = Self::rotation_derivative(eta[3]);
        for row in j_dot.iter_mut() {
            for e in row.iter_mut() {
                *e = *e * eta_dot[3];
            }
        }
        let v = mat4_vec(&j_inv, eta_dot);
        let m = self.mass_matrix();

        let m_eta = mat4_mul(&mat4_mul(&j_inv_t, &m), &j_inv);
        let inner = mat4_sub(&self.coriolis(&v), &mat4_mul(&mat4_mul(&m, &j_inv), &j_dot));
        let c_eta = mat4_mul(&mat4_mul(&j_inv_t, &inner), &j_inv);
        let d_eta = mat4_mul(&mat4_mul(&j_inv_t, &self.damping(&v)), &j_inv);
        (m_eta, c_eta, d_eta)
    }
}

impl<T: Scalar> Dynamics<T> for Auv<T> {
    fn name(&self) -> &str {
        "auv"
    }
    fn state_dim(&self) -> usize {
        8
    }
    fn input_dim(&self) -> usize {
        4
    }
    fn state_labels(&self) -> Vec<String> {
        labels(&["x", "y", "z", "psi", "x_dot", "y_dot", "z_dot", "psi_dot"])
    }
    fn input_labels(&self) -> Vec<String> {
        labels(&["tau_u", "tau_v", "tau_w", "tau_r"])
    }
    fn input_bounds(&self) -> Vec<(T, T)> {
        let lim = self.params.tau_limit;
        vec![(-lim, lim); 4]
    }
    fn position_dim(&self) -> usize {
        3
    }

    fn field(&self, x: &[T], u: &[T], dx: &mut [T]) {
        let eta = [x[0], x[1], x[2], x[3]];
        let eta_dot = [x[4], x[5], x[6], x[7]];
        let tau = [u[0], u[1], u[2], u[3]];
        let (m_eta, c_eta, d_eta) = self.earth_frame_matrices(&eta, &eta_dot);
        let j = Self::rotation(eta[3]);
        let tau_bar = mat4_vec(&j, &tau);
        let g_eta = mat4_vec(&j, &self.restoring());
        let c_term = mat4_vec(&c_eta, &eta_dot);
        let d_term = mat4_vec(&d_eta, &eta_dot);
        let mut rhs = [T::zero(); 4];
        for i in 0..4 {
            rhs[i] = tau_bar[i] - c_term[i] - d_term[i] - g_eta[i];
        }
        let eta_ddot = solve4(m_eta, rhs);
        dx[..4].copy_from_slice(&eta_dot);
        dx[4..8].copy_from_slice(&eta_ddot);
    }

    /// `Σᵢ (Xᵢ + 2 X_|i|i |νᵢ|) / Mᵢᵢ` with `ν = Jᵀ η̇`; the Coriolis and
    /// frame-rotation terms are trace free.
    fn analytic_divergence(&self, x: &[T], _u: &[T]) -> Option<T> {
        let p = &self.params;
        let jt = mat4_transpose(&Self::rotation(x[3]));
        let v = mat4_vec(&jt, &[x[4], x[5], x[6], x[7]]);
        let m = self.mass_diag();
        let lin = [p.x_u, p.y_v, p.z_w, p.n_r];
        let quad = [p.x_uu, p.y_vv, p.z_ww, p.n_rr];
        let two = T::lit(2.0);
        Some((0..4).fold(T::zero(), |acc, i| acc + (lin[i] + two * quad[i] * v[i].abs()) / m[i]))
    }

    fn hold_input(&self, _x: &[T]) -> Vec<T> {
        self.restoring().to_vec()
    }
}

/// Names accepted by [`builtin`].
pub const MODEL_NAMES: [&str; 3] = ["unicycle", "auv", "single_integrator_2d"];

pub fn builtin<T: Scalar>(name: &str) -> Result<Box<dyn Dynamics<T>>> {
    match name {
        "unicycle" => Ok(Box::new(Unicycle)),
        "auv" => Ok(Box::new(Auv::<T>::default())),
        "single_integrator_2d" => Ok(Box::new(SingleIntegrator2d)),
        other => Err(Error::InvalidParameter(format!(
            "unknown model '{other}', expected one of {MODEL_NAMES:?}"
        ))),
    }
}
