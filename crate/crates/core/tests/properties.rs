//! Randomized invariants of the pointwise modules and the solver.

use cdf_mpc::barrier::barrier_condition;
use cdf_mpc::density::{bump_step, psi, DensityField};
use cdf_mpc::dynamics::{divergence, euler_step, fd_divergence, rk4_step, Auv, Dynamics, Unicycle};
use cdf_mpc::geometry::Obstacle;
use cdf_mpc::pf::InvertibleMap;
use cdf_mpc::solver::{solve, ClosureNlp, SolveStatus, SolverConfig};
use proptest::prelude::*;

fn coord(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

fn p3() -> impl Strategy<Value = [f64; 3]> {
    [coord(-6.0, 6.0), coord(-6.0, 6.0), coord(-6.0, 6.0)]
}

/// Magnitude in `[lo, hi]` with a random sign, keeping away from kinks at zero.
fn away_from_zero(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo..hi, any::<bool>()).prop_map(|(m, neg)| if neg { -m } else { m })
}

fn shapes() -> Vec<Obstacle<f64>> {
    vec![
        Obstacle::sphere([0.5, -0.3, 0.2], 1.5, 3.0).unwrap(),
        Obstacle::cylinder([0.0, 0.4, -0.5], 1.0, 2.0, 2.5).unwrap(),
        Obstacle::torus([0.2, 0.0, 0.1], 3.0, 0.8, 2.0).unwrap(),
    ]
}

fn vel_body_clear(x: &[f64]) -> bool {
    let (c, s) = (x[3].cos(), x[3].sin());
    let (u, v) = (c * x[4] + s * x[5], -s * x[4] + c * x[5]);
    u.abs() > 1e-3 && v.abs() > 1e-3
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn euler_local_error_is_second_order(
        theta in -3.0..3.0f64,
        v in 0.5..3.0f64,
        a in 0.5..2.0f64,
        w in away_from_zero(0.3, 1.5),
    ) {
        let x = [1.0, -2.0, v, theta];
        let u = [a, w];
        // rk4 over one step is exact to O(dt⁵), a fine reference for Euler's O(dt²)
        let err = |dt: f64| diff(&euler_step(&Unicycle, &x, &u, dt), &rk4_step(&Unicycle, &x, &u, dt));
        let ratio = err(0.01) / err(0.005);
        prop_assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn unicycle_divergence_matches_fd(
        x in [coord(-10.0, 10.0), coord(-10.0, 10.0), coord(-3.0, 3.0), coord(-4.0, 4.0)],
        u in [coord(-5.0, 5.0), coord(-3.0, 3.0)],
    ) {
        let exact = divergence(&Unicycle, &x, &u).unwrap();
        prop_assert!((exact - fd_divergence(&Unicycle, &x, &u)).abs() < 1e-6);
    }

    #[test]
    fn auv_divergence_matches_fd(
        pos in [coord(-10.0, 10.0), coord(-10.0, 10.0), coord(-10.0, 10.0), coord(-3.0, 3.0)],
        vel in [away_from_zero(0.05, 2.0), away_from_zero(0.05, 2.0), away_from_zero(0.05, 2.0), away_from_zero(0.05, 1.0)],
        tau in [coord(-500.0, 500.0), coord(-500.0, 500.0), coord(-500.0, 500.0), coord(-50.0, 50.0)],
    ) {
        let auv = Auv::default();
        let x: Vec<f64> = pos.iter().chain(&vel).copied().collect();
        let exact = divergence(&auv, &x, &tau).unwrap();
        let fd = fd_divergence(&auv, &x, &tau);
        // rotation can still land a body-frame speed on the |ν| kink
        prop_assume!(vel_body_clear(&x));
        prop_assert!((exact - fd).abs() < 1e-4 * exact.abs().max(1.0), "exact {exact} fd {fd}");
    }

    #[test]
    fn auv_hold_input_is_stationary(pos in [coord(-20.0, 20.0), coord(-20.0, 20.0), coord(-20.0, 20.0), coord(-3.2, 3.2)]) {
        let auv = Auv::default();
        let x = [pos[0], pos[1], pos[2], pos[3], 0.0, 0.0, 0.0, 0.0];
        let u = auv.hold_input(&x);
        let mut dx = [0.0; 8];
        auv.field(&x, &u, &mut dx);
        prop_assert!(norm(&dx) < 1e-9, "{dx:?}");
    }

    #[test]
    fn level_sign_matches_surface_distance(p in p3()) {
        for o in shapes() {
            let h = o.h(&p).unwrap();
            let d = o.surface_distance(&p).unwrap();
            prop_assume!(d.abs() > 1e-6);
            prop_assert_eq!(h > 0.0, d > 0.0, "{} at {:?}: h {} d {}", o.shape_name(), p, h, d);
        }
    }

    #[test]
    fn sensing_set_contains_obstacle(p in p3()) {
        for o in shapes() {
            let (h, s) = (o.h(&p).unwrap(), o.sense(&p).unwrap());
            // inside the sensing set whenever inside the obstacle
            if h <= 0.0 {
                prop_assert!(s < 0.0, "{} at {:?}", o.shape_name(), p);
            }
            if s >= 0.0 {
                prop_assert!(h > 0.0);
            }
        }
    }

    #[test]
    fn level_gradient_matches_fd(p in p3()) {
        for o in shapes() {
            let g = o.grad_h(&p).unwrap();
            let eps = 1e-6;
            for i in 0..3 {
                let (mut a, mut b) = (p, p);
                a[i] += eps;
                b[i] -= eps;
                let fd = (o.h(&a).unwrap() - o.h(&b).unwrap()) / (2.0 * eps);
                prop_assert!((g[i] - fd).abs() < 1e-4 * g[i].abs().max(1.0), "{} axis {i}: {} vs {fd}", o.shape_name(), g[i]);
            }
        }
    }

    #[test]
    fn bump_partition_of_unity(t in -0.5..1.5f64) {
        prop_assert!((bump_step(t) + bump_step(1.0 - t) - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&bump_step(t)));
    }

    #[test]
    fn bump_is_monotone(a in -0.5..1.5f64, b in -0.5..1.5f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bump_step(lo) <= bump_step(hi));
    }

    #[test]
    fn density_vanishes_inside_obstacles(dir in p3(), frac in 0.0..0.999f64) {
        let n = norm(&dir);
        prop_assume!(n > 1e-3);
        let sphere = Obstacle::sphere([1.0, 2.0, -1.0], 1.5, 3.0).unwrap();
        let p: Vec<f64> = dir.iter().zip([1.0, 2.0, -1.0]).map(|(d, c)| c + d / n * 1.5 * frac).collect();
        prop_assert_eq!(psi(&sphere, &p), 0.0);
        let field = DensityField::new(vec![sphere], 0.1, vec![9.0, 9.0, 9.0], 0.01).unwrap();
        prop_assert_eq!(field.rho(&p).unwrap(), 0.0);
    }

    #[test]
    fn density_is_positive_and_bounded_outside(p in p3()) {
        let sphere = Obstacle::sphere([1.0, 2.0, -1.0], 1.5, 3.0).unwrap();
        prop_assume!(sphere.h(&p).unwrap() > 1e-3);
        let field = DensityField::new(vec![sphere.clone()], 0.5, vec![0.0; 3], 0.01).unwrap();
        let rho = field.rho(&p).unwrap();
        prop_assert!(rho > 0.0 && rho.is_finite());
        prop_assert!(rho <= field.v(&p).max(1e-4).powf(-0.5) + 1e-12);
    }

    #[test]
    fn barrier_condition_is_homogeneous(h0 in -5.0..5.0f64, h1 in -5.0..5.0f64, gamma in 0.01..1.0f64, c in 0.1..10.0f64) {
        let base = barrier_condition(h0, h1, gamma);
        prop_assert!((barrier_condition(c * h0, c * h1, gamma) - c * base).abs() < 1e-9 * (1.0 + c * base.abs()));
        // a non-decreasing barrier always satisfies the condition on the safe set
        if h0 >= 0.0 && h1 >= h0 {
            prop_assert!(base >= 0.0);
        }
    }

    #[test]
    fn affine_map_inverse_round_trip(
        m in [coord(-2.0, 2.0), coord(-2.0, 2.0), coord(-2.0, 2.0), coord(-2.0, 2.0)],
        c in [coord(-3.0, 3.0), coord(-3.0, 3.0)],
        x in [coord(-5.0, 5.0), coord(-5.0, 5.0)],
    ) {
        let det = m[0] * m[3] - m[1] * m[2];
        prop_assume!(det.abs() > 0.1);
        let map = InvertibleMap::affine(vec![vec![m[0], m[1]], vec![m[2], m[3]]], c.to_vec()).unwrap();
        let back = map.inverse(&map.forward(&x));
        prop_assert!(diff(&back, &x) < 1e-9);
        prop_assert!((map.inv_jac_det(&x) * det.abs() - 1.0).abs() < 1e-9);
    }
}

/// `min ½ zᵀHz + gᵀz  s.t.  Az ≥ b` with `H = LLᵀ + I`.
fn random_qp(l: [f64; 4], g: [f64; 2], a: [f64; 2], b: f64) -> ClosureNlp {
    let h = [
        [l[0] * l[0] + 1.0, l[0] * l[2]],
        [l[0] * l[2], l[2] * l[2] + l[3] * l[3] + 1.0],
    ];
    let hz = move |z: &[f64]| [h[0][0] * z[0] + h[0][1] * z[1], h[1][0] * z[0] + h[1][1] * z[1]];
    ClosureNlp::unconstrained(2, move |z| {
        let v = hz(z);
        0.5 * (z[0] * v[0] + z[1] * v[1]) + g[0] * z[0] + g[1] * z[1]
    })
    .with_gradient(move |z| {
        let v = hz(z);
        vec![v[0] + g[0], v[1] + g[1]]
    })
    .with_ineq(1, move |z| vec![a[0] * z[0] + a[1] * z[1] - b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convex_qp_reaches_kkt(
        l in [coord(-2.0, 2.0), coord(-2.0, 2.0), coord(-2.0, 2.0), coord(-2.0, 2.0)],
        g in [coord(-3.0, 3.0), coord(-3.0, 3.0)],
        (a0, a1) in (away_from_zero(0.2, 2.0), coord(-2.0, 2.0)),
        b in -2.0..2.0f64,
    ) {
        let a = [a0, a1];
        let nlp = random_qp(l, g, a, b);
        let cfg = SolverConfig::default();
        let r = solve(&nlp, &[0.0, 0.0], &cfg).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        prop_assert!(r.kkt_residual <= 1e-5, "kkt {}", r.kkt_residual);
        prop_assert!(a[0] * r.z[0] + a[1] * r.z[1] - b >= -1e-7);
        prop_assert!(r.mu[0] >= -1e-9);
        let again = solve(&nlp, &[0.0, 0.0], &cfg).unwrap();
        prop_assert_eq!(&r.z, &again.z);
    }
}
