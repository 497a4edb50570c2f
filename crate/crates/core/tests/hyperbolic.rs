use equistop::hyperbolic::{exit_laplace, HyperbolicModel, McSettings};

// Reference threshold for β = 1, from an independent high-precision
// computation of the tangency point of η(·, a) with the diagonal.
const A_STAR_BETA1: f64 = 0.9464754631;

#[test]
fn critical_threshold_beta_one() {
    let m = HyperbolicModel::new(1.0).unwrap();
    let a = m.a_star(1e-7).unwrap();
    assert!((a - A_STAR_BETA1).abs() < 1e-5, "a* = {a}");
    let below = m.min_gap(a * (1.0 - 1e-3)).unwrap().0;
    let above = m.min_gap(a * (1.0 + 1e-3)).unwrap().0;
    assert!(below > -1e-12 && above < -1e-8);
}

#[test]
fn threshold_scales_with_inverse_root_beta() {
    let base = HyperbolicModel::new(1.0).unwrap().a_star(1e-7).unwrap();
    for beta in [0.25, 4.0, 9.0] {
        let a = HyperbolicModel::new(beta).unwrap().a_star(1e-7).unwrap();
        assert!((a * beta.sqrt() - base).abs() < 1e-5, "beta {beta}: {a}");
    }
}

#[test]
fn interior_root_above_threshold() {
    let m = HyperbolicModel::new(1.0).unwrap();
    let a = m.a_star(1e-7).unwrap();
    let x = m.x_star(2.0 * a, a).unwrap();
    assert!((x - 0.6570467).abs() < 1e-5, "x* = {x}");
    assert!(m.x_star(0.9 * a, a).is_err());
    let near = m.x_star(a * (1.0 + 1e-3), a).unwrap();
    assert!(near > 0.9 * a && near < a * (1.0 + 1e-3));
}

#[test]
fn equilibrium_policy_is_approachable_on_grid() {
    let m = HyperbolicModel::new(2.0).unwrap();
    let p = m.equilibrium_threshold(1e-6).unwrap();
    for i in 0..=40 {
        let x = p.b * i as f64 / 40.0;
        assert!(m.eta(x, p.b).unwrap() >= x - 1e-12);
    }
}

#[test]
fn eta_is_convex_and_below_threshold() {
    let m = HyperbolicModel::new(1.0).unwrap();
    let a = 1.3;
    let v: Vec<f64> = (0..=30).map(|i| m.eta(a * i as f64 / 30.0, a).unwrap()).collect();
    for w in v.windows(3) {
        assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-13);
    }
    assert!(v.iter().all(|&e| e <= a + 1e-15 && e > 0.0));
}

#[test]
fn monte_carlo_laplace_and_reproducibility() {
    let s = McSettings { paths: 20_000, dt: 1e-3, seed: 7, ..McSettings::default() };
    let m = HyperbolicModel::new(1.0).unwrap();
    let get = || equistop::hyperbolic::mc_exit_functional(0.1, 0.4, &s, true, |t| (-2.0 * t).exp()).unwrap();
    let (r1, r2) = (get(), get());
    assert_eq!(r1, r2);
    let exact = exit_laplace(0.1, 0.4, 2.0).unwrap();
    assert!((r1.mean - exact).abs() < 4.0 * r1.se + 1e-3, "{} vs {exact}", r1.mean);
    let mc = m.mc_eta(0.1, 0.4, &s).unwrap();
    let eta = m.eta(0.1, 0.4).unwrap();
    assert!((mc.mean - eta).abs() < 4.0 * mc.se + 1e-3);
    assert_eq!(r1.samples.unwrap().len(), 20_000);
    let other = equistop::hyperbolic::mc_exit_functional(0.1, 0.4, &McSettings { seed: 8, ..s }, false, |t| t).unwrap();
    assert_ne!(other.mean, 0.0);
}

#[test]
fn class_d_bound_at_equilibrium() {
    let m = HyperbolicModel::new(1.0).unwrap();
    let p = m.equilibrium_threshold(1e-6).unwrap();
    let s = McSettings { paths: 4_000, dt: 1e-3, ..McSettings::default() };
    let r = m.class_d_bound_check(p, &s).unwrap();
    assert!(r.holds && r.estimate < r.bound);
}
