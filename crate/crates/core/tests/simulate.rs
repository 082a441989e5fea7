use sindy_core::simulate::{simulate, FnField, Integrator};
use sindy_core::{integrate, true_model, LibrarySpec, OdeSystem, SimConfig, SystemKind};

fn cfg(x0: Vec<f64>, t_end: f64, dt: f64) -> SimConfig {
    SimConfig {
        x0,
        t_end,
        dt,
        method: Integrator::Rk4,
    }
}

#[test]
fn rk4_is_fourth_order_on_linear_decay() {
    let field = FnField {
        dim: 1,
        f: |x: &[f64], dx: &mut [f64]| dx[0] = -x[0],
    };
    let endpoint_error = |dt: f64| {
        let ts = integrate(&field, vec!["u".into()], &cfg(vec![1.0], 2.0, dt)).unwrap();
        (ts.values()[(ts.n_samples() - 1, 0)] - (-2.0f64).exp()).abs()
    };
    let ratio = endpoint_error(0.1) / endpoint_error(0.05);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn sir_conserves_population_and_stays_nonnegative() {
    let sys = OdeSystem::new(SystemKind::Sir);
    let ts = simulate(&sys, &sys.default_sim()).unwrap();
    for i in 0..ts.n_samples() {
        let row = ts.values().row(i);
        assert!((row.sum() - 1.0).abs() < 1e-12, "row {i}");
        assert!(row.iter().all(|&v| v >= -1e-9), "row {i}");
    }
}

#[test]
fn pendulum_energy_drift_is_small() {
    let sys = OdeSystem::new(SystemKind::Pendulum);
    let g = sys.p("g_over_l");
    let ts = simulate(&sys, &cfg(vec![2.0, 0.0], 10.0, 1e-3)).unwrap();
    assert_eq!(ts.n_samples(), 10_001);
    let energy = |i: usize| {
        let (th, om) = (ts.values()[(i, 0)], ts.values()[(i, 1)]);
        0.5 * om * om - g * th.cos()
    };
    let e0 = energy(0);
    let drift = (0..ts.n_samples()).map(|i| (energy(i) - e0).abs()).fold(0.0, f64::max);
    assert!(drift / e0.abs() < 1e-4, "drift {drift}");
}

#[test]
fn lorenz_converges_as_dt_shrinks() {
    let sys = OdeSystem::new(SystemKind::Lorenz);
    let end = |dt: f64| {
        let ts = simulate(&sys, &cfg(vec![-8.0, 7.0, 27.0], 1.0, dt)).unwrap();
        ts.values().row(ts.n_samples() - 1).into_owned()
    };
    let reference = end(1e-4);
    let coarse = (end(4e-3) - &reference).amax();
    let fine = (end(2e-3) - &reference).amax();
    assert!(fine < coarse / 8.0, "coarse {coarse} fine {fine}");
    assert!(fine < 1e-3);
}

#[test]
fn default_trajectories_are_finite_and_moving() {
    for kind in SystemKind::ALL {
        let sys = OdeSystem::new(kind);
        let ts = simulate(&sys, &sys.default_sim()).unwrap();
        for j in 0..ts.n_vars() {
            let col = ts.values().column(j);
            assert!(col.iter().all(|v| v.is_finite()));
            assert!(col.max() - col.min() > 1e-3, "{kind} variable {j} is flat");
        }
    }
}

#[test]
fn lorenz_x_equation_uses_x_and_y_only() {
    let sys = OdeSystem::new(SystemKind::Lorenz);
    let truth = true_model(&sys, &LibrarySpec::polynomial(2)).unwrap();
    let mut labels = truth.support_labels(0);
    labels.sort();
    assert_eq!(labels, ["x", "y"]);
}

#[test]
fn pendulum_with_trig_library_selects_omega_and_sine() {
    let sys = OdeSystem::new(SystemKind::Pendulum);
    let truth = true_model(&sys, &sys.canonical_library()).unwrap();
    let mut labels = truth.support_labels(1);
    labels.sort();
    assert_eq!(labels, ["sin(theta)"]);
    assert_eq!(truth.support_labels(0), ["omega"]);
}

#[test]
fn empty_library_is_a_coverage_error() {
    let sys = OdeSystem::new(SystemKind::Lorenz);
    let spec = LibrarySpec {
        include_constant: false,
        ..LibrarySpec::polynomial(0)
    };
    assert!(true_model(&sys, &spec).is_err());
}
