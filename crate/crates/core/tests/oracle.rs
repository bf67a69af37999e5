//! Moment oracles against closed forms, ODE/SDE moment agreement, and LQR.

use rectiflow::oracle::{
    closed_form_controls, controlled_forward_ode_linear, controlled_forward_sde_linear, controlled_reverse_ode_linear,
    controlled_reverse_sde_linear, finite_lambda_control, integrate_moments, lqr_bruteforce, lqr_cost, ou_sde_linear,
    rf_reverse_sde_linear, stationary_profile_check, MomentState,
};
use rectiflow::fields::InterpolationMarginal;
use rectiflow::rng::derive_seed;
use rectiflow::state::{GaussianDist, StateVec, TimeGrid, DEFAULT_DELTA};

fn sv(v: f64) -> StateVec {
    StateVec::splat(1, v)
}

fn moments(mean: f64, var: f64) -> MomentState {
    MomentState {
        mean: sv(mean),
        var_diag: vec![var],
    }
}

#[test]
fn controlled_forward_sde_closed_form() {
    // mean (1-t) m0 + t gamma y1, variance (1-t)^2 v0 + (1-gamma) t^2
    let grid = TimeGrid::new(300, 0.0, 0.97, DEFAULT_DELTA).unwrap();
    let (m0, v0, y1) = (10.0, 1.5, -0.7);
    for gamma in [0.0, 0.3, 0.7, 1.0] {
        let path = integrate_moments(&controlled_forward_sde_linear(gamma, sv(y1), DEFAULT_DELTA), &moments(m0, v0), &grid).unwrap();
        for (t, m) in grid.points().into_iter().zip(&path) {
            let mean = (1.0 - t) * m0 + t * gamma * y1;
            let var = (1.0 - t).powi(2) * v0 + (1.0 - gamma) * t * t;
            assert!((m.mean[0] - mean).abs() < 1e-9, "gamma {gamma} t {t}");
            assert!((m.var_diag[0] - var).abs() < 1e-9, "gamma {gamma} t {t}: {} vs {var}", m.var_diag[0]);
        }
    }
}

#[test]
fn forward_ode_and_sde_share_moments() {
    let grid = TimeGrid::new(400, 0.0, 0.99, DEFAULT_DELTA).unwrap();
    for gamma in [0.0, 0.5, 0.9] {
        let sde = integrate_moments(&controlled_forward_sde_linear(gamma, sv(1.0), DEFAULT_DELTA), &moments(10.0, 1.0), &grid).unwrap();
        let ode = integrate_moments(&controlled_forward_ode_linear(gamma, sv(1.0), DEFAULT_DELTA), &moments(10.0, 1.0), &grid).unwrap();
        for (a, b) in sde.iter().zip(&ode) {
            assert!((a.mean[0] - b.mean[0]).abs() < 1e-9);
            assert!((a.var_diag[0] - b.var_diag[0]).abs() < 1e-9);
        }
    }
}

#[test]
fn reverse_ode_and_sde_share_moments() {
    // reverse dynamics amplify any variance deficit, so start on the interpolation marginal
    let grid = TimeGrid::new(400, 0.05, 0.95, DEFAULT_DELTA).unwrap();
    let start = moments(0.05 * 10.0, 0.95 * 0.95 + 0.05 * 0.05);
    for eta in [0.0, 0.5, 1.0] {
        let sde = integrate_moments(&controlled_reverse_sde_linear(eta, sv(10.0), DEFAULT_DELTA), &start, &grid).unwrap();
        let ode = integrate_moments(&controlled_reverse_ode_linear(eta, sv(10.0), DEFAULT_DELTA), &start, &grid).unwrap();
        for (a, b) in sde.iter().zip(&ode) {
            assert!((a.mean[0] - b.mean[0]).abs() < 1e-8, "eta {eta}");
            assert!((a.var_diag[0] - b.var_diag[0]).abs() < 1e-8, "eta {eta}");
        }
    }
}

#[test]
fn reverse_rf_sde_retraces_the_interpolation_marginals() {
    let p0 = GaussianDist::isotropic(sv(10.0), 1.0).unwrap();
    let interp = InterpolationMarginal::to_standard_noise(p0.clone());
    let grid = TimeGrid::new(500, 0.05, 0.95, DEFAULT_DELTA).unwrap();
    let start = MomentState::from_gaussian(&interp.marginal_at(0.95).unwrap());
    let path = integrate_moments(&rf_reverse_sde_linear(&p0, DEFAULT_DELTA).unwrap(), &start, &grid).unwrap();
    for (t, m) in grid.points().into_iter().zip(&path) {
        let exact = interp.marginal_at(1.0 - t).unwrap();
        assert!((m.mean[0] - exact.mean[0]).abs() < 1e-8, "t {t}");
        assert!((m.var_diag[0] - exact.var_diag[0]).abs() < 1e-8, "t {t}");
    }
}

#[test]
fn ou_closed_form() {
    let grid = TimeGrid::new(200, 0.0, 4.0, DEFAULT_DELTA).unwrap();
    let path = integrate_moments(&ou_sde_linear(1), &moments(10.0, 0.25), &grid).unwrap();
    for (t, m) in grid.points().into_iter().zip(&path) {
        let e = (-t).exp();
        assert!((m.mean[0] - 10.0 * e).abs() < 1e-9);
        assert!((m.var_diag[0] - (0.25 * e * e + 1.0 - e * e)).abs() < 1e-9);
    }
}

#[test]
fn closed_form_controller_is_optimal() {
    let std2 = GaussianDist::standard(2);
    let a = std2.sample(derive_seed(9, "a"), 4).unwrap();
    let b = std2.sample(derive_seed(9, "b"), 4).unwrap();
    for (y0, y1) in a.iter().zip(&b) {
        for n in [10, 50] {
            let closed = lqr_cost(y0, y1, 1e6, &closed_form_controls(y0, y1, n).unwrap()).unwrap();
            let brute = lqr_bruteforce(y0, y1, 1e6, n).unwrap();
            assert!(closed <= brute.cost + 1e-4, "{closed} vs {}", brute.cost);
            assert!(brute.cost <= closed + 1e-9);
        }
    }
}

#[test]
fn finite_lambda_control_approaches_the_terminal_controller() {
    let (z, y1, t) = (sv(2.0), sv(-1.0), 0.4);
    let limit = (-1.0 - 2.0) / (1.0 - t);
    let mut prev = f64::INFINITY;
    for lambda in [1.0, 1e2, 1e4, 1e8] {
        let gap = (finite_lambda_control(&z, &y1, t, lambda).unwrap()[0] - limit).abs();
        assert!(gap < prev);
        prev = gap;
    }
    assert!(prev < 1e-7);
}

#[test]
fn profile_check_flags_wrong_variance() {
    let t = 0.999;
    let var = (1.0 - t) * (1.0 - t) + t * t;
    let good = GaussianDist::isotropic(sv(0.0), var).unwrap().sample(1, 20_000).unwrap();
    let report = stationary_profile_check(&good, t).unwrap();
    assert!(report.pass && report.interpolation_rel_dev < 0.05, "{report:?}");
    let wide = GaussianDist::isotropic(sv(0.0), 1.3).unwrap().sample(1, 20_000).unwrap();
    assert!(!stationary_profile_check(&wide, t).unwrap().pass);
}
