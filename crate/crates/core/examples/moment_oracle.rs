//! Mean and variance paths of linear-Gaussian processes.

use rectiflow::oracle::{integrate_moments, ou_sde_linear, rf_forward_sde_linear, MomentState};
use rectiflow::state::{GaussianDist, StateVec, TimeGrid, DEFAULT_DELTA};

fn main() -> rectiflow::Result<()> {
    let p0 = GaussianDist::isotropic(StateVec::splat(1, 10.0), 1.0)?;
    let init = MomentState::from_gaussian(&p0);

    let grid = TimeGrid::new(10, 0.0, 1.0 - DEFAULT_DELTA, DEFAULT_DELTA)?;
    let rf = integrate_moments(&rf_forward_sde_linear(1, DEFAULT_DELTA), &init, &grid)?;
    println!("stochastic RF: the interpolation marginal N((1-t) mu, (1-t)^2 + t^2)");
    for (t, m) in grid.points().iter().zip(&rf) {
        let v = (1.0 - t) * (1.0 - t) + t * t;
        println!("  t {t:.3}  mean {:>8.4}  var {:.6}  (interpolation var {v:.6})", m.mean[0], m.var_diag[0]);
    }

    let horizon = (1.0 / DEFAULT_DELTA).ln();
    let grid = TimeGrid::new(6, 0.0, horizon, DEFAULT_DELTA)?;
    let ou = integrate_moments(&ou_sde_linear(1), &init, &grid)?;
    println!("OU: mean mu e^-t, unit variance throughout");
    for (t, m) in grid.points().iter().zip(&ou) {
        println!("  t {t:.3}  mean {:>8.4}  var {:.6}", m.mean[0], m.var_diag[0]);
    }
    Ok(())
}
