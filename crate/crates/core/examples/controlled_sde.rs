//! Controlled forward SDE ensembles against the Gaussian moment oracle.

use rectiflow::control::GuidanceSchedule;
use rectiflow::oracle::{controlled_forward_sde_linear, integrate_moments, MomentState};
use rectiflow::rng::derive_seed;
use rectiflow::simulate::{run_terminal, ProcessSpec};
use rectiflow::state::{EnsembleStats, GaussianDist, StateVec, TimeGrid, DEFAULT_DELTA};

fn main() -> rectiflow::Result<()> {
    let p0 = GaussianDist::isotropic(StateVec::splat(1, 10.0), 1.0)?;
    let y1 = StateVec::splat(1, -0.5);
    let grid = TimeGrid::new(1000, 0.0, 0.95, DEFAULT_DELTA)?;
    let init = p0.sample(derive_seed(1, "init"), 4000)?;
    for gamma in [0.0, 0.5, 1.0] {
        let spec = ProcessSpec::fwd_ctrl_sde(y1.clone(), GuidanceSchedule::constant(gamma)?, grid)?;
        let terminal = run_terminal(&spec, &init, derive_seed(1, "noise"))?;
        let stats = EnsembleStats::from_states(&terminal)?;
        let oracle = controlled_forward_sde_linear(gamma, y1.clone(), DEFAULT_DELTA);
        let moments = integrate_moments(&oracle, &MomentState::from_gaussian(&p0), &grid)?;
        let exact = moments.last().expect("grid has points");
        println!(
            "gamma {gamma:.1}: mean {:>8.4} (oracle {:>8.4}, se {:.4})  var {:.4} (oracle {:.4})",
            stats.mean[0],
            exact.mean[0],
            stats.mean_standard_error()[0],
            stats.cov_diag[0],
            exact.var_diag[0]
        );
    }
    Ok(())
}
