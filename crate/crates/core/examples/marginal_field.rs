//! The exact marginal velocity field for Gaussian data and its score identities.

use std::sync::Arc;

use rectiflow::fields::{
    analytic_marginal_field, field_from_score, score_from_field, tweedie_posterior_mean_y0, InterpolationMarginal,
    ScoreField,
};
use rectiflow::state::{GaussianDist, StateVec, DEFAULT_DELTA};

fn main() -> rectiflow::Result<()> {
    let p0 = GaussianDist::isotropic(StateVec::splat(1, 10.0), 1.0)?;
    let marginal = InterpolationMarginal::to_standard_noise(p0);
    let u = analytic_marginal_field(&marginal)?;
    let via_score = field_from_score(Arc::new(marginal.clone()), DEFAULT_DELTA);

    println!("{:>5} {:>7} {:>12} {:>12} {:>12} {:>12}", "t", "y", "u(y,t)", "from score", "score", "E[Y0|y]");
    for t in [0.1, 0.5, 0.9] {
        for y in [-1.0, 5.0, 9.0] {
            let y = StateVec::splat(1, y);
            let field = u.eval(&y, t)?[0];
            let rebuilt = via_score.eval(&y, t)?[0];
            let score = marginal.score(&y, t)?[0];
            let back = score_from_field(u.as_ref(), &y, t, DEFAULT_DELTA)?[0];
            assert!((back - score).abs() <= 1e-10 * score.abs().max(1.0));
            let y0 = tweedie_posterior_mean_y0(&marginal, &y, t, DEFAULT_DELTA)?[0];
            println!("{t:>5} {:>7} {field:>12.6} {rebuilt:>12.6} {score:>12.6} {y0:>12.6}", y[0]);
        }
    }
    Ok(())
}
