//! The closed-form terminal-cost controller against a numerical optimizer.

use rectiflow::oracle::{closed_form_controls, lqr_bruteforce, lqr_cost};
use rectiflow::rng::derive_seed;
use rectiflow::state::GaussianDist;

fn main() -> rectiflow::Result<()> {
    let (lambda, steps) = (1e6, 100);
    let std3 = GaussianDist::standard(3);
    let starts = std3.sample(derive_seed(7, "y0"), 5)?;
    let targets = std3.sample(derive_seed(7, "y1"), 5)?;
    println!("{:>3} {:>16} {:>16} {:>12} {:>6}", "#", "closed form", "optimizer", "excess", "iters");
    for (i, (y0, y1)) in starts.iter().zip(&targets).enumerate() {
        let closed = lqr_cost(y0, y1, lambda, &closed_form_controls(y0, y1, steps)?)?;
        let brute = lqr_bruteforce(y0, y1, lambda, steps)?;
        println!(
            "{i:>3} {closed:>16.9} {:>16.9} {:>12.2e} {:>6}",
            brute.cost,
            closed - brute.cost,
            brute.iterations
        );
    }
    Ok(())
}
