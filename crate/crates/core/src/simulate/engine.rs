use rayon::prelude::*;

use super::ProcessSpec;
use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::state::{StateVec, Trajectory};

/// `x + drift * dsigma`.
pub fn euler_step(x: &StateVec, drift: &StateVec, dsigma: f64) -> Result<StateVec> {
    let out = x.axpy(dsigma, drift)?;
    if !out.is_finite() {
        return Err(Error::NonFinite {
            context: "euler step".into(),
            step: None,
        });
    }
    Ok(out)
}

/// `x + drift * dt + g * sqrt(dt) * noise`.
pub fn euler_maruyama_step(
    x: &StateVec,
    drift: &StateVec,
    g: f64,
    dt: f64,
    noise: &StateVec,
) -> Result<StateVec> {
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::invalid("diffusion", format!("must be finite and >= 0, got {g}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    noise.check_dim(x.dim())?;
    drift.check_dim(x.dim())?;
    let out = em_update(x, drift, g * dt.sqrt(), dt, noise.as_slice());
    if !out.is_finite() {
        return Err(Error::NonFinite {
            context: "euler-maruyama step".into(),
            step: None,
        });
    }
    Ok(out)
}

#[inline]
fn em_update(x: &StateVec, drift: &StateVec, scale: f64, dt: f64, z: &[f64]) -> StateVec {
    StateVec::from_fn(x.dim(), |i| (x[i] + dt * drift[i]) + scale * z[i])
}

/// Which grid points a simulation keeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Full,
    Terminal,
    /// Grid indices, ascending; the initial state is index 0.
    At(Vec<usize>),
}

impl Record {
    fn keeps(&self, i: usize, last: usize) -> bool {
        match self {
            Record::Full => true,
            Record::Terminal => i == last,
            Record::At(idx) => idx.binary_search(&i).is_ok(),
        }
    }
}

fn with_step(e: Error, k: usize) -> Error {
    match e {
        Error::NonFinite { context, step: None } => Error::NonFinite {
            context,
            step: Some(k),
        },
        other => other,
    }
}

/// Simulates one particle. Noise for step `k` is keyed by `(seed, particle_id, k)`.
pub fn run_particle(
    spec: &ProcessSpec,
    init: &StateVec,
    seed: u64,
    particle_id: u64,
    record: &Record,
) -> Result<Trajectory> {
    let grid = &spec.grid;
    let dyn_ = &spec.dynamics;
    let d = init.dim();
    if let Some(expected) = dyn_.dim() {
        init.check_dim(expected)?;
    }
    let stochastic = dyn_.is_stochastic();
    let mut stream = stochastic.then(|| NoiseStream::new(seed, particle_id, d));
    let mut z = vec![0.0; d];

    let n = grid.steps;
    let mut times = Vec::new();
    let mut states = Vec::new();
    if record.keeps(0, n) {
        times.push(grid.point(0));
        states.push(init.clone());
    }
    let mut x = init.clone();
    for k in 0..n {
        let (t, t_next) = (grid.point(k), grid.point(k + 1));
        let drift = dyn_.drift(&x, t).map_err(|e| with_step(e, k))?;
        if !drift.is_finite() {
            return Err(Error::NonFinite {
                context: format!("drift of {}", spec.kind.name()),
                step: Some(k),
            });
        }
        x = match stream.as_mut() {
            Some(s) => {
                s.normals_at(k, &mut z);
                let noise = StateVec::from_slice_unchecked(&z);
                euler_maruyama_step(&x, &drift, dyn_.diffusion(t), t_next - t, &noise)
            }
            None => {
                let dsigma = spec.sigma.sigma(t_next) - spec.sigma.sigma(t);
                euler_step(&x, &drift, dsigma)
            }
        }
        .map_err(|e| with_step(e, k))?;
        if record.keeps(k + 1, n) {
            times.push(t_next);
            states.push(x.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        particle_id,
        seed,
    })
}

/// One full trajectory per initial state; particle `i` uses noise stream `i`.
pub fn run_process(spec: &ProcessSpec, init: &[StateVec], seed: u64) -> Result<Vec<Trajectory>> {
    run_process_recorded(spec, init, seed, &Record::Full)
}

pub fn run_process_recorded(
    spec: &ProcessSpec,
    init: &[StateVec],
    seed: u64,
    record: &Record,
) -> Result<Vec<Trajectory>> {
    let first = init
        .first()
        .ok_or_else(|| Error::invalid("init", "needs at least one initial state"))?;
    let d = first.dim();
    for s in init {
        s.check_dim(d)?;
    }
    init.par_iter()
        .enumerate()
        .map(|(i, x0)| run_particle(spec, x0, seed, i as u64, record))
        .collect()
}

/// Terminal states only, in particle order.
pub fn run_terminal(spec: &ProcessSpec, init: &[StateVec], seed: u64) -> Result<Vec<StateVec>> {
    Ok(run_process_recorded(spec, init, seed, &Record::Terminal)?
        .into_iter()
        .map(|mut t| t.states.pop().expect("terminal state recorded"))
        .collect())
}
