//! Ground truth for the simulators: Gaussian moment ODEs of linear-drift
//! processes, a brute-force LQR solver and the instantaneous-profile check.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScoreField;
use crate::state::{clip_both, clip_upper, EnsembleStats, GaussianDist, StateVec, TimeGrid};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> StateVec + Send + Sync>;

/// `dY = (A(t) Y + b(t) + k(t) grad log q_t(Y)) dt + g(t) dW`, where `q_t` is the
/// process's own (Gaussian) marginal. Moments evolve as
/// `m' = A m + b`, `P' = 2 A P + g^2 - 2 k`.
#[derive(Clone)]
pub struct LinearDriftSpec {
    pub dim: usize,
    pub slope: ScalarFn,
    pub offset: VectorFn,
    pub diffusion_sq: ScalarFn,
    pub self_score: ScalarFn,
}

impl LinearDriftSpec {
    pub fn new(dim: usize, slope: ScalarFn, offset: VectorFn, diffusion_sq: ScalarFn) -> Self {
        LinearDriftSpec {
            dim,
            slope,
            offset,
            diffusion_sq,
            self_score: Arc::new(|_| 0.0),
        }
    }

    pub fn with_self_score(mut self, k: ScalarFn) -> Self {
        self.self_score = k;
        self
    }

    /// Drift at `x` given the current marginal `q` (needed only when `k != 0`).
    pub fn drift_at(&self, x: &StateVec, t: f64, q: Option<&GaussianDist>) -> Result<StateVec> {
        let a = (self.slope)(t);
        let lin = x.scale(a).add(&(self.offset)(t))?;
        let k = (self.self_score)(t);
        if k == 0.0 {
            return Ok(lin);
        }
        let q = q.ok_or_else(|| Error::invalid("marginal", "self-score term needs the marginal"))?;
        lin.axpy(k, &q.score(x)?)
    }

    fn rhs(&self, t: f64, m: &[f64], p: &[f64], dm: &mut [f64], dp: &mut [f64]) {
        let a = (self.slope)(t);
        let b = (self.offset)(t);
        let g2 = (self.diffusion_sq)(t);
        let k = (self.self_score)(t);
        for i in 0..m.len() {
            dm[i] = a * m[i] + b[i];
            dp[i] = 2.0 * a * p[i] + g2 - 2.0 * k;
        }
    }
}

/// Eq. 9 family: `-(Y - gamma y1)/(1-t) dt + sqrt(2(1-gamma) t/(1-t)) dW`.
pub fn controlled_forward_sde_linear(gamma: f64, y1: StateVec, delta: f64) -> LinearDriftSpec {
    let dim = y1.dim();
    LinearDriftSpec::new(
        dim,
        Arc::new(move |t| -1.0 / (1.0 - clip_upper(t, delta))),
        Arc::new(move |t| y1.scale(gamma / (1.0 - clip_upper(t, delta)))),
        Arc::new(move |t| {
            let t = clip_upper(t, delta);
            2.0 * (1.0 - gamma) * t / (1.0 - t)
        }),
    )
}

/// The controlled forward ODE with the base field built from the process's own
/// score: `-(Y - gamma y1)/(1-t) - (1-gamma) t/(1-t) grad log q_t`.
pub fn controlled_forward_ode_linear(gamma: f64, y1: StateVec, delta: f64) -> LinearDriftSpec {
    let mut spec = controlled_forward_sde_linear(gamma, y1, delta);
    spec.diffusion_sq = Arc::new(|_| 0.0);
    spec.with_self_score(Arc::new(move |t| {
        let t = clip_upper(t, delta);
        -(1.0 - gamma) * t / (1.0 - t)
    }))
}

/// Stochastic rectified flow: `-Y/(1-t) dt + sqrt(2t/(1-t)) dW`.
pub fn rf_forward_sde_linear(dim: usize, delta: f64) -> LinearDriftSpec {
    controlled_forward_sde_linear(0.0, StateVec::zeros(dim), delta)
}

fn reverse_coefficients(t: f64, eta: f64, delta: f64) -> (f64, f64, f64) {
    let t = clip_both(t, delta);
    let a = (1.0 - t - eta) / (t * (1.0 - t));
    let c = 2.0 * (1.0 - t) * (1.0 - eta) / t;
    (t, a, c)
}

/// Controlled reverse SDE with its own marginal's score (self-consistent wiring).
pub fn controlled_reverse_sde_linear(eta: f64, y0: StateVec, delta: f64) -> LinearDriftSpec {
    let dim = y0.dim();
    LinearDriftSpec::new(
        dim,
        Arc::new(move |t| reverse_coefficients(t, eta, delta).1),
        Arc::new(move |t| {
            let t = clip_both(t, delta);
            y0.scale(eta / (1.0 - t))
        }),
        Arc::new(move |t| reverse_coefficients(t, eta, delta).2),
    )
    .with_self_score(Arc::new(move |t| reverse_coefficients(t, eta, delta).2))
}

/// Controlled reverse ODE with the generative field built from its own score.
pub fn controlled_reverse_ode_linear(eta: f64, y0: StateVec, delta: f64) -> LinearDriftSpec {
    let mut spec = controlled_reverse_sde_linear(eta, y0, delta);
    spec.diffusion_sq = Arc::new(|_| 0.0);
    spec.with_self_score(Arc::new(move |t| 0.5 * reverse_coefficients(t, eta, delta).2))
}

/// Reverse stochastic rectified flow with the interpolation score of `p0`
/// (isotropic): `X/t + (2(1-t)/t) s_{1-t}(X)`, `s` linear in `X`.
pub fn rf_reverse_sde_linear(p0: &GaussianDist, delta: f64) -> Result<LinearDriftSpec> {
    let v0 = p0.var_diag[0];
    if p0.var_diag.iter().any(|&v| v != v0) {
        return Err(Error::invalid("p0", "linear view of the reverse SDE needs isotropic p0"));
    }
    let mu = p0.mean.clone();
    let coeffs = move |t: f64| {
        let t = clip_both(t, delta);
        // forward-clock marginal at 1 - t: mean t mu, variance (1-t)^2 + t^2 v0
        let var = (1.0 - t) * (1.0 - t) + t * t * v0;
        let c = 2.0 * (1.0 - t) / t;
        (t, var, c)
    };
    Ok(LinearDriftSpec::new(
        p0.dim(),
        Arc::new(move |t| {
            let (t, var, c) = coeffs(t);
            1.0 / t - c / var
        }),
        Arc::new(move |t| {
            let (t, var, c) = coeffs(t);
            mu.scale(c * t / var)
        }),
        Arc::new(move |t| coeffs(t).2),
    ))
}

/// OU noising: `-Y dt + sqrt(2) dW`.
pub fn ou_sde_linear(dim: usize) -> LinearDriftSpec {
    LinearDriftSpec::new(
        dim,
        Arc::new(|_| -1.0),
        Arc::new(move |_| StateVec::zeros(dim)),
        Arc::new(|_| 2.0),
    )
}

/// Mean and per-coordinate variance of a Gaussian marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub mean: StateVec,
    pub var_diag: Vec<f64>,
}

impl MomentState {
    pub fn from_gaussian(g: &GaussianDist) -> Self {
        MomentState {
            mean: g.mean.clone(),
            var_diag: g.var_diag.clone(),
        }
    }

    pub fn to_gaussian(&self) -> Result<GaussianDist> {
        GaussianDist::new(self.mean.clone(), self.var_diag.clone())
    }
}

/// Substep size target: `|A| h <= RK4_STIFFNESS`.
const RK4_STIFFNESS: f64 = 0.005;
const MAX_SUBSTEPS: usize = 1 << 20;

/// Moments at every grid point (RK4 with substeps scaled to the drift slope).
/// A negative variance triggers one retry at half the step, then fails.
pub fn integrate_moments(
    spec: &LinearDriftSpec,
    init: &MomentState,
    grid: &TimeGrid,
) -> Result<Vec<MomentState>> {
    init.mean.check_dim(spec.dim)?;
    if init.var_diag.len() != spec.dim || init.var_diag.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("init", "variance must be non-negative with matching dimension"));
    }
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(init.clone());
    let mut m = init.mean.as_slice().to_vec();
    let mut p = init.var_diag.clone();
    for i in 0..grid.steps {
        let (t0, t1) = (grid.point(i), grid.point(i + 1));
        let stiff = (spec.slope)(t0).abs().max((spec.slope)(t1).abs());
        let base = ((stiff * (t1 - t0) / RK4_STIFFNESS).ceil() as usize).clamp(1, MAX_SUBSTEPS);
        let (nm, np) = match rk4_interval(spec, &m, &p, t0, t1, base) {
            Some(r) => r,
            None => rk4_interval(spec, &m, &p, t0, t1, 2 * base)
                .ok_or(Error::MomentInstability { t: t1 })?,
        };
        m = nm;
        p = np;
        out.push(MomentState {
            mean: StateVec::new(m.clone()).map_err(|_| Error::MomentInstability { t: t1 })?,
            var_diag: p.clone(),
        });
    }
    Ok(out)
}

fn rk4_interval(
    spec: &LinearDriftSpec,
    m: &[f64],
    p: &[f64],
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = m.len();
    let h = (t1 - t0) / substeps as f64;
    let (mut m, mut p) = (m.to_vec(), p.to_vec());
    let mut k = [(); 4].map(|_| (vec![0.0; d], vec![0.0; d]));
    let (mut mt, mut pt) = (vec![0.0; d], vec![0.0; d]);
    for s in 0..substeps {
        let t = t0 + s as f64 * h;
        let stages = [(0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0)];
        for j in 0..4 {
            let (ct, cw) = stages[j];
            for i in 0..d {
                let (dm, dp) = if j == 0 { (0.0, 0.0) } else { (k[j - 1].0[i], k[j - 1].1[i]) };
                mt[i] = m[i] + cw * h * dm;
                pt[i] = p[i] + cw * h * dp;
            }
            let (km, kp) = &mut k[j];
            spec.rhs(t + ct * h, &mt, &pt, km, kp);
        }
        for i in 0..d {
            m[i] += h / 6.0 * (k[0].0[i] + 2.0 * k[1].0[i] + 2.0 * k[2].0[i] + k[3].0[i]);
            p[i] += h / 6.0 * (k[0].1[i] + 2.0 * k[1].1[i] + 2.0 * k[2].1[i] + k[3].1[i]);
        }
        if p.iter().chain(m.iter()).any(|v| !v.is_finite()) || p.iter().any(|&v| v < 0.0) {
            return None;
        }
    }
    Some((m, p))
}

/// Gaussian marginals along a moment trajectory, linearly interpolated in time.
/// Serves as the self-consistent score of a linear-drift process.
#[derive(Debug, Clone)]
pub struct GaussianPath {
    times: Vec<f64>,
    moments: Vec<MomentState>,
    /// Spacing of evenly spaced times, used to locate `t` without a search.
    step: Option<f64>,
}

impl GaussianPath {
    pub fn new(times: Vec<f64>, moments: Vec<MomentState>) -> Result<Self> {
        if times.is_empty() || times.len() != moments.len() {
            return Err(Error::invalid("path", "needs matching, non-empty times and moments"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("path", "times must increase strictly"));
        }
        let n = times.len();
        let step = (n > 1).then(|| (times[n - 1] - times[0]) / (n - 1) as f64).filter(|&h| {
            times
                .iter()
                .enumerate()
                .all(|(i, &t)| (t - (times[0] + i as f64 * h)).abs() <= 1e-12 * h)
        });
        Ok(GaussianPath { times, moments, step })
    }

    /// Segment index `j` and weight `w` with `t = (1-w) t_j + w t_{j+1}`,
    /// clamped to the covered range (`w = 0` at and beyond the ends).
    fn locate(&self, t: f64) -> (usize, f64) {
        let ts = &self.times;
        let n = ts.len();
        if n == 1 || t <= ts[0] {
            return (0, 0.0);
        }
        if t >= ts[n - 1] {
            return (n - 1, 0.0);
        }
        let mut j = match self.step {
            Some(h) => (((t - ts[0]) / h) as usize).min(n - 2),
            None => ts.partition_point(|&s| s <= t) - 1,
        };
        while j > 0 && ts[j] > t {
            j -= 1;
        }
        while j + 2 < n && ts[j + 1] <= t {
            j += 1;
        }
        (j, (t - ts[j]) / (ts[j + 1] - ts[j]))
    }

    /// Integrates `spec` over `grid` and wraps the result.
    pub fn integrate(spec: &LinearDriftSpec, init: &MomentState, grid: &TimeGrid) -> Result<Self> {
        Self::new(grid.points(), integrate_moments(spec, init, grid)?)
    }

    pub fn moments(&self) -> &[MomentState] {
        &self.moments
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Moments at `t`, clamped to the covered range.
    pub fn at(&self, t: f64) -> MomentState {
        let (j, w) = self.locate(t);
        let a = &self.moments[j];
        if w == 0.0 {
            return a.clone();
        }
        let b = &self.moments[j + 1];
        MomentState {
            mean: a
                .mean
                .zip_map(&b.mean, |x, y| x + w * (y - x))
                .expect("path moments share a dimension"),
            var_diag: a
                .var_diag
                .iter()
                .zip(&b.var_diag)
                .map(|(x, y)| x + w * (y - x))
                .collect(),
        }
    }
}

impl ScoreField for GaussianPath {
    fn score(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let d = self.moments[0].var_diag.len();
        x.check_dim(d)?;
        let (j, w) = self.locate(t);
        let a = &self.moments[j];
        if w == 0.0 {
            return Ok(StateVec::from_fn(d, |i| -(x[i] - a.mean[i]) / a.var_diag[i]));
        }
        let b = &self.moments[j + 1];
        Ok(StateVec::from_fn(d, |i| {
            let m = a.mean[i] + w * (b.mean[i] - a.mean[i]);
            let v = a.var_diag[i] + w * (b.var_diag[i] - a.var_diag[i]);
            -(x[i] - m) / v
        }))
    }
    fn label(&self) -> &str {
        "gaussian-path"
    }
}

/// Minimizer of the discretized LQR cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrSolution {
    pub controls: Vec<StateVec>,
    pub cost: f64,
    pub iterations: usize,
}

/// `sum_k 1/2 |c_k|^2 h + lambda/2 |Z_n - y1|^2` with `Z_{k+1} = Z_k + c_k h`, `h = 1/n`.
pub fn lqr_cost(y0: &StateVec, y1: &StateVec, lambda: f64, controls: &[StateVec]) -> Result<f64> {
    let h = 1.0 / controls.len() as f64;
    let mut z = y0.clone();
    let mut running = 0.0;
    for c in controls {
        running += 0.5 * h * c.iter().map(|v| v * v).sum::<f64>();
        z = z.axpy(h, c)?;
    }
    let gap = z.dist_l2(y1)?;
    Ok(running + 0.5 * lambda * gap * gap)
}

/// Controls produced by the closed-form feedback `(y1 - z)/(1 - t)` on the
/// discretized dynamics.
pub fn closed_form_controls(y0: &StateVec, y1: &StateVec, n_steps: usize) -> Result<Vec<StateVec>> {
    let h = 1.0 / n_steps as f64;
    let mut z = y0.clone();
    let mut out = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let t = k as f64 * h;
        let c = y1.sub(&z)?.scale(1.0 / (1.0 - t));
        z = z.axpy(h, &c)?;
        out.push(c);
    }
    Ok(out)
}

/// Minimizes the discretized LQR cost by conjugate gradient (the cost is an
/// exact quadratic in the stacked controls).
pub fn lqr_bruteforce(y0: &StateVec, y1: &StateVec, lambda: f64, n_steps: usize) -> Result<LqrSolution> {
    if n_steps < 2 {
        return Err(Error::invalid("n_steps", "must be at least 2"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", "must be positive and finite"));
    }
    y0.check_dim(y1.dim())?;
    let d = y0.dim();
    let n = n_steps;
    let h = 1.0 / n as f64;
    let budget = 50 * n;
    let mut controls = vec![vec![0.0; n]; d];
    let mut iterations = 0;
    for (i, c) in controls.iter_mut().enumerate() {
        // Hessian: h I + lambda h^2 1 1^T; gradient at c: H c - lambda h (y1 - y0) 1.
        let apply = |v: &[f64]| -> Vec<f64> {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| h * x + lambda * h * h * s).collect()
        };
        let rhs = lambda * h * (y1[i] - y0[i]);
        let hc = apply(c);
        let mut r: Vec<f64> = hc.iter().map(|v| rhs - v).collect();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let scale = (rhs * rhs * n as f64).sqrt().max(h);
        let mut k = 0;
        while rr.sqrt() > 1e-12 * scale {
            if k >= budget {
                return Err(Error::NoConvergence {
                    iterations: k,
                    residual: rr.sqrt(),
                });
            }
            let ap = apply(&p);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for j in 0..n {
                c[j] += alpha * p[j];
                r[j] -= alpha * ap[j];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            for j in 0..n {
                p[j] = r[j] + beta * p[j];
            }
            rr = rr_new;
            k += 1;
        }
        iterations = iterations.max(k);
    }
    let controls: Vec<StateVec> = (0..n)
        .map(|j| StateVec::from_iter_unchecked(controls.iter().map(|c| c[j])))
        .collect();
    let cost = lqr_cost(y0, y1, lambda, &controls)?;
    Ok(LqrSolution {
        controls,
        cost,
        iterations,
    })
}

/// Finite-`lambda` optimal feedback `(y1 - z)/(1/lambda + 1 - t)`.
pub fn finite_lambda_control(z: &StateVec, y1: &StateVec, t: f64, lambda: f64) -> Result<StateVec> {
    Ok(y1.sub(z)?.scale(1.0 / (1.0 / lambda + 1.0 - t)))
}

/// Comparison of an ensemble at time `t` with the zero-flux profile
/// `exp(-|y|^2 / 2t)` (variance `t`, mean 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub t: f64,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Largest `|var / t - 1|` over coordinates.
    pub profile_rel_dev: f64,
    /// Largest `|var / ((1-t)^2 + t^2) - 1|` (unit-variance data).
    pub interpolation_rel_dev: f64,
    /// Largest `|mean| / standard error`.
    pub mean_z: f64,
    pub pass: bool,
}

pub const PROFILE_VAR_TOL: f64 = 0.05;
pub const PROFILE_MEAN_Z: f64 = 4.0;

pub fn stationary_profile_check(samples: &[StateVec], t: f64) -> Result<ProfileReport> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let stats = EnsembleStats::from_states(samples)?;
    let se = stats.mean_standard_error();
    let interp = (1.0 - t) * (1.0 - t) + t * t;
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0_f64, f64::max);
    let profile_rel_dev = max(&mut stats.cov_diag.iter().map(|v| (v / t - 1.0).abs()));
    let interpolation_rel_dev = max(&mut stats.cov_diag.iter().map(|v| (v / interp - 1.0).abs()));
    let mean_z = max(&mut stats
        .mean
        .iter()
        .zip(&se)
        .map(|(m, s)| if *s > 0.0 { m.abs() / s } else { f64::INFINITY }));
    Ok(ProfileReport {
        t,
        n_samples: stats.n_particles,
        mean: stats.mean.as_slice().to_vec(),
        variance: stats.cov_diag.clone(),
        profile_rel_dev,
        interpolation_rel_dev,
        mean_z,
        pass: profile_rel_dev <= PROFILE_VAR_TOL && mean_z <= PROFILE_MEAN_Z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::InterpolationMarginal;

    fn sv(v: f64) -> StateVec {
        StateVec::splat(1, v)
    }

    #[test]
    fn ou_variance_is_stationary() {
        let grid = TimeGrid::new(100, 0.0, 3.0, 1e-3).unwrap();
        let init = MomentState {
            mean: sv(0.0),
            var_diag: vec![1.0],
        };
        let m = integrate_moments(&ou_sde_linear(1), &init, &grid).unwrap();
        assert!(m.iter().all(|s| (s.var_diag[0] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rf_sde_moments_match_interpolation_marginal() {
        let grid = TimeGrid::new(200, 0.0, 0.99, 1e-3).unwrap();
        let p0 = GaussianDist::isotropic(sv(10.0), 1.0).unwrap();
        let interp = InterpolationMarginal::to_standard_noise(p0.clone());
        let m = integrate_moments(&rf_forward_sde_linear(1, 1e-3), &MomentState::from_gaussian(&p0), &grid)
            .unwrap();
        for (i, s) in m.iter().enumerate() {
            let exact = interp.marginal_at(grid.point(i)).unwrap();
            assert!((s.mean[0] - exact.mean[0]).abs() < 1e-8, "mean at {i}");
            assert!((s.var_diag[0] - exact.var_diag[0]).abs() < 1e-8, "var at {i}");
        }
    }

    #[test]
    fn full_forward_control_contracts_to_target() {
        let grid = TimeGrid::new(100, 0.0, 0.9, 1e-3).unwrap();
        let spec = controlled_forward_sde_linear(1.0, sv(3.0), 1e-3);
        assert_eq!((spec.diffusion_sq)(0.5), 0.0);
        let m = integrate_moments(
            &spec,
            &MomentState {
                mean: sv(-1.0),
                var_diag: vec![1.0],
            },
            &grid,
        )
        .unwrap();
        for (i, s) in m.iter().enumerate() {
            let t = grid.point(i);
            assert!((s.mean[0] - ((1.0 - t) * -1.0 + t * 3.0)).abs() < 1e-9);
            assert!((s.var_diag[0] - (1.0 - t).powi(2)).abs() < 1e-9, "{} vs {}", s.var_diag[0], (1.0 - t).powi(2));
        }
    }

    #[test]
    fn ode_and_sde_views_share_variance_dynamics() {
        for gamma in [0.0, 0.3, 0.7] {
            let sde = controlled_forward_sde_linear(gamma, sv(1.0), 1e-3);
            let ode = controlled_forward_ode_linear(gamma, sv(1.0), 1e-3);
            for t in [0.1, 0.5, 0.8] {
                let dp = |s: &LinearDriftSpec| 2.0 * (s.slope)(t) * 1.3 + (s.diffusion_sq)(t) - 2.0 * (s.self_score)(t);
                assert!((dp(&sde) - dp(&ode)).abs() < 1e-12);
            }
        }
        for eta in [0.0, 0.5, 1.0] {
            let sde = controlled_reverse_sde_linear(eta, sv(2.0), 1e-3);
            let ode = controlled_reverse_ode_linear(eta, sv(2.0), 1e-3);
            for t in [0.1, 0.5, 0.8] {
                let dp = |s: &LinearDriftSpec| 2.0 * (s.slope)(t) * 0.7 + (s.diffusion_sq)(t) - 2.0 * (s.self_score)(t);
                assert!((dp(&sde) - dp(&ode)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_variance_is_reported() {
        let spec = LinearDriftSpec::new(1, Arc::new(|_| 0.0), Arc::new(|_| sv(0.0)), Arc::new(|_| -10.0));
        let grid = TimeGrid::unit(10).unwrap();
        let init = MomentState {
            mean: sv(0.0),
            var_diag: vec![0.5],
        };
        assert!(matches!(
            integrate_moments(&spec, &init, &grid),
            Err(Error::MomentInstability { .. })
        ));
    }

    #[test]
    fn gaussian_path_interpolates() {
        let path = GaussianPath::new(
            vec![0.0, 1.0],
            vec![
                MomentState {
                    mean: sv(0.0),
                    var_diag: vec![1.0],
                },
                MomentState {
                    mean: sv(2.0),
                    var_diag: vec![3.0],
                },
            ],
        )
        .unwrap();
        let m = path.at(0.5);
        assert_eq!((m.mean[0], m.var_diag[0]), (1.0, 2.0));
        assert_eq!(path.score(&sv(3.0), 0.5).unwrap()[0], -1.0);
        assert_eq!(path.at(7.0).mean[0], 2.0);
    }

    #[test]
    fn lqr_trivial_and_unit_transport() {
        let s = lqr_bruteforce(&sv(1.0), &sv(1.0), 1e6, 50).unwrap();
        assert_eq!(s.cost, 0.0);
        assert!(s.controls.iter().all(|c| c[0] == 0.0));

        let s = lqr_bruteforce(&sv(0.0), &sv(1.0), 1e6, 100).unwrap();
        assert!((s.cost - 0.5).abs() < 1e-5, "cost {}", s.cost);
        assert!(s.controls.iter().all(|c| (c[0] - 1.0).abs() < 1e-5));
    }

    #[test]
    fn lqr_matches_finite_lambda_feedback() {
        let (y0, y1, lambda, n) = (sv(0.5), sv(-1.5), 2.0, 80);
        let s = lqr_bruteforce(&y0, &y1, lambda, n).unwrap();
        let h = 1.0 / n as f64;
        let mut z = y0.clone();
        for (k, c) in s.controls.iter().enumerate() {
            let p = finite_lambda_control(&z, &y1, k as f64 * h, lambda).unwrap();
            assert!((p[0] - c[0]).abs() < 1e-4);
            z = z.axpy(h, c).unwrap();
        }
    }

    #[test]
    fn closed_form_cost_is_near_optimal() {
        let (y0, y1) = (StateVec::new(vec![0.3, -1.0]).unwrap(), StateVec::new(vec![1.2, 0.4]).unwrap());
        let cf = lqr_cost(&y0, &y1, 1e6, &closed_form_controls(&y0, &y1, 100).unwrap()).unwrap();
        let bf = lqr_bruteforce(&y0, &y1, 1e6, 100).unwrap();
        assert!(cf <= bf.cost + 1e-4);
        assert!(bf.cost <= cf + 1e-12);
    }

    #[test]
    fn profile_check_accepts_and_rejects() {
        let good = GaussianDist::isotropic(sv(0.0), 0.9).unwrap().sample(3, 10_000).unwrap();
        assert!(stationary_profile_check(&good, 0.9).unwrap().pass);
        let bad = GaussianDist::isotropic(sv(0.0), 2.0).unwrap().sample(3, 10_000).unwrap();
        assert!(!stationary_profile_check(&bad, 0.5).unwrap().pass);
        assert!(stationary_profile_check(&good, 0.0).is_err());
    }
}
