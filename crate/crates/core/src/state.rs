//! Value types shared by every module: states, time grids, diagonal Gaussians,
//! trajectories and ensemble statistics.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Default boundary clip for coefficients with a `1/(1-t)` or `1/t` singularity.
pub const DEFAULT_DELTA: f64 = 1e-3;

type Coords = SmallVec<[f64; 4]>;

/// Coordinates `f(0), ..., f(d-1)`; fills the inline buffer directly when it fits.
#[inline]
fn build(d: usize, f: impl Fn(usize) -> f64) -> Coords {
    let mut buf = [0.0; 4];
    if d <= buf.len() {
        for (i, slot) in buf.iter_mut().enumerate().take(d) {
            *slot = f(i);
        }
        Coords::from_buf_and_len(buf, d)
    } else {
        (0..d).map(f).collect()
    }
}

/// A point in the d-dimensional state space.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVec(Coords);

impl StateVec {
    /// Builds a state, rejecting empty or non-finite input.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_slice(&coords)
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("state", "dimension must be at least 1"));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("state coordinate {i}"),
                step: None,
            });
        }
        Ok(StateVec(Coords::from_slice(coords)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::splat(dim, 0.0)
    }

    pub fn splat(dim: usize, value: f64) -> Self {
        assert!(dim >= 1, "state dimension must be at least 1");
        StateVec(SmallVec::from_elem(value, dim))
    }

    pub(crate) fn from_iter_unchecked(iter: impl IntoIterator<Item = f64>) -> Self {
        StateVec(iter.into_iter().collect())
    }

    pub(crate) fn from_fn(dim: usize, f: impl Fn(usize) -> f64) -> Self {
        StateVec(build(dim, f))
    }

    pub(crate) fn from_slice_unchecked(coords: &[f64]) -> Self {
        StateVec(build(coords.len(), |i| coords[i]))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> StateVec {
        let a = &self.0;
        StateVec(build(a.len(), |i| f(a[i])))
    }

    /// Coordinate-wise combination; fails on dimension mismatch.
    pub fn zip_map(&self, other: &StateVec, f: impl Fn(f64, f64) -> f64) -> Result<StateVec> {
        other.check_dim(self.dim())?;
        let (a, b) = (&self.0, &other.0);
        Ok(StateVec(build(a.len(), |i| f(a[i], b[i]))))
    }

    pub fn add(&self, other: &StateVec) -> Result<StateVec> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &StateVec) -> Result<StateVec> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, a: f64) -> StateVec {
        self.map(|v| a * v)
    }

    /// `self + a * x`
    pub fn axpy(&self, a: f64, x: &StateVec) -> Result<StateVec> {
        self.zip_map(x, |s, v| s + a * v)
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn dist_l2(&self, other: &StateVec) -> Result<f64> {
        Ok(self.sub(other)?.norm_l2())
    }
}

impl fmt::Debug for StateVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl std::ops::Index<usize> for StateVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for StateVec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        StateVec::new(v)
    }
}

impl From<StateVec> for Vec<f64> {
    fn from(s: StateVec) -> Vec<f64> {
        s.0.into_vec()
    }
}

/// Uniform grid `t_i = t_start + (i/N)(t_end - t_start)` with a boundary clip `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub delta: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, t_start: f64, t_end: f64, delta: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::invalid("delta", "must lie in (0, 0.5)"));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_start >= 0.0 && t_end > t_start) {
            return Err(Error::invalid(
                "grid",
                format!("need 0 <= t_start < t_end, got [{t_start}, {t_end}]"),
            ));
        }
        Ok(TimeGrid {
            steps,
            t_start,
            t_end,
            delta,
        })
    }

    /// `[0, 1]` with `steps` intervals and the default clip.
    pub fn unit(steps: usize) -> Result<Self> {
        Self::new(steps, 0.0, 1.0, DEFAULT_DELTA)
    }

    /// Checks the `t_end <= 1` bound used by the rectified-flow processes.
    pub fn require_unit_interval(&self) -> Result<()> {
        if self.t_end > 1.0 || self.t_start >= 1.0 {
            return Err(Error::invalid(
                "grid",
                format!("rectified-flow grids live in [0, 1], got [{}, {}]", self.t_start, self.t_end),
            ));
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> f64 {
        self.t_start + (i as f64 / self.steps as f64) * (self.t_end - self.t_start)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.point(i)).collect()
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.point(i + 1) - self.point(i)
    }

    /// Index of the grid point equal to `t` (within 1e-9), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let h = (self.t_end - self.t_start) / self.steps as f64;
        let k = ((t - self.t_start) / h).round();
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.point(k) - t).abs() <= 1e-9).then_some(k)
    }
}

/// Clamp to `[0, 1 - delta]` for coefficients singular at `t = 1`.
#[inline]
pub fn clip_upper(t: f64, delta: f64) -> f64 {
    t.clamp(0.0, 1.0 - delta)
}

/// Clamp to `[delta, 1 - delta]` for coefficients singular at both ends.
#[inline]
pub fn clip_both(t: f64, delta: f64) -> f64 {
    t.clamp(delta, 1.0 - delta)
}

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDist {
    pub mean: StateVec,
    pub var_diag: Vec<f64>,
}

impl GaussianDist {
    pub fn new(mean: StateVec, var_diag: Vec<f64>) -> Result<Self> {
        if var_diag.len() != mean.dim() {
            return Err(Error::DimensionMismatch {
                expected: mean.dim(),
                found: var_diag.len(),
            });
        }
        if let Some(v) = var_diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid("var_diag", format!("entries must be finite and > 0, got {v}")));
        }
        Ok(GaussianDist { mean, var_diag })
    }

    /// `N(mean, var * I)`
    pub fn isotropic(mean: StateVec, var: f64) -> Result<Self> {
        let d = mean.dim();
        Self::new(mean, vec![var; d])
    }

    pub fn standard(dim: usize) -> Self {
        GaussianDist {
            mean: StateVec::zeros(dim),
            var_diag: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn log_density(&self, x: &StateVec) -> Result<f64> {
        x.check_dim(self.dim())?;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        Ok(x
            .iter()
            .zip(self.mean.iter())
            .zip(self.var_diag.iter())
            .map(|((xi, mi), &vi)| -0.5 * ((xi - mi).powi(2) / vi + vi.ln() + ln_2pi))
            .sum())
    }

    /// `-(x - mean) / var`, coordinate-wise.
    pub fn score(&self, x: &StateVec) -> Result<StateVec> {
        x.check_dim(self.dim())?;
        Ok(StateVec::from_fn(x.dim(), |i| -(x[i] - self.mean[i]) / self.var_diag[i]))
    }

    /// `count` reproducible draws; sample `k` uses stream `k` of the keyed generator.
    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<StateVec>> {
        gaussian_sample(self, seed, count)
    }
}

/// Draws `count` samples from `dist`, reproducible from `seed`.
pub fn gaussian_sample(dist: &GaussianDist, seed: u64, count: usize) -> Result<Vec<StateVec>> {
    if count < 1 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let d = dist.dim();
    let sd: Vec<f64> = dist.var_diag.iter().map(|v| v.sqrt()).collect();
    let mut z = vec![0.0; d];
    Ok((0..count)
        .map(|k| {
            let mut stream = NoiseStream::new(seed, k as u64, d);
            stream.normals_at(0, &mut z);
            StateVec::from_iter_unchecked(
                dist.mean.iter().zip(&sd).zip(&z).map(|((m, s), zi)| m + s * zi),
            )
        })
        .collect())
}

/// A recorded sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    pub particle_id: u64,
    pub seed: u64,
}

impl Trajectory {
    pub fn terminal(&self) -> &StateVec {
        self.states.last().expect("trajectory holds at least one state")
    }

    pub fn initial(&self) -> &StateVec {
        &self.states[0]
    }
}

/// Mean and per-coordinate variance of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_particles: usize,
    pub mean: StateVec,
    /// Unbiased sample variance (zero for a single particle).
    pub cov_diag: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_particle_errors: Option<Vec<(f64, f64)>>,
}

impl EnsembleStats {
    /// Welford's one-pass mean/variance.
    pub fn from_states(states: &[StateVec]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::invalid("ensemble", "needs at least one state"))?;
        let d = first.dim();
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for (k, s) in states.iter().enumerate() {
            s.check_dim(d)?;
            let n = (k + 1) as f64;
            for (i, x) in s.iter().enumerate() {
                let delta = x - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (x - mean[i]);
            }
        }
        let n = states.len();
        let cov_diag = if n > 1 {
            m2.iter().map(|v| (v / (n - 1) as f64).max(0.0)).collect()
        } else {
            vec![0.0; d]
        };
        Ok(EnsembleStats {
            n_particles: n,
            mean: StateVec::from_iter_unchecked(mean),
            cov_diag,
            per_particle_errors: None,
        })
    }

    /// Standard error of the mean, per coordinate.
    pub fn mean_standard_error(&self) -> Vec<f64> {
        self.cov_diag
            .iter()
            .map(|v| (v / self.n_particles as f64).sqrt())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_rejects_non_finite_and_empty() {
        assert!(StateVec::new(vec![]).is_err());
        assert!(matches!(
            StateVec::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert!(StateVec::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn state_ops_reject_dimension_mismatch() {
        let a = StateVec::new(vec![1.0, 2.0]).unwrap();
        let b = StateVec::new(vec![1.0]).unwrap();
        assert!(matches!(
            a.add(&b),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn grid_points_are_uniform_and_increasing() {
        let g = TimeGrid::unit(100).unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 101);
        assert_eq!(pts[0], 0.0);
        assert_eq!(pts[100], 1.0);
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
        for i in 0..100 {
            assert!((g.dt(i) - 0.01).abs() < 1e-15);
        }
        assert_eq!(g.index_of(0.25), Some(25));
        assert_eq!(g.index_of(0.255), None);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0, 0.0, 1.0, 1e-3).is_err());
        assert!(TimeGrid::new(10, 0.5, 0.5, 1e-3).is_err());
        assert!(TimeGrid::new(10, 0.0, 1.0, 0.6).is_err());
        assert!(TimeGrid::new(10, 0.0, 2.0, 1e-3).unwrap().require_unit_interval().is_err());
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_upper(1.0, 1e-3), 0.999);
        assert_eq!(clip_upper(0.3, 1e-3), 0.3);
        assert_eq!(clip_both(0.0, 1e-3), 1e-3);
    }

    #[test]
    fn gaussian_rejects_nonpositive_variance() {
        let m = StateVec::zeros(2);
        assert!(GaussianDist::new(m.clone(), vec![1.0, 0.0]).is_err());
        assert!(GaussianDist::new(m, vec![1.0]).is_err());
    }

    #[test]
    fn score_examples() {
        let n01 = GaussianDist::standard(1);
        assert_eq!(n01.score(&StateVec::zeros(1)).unwrap()[0], 0.0);
        let n10 = GaussianDist::isotropic(StateVec::splat(1, 10.0), 1.0).unwrap();
        assert_eq!(n10.score(&StateVec::splat(1, 12.0)).unwrap()[0], -2.0);
        let n5 = GaussianDist::isotropic(StateVec::splat(1, 5.0), 0.5).unwrap();
        assert_eq!(n5.score(&StateVec::splat(1, 5.5)).unwrap()[0], -1.0);
    }

    #[test]
    fn score_matches_finite_difference_of_log_density() {
        // Central difference with step 1e-5 as the independent route.
        let dist = GaussianDist::new(StateVec::new(vec![10.0, -1.0]).unwrap(), vec![1.0, 0.3]).unwrap();
        let pts = gaussian_sample(&GaussianDist::isotropic(StateVec::new(vec![9.0, 0.0]).unwrap(), 4.0).unwrap(), 3, 100)
            .unwrap();
        let h = 1e-5;
        for x in &pts {
            let s = dist.score(x).unwrap();
            for i in 0..2 {
                let mut up = x.as_slice().to_vec();
                let mut dn = x.as_slice().to_vec();
                up[i] += h;
                dn[i] -= h;
                let fd = (dist.log_density(&StateVec::new(up).unwrap()).unwrap()
                    - dist.log_density(&StateVec::new(dn).unwrap()).unwrap())
                    / (2.0 * h);
                let rel = (fd - s[i]).abs() / s[i].abs().max(1.0);
                assert!(rel <= 1e-6, "fd {fd} vs score {}", s[i]);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_and_converges() {
        let n10 = GaussianDist::isotropic(StateVec::splat(1, 10.0), 1.0).unwrap();
        assert_eq!(n10.sample(42, 10).unwrap(), n10.sample(42, 10).unwrap());
        assert_ne!(n10.sample(42, 10).unwrap(), n10.sample(43, 10).unwrap());

        let big = n10.sample(7, 100_000).unwrap();
        let stats = EnsembleStats::from_states(&big).unwrap();
        // sigma/sqrt(n) = 0.00316; the window is > 6 standard errors.
        assert!((stats.mean[0] - 10.0).abs() <= 0.02, "{:?}", stats.mean);

        let std = GaussianDist::standard(1).sample(8, 100_000).unwrap();
        let stats = EnsembleStats::from_states(&std).unwrap();
        assert!(stats.mean[0].abs() <= 0.02);
        assert!((stats.cov_diag[0] - 1.0).abs() <= 0.02);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<StateVec> = [1.0, 2.0, 4.0, 7.0]
            .iter()
            .map(|&v| StateVec::new(vec![v, -v]).unwrap())
            .collect();
        let s = EnsembleStats::from_states(&xs).unwrap();
        assert!((s.mean[0] - 3.5).abs() < 1e-15);
        // two-pass: sum (x-3.5)^2 / 3 = (6.25+2.25+0.25+12.25)/3 = 7
        assert!((s.cov_diag[0] - 7.0).abs() < 1e-12);
        assert!((s.cov_diag[1] - 7.0).abs() < 1e-12);
        let one = EnsembleStats::from_states(&xs[..1]).unwrap();
        assert_eq!(one.cov_diag, vec![0.0, 0.0]);
    }

    #[test]
    fn state_serializes_as_plain_array() {
        let s = StateVec::new(vec![1.5, -2.0]).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, "[1.5,-2.0]");
        let back: StateVec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<StateVec>("[]").is_err());
    }
}
