//! Drift/diffusion coefficients of every process in scope.
//!
//! Coefficients singular at `t = 1` clip time to `1 - delta`; the reverse SDEs,
//! singular at `t = 0` as well, clip to `[delta, 1 - delta]`. Guidance schedules
//! are read at the raw grid time.

use std::sync::Arc;

use crate::control::{ControlledDrift, GuidanceSchedule};
use crate::error::Result;
use crate::fields::ScoreHandle;
use crate::state::{clip_both, clip_upper, StateVec};

pub trait Dynamics: Send + Sync {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec>;
    /// Scalar diffusion `g(t) >= 0`.
    fn diffusion(&self, t: f64) -> f64;
    fn is_stochastic(&self) -> bool;
    /// State dimension, when the coefficients pin one.
    fn dim(&self) -> Option<usize> {
        None
    }
}

pub type DynamicsHandle = Arc<dyn Dynamics>;

/// ODE whose velocity is a blended (controlled) drift.
pub struct BlendedOde {
    pub drift: ControlledDrift,
    pub dim: Option<usize>,
}

impl Dynamics for BlendedOde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        self.drift.blend_drift(x, t)
    }
    fn diffusion(&self, _t: f64) -> f64 {
        0.0
    }
    fn is_stochastic(&self) -> bool {
        false
    }
    fn dim(&self) -> Option<usize> {
        self.dim
    }
}

/// Controlled forward SDE:
/// `dY = -(Y - gamma_t y1)/(1-t) dt + sqrt(2(1-gamma_t) t/(1-t)) dW`.
pub struct ControlledForwardSde {
    pub target: StateVec,
    pub gamma: GuidanceSchedule,
    pub delta: f64,
}

impl Dynamics for ControlledForwardSde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let g = self.gamma.value_at(t);
        let t = clip_upper(t, self.delta);
        x.zip_map(&self.target, |x, y1| -(x - g * y1) / (1.0 - t))
    }
    fn diffusion(&self, t: f64) -> f64 {
        let g = self.gamma.value_at(t);
        let t = clip_upper(t, self.delta);
        (2.0 * (1.0 - g) * t / (1.0 - t)).sqrt()
    }
    fn is_stochastic(&self) -> bool {
        true
    }
    fn dim(&self) -> Option<usize> {
        Some(self.target.dim())
    }
}

/// Controlled reverse SDE:
/// `dX = [((1-t-eta)X + eta t y0)/(t(1-t)) + (2(1-t)(1-eta)/t) s(X)] dt
///       + sqrt(2(1-t)(1-eta)/t) dW`,
/// with `s` the score on the process's own clock.
///
/// The drift is evaluated as `X/t + c s(X) + eta ((y0 - X)/(1-t) - X/t)`, the
/// same expression regrouped so that `eta = 0` reproduces [`RfReverseSde`]
/// exactly.
pub struct ControlledReverseSde {
    pub target: StateVec,
    pub eta: GuidanceSchedule,
    pub score: ScoreHandle,
    pub delta: f64,
}

impl Dynamics for ControlledReverseSde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let e = self.eta.value_at(t);
        let t = clip_both(t, self.delta);
        let c = 2.0 * (1.0 - t) * (1.0 - e) / t;
        let base = if c == 0.0 {
            x.map(|x| x / t)
        } else {
            let s = self.score.score(x, t)?;
            x.zip_map(&s, |x, s| x / t + c * s)?
        };
        if e == 0.0 {
            return Ok(base);
        }
        let ctrl = x.zip_map(&self.target, |x, y0| (y0 - x) / (1.0 - t) - x / t)?;
        base.axpy(e, &ctrl)
    }
    fn diffusion(&self, t: f64) -> f64 {
        let e = self.eta.value_at(t);
        let t = clip_both(t, self.delta);
        (2.0 * (1.0 - t) * (1.0 - e) / t).sqrt()
    }
    fn is_stochastic(&self) -> bool {
        true
    }
    fn dim(&self) -> Option<usize> {
        Some(self.target.dim())
    }
}

/// Stochastic rectified flow: `dY = -Y/(1-t) dt + sqrt(2t/(1-t)) dW`.
pub struct RfForwardSde {
    pub delta: f64,
}

impl Dynamics for RfForwardSde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let t = clip_upper(t, self.delta);
        Ok(x.map(|x| -x / (1.0 - t)))
    }
    fn diffusion(&self, t: f64) -> f64 {
        let t = clip_upper(t, self.delta);
        (2.0 * t / (1.0 - t)).sqrt()
    }
    fn is_stochastic(&self) -> bool {
        true
    }
}

/// Reverse-time stochastic rectified flow:
/// `dX = [X/t + (2(1-t)/t) s(X)] dt + sqrt(2(1-t)/t) dW`.
pub struct RfReverseSde {
    pub score: ScoreHandle,
    pub delta: f64,
}

impl Dynamics for RfReverseSde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let t = clip_both(t, self.delta);
        let c = 2.0 * (1.0 - t) / t;
        let s = self.score.score(x, t)?;
        x.zip_map(&s, |x, s| x / t + c * s)
    }
    fn diffusion(&self, t: f64) -> f64 {
        let t = clip_both(t, self.delta);
        (2.0 * (1.0 - t) / t).sqrt()
    }
    fn is_stochastic(&self) -> bool {
        true
    }
}

/// Ornstein-Uhlenbeck noising: `dY = -Y dt + sqrt(2) dW`.
pub struct OuSde;

impl Dynamics for OuSde {
    fn drift(&self, x: &StateVec, _t: f64) -> Result<StateVec> {
        Ok(x.map(|x| -x))
    }
    fn diffusion(&self, _t: f64) -> f64 {
        std::f64::consts::SQRT_2
    }
    fn is_stochastic(&self) -> bool {
        true
    }
}

/// Probability-flow ODE of the OU process: `dY = [-Y - s_t(Y)] dt`.
pub struct OuOde {
    pub score: ScoreHandle,
}

impl Dynamics for OuOde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let s = self.score.score(x, t)?;
        x.zip_map(&s, |x, s| -x - s)
    }
    fn diffusion(&self, _t: f64) -> f64 {
        0.0
    }
    fn is_stochastic(&self) -> bool {
        false
    }
}

/// Time reversal of an ODE: `-f(x, H - t)`.
pub struct ReversedOde {
    pub inner: DynamicsHandle,
    pub horizon: f64,
}

impl Dynamics for ReversedOde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        Ok(self.inner.drift(x, self.horizon - t)?.scale(-1.0))
    }
    fn diffusion(&self, _t: f64) -> f64 {
        0.0
    }
    fn is_stochastic(&self) -> bool {
        false
    }
    fn dim(&self) -> Option<usize> {
        self.inner.dim()
    }
}

/// Time reversal of an SDE:
/// `drift = -f(x, H - t) + g(H - t)^2 s(x, H - t)`, `diffusion = g(H - t)`,
/// with `s` the score of the forward marginal on the forward clock.
pub struct ReversedSde {
    pub inner: DynamicsHandle,
    pub score: ScoreHandle,
    pub horizon: f64,
}

impl Dynamics for ReversedSde {
    fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let tau = self.horizon - t;
        let f = self.inner.drift(x, tau)?;
        let g = self.inner.diffusion(tau);
        let s = self.score.score(x, tau)?;
        f.zip_map(&s, |f, s| -f + g * g * s)
    }
    fn diffusion(&self, t: f64) -> f64 {
        self.inner.diffusion(self.horizon - t)
    }
    fn is_stochastic(&self) -> bool {
        true
    }
    fn dim(&self) -> Option<usize> {
        self.inner.dim()
    }
}
