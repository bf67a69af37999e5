//! Euler / Euler-Maruyama engines, process drivers and time reversal.

mod dynamics;
mod engine;
mod schedule;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dynamics::{
    BlendedOde, ControlledForwardSde, ControlledReverseSde, Dynamics, DynamicsHandle, OuOde, OuSde,
    ReversedOde, ReversedSde, RfForwardSde, RfReverseSde,
};
pub use engine::{
    euler_maruyama_step, euler_step, run_particle, run_process, run_process_recorded, run_terminal,
    Record,
};
pub use schedule::NoiseSchedule;

use crate::control::{ControlledDrift, GuidanceSchedule};
use crate::error::{Error, Result};
use crate::fields::{ConditionalLqrField, ScoreHandle, VectorFieldHandle};
use crate::state::{StateVec, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    FwdCtrlOde,
    FwdCtrlSde,
    RevCtrlOde,
    RevCtrlSde,
    RfFwdSde,
    RfRevSde,
    /// DDPM noising (OU SDE).
    OuFwdSde,
    /// DDIM noising (OU probability-flow ODE).
    OuFwdOde,
    GenericReverse,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 9] = [
        ProcessKind::FwdCtrlOde,
        ProcessKind::FwdCtrlSde,
        ProcessKind::RevCtrlOde,
        ProcessKind::RevCtrlSde,
        ProcessKind::RfFwdSde,
        ProcessKind::RfRevSde,
        ProcessKind::OuFwdSde,
        ProcessKind::OuFwdOde,
        ProcessKind::GenericReverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::FwdCtrlOde => "fwd_ctrl_ode",
            ProcessKind::FwdCtrlSde => "fwd_ctrl_sde",
            ProcessKind::RevCtrlOde => "rev_ctrl_ode",
            ProcessKind::RevCtrlSde => "rev_ctrl_sde",
            ProcessKind::RfFwdSde => "rf_fwd_sde",
            ProcessKind::RfRevSde => "rf_rev_sde",
            ProcessKind::OuFwdSde => "ou_fwd_sde",
            ProcessKind::OuFwdOde => "ou_fwd_ode",
            ProcessKind::GenericReverse => "generic_reverse",
        }
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => return Ok(ProcessKind::OuFwdSde),
            "ddim" => return Ok(ProcessKind::OuFwdOde),
            _ => {}
        }
        ProcessKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("process", format!("unknown process `{s}`")))
    }
}

/// Which score the SDE kinds (and the score-based ODE fields) plug in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Score of the uncontrolled interpolation marginal (what a pretrained field provides).
    #[default]
    Interpolation,
    /// Gaussian score of the simulated process's own marginal, from the moment oracle.
    SelfConsistent,
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" => Ok(ScoreSource::Interpolation),
            "self_consistent" => Ok(ScoreSource::SelfConsistent),
            _ => Err(Error::invalid(
                "score_source",
                format!("expected `interpolation` or `self_consistent`, got `{s}`"),
            )),
        }
    }
}

/// A named process: coefficients, grid, step scheduler and the horizon `H`
/// that time reversal mirrors about (`t -> H - t`).
#[derive(Clone)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub dynamics: DynamicsHandle,
    pub grid: TimeGrid,
    pub sigma: NoiseSchedule,
    pub horizon: f64,
}

impl fmt::Debug for ProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessSpec")
            .field("kind", &self.kind)
            .field("grid", &self.grid)
            .field("sigma", &self.sigma)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ProcessSpec {
    pub fn new(
        kind: ProcessKind,
        dynamics: DynamicsHandle,
        grid: TimeGrid,
        horizon: f64,
    ) -> Result<Self> {
        if !horizon.is_finite() || horizon < grid.t_end {
            return Err(Error::invalid(
                "horizon",
                format!("must be finite and >= t_end = {}, got {horizon}", grid.t_end),
            ));
        }
        Ok(ProcessSpec {
            kind,
            dynamics,
            grid,
            sigma: NoiseSchedule::Identity,
            horizon,
        })
    }

    /// Controlled forward ODE: `u + gamma_t ((y1 - Y)/(1-t) - u)`.
    pub fn fwd_ctrl_ode(
        base: VectorFieldHandle,
        y1: StateVec,
        gamma: GuidanceSchedule,
        grid: TimeGrid,
    ) -> Result<Self> {
        grid.require_unit_interval()?;
        let dim = Some(y1.dim());
        let controller = Arc::new(ConditionalLqrField::new(y1, grid.delta));
        let drift = ControlledDrift::new(base, controller, gamma)?;
        Self::new(ProcessKind::FwdCtrlOde, Arc::new(BlendedOde { drift, dim }), grid, 1.0)
    }

    pub fn fwd_ctrl_sde(y1: StateVec, gamma: GuidanceSchedule, grid: TimeGrid) -> Result<Self> {
        grid.require_unit_interval()?;
        let dynamics = ControlledForwardSde {
            target: y1,
            gamma: gamma.validated()?,
            delta: grid.delta,
        };
        Self::new(ProcessKind::FwdCtrlSde, Arc::new(dynamics), grid, 1.0)
    }

    /// Controlled reverse ODE: `v + eta_t ((y0 - X)/(1-t) - v)`, with `v` the
    /// generative field.
    pub fn rev_ctrl_ode(
        generative: VectorFieldHandle,
        y0: StateVec,
        eta: GuidanceSchedule,
        grid: TimeGrid,
    ) -> Result<Self> {
        grid.require_unit_interval()?;
        let dim = Some(y0.dim());
        let controller = Arc::new(ConditionalLqrField::new(y0, grid.delta));
        let drift = ControlledDrift::new(generative, controller, eta)?;
        Self::new(ProcessKind::RevCtrlOde, Arc::new(BlendedOde { drift, dim }), grid, 1.0)
    }

    /// `score` is evaluated on the reverse clock (`s_{1-t}` of the forward marginal).
    pub fn rev_ctrl_sde(
        y0: StateVec,
        eta: GuidanceSchedule,
        score: ScoreHandle,
        grid: TimeGrid,
    ) -> Result<Self> {
        require_reverse_grid(&grid)?;
        let dynamics = ControlledReverseSde {
            target: y0,
            eta: eta.validated()?,
            score,
            delta: grid.delta,
        };
        Self::new(ProcessKind::RevCtrlSde, Arc::new(dynamics), grid, 1.0)
    }

    pub fn rf_fwd_sde(grid: TimeGrid) -> Result<Self> {
        grid.require_unit_interval()?;
        let dynamics = RfForwardSde { delta: grid.delta };
        Self::new(ProcessKind::RfFwdSde, Arc::new(dynamics), grid, 1.0)
    }

    /// `score` is evaluated on the reverse clock.
    pub fn rf_rev_sde(score: ScoreHandle, grid: TimeGrid) -> Result<Self> {
        require_reverse_grid(&grid)?;
        let dynamics = RfReverseSde {
            score,
            delta: grid.delta,
        };
        Self::new(ProcessKind::RfRevSde, Arc::new(dynamics), grid, 1.0)
    }

    pub fn ou_fwd_sde(grid: TimeGrid) -> Result<Self> {
        let h = grid.t_start + grid.t_end;
        Self::new(ProcessKind::OuFwdSde, Arc::new(OuSde), grid, h)
    }

    /// `score` is the OU marginal score on the forward clock.
    pub fn ou_fwd_ode(score: ScoreHandle, grid: TimeGrid) -> Result<Self> {
        let h = grid.t_start + grid.t_end;
        Self::new(ProcessKind::OuFwdOde, Arc::new(OuOde { score }), grid, h)
    }

    pub fn with_sigma(mut self, sigma: NoiseSchedule) -> Result<Self> {
        if !sigma.supports(self.grid.t_start, self.grid.t_end) {
            return Err(Error::invalid(
                "sigma_schedule",
                format!(
                    "knot schedules cover [0, 1], grid is [{}, {}]",
                    self.grid.t_start, self.grid.t_end
                ),
            ));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn is_sde(&self) -> bool {
        self.dynamics.is_stochastic()
    }

    pub fn drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        self.dynamics.drift(x, t)
    }

    pub fn diffusion(&self, t: f64) -> f64 {
        self.dynamics.diffusion(t)
    }
}

fn require_reverse_grid(grid: &TimeGrid) -> Result<()> {
    grid.require_unit_interval()?;
    if grid.t_start < grid.delta {
        return Err(Error::invalid(
            "grid",
            format!(
                "reverse SDE grids start at t >= delta = {}, got {}",
                grid.delta, grid.t_start
            ),
        ));
    }
    Ok(())
}

/// Time reversal about the spec's horizon. ODEs flip time and negate the
/// drift; SDEs additionally need the forward marginal's score (forward clock).
pub fn reverse_of(spec: &ProcessSpec, score: Option<ScoreHandle>) -> Result<ProcessSpec> {
    let h = spec.horizon;
    let g = spec.grid;
    let grid = TimeGrid::new(g.steps, h - g.t_end, h - g.t_start, g.delta)?;
    let dynamics: DynamicsHandle = if spec.is_sde() {
        let score = score.ok_or(Error::MissingScore)?;
        Arc::new(ReversedSde {
            inner: spec.dynamics.clone(),
            score,
            horizon: h,
        })
    } else {
        Arc::new(ReversedOde {
            inner: spec.dynamics.clone(),
            horizon: h,
        })
    };
    Ok(ProcessSpec {
        kind: ProcessKind::GenericReverse,
        dynamics,
        grid,
        sigma: spec.sigma.clone(),
        horizon: h,
    })
}
