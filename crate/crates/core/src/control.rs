//! Controller guidance schedules and the blended drifts of the controlled ODEs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VectorFieldHandle;
use crate::state::StateVec;

/// Number of inference steps the named presets were tuned for.
pub const PRESET_STEPS: f64 = 28.0;

const WINDOW_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Windowed,
}

/// Time-varying guidance strength (`gamma_t` or `eta_t`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub strength: f64,
    pub start: f64,
    pub stop: f64,
    pub kind: ScheduleKind,
}

impl GuidanceSchedule {
    pub fn constant(strength: f64) -> Result<Self> {
        GuidanceSchedule {
            strength,
            start: 0.0,
            stop: 1.0,
            kind: ScheduleKind::Constant,
        }
        .validated()
    }

    /// `strength` on `[start, stop]` (inclusive), zero elsewhere.
    pub fn windowed(strength: f64, start: f64, stop: f64) -> Result<Self> {
        GuidanceSchedule {
            strength,
            start,
            stop,
            kind: ScheduleKind::Windowed,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::invalid(
                "strength",
                format!("must lie in [0, 1], got {}", self.strength),
            ));
        }
        if !(0.0..=1.0).contains(&self.start) || !(self.start..=1.0).contains(&self.stop) {
            return Err(Error::invalid(
                "window",
                format!("need 0 <= start <= stop <= 1, got [{}, {}]", self.start, self.stop),
            ));
        }
        Ok(self)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.strength,
            ScheduleKind::Windowed => {
                if t >= self.start - WINDOW_SLACK && t <= self.stop + WINDOW_SLACK {
                    self.strength
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        self.strength == 0.0
    }
}

/// Named presets: `(start, stop)` in units of 1/28 of the horizon, plus strength.
const PRESETS: &[(&str, f64, f64, f64)] = &[
    ("stroke2image", 3.0, 5.0, 0.9),
    ("object_insert", 0.0, 6.0, 1.0),
    ("gender_editing", 0.0, 8.0, 1.0),
    ("age_editing", 0.0, 5.0, 1.0),
    ("adding_glasses", 6.0, 25.0, 0.7),
    ("stylization", 0.0, 6.0, 0.9),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS
        .iter()
        .map(|p| p.0)
        .chain(std::iter::once("constant_zero"))
        .collect()
}

pub fn schedule_preset(name: &str) -> Result<GuidanceSchedule> {
    if name == "constant_zero" {
        return GuidanceSchedule::constant(0.0);
    }
    let (_, s, tau, eta) = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    GuidanceSchedule::windowed(*eta, s / PRESET_STEPS, tau / PRESET_STEPS)
}

/// `base + value_at(t) * (controller - base)`.
#[derive(Clone)]
pub struct ControlledDrift {
    pub base: VectorFieldHandle,
    pub controller: VectorFieldHandle,
    pub schedule: GuidanceSchedule,
}

impl ControlledDrift {
    pub fn new(base: VectorFieldHandle, controller: VectorFieldHandle, schedule: GuidanceSchedule) -> Result<Self> {
        Ok(ControlledDrift {
            base,
            controller,
            schedule: schedule.validated()?,
        })
    }

    pub fn blend_drift(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let w = self.schedule.value_at(t);
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid("schedule", format!("value {w} outside [0, 1]")));
        }
        let base = self.base.eval(x, t)?;
        base.check_dim(x.dim())?;
        if w == 0.0 {
            return Ok(base);
        }
        let ctrl = self.controller.eval(x, t)?;
        if w == 1.0 {
            ctrl.check_dim(x.dim())?;
            return Ok(ctrl);
        }
        base.zip_map(&ctrl, |b, c| b + w * (c - b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{conditional_lqr_field, FnField};

    fn constant_field(v: f64) -> VectorFieldHandle {
        FnField::handle("const", move |x: &StateVec, _t| Ok(StateVec::splat(x.dim(), v)))
    }

    #[test]
    fn blend_examples() {
        let x = StateVec::splat(1, 2.0);
        let mk = |w| ControlledDrift::new(constant_field(-3.0), constant_field(5.0), GuidanceSchedule::constant(w).unwrap()).unwrap();
        assert_eq!(mk(0.0).blend_drift(&x, 0.3).unwrap()[0], -3.0);
        assert_eq!(mk(1.0).blend_drift(&x, 0.3).unwrap()[0], 5.0);
        assert_eq!(mk(0.5).blend_drift(&x, 0.3).unwrap()[0], 1.0);
    }

    #[test]
    fn full_guidance_is_the_lqr_controller() {
        let d = ControlledDrift::new(
            constant_field(-3.0),
            conditional_lqr_field(StateVec::splat(1, 5.0)),
            GuidanceSchedule::constant(1.0).unwrap(),
        )
        .unwrap();
        let v = d.blend_drift(&StateVec::splat(1, 2.0), 0.4).unwrap()[0];
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn strength_out_of_range_is_rejected() {
        assert!(GuidanceSchedule::constant(1.5).is_err());
        assert!(GuidanceSchedule::constant(-0.1).is_err());
        assert!(GuidanceSchedule::windowed(0.5, 0.6, 0.4).is_err());
        let bad = GuidanceSchedule {
            strength: 2.0,
            start: 0.0,
            stop: 1.0,
            kind: ScheduleKind::Constant,
        };
        assert!(ControlledDrift::new(constant_field(0.0), constant_field(1.0), bad).is_err());
    }

    #[test]
    fn presets() {
        let s = schedule_preset("stroke2image").unwrap();
        assert_eq!((s.start, s.stop, s.strength), (3.0 / 28.0, 5.0 / 28.0, 0.9));
        let a = schedule_preset("age_editing").unwrap();
        assert_eq!((a.start, a.stop, a.strength), (0.0, 5.0 / 28.0, 1.0));
        let g = schedule_preset("adding_glasses").unwrap();
        assert_eq!((g.start, g.stop, g.strength), (6.0 / 28.0, 25.0 / 28.0, 0.7));
        let z = schedule_preset("constant_zero").unwrap();
        assert!((0..=10).all(|i| z.value_at(i as f64 / 10.0) == 0.0));
        assert!(matches!(schedule_preset("nope"), Err(Error::UnknownPreset(_))));
        assert_eq!(preset_names().len(), 7);
    }

    #[test]
    fn window_is_inclusive_on_a_28_step_grid() {
        let s = schedule_preset("stroke2image").unwrap();
        let on: Vec<usize> = (0..28).filter(|&i| s.value_at(i as f64 / 28.0) > 0.0).collect();
        assert_eq!(on, vec![3, 4, 5]);
    }
}
