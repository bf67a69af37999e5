use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monotone step scheduler `sigma: [0, 1] -> R`; ODE steps advance by
/// `sigma(t_{i+1}) - sigma(t_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "knots")]
pub enum NoiseSchedule {
    #[default]
    Identity,
    /// Values at equispaced times `0, 1/(k-1), ..., 1`, linearly interpolated.
    Knots(Vec<f64>),
}

impl NoiseSchedule {
    pub fn knots(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("sigma_schedule", "needs at least two knots"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sigma_schedule", "knots must be finite"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("sigma_schedule", "knots must be non-decreasing"));
        }
        Ok(NoiseSchedule::Knots(values))
    }

    /// Parses `identity` or `knots:v0,v1,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "identity" {
            return Ok(NoiseSchedule::Identity);
        }
        if let Some(rest) = spec.strip_prefix("knots:") {
            let values = rest
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid("sigma_schedule", format!("`{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            return Self::knots(values);
        }
        Err(Error::invalid(
            "sigma_schedule",
            format!("expected `identity` or `knots:v0,v1,...`, got `{spec}`"),
        ))
    }

    pub fn label(&self) -> String {
        match self {
            NoiseSchedule::Identity => "identity".into(),
            NoiseSchedule::Knots(k) => format!(
                "knots:{}",
                k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }

    /// Whether the schedule is defined on `[lo, hi]`.
    pub fn supports(&self, lo: f64, hi: f64) -> bool {
        match self {
            NoiseSchedule::Identity => true,
            NoiseSchedule::Knots(_) => lo >= 0.0 && hi <= 1.0,
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self {
            NoiseSchedule::Identity => t,
            NoiseSchedule::Knots(k) => {
                let segs = (k.len() - 1) as f64;
                let pos = (t.clamp(0.0, 1.0) * segs).min(segs);
                let i = (pos.floor() as usize).min(k.len() - 2);
                let w = pos - i as f64;
                k[i] + w * (k[i + 1] - k[i])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::TimeGrid;

    #[test]
    fn identity_gives_uniform_increments() {
        let g = TimeGrid::unit(100).unwrap();
        let s = NoiseSchedule::Identity;
        for i in 0..100 {
            let d = s.sigma(g.point(i + 1)) - s.sigma(g.point(i));
            assert!((d - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn knots_are_monotone_and_interpolate() {
        let s = NoiseSchedule::parse("knots:0,0.5,0.6,1").unwrap();
        assert_eq!(s.sigma(0.0), 0.0);
        assert_eq!(s.sigma(1.0), 1.0);
        assert!((s.sigma(1.0 / 6.0) - 0.25).abs() < 1e-12);
        let g = TimeGrid::unit(37).unwrap();
        assert!((0..37).all(|i| s.sigma(g.point(i + 1)) >= s.sigma(g.point(i))));
        assert!(NoiseSchedule::parse("knots:0,1,0.5").is_err());
        assert!(NoiseSchedule::parse("cosine").is_err());
        assert_eq!(NoiseSchedule::parse(&s.label()).unwrap(), s);
    }
}
