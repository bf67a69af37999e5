//! Run configuration and replay manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::remote::RemoteConfig;
use crate::control::schedule_preset;
use crate::error::{Error, Result};
use crate::experiments::{InversionConfig, InversionMethod, ProcessParams, DEFAULT_SEED};
use crate::simulate::{NoiseSchedule, ProcessKind, ScoreSource};
use crate::state::DEFAULT_DELTA;

pub const SEED_ENV: &str = "RECTIFLOW_SEED";
pub const TOOL: &str = "rectiflow";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_DESCRIBE: &str = env!("RECTIFLOW_GIT_DESCRIBE");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Simulate,
    Invert,
    Table5,
    Paths,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Invert => "invert",
            Experiment::Table5 => "table5",
            Experiment::Paths => "paths",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Everything a run depends on. Every key has a CLI flag of the same name
/// (underscores become dashes); flags override values read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Process for `simulate`.
    pub process: ProcessKind,
    /// Round-trip method for `invert`.
    pub method: InversionMethod,
    pub gamma: f64,
    pub eta: f64,
    /// Named guidance window replacing the constant strength.
    pub schedule_preset: Option<String>,
    pub steps: usize,
    /// Particles for `simulate` and `paths`, samples for `invert` and `table5`.
    pub particles: usize,
    pub dim: usize,
    pub mu: f64,
    /// Unset means `RECTIFLOW_SEED`, then the built-in default.
    pub seed: Option<u64>,
    pub delta: f64,
    pub dm_horizon: Option<f64>,
    /// `identity` or `knots:s0,s1,...`.
    pub sigma_schedule: String,
    pub score_source: ScoreSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Simulate,
            process: ProcessKind::RfFwdSde,
            method: InversionMethod::RfOde,
            gamma: 0.5,
            eta: 0.5,
            schedule_preset: None,
            steps: 100,
            particles: 10,
            dim: 1,
            mu: 10.0,
            seed: None,
            delta: DEFAULT_DELTA,
            dm_horizon: None,
            sigma_schedule: "identity".into(),
            score_source: ScoreSource::Interpolation,
            out: None,
            format: Format::Csv,
            remote: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serde(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Fills in the seed: explicit value, else `env_seed`, else the default.
    pub fn resolve_seed(&mut self, env_seed: Option<&str>) -> Result<u64> {
        if self.seed.is_none() {
            self.seed = Some(match env_seed {
                Some(s) => s
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid("seed", format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?,
                None => DEFAULT_SEED,
            });
        }
        Ok(self.seed.expect("seed resolved"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn sigma(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::parse(&self.sigma_schedule).map_err(|e| match e {
            Error::InvalidParameter { reason, .. } => Error::invalid("sigma_schedule", reason),
            other => other,
        })
    }

    pub fn process_params(&self) -> Result<ProcessParams> {
        let schedule = self.schedule_preset.as_deref().map(schedule_preset).transpose()?;
        let p = ProcessParams {
            kind: self.process,
            gamma: self.gamma,
            eta: self.eta,
            schedule,
            steps: self.steps,
            particles: self.particles,
            dim: self.dim,
            mu: self.mu,
            seed: self.seed(),
            delta: self.delta,
            dm_horizon: self.dm_horizon,
            score_source: self.score_source,
            sigma: self.sigma()?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn inversion_config(&self) -> Result<InversionConfig> {
        let cfg = InversionConfig {
            mu: self.mu,
            d: self.dim,
            n_samples: self.particles,
            n_steps: self.steps,
            gamma: self.gamma,
            eta: self.eta,
            method: self.method,
            seed: self.seed(),
            delta: self.delta,
            dm_horizon: self.dm_horizon,
            score_source: self.score_source,
            eta_schedule: self.schedule_preset.as_deref().map(schedule_preset).transpose()?,
            sigma: self.sigma()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks for the experiment at hand; run before any simulation.
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::invalid("delta", format!("must lie in (0, 0.5), got {}", self.delta)));
        }
        if let Some(r) = &self.remote {
            r.validate()?;
            if self.experiment != Experiment::Simulate {
                return Err(Error::invalid("remote", "an external field is supported by `simulate` only"));
            }
        }
        match self.experiment {
            Experiment::Simulate | Experiment::Paths => self.process_params().map(drop),
            Experiment::Invert | Experiment::Table5 => self.inversion_config().map(drop),
        }
    }
}

/// Identity of a run: enough to replay it exactly. Written as the leading keys
/// of each run's JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub git_describe: String,
    pub experiment: Experiment,
    pub seed: u64,
    /// Resolved configuration without the output directory.
    pub config: RunConfig,
    /// Files the run wrote, relative to its output directory.
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig, artifacts: Vec<String>) -> Self {
        Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            git_describe: GIT_DESCRIBE.into(),
            experiment: cfg.experiment,
            seed: cfg.seed(),
            config: RunConfig { out: None, ..cfg.clone() },
            artifacts,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid("manifest", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = RunConfig::from_toml(
            r#"
            experiment = "invert"
            method = "ctrl_sde"
            gamma = 0.25
            seed = 9
            sigma_schedule = "knots:0,0.5,1"

            [remote]
            endpoint = "tcp:127.0.0.1:4000"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::Invert);
        assert_eq!(cfg.method, InversionMethod::CtrlSde);
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.remote.as_ref().unwrap().timeout_ms, super::super::remote::DEFAULT_TIMEOUT_MS);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert!(RunConfig::from_toml("gamm = 0.1").is_err());
    }

    #[test]
    fn seed_resolution_order() {
        let mut c = RunConfig::default();
        assert_eq!(c.resolve_seed(Some("31")).unwrap(), 31);
        let mut c2 = RunConfig { seed: Some(5), ..c.clone() };
        assert_eq!(c2.resolve_seed(Some("31")).unwrap(), 5);
        c.seed = None;
        assert_eq!(c.resolve_seed(None).unwrap(), DEFAULT_SEED);
        c.seed = None;
        assert!(c.resolve_seed(Some("x")).unwrap_err().is_config_error());
    }

    #[test]
    fn validation_names_the_field() {
        let bad = RunConfig { gamma: 1.5, ..Default::default() };
        let e = bad.validate().unwrap_err();
        assert!(e.is_config_error());
        assert!(e.to_string().contains("gamma"), "{e}");
        let bad = RunConfig { sigma_schedule: "knots:1,0".into(), ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("sigma_schedule"));
        let bad = RunConfig { schedule_preset: Some("nope".into()), ..Default::default() };
        assert!(bad.validate().unwrap_err().is_config_error());
        let remote_invert = RunConfig {
            experiment: Experiment::Invert,
            remote: Some(RemoteConfig::new("tcp:127.0.0.1:1")),
            ..Default::default()
        };
        assert!(remote_invert.validate().unwrap_err().to_string().contains("remote"));
    }

    #[test]
    fn manifest_drops_output_dir() {
        let cfg = RunConfig {
            out: Some("runs/a".into()),
            seed: Some(3),
            ..Default::default()
        };
        let m = Manifest::new(&cfg, vec!["paths.csv".into()]);
        assert_eq!(m.config.out, None);
        assert_eq!(m.seed, 3);
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
