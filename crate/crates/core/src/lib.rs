//! Controlled rectified flows and their stochastic equivalents.
//!
//! The crate simulates the rectified-flow ODE, its LQR-controlled forward and
//! reverse variants, the matching SDEs and the OU diffusion baselines, and
//! checks them against Gaussian moment oracles. Start with [`experiments`] for
//! inversion round trips and [`simulate`] for single processes.

pub mod cli;
pub mod control;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod oracle;
pub mod rng;
pub mod simulate;
pub mod state;
pub mod verify;

pub use control::{schedule_preset, ControlledDrift, GuidanceSchedule};
pub use error::{Error, RemoteError, Result};
pub use experiments::{run_inversion_roundtrip, InversionConfig, InversionMethod, InversionReport, ProcessParams};
pub use fields::{ScoreField, ScoreHandle, VectorField, VectorFieldHandle};
pub use simulate::{run_process, NoiseSchedule, ProcessKind, ProcessSpec, ScoreSource};
pub use state::{EnsembleStats, GaussianDist, StateVec, TimeGrid, Trajectory};
