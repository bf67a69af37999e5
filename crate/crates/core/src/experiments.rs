//! Inversion round trips on Gaussian data, the nine-row accuracy table, path
//! export and the straightness metric.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::GuidanceSchedule;
use crate::error::{Error, Result};
use crate::fields::{
    analytic_marginal_field, field_from_score, FlippedField, FlippedScore, GenerativeFieldFromScore,
    InterpolationMarginal, OuMarginal, ScoreHandle, VectorFieldHandle,
};
use crate::oracle::{controlled_forward_sde_linear, controlled_reverse_sde_linear, GaussianPath, MomentState};
use crate::rng::derive_seed;
use crate::simulate::{
    reverse_of, run_particle, run_process, NoiseSchedule, ProcessKind, ProcessSpec, Record, ScoreSource,
};
use crate::state::{GaussianDist, StateVec, TimeGrid, Trajectory, DEFAULT_DELTA};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMethod {
    Ddim,
    Ddpm,
    RfOde,
    RfSde,
    CtrlOde,
    CtrlSde,
}

impl InversionMethod {
    pub fn name(self) -> &'static str {
        match self {
            InversionMethod::Ddim => "ddim",
            InversionMethod::Ddpm => "ddpm",
            InversionMethod::RfOde => "rf_ode",
            InversionMethod::RfSde => "rf_sde",
            InversionMethod::CtrlOde => "ctrl_ode",
            InversionMethod::CtrlSde => "ctrl_sde",
        }
    }

    pub fn is_sde(self) -> bool {
        matches!(self, InversionMethod::Ddpm | InversionMethod::RfSde | InversionMethod::CtrlSde)
    }

    fn is_dm(self) -> bool {
        matches!(self, InversionMethod::Ddim | InversionMethod::Ddpm)
    }
}

impl std::str::FromStr for InversionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            InversionMethod::Ddim,
            InversionMethod::Ddpm,
            InversionMethod::RfOde,
            InversionMethod::RfSde,
            InversionMethod::CtrlOde,
            InversionMethod::CtrlSde,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::invalid("method", format!("unknown method `{s}`")))
    }
}

/// One inversion round trip: data `N(mu 1, I)` in `d` dimensions, forward to
/// the noise end, back to the data end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub mu: f64,
    pub d: usize,
    pub n_samples: usize,
    pub n_steps: usize,
    pub gamma: f64,
    pub eta: f64,
    pub method: InversionMethod,
    pub seed: u64,
    pub delta: f64,
    /// OU horizon of the diffusion baselines; `None` means `ln(1/delta)`.
    pub dm_horizon: Option<f64>,
    pub score_source: ScoreSource,
    /// Replaces the constant `eta` in the reverse pass when set.
    pub eta_schedule: Option<GuidanceSchedule>,
    pub sigma: NoiseSchedule,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            mu: 10.0,
            d: 1,
            n_samples: 10,
            n_steps: 100,
            gamma: 0.0,
            eta: 0.0,
            method: InversionMethod::RfOde,
            seed: DEFAULT_SEED,
            delta: DEFAULT_DELTA,
            dm_horizon: None,
            score_source: ScoreSource::Interpolation,
            eta_schedule: None,
            sigma: NoiseSchedule::Identity,
        }
    }
}

impl InversionConfig {
    pub fn method(method: InversionMethod, gamma: f64, eta: f64) -> Self {
        InversionConfig {
            method,
            gamma,
            eta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu", "must be finite"));
        }
        if self.d < 1 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if self.n_samples < 1 {
            return Err(Error::invalid("n_samples", "must be at least 1"));
        }
        if self.n_steps < 2 {
            return Err(Error::invalid("n_steps", "must be at least 2"));
        }
        for (name, v) in [("gamma", self.gamma), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if let Some(h) = self.dm_horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid("dm_horizon", "must be positive and finite"));
            }
        }
        if let Some(s) = self.eta_schedule {
            s.validated()?;
        }
        TimeGrid::new(self.n_steps, 0.0, 1.0, self.delta)?;
        Ok(())
    }

    /// `(gamma, eta)` actually used: the plain RF methods run uncontrolled.
    pub fn effective_strengths(&self) -> (f64, f64) {
        match self.method {
            InversionMethod::RfOde | InversionMethod::RfSde => (0.0, 0.0),
            _ => (self.gamma, self.eta),
        }
    }

    pub fn dm_horizon(&self) -> f64 {
        self.dm_horizon.unwrap_or_else(|| (1.0 / self.delta).ln())
    }

    pub fn p0(&self) -> Result<GaussianDist> {
        GaussianDist::isotropic(StateVec::splat(self.d, self.mu), 1.0)
    }

    fn eta_schedule(&self) -> Result<GuidanceSchedule> {
        match self.eta_schedule {
            Some(s) if !matches!(self.method, InversionMethod::RfOde | InversionMethod::RfSde) => s.validated(),
            _ => GuidanceSchedule::constant(self.effective_strengths().1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `l2 = sqrt(sum_i |e_i|^2)`, `l1 = sum_i |e_i|_1`.
    Sum,
    Mean,
}

/// Per-sample error of a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub config: InversionConfig,
    /// Norm of the stacked error vector over all samples.
    pub l2: f64,
    /// Sum of absolute errors over all samples and coordinates.
    pub l1: f64,
    pub aggregation: Aggregation,
    pub l1_sum: f64,
    pub l2_sum: f64,
    pub l1_mean: f64,
    pub l2_mean: f64,
    pub per_sample: Vec<SampleError>,
    pub seed: u64,
}

impl InversionReport {
    pub fn from_errors(config: InversionConfig, originals: &[StateVec], recon: &[StateVec]) -> Result<Self> {
        if originals.len() != recon.len() || originals.is_empty() {
            return Err(Error::invalid("report", "need one reconstruction per original"));
        }
        let per_sample = originals
            .iter()
            .zip(recon)
            .map(|(a, b)| {
                let e = b.sub(a)?;
                Ok(SampleError {
                    l1: e.norm_l1(),
                    l2: e.norm_l2(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_sample.len() as f64;
        let l1_sum: f64 = per_sample.iter().map(|e| e.l1).sum();
        let l2_sum: f64 = per_sample.iter().map(|e| e.l2).sum();
        let l2 = per_sample.iter().map(|e| e.l2 * e.l2).sum::<f64>().sqrt();
        let seed = config.seed;
        Ok(InversionReport {
            config,
            l2,
            l1: l1_sum,
            aggregation: Aggregation::Sum,
            l1_sum,
            l2_sum,
            l1_mean: l1_sum / n,
            l2_mean: l2_sum / n,
            per_sample,
            seed,
        })
    }
}

/// The forward and reverse processes of one round trip for a single sample.
pub struct RoundTripSpecs {
    pub forward: ProcessSpec,
    pub reverse: ProcessSpec,
}

/// Builds the process pair for sample `y0` with structured-noise target `y1`.
pub fn round_trip_specs(cfg: &InversionConfig, y0: &StateVec, y1: &StateVec) -> Result<RoundTripSpecs> {
    let p0 = cfg.p0()?;
    let n = cfg.n_steps;
    let delta = cfg.delta;
    if cfg.method.is_dm() {
        let grid = TimeGrid::new(n, 0.0, cfg.dm_horizon(), delta)?;
        let ou: ScoreHandle = Arc::new(OuMarginal { p0 });
        return Ok(if cfg.method == InversionMethod::Ddim {
            let forward = ProcessSpec::ou_fwd_ode(ou, grid)?;
            let reverse = reverse_of(&forward, None)?;
            RoundTripSpecs { forward, reverse }
        } else {
            let forward = ProcessSpec::ou_fwd_sde(grid)?;
            let reverse = reverse_of(&forward, Some(ou))?;
            RoundTripSpecs { forward, reverse }
        });
    }

    let (gamma, _) = cfg.effective_strengths();
    let gamma_s = GuidanceSchedule::constant(gamma)?;
    let eta_s = cfg.eta_schedule()?;
    let fwd_grid = TimeGrid::new(n, 0.0, 1.0, delta)?;
    let marginal = InterpolationMarginal::to_standard_noise(p0.clone());
    let self_consistent = cfg.score_source == ScoreSource::SelfConsistent;
    let forward_path = if self_consistent {
        Some(self_consistent_forward_path(gamma, y1, &p0, &fwd_grid)?)
    } else {
        None
    };
    let reverse_path = |grid: &TimeGrid| -> Result<Option<Arc<GaussianPath>>> {
        let Some(fp) = forward_path.as_ref() else {
            return Ok(None);
        };
        if eta_s.kind != crate::control::ScheduleKind::Constant {
            return Err(Error::invalid(
                "score_source",
                "self_consistent scores need a constant eta schedule",
            ));
        }
        let init = fp.moments().last().expect("non-empty path").clone();
        Ok(Some(Arc::new(self_consistent_reverse_path(eta_s.strength, y0, &init, grid)?)))
    };

    if cfg.method.is_sde() {
        let forward = ProcessSpec::fwd_ctrl_sde(y1.clone(), gamma_s, fwd_grid)?;
        let rev_grid = TimeGrid::new(n, delta, 1.0, delta)?;
        let score: ScoreHandle = match reverse_path(&rev_grid)? {
            Some(p) => p,
            None => FlippedScore::handle(Arc::new(marginal), 1.0),
        };
        let reverse = ProcessSpec::rev_ctrl_sde(y0.clone(), eta_s, score, rev_grid)?;
        Ok(RoundTripSpecs { forward, reverse })
    } else {
        let rev_grid = fwd_grid;
        let (u, v) = match (forward_path.as_ref(), reverse_path(&rev_grid)?) {
            (Some(fp), Some(rp)) => (
                field_from_score(Arc::new(fp.clone()), delta),
                GenerativeFieldFromScore::handle(rp, delta),
            ),
            _ => {
                let u = analytic_marginal_field(&marginal)?;
                let v = Arc::new(FlippedField::new(u.clone(), 1.0));
                (u, v as _)
            }
        };
        let forward = ProcessSpec::fwd_ctrl_ode(u, y1.clone(), gamma_s, fwd_grid)?.with_sigma(cfg.sigma.clone())?;
        let reverse = ProcessSpec::rev_ctrl_ode(v, y0.clone(), eta_s, rev_grid)?.with_sigma(cfg.sigma.clone())?;
        Ok(RoundTripSpecs { forward, reverse })
    }
}

/// Marginal of the controlled forward SDE (and its equivalent ODE) started from `p0`.
pub fn self_consistent_forward_path(gamma: f64, y1: &StateVec, p0: &GaussianDist, grid: &TimeGrid) -> Result<GaussianPath> {
    let spec = controlled_forward_sde_linear(gamma, y1.clone(), grid.delta);
    GaussianPath::integrate(&spec, &MomentState::from_gaussian(p0), grid)
}

/// Marginal of the controlled reverse SDE (and its equivalent ODE) with its own score.
pub fn self_consistent_reverse_path(eta: f64, y0: &StateVec, init: &MomentState, grid: &TimeGrid) -> Result<GaussianPath> {
    let spec = controlled_reverse_sde_linear(eta, y0.clone(), grid.delta);
    GaussianPath::integrate(&spec, init, grid)
}

/// Data samples and structured-noise targets of a run.
pub fn draw_endpoints(cfg: &InversionConfig) -> Result<(Vec<StateVec>, Vec<StateVec>)> {
    let y0 = cfg.p0()?.sample(derive_seed(cfg.seed, "data"), cfg.n_samples)?;
    let y1 = GaussianDist::standard(cfg.d).sample(derive_seed(cfg.seed, "target"), cfg.n_samples)?;
    Ok((y0, y1))
}

/// Runs the round trip of `cfg` and reports reconstruction errors.
pub fn run_inversion_roundtrip(cfg: &InversionConfig) -> Result<InversionReport> {
    cfg.validate()?;
    let (y0, y1) = draw_endpoints(cfg)?;
    let fwd_seed = derive_seed(cfg.seed, "forward");
    let rev_seed = derive_seed(cfg.seed, "reverse");
    let recon = y0
        .par_iter()
        .zip(y1.par_iter())
        .enumerate()
        .map(|(i, (a, b))| {
            let specs = round_trip_specs(cfg, a, b)?;
            let noise = run_particle(&specs.forward, a, fwd_seed, i as u64, &Record::Terminal)?;
            let back = run_particle(&specs.reverse, noise.terminal(), rev_seed, i as u64, &Record::Terminal)?;
            Ok(back.terminal().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    InversionReport::from_errors(cfg.clone(), &y0, &recon)
}

/// A row of the accuracy table with the published values for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table5Row {
    pub label: String,
    pub method: InversionMethod,
    pub gamma: f64,
    pub eta: f64,
    pub paper_l2: f64,
    pub paper_l1: f64,
    pub report: InversionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub claim: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table5 {
    pub rows: Vec<Table5Row>,
    pub checks: Vec<OrderingCheck>,
}

/// `(label, method, gamma, eta, paper L2, paper L1)`.
pub const TABLE5_ROWS: [(&str, InversionMethod, f64, f64, f64, f64); 9] = [
    ("DDIM inversion", InversionMethod::Ddim, 0.0, 0.0, 6.024, 19.038),
    ("DDPM inversion", InversionMethod::Ddpm, 0.0, 0.0, 6.007, 15.758),
    ("RF ODE (gamma=eta=0)", InversionMethod::RfOde, 0.0, 0.0, 0.092, 0.20),
    ("RF SDE (gamma=eta=0)", InversionMethod::RfSde, 0.0, 0.0, 3.564, 8.795),
    ("controlled ODE (gamma=0.5, eta=0)", InversionMethod::CtrlOde, 0.5, 0.0, 4.777, 11.628),
    ("controlled ODE (gamma=0, eta=0.5)", InversionMethod::CtrlOde, 0.0, 0.5, 1.219, 3.074),
    ("controlled ODE (gamma=0.5, eta=0.5)", InversionMethod::CtrlOde, 0.5, 0.5, 0.628, 1.643),
    ("controlled SDE (gamma=eta=0.5)", InversionMethod::CtrlSde, 0.5, 0.5, 0.269, 0.694),
    ("controlled SDE (gamma=eta=1)", InversionMethod::CtrlSde, 1.0, 1.0, 0.003, 0.010),
];

/// Runs all nine rows with `base` supplying everything but method and strengths.
pub fn table5(base: &InversionConfig) -> Result<Table5> {
    let rows = TABLE5_ROWS
        .iter()
        .map(|&(label, method, gamma, eta, paper_l2, paper_l1)| {
            let cfg = InversionConfig {
                method,
                gamma,
                eta,
                eta_schedule: None,
                ..base.clone()
            };
            Ok(Table5Row {
                label: label.to_string(),
                method,
                gamma,
                eta,
                paper_l2,
                paper_l1,
                report: run_inversion_roundtrip(&cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let l2 = |i: usize| rows[i].report.l2;
    let (ddim, ddpm, rf_ode, rf_sde, ctrl_ode, ctrl_sde_half, ctrl_sde_full) = (l2(0), l2(1), l2(2), l2(3), l2(6), l2(7), l2(8));
    let checks = vec![
        OrderingCheck {
            claim: format!("RF ODE L2 {rf_ode:.4} < 10% of DDIM L2 {ddim:.4}"),
            pass: rf_ode < 0.1 * ddim,
        },
        OrderingCheck {
            claim: format!("RF ODE L2 {rf_ode:.4} < 10% of DDPM L2 {ddpm:.4}"),
            pass: rf_ode < 0.1 * ddpm,
        },
        OrderingCheck {
            claim: format!("controlled SDE (0.5) L2 {ctrl_sde_half:.4} < RF SDE L2 {rf_sde:.4}"),
            pass: ctrl_sde_half < rf_sde,
        },
        OrderingCheck {
            claim: format!("2 x controlled SDE (1) L2 {ctrl_sde_full:.4} < RF ODE L2 {rf_ode:.4}"),
            pass: 2.0 * ctrl_sde_full < rf_ode,
        },
        OrderingCheck {
            claim: format!("2 x RF ODE L2 {rf_ode:.4} < controlled ODE (0.5, 0.5) L2 {ctrl_ode:.4}"),
            pass: 2.0 * rf_ode < ctrl_ode,
        },
        OrderingCheck {
            claim: format!("2 x controlled ODE (0.5, 0.5) L2 {ctrl_ode:.4} < min(DDPM, DDIM) L2 {:.4}", ddpm.min(ddim)),
            pass: 2.0 * ctrl_ode < ddpm.min(ddim),
        },
    ];
    Ok(Table5 { rows, checks })
}

/// Max distance of the path from its endpoint chord, relative to the chord length.
pub fn straightness(traj: &Trajectory) -> Result<f64> {
    if traj.states.len() < 3 {
        return Err(Error::invalid("trajectory", "needs at least three states"));
    }
    let a = traj.initial();
    let b = traj.terminal();
    let chord = b.sub(a)?;
    let len = chord.norm_l2();
    if len == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for x in &traj.states {
        // distance to the line through a and b
        let rel = x.sub(a)?;
        let proj = rel.iter().zip(chord.iter()).map(|(r, c)| r * c).sum::<f64>() / (len * len);
        let foot = a.axpy(proj, &chord)?;
        worst = worst.max(x.dist_l2(&foot)?);
    }
    Ok(worst / len)
}

/// Straightness of the graph `(tau, x)` with time rescaled to `tau` in `[0, 1]`.
///
/// Unlike [`straightness`], this sees speed changes along a line, and it is the
/// meaningful comparison in one dimension.
pub fn time_straightness(traj: &Trajectory) -> Result<f64> {
    let (t0, t1) = match (traj.times.first(), traj.times.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => return Err(Error::invalid("trajectory", "needs increasing times")),
    };
    let states = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| {
            let mut v = Vec::with_capacity(x.dim() + 1);
            v.push((t - t0) / (t1 - t0));
            v.extend(x.iter());
            StateVec::new(v)
        })
        .collect::<Result<Vec<_>>>()?;
    straightness(&Trajectory {
        states,
        ..traj.clone()
    })
}

/// Writes `time,particle_id,coord_0,...` rows, one per recorded grid point.
pub fn write_paths_csv(trajs: &[Trajectory], out: &mut dyn Write) -> Result<()> {
    let d = trajs
        .first()
        .map(|t| t.initial().dim())
        .ok_or_else(|| Error::invalid("paths", "no trajectories"))?;
    let mut header = String::from("time,particle_id");
    for i in 0..d {
        header.push_str(&format!(",coord_{i}"));
    }
    writeln!(out, "{header}")?;
    for traj in trajs {
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let mut line = format!("{t:.16e},{}", traj.particle_id);
            for v in x.iter() {
                line.push_str(&format!(",{v:.16e}"));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Writes `{"paths": [{"particle_id", "seed", "times", "states"}, ...]}`.
pub fn write_paths_json(trajs: &[Trajectory], out: &mut dyn Write) -> Result<()> {
    serde_json::to_writer(&mut *out, &serde_json::json!({ "paths": trajs }))?;
    writeln!(out)?;
    Ok(())
}

/// Simulates `init` under `spec` and writes the full paths as CSV.
pub fn export_paths(spec: &ProcessSpec, init: &[StateVec], seed: u64, out: &mut dyn Write) -> Result<Vec<Trajectory>> {
    let trajs = run_process(spec, init, seed)?;
    write_paths_csv(&trajs, out)?;
    Ok(trajs)
}

/// Parameters for simulating a single named process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessParams {
    pub kind: ProcessKind,
    pub gamma: f64,
    pub eta: f64,
    /// Overrides the constant guidance of the controlled kinds.
    pub schedule: Option<GuidanceSchedule>,
    pub steps: usize,
    pub particles: usize,
    pub dim: usize,
    pub mu: f64,
    pub seed: u64,
    pub delta: f64,
    pub dm_horizon: Option<f64>,
    pub score_source: ScoreSource,
    pub sigma: NoiseSchedule,
}

impl Default for ProcessParams {
    fn default() -> Self {
        ProcessParams {
            kind: ProcessKind::RfFwdSde,
            gamma: 0.5,
            eta: 0.5,
            schedule: None,
            steps: 100,
            particles: 10,
            dim: 1,
            mu: 10.0,
            seed: DEFAULT_SEED,
            delta: DEFAULT_DELTA,
            dm_horizon: None,
            score_source: ScoreSource::Interpolation,
            sigma: NoiseSchedule::Identity,
        }
    }
}

/// A ready-to-run process with its initial ensemble and noise seed.
pub struct ProcessRun {
    pub spec: ProcessSpec,
    pub init: Vec<StateVec>,
    pub seed: u64,
}

impl ProcessParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.particles < 1 {
            return Err(Error::invalid("particles", "must be at least 1"));
        }
        if self.dim < 1 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu", "must be finite"));
        }
        if let Some(s) = self.schedule {
            s.validated()?;
        }
        TimeGrid::new(self.steps, 0.0, 1.0, self.delta)?;
        Ok(())
    }

    fn guidance(&self, strength: f64) -> Result<GuidanceSchedule> {
        match self.schedule {
            Some(s) => s.validated(),
            None => GuidanceSchedule::constant(strength),
        }
    }

    /// Builds the process, its initial ensemble and the noise seed.
    ///
    /// Forward kinds start from `p0 = N(mu 1, I)`; reverse kinds start from the
    /// interpolation marginal at the mirrored start time. Controlled forward
    /// kinds steer to one target drawn from `N(0, I)`; controlled reverse kinds
    /// steer to `mu 1`.
    pub fn build(&self) -> Result<ProcessRun> {
        self.build_with_field(None)
    }

    /// Like [`build`](Self::build), with `field` standing in for the marginal
    /// velocity field of the ODE kinds (a remote model, for instance).
    pub fn build_with_field(&self, field: Option<VectorFieldHandle>) -> Result<ProcessRun> {
        self.validate()?;
        if field.is_some() {
            if !matches!(self.kind, ProcessKind::FwdCtrlOde | ProcessKind::RevCtrlOde) {
                return Err(Error::invalid("remote", "an external field drives fwd_ctrl_ode and rev_ctrl_ode only"));
            }
            if self.score_source == ScoreSource::SelfConsistent {
                return Err(Error::invalid("remote", "an external field needs score_source = interpolation"));
            }
        }
        let (n, delta, d) = (self.steps, self.delta, self.dim);
        let p0 = GaussianDist::isotropic(StateVec::splat(d, self.mu), 1.0)?;
        let marginal = InterpolationMarginal::to_standard_noise(p0.clone());
        let y1 = GaussianDist::standard(d).sample(derive_seed(self.seed, "target"), 1)?.remove(0);
        let y0 = p0.mean.clone();
        let unit = TimeGrid::new(n, 0.0, 1.0, delta)?;
        let rev_sde_grid = TimeGrid::new(n, delta, 1.0, delta)?;
        let sc = self.score_source == ScoreSource::SelfConsistent;
        let constant_only = || -> Result<()> {
            if self.schedule.is_some_and(|s| s.kind != crate::control::ScheduleKind::Constant) {
                return Err(Error::invalid("score_source", "self_consistent scores need a constant schedule"));
            }
            Ok(())
        };
        let reverse_start = |t_start: f64| marginal.marginal_at(1.0 - t_start);
        let reverse_path = |eta: f64, grid: &TimeGrid| -> Result<Arc<GaussianPath>> {
            constant_only()?;
            let init = MomentState::from_gaussian(&reverse_start(grid.t_start)?);
            Ok(Arc::new(self_consistent_reverse_path(eta, &y0, &init, grid)?))
        };
        let interp_rev_score = || FlippedScore::handle(Arc::new(marginal.clone()), 1.0);

        let (spec, start) = match self.kind {
            ProcessKind::FwdCtrlOde => {
                let gamma = self.guidance(self.gamma)?;
                let base = if let Some(f) = field.clone() {
                    f
                } else if sc {
                    constant_only()?;
                    field_from_score(Arc::new(self_consistent_forward_path(gamma.strength, &y1, &p0, &unit)?), delta)
                } else {
                    analytic_marginal_field(&marginal)?
                };
                (ProcessSpec::fwd_ctrl_ode(base, y1, gamma, unit)?.with_sigma(self.sigma.clone())?, p0)
            }
            ProcessKind::FwdCtrlSde => (ProcessSpec::fwd_ctrl_sde(y1, self.guidance(self.gamma)?, unit)?, p0),
            ProcessKind::RevCtrlOde => {
                let eta = self.guidance(self.eta)?;
                let v = if let Some(f) = field.clone() {
                    Arc::new(FlippedField::new(f, 1.0))
                } else if sc {
                    GenerativeFieldFromScore::handle(reverse_path(eta.strength, &unit)?, delta)
                } else {
                    Arc::new(FlippedField::new(analytic_marginal_field(&marginal)?, 1.0))
                };
                let spec = ProcessSpec::rev_ctrl_ode(v, y0.clone(), eta, unit)?.with_sigma(self.sigma.clone())?;
                (spec, reverse_start(0.0)?)
            }
            ProcessKind::RevCtrlSde => {
                let eta = self.guidance(self.eta)?;
                let score: ScoreHandle = if sc { reverse_path(eta.strength, &rev_sde_grid)? } else { interp_rev_score() };
                (ProcessSpec::rev_ctrl_sde(y0.clone(), eta, score, rev_sde_grid)?, reverse_start(delta)?)
            }
            ProcessKind::RfFwdSde => (ProcessSpec::rf_fwd_sde(unit)?, p0),
            ProcessKind::RfRevSde => {
                let score: ScoreHandle = if sc { reverse_path(0.0, &rev_sde_grid)? } else { interp_rev_score() };
                (ProcessSpec::rf_rev_sde(score, rev_sde_grid)?, reverse_start(delta)?)
            }
            ProcessKind::OuFwdSde | ProcessKind::OuFwdOde => {
                let h = self.dm_horizon.unwrap_or_else(|| (1.0 / delta).ln());
                let grid = TimeGrid::new(n, 0.0, h, delta)?;
                let spec = if self.kind == ProcessKind::OuFwdSde {
                    ProcessSpec::ou_fwd_sde(grid)?
                } else {
                    ProcessSpec::ou_fwd_ode(Arc::new(OuMarginal { p0: p0.clone() }), grid)?.with_sigma(self.sigma.clone())?
                };
                (spec, p0)
            }
            ProcessKind::GenericReverse => {
                // time reversal of the stochastic RF, mirrored onto [delta, 1]
                let fwd = ProcessSpec::rf_fwd_sde(TimeGrid::new(n, 0.0, 1.0 - delta, delta)?)?;
                let spec = reverse_of(&fwd, Some(Arc::new(marginal.clone())))?;
                (spec, reverse_start(delta)?)
            }
        };
        let init = start.sample(derive_seed(self.seed, "init"), self.particles)?;
        Ok(ProcessRun {
            spec,
            init,
            seed: derive_seed(self.seed, "noise"),
        })
    }
}
