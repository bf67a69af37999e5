//! The acceptance suite: each criterion as a function with pinned tolerances,
//! shared by the `check` subcommand and the integration tests.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::GuidanceSchedule;
use crate::error::Result;
use crate::experiments::{
    run_inversion_roundtrip, straightness, InversionConfig, InversionMethod, DEFAULT_SEED,
};
use crate::fields::{
    analytic_marginal_field, field_from_score, score_from_field, FlippedScore, GenerativeFieldFromScore,
    InterpolationMarginal, ScoreField,
};
use crate::oracle::{
    closed_form_controls, controlled_forward_sde_linear, controlled_reverse_sde_linear, lqr_bruteforce,
    lqr_cost, rf_forward_sde_linear, stationary_profile_check, GaussianPath, MomentState,
};
use crate::rng::derive_seed;
use crate::simulate::{run_process, run_process_recorded, run_terminal, ProcessSpec, Record};
use crate::state::{EnsembleStats, GaussianDist, StateVec, TimeGrid, DEFAULT_DELTA};

pub const MC_MEAN_SE: f64 = 3.0;
pub const MC_VAR_REL: f64 = 0.05;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const LQR_SLACK: f64 = 1e-4;
pub const LQR_LAMBDA: f64 = 1e6;
pub const STRAIGHT_TOL: f64 = 1e-10;
pub const EQUIV_PARTICLES: usize = 10_000;
pub const EQUIV_STEPS: usize = 2_000;
pub const EQUIV_T_END: f64 = 0.95;
pub const EQUIV_T_START_REV: f64 = 0.05;
pub const REVERSAL_STEP: f64 = 5e-4;
pub const PROFILE_STEPS: usize = 40_000;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub title: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} ({}): {} [{:.2}s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u32, title: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CriterionOutcome {
    let start = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionOutcome {
        id,
        title: title.to_string(),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Ensemble moments against reference moments: mean within `MC_MEAN_SE`
/// standard errors, variance within `MC_VAR_REL`, per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentMatch {
    pub mean_z: f64,
    pub var_rel: f64,
}

impl MomentMatch {
    pub fn pass(&self) -> bool {
        self.mean_z <= MC_MEAN_SE && self.var_rel <= MC_VAR_REL
    }
}

pub fn match_oracle(states: &[StateVec], oracle: &MomentState) -> Result<MomentMatch> {
    let stats = EnsembleStats::from_states(states)?;
    let se = stats.mean_standard_error();
    let mut m = MomentMatch {
        mean_z: 0.0,
        var_rel: 0.0,
    };
    for i in 0..oracle.var_diag.len() {
        m.mean_z = m.mean_z.max((stats.mean[i] - oracle.mean[i]).abs() / se[i]);
        m.var_rel = m.var_rel.max((stats.cov_diag[i] / oracle.var_diag[i] - 1.0).abs());
    }
    Ok(m)
}

/// Two ensembles against each other (standard errors combined in quadrature).
pub fn match_ensembles(a: &[StateVec], b: &[StateVec]) -> Result<MomentMatch> {
    let (sa, sb) = (EnsembleStats::from_states(a)?, EnsembleStats::from_states(b)?);
    let (ea, eb) = (sa.mean_standard_error(), sb.mean_standard_error());
    let mut m = MomentMatch {
        mean_z: 0.0,
        var_rel: 0.0,
    };
    for i in 0..sa.cov_diag.len() {
        let se = (ea[i] * ea[i] + eb[i] * eb[i]).sqrt();
        m.mean_z = m.mean_z.max((sa.mean[i] - sb.mean[i]).abs() / se);
        m.var_rel = m.var_rel.max((sa.cov_diag[i] / sb.cov_diag[i] - 1.0).abs());
    }
    Ok(m)
}

fn fmt_match(m: &MomentMatch) -> String {
    format!("mean {:.2} SE, var {:.2}%", m.mean_z, 100.0 * m.var_rel)
}

fn scalar(v: f64) -> StateVec {
    StateVec::splat(1, v)
}

fn data_dist() -> Result<GaussianDist> {
    GaussianDist::isotropic(scalar(10.0), 1.0)
}

/// Deterministic RF round trip at the default configuration.
pub fn criterion_1() -> CriterionOutcome {
    timed(1, "deterministic RF round trip", || {
        let start = Instant::now();
        let r = run_inversion_roundtrip(&InversionConfig::method(InversionMethod::RfOde, 0.0, 0.0))?;
        let secs = start.elapsed().as_secs_f64();
        let pass = (0.05..=0.2).contains(&r.l2) && (0.1..=0.5).contains(&r.l1) && secs < 1.0;
        Ok((pass, format!("L2 {:.4} in [0.05, 0.2], L1 {:.4} in [0.1, 0.5], {secs:.3}s < 1s", r.l2, r.l1)))
    })
}

/// Full forward and reverse control recovers the data.
pub fn criterion_2() -> CriterionOutcome {
    timed(2, "full-control recovery", || {
        let r = run_inversion_roundtrip(&InversionConfig::method(InversionMethod::CtrlSde, 1.0, 1.0))?;
        Ok((r.l2 <= 0.01 && r.l1 <= 0.02, format!("L2 {:.2e} <= 0.01, L1 {:.2e} <= 0.02", r.l2, r.l1)))
    })
}

/// Accuracy ordering against the diffusion baselines.
pub fn criterion_3() -> CriterionOutcome {
    timed(3, "inversion ordering", || {
        let l2 = |m, g, e| run_inversion_roundtrip(&InversionConfig::method(m, g, e)).map(|r| r.l2);
        let rf_ode = l2(InversionMethod::RfOde, 0.0, 0.0)?;
        let ddim = l2(InversionMethod::Ddim, 0.0, 0.0)?;
        let ddpm = l2(InversionMethod::Ddpm, 0.0, 0.0)?;
        let rf_sde = l2(InversionMethod::RfSde, 0.0, 0.0)?;
        let ctrl_sde = l2(InversionMethod::CtrlSde, 0.5, 0.5)?;
        let pass = rf_ode < 0.1 * ddim && rf_ode < 0.1 * ddpm && ctrl_sde < rf_sde;
        Ok((
            pass,
            format!(
                "RF ODE {rf_ode:.4} vs DDIM {ddim:.4} / DDPM {ddpm:.4}; controlled SDE {ctrl_sde:.4} < RF SDE {rf_sde:.4}"
            ),
        ))
    })
}

/// First-order convergence of the deterministic round trip.
pub fn criterion_4() -> CriterionOutcome {
    timed(4, "Euler convergence", || {
        let err = |n| {
            run_inversion_roundtrip(&InversionConfig {
                n_steps: n,
                ..InversionConfig::method(InversionMethod::RfOde, 0.0, 0.0)
            })
            .map(|r| r.l2)
        };
        let errs = [50, 100, 200, 400].map(err);
        let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
        let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
        let pass = ratios.iter().all(|r| (1.7..=2.3).contains(r));
        Ok((pass, format!("ratios N/2N for N = 50, 100, 200: {ratios:.3?}")))
    })
}

fn equivalence_init(seed_label: &str, dist: &GaussianDist) -> Result<Vec<StateVec>> {
    dist.sample(derive_seed(DEFAULT_SEED, seed_label), EQUIV_PARTICLES)
}

/// Forward SDE with partial control and the ODE driven by its own score share
/// marginals.
pub fn criterion_5() -> CriterionOutcome {
    timed(5, "forward ODE/SDE marginal equivalence", || {
        let grid = TimeGrid::new(EQUIV_STEPS, 0.0, EQUIV_T_END, DEFAULT_DELTA)?;
        let p0 = data_dist()?;
        let y1 = scalar(1.5);
        let init = equivalence_init("thm1-init", &p0)?;
        let mut pass = true;
        let mut parts = Vec::new();
        for gamma in [0.0, 0.3, 0.7, 1.0] {
            let path = GaussianPath::integrate(
                &controlled_forward_sde_linear(gamma, y1.clone(), grid.delta),
                &MomentState::from_gaussian(&p0),
                &grid,
            )?;
            let oracle = path.moments().last().expect("non-empty").clone();
            let schedule = GuidanceSchedule::constant(gamma)?;
            let sde = ProcessSpec::fwd_ctrl_sde(y1.clone(), schedule, grid)?;
            let base = field_from_score(Arc::new(path), grid.delta);
            let ode = ProcessSpec::fwd_ctrl_ode(base, y1.clone(), schedule, grid)?;
            let m_sde = match_oracle(&run_terminal(&sde, &init, derive_seed(DEFAULT_SEED, "thm1-noise"))?, &oracle)?;
            let m_ode = match_oracle(&run_terminal(&ode, &init, 0)?, &oracle)?;
            pass &= m_sde.pass() && m_ode.pass();
            parts.push(format!("gamma {gamma}: SDE {}, ODE {}", fmt_match(&m_sde), fmt_match(&m_ode)));
        }
        Ok((pass, parts.join("; ")))
    })
}

/// Reverse SDE and ODE, each driven by its own score, share marginals.
pub fn criterion_6() -> CriterionOutcome {
    timed(6, "reverse ODE/SDE marginal equivalence", || {
        let grid = TimeGrid::new(EQUIV_STEPS, EQUIV_T_START_REV, EQUIV_T_END, DEFAULT_DELTA)?;
        let marginal = InterpolationMarginal::to_standard_noise(data_dist()?);
        let start = marginal.marginal_at(1.0 - EQUIV_T_START_REV)?;
        let y0 = scalar(10.0);
        let init = equivalence_init("thm2-init", &start)?;
        let mut pass = true;
        let mut parts = Vec::new();
        for eta in [0.0, 0.5, 1.0] {
            let path = Arc::new(GaussianPath::integrate(
                &controlled_reverse_sde_linear(eta, y0.clone(), grid.delta),
                &MomentState::from_gaussian(&start),
                &grid,
            )?);
            let oracle = path.moments().last().expect("non-empty").clone();
            let schedule = GuidanceSchedule::constant(eta)?;
            let sde = ProcessSpec::rev_ctrl_sde(y0.clone(), schedule, path.clone(), grid)?;
            let v = GenerativeFieldFromScore::handle(path, grid.delta);
            let ode = ProcessSpec::rev_ctrl_ode(v, y0.clone(), schedule, grid)?;
            let m_sde = match_oracle(&run_terminal(&sde, &init, derive_seed(DEFAULT_SEED, "thm2-noise"))?, &oracle)?;
            let m_ode = match_oracle(&run_terminal(&ode, &init, 0)?, &oracle)?;
            pass &= m_sde.pass() && m_ode.pass();
            parts.push(format!("eta {eta}: SDE {}, ODE {}", fmt_match(&m_sde), fmt_match(&m_ode)));
        }
        Ok((pass, parts.join("; ")))
    })
}

/// The reverse stochastic RF retraces the forward marginals backwards in time.
pub fn criterion_7() -> CriterionOutcome {
    timed(7, "SDE time reversal", || {
        let p0 = data_dist()?;
        let marginal = InterpolationMarginal::to_standard_noise(p0.clone());
        // shared step size so every probe time is a grid point of both grids
        let steps = |a: f64, b: f64| ((b - a) / REVERSAL_STEP).round() as usize;
        let fwd_grid = TimeGrid::new(steps(0.0, EQUIV_T_END), 0.0, EQUIV_T_END, DEFAULT_DELTA)?;
        let rev_grid = TimeGrid::new(
            steps(EQUIV_T_START_REV, EQUIV_T_END),
            EQUIV_T_START_REV,
            EQUIV_T_END,
            DEFAULT_DELTA,
        )?;
        let ts = [0.25, 0.5, 0.75];
        let idx = |g: &TimeGrid, t: f64| {
            g.index_of(t)
                .ok_or_else(|| crate::error::Error::invalid("grid", format!("{t} is not a grid point")))
        };
        let fwd_idx = ts.iter().map(|&t| idx(&fwd_grid, t)).collect::<Result<Vec<_>>>()?;
        let mut rev_idx = ts.iter().map(|&t| idx(&rev_grid, 1.0 - t)).collect::<Result<Vec<_>>>()?;
        rev_idx.sort_unstable();

        let fwd = ProcessSpec::rf_fwd_sde(fwd_grid)?;
        let rev = ProcessSpec::rf_rev_sde(FlippedScore::handle(Arc::new(marginal.clone()), 1.0), rev_grid)?;
        let fwd_init = equivalence_init("lemma4-fwd", &p0)?;
        let rev_init = equivalence_init("lemma4-rev", &marginal.marginal_at(1.0 - EQUIV_T_START_REV)?)?;
        let f = run_process_recorded(&fwd, &fwd_init, derive_seed(DEFAULT_SEED, "lemma4-fwd-noise"), &Record::At(fwd_idx))?;
        let r = run_process_recorded(&rev, &rev_init, derive_seed(DEFAULT_SEED, "lemma4-rev-noise"), &Record::At(rev_idx))?;
        let mut pass = true;
        let mut parts = Vec::new();
        for (k, t) in ts.iter().enumerate() {
            let fs: Vec<StateVec> = f.iter().map(|tr| tr.states[k].clone()).collect();
            // reverse records ascend in reverse time, i.e. descend in forward time
            let rs: Vec<StateVec> = r.iter().map(|tr| tr.states[ts.len() - 1 - k].clone()).collect();
            let m = match_ensembles(&fs, &rs)?;
            pass &= m.pass();
            parts.push(format!("t {t}: {}", fmt_match(&m)));
        }
        Ok((pass, parts.join("; ")))
    })
}

/// Field/score conversion identities on a 10 x 10 grid.
pub fn criterion_8() -> CriterionOutcome {
    timed(8, "field/score identities", || {
        let mut worst_round_trip: f64 = 0.0;
        let mut worst_analytic: f64 = 0.0;
        for mu in [0.0, 10.0] {
            let marginal = InterpolationMarginal::to_standard_noise(GaussianDist::isotropic(scalar(mu), 1.0)?);
            let field = analytic_marginal_field(&marginal)?;
            let via_score = field_from_score(Arc::new(marginal.clone()), DEFAULT_DELTA);
            for i in 0..10 {
                for j in 0..10 {
                    let y = scalar(-3.0 + 6.0 * i as f64 / 9.0);
                    let t = 0.1 + 0.8 * j as f64 / 9.0;
                    let exact = marginal.score(&y, t)?[0];
                    let rel = |v: f64| (v - exact).abs() / exact.abs().max(1.0);
                    let rt = score_from_field(via_score.as_ref(), &y, t, DEFAULT_DELTA)?[0];
                    let an = score_from_field(field.as_ref(), &y, t, DEFAULT_DELTA)?[0];
                    worst_round_trip = worst_round_trip.max(rel(rt));
                    worst_analytic = worst_analytic.max(rel(an));
                }
            }
        }
        let pass = worst_round_trip <= IDENTITY_TOL && worst_analytic <= IDENTITY_TOL;
        Ok((
            pass,
            format!("round trip {worst_round_trip:.1e}, analytic field {worst_analytic:.1e} (<= 1e-10)"),
        ))
    })
}

/// Closed-form LQR controller optimality and straight fully-controlled paths.
pub fn criterion_9() -> CriterionOutcome {
    timed(9, "LQR optimality and straight paths", || {
        let std3 = GaussianDist::standard(3);
        let y0s = std3.sample(derive_seed(DEFAULT_SEED, "lqr-y0"), 10)?;
        let y1s = std3.sample(derive_seed(DEFAULT_SEED, "lqr-y1"), 10)?;
        let gaps = y0s
            .par_iter()
            .zip(y1s.par_iter())
            .map(|(a, b)| {
                let closed = lqr_cost(a, b, LQR_LAMBDA, &closed_form_controls(a, b, 100)?)?;
                let brute = lqr_bruteforce(a, b, LQR_LAMBDA, 100)?;
                Ok(closed - brute.cost)
            })
            .collect::<Result<Vec<f64>>>()?;
        let worst_gap = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let cfg = InversionConfig::default();
        let grid = TimeGrid::unit(cfg.n_steps)?;
        let marginal = InterpolationMarginal::to_standard_noise(cfg.p0()?);
        let spec = ProcessSpec::fwd_ctrl_ode(
            analytic_marginal_field(&marginal)?,
            scalar(-1.0),
            GuidanceSchedule::constant(1.0)?,
            grid,
        )?;
        let init = cfg.p0()?.sample(derive_seed(DEFAULT_SEED, "straight"), 10)?;
        let worst_straight = run_process(&spec, &init, 0)?
            .iter()
            .map(straightness)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let pass = worst_gap <= LQR_SLACK && worst_straight <= STRAIGHT_TOL;
        Ok((
            pass,
            format!("max closed-form excess cost {worst_gap:.2e} <= 1e-4, max straightness {worst_straight:.1e} <= 1e-10"),
        ))
    })
}

/// The stochastic RF reaches the interpolation variance at `1 - delta`.
pub fn criterion_10() -> CriterionOutcome {
    timed(10, "terminal variance of the stochastic RF", || {
        let t = 1.0 - DEFAULT_DELTA;
        let grid = TimeGrid::new(PROFILE_STEPS, 0.0, t, DEFAULT_DELTA)?;
        let p0 = data_dist()?;
        let init = equivalence_init("prop3-init", &p0)?;
        let states = run_terminal(&ProcessSpec::rf_fwd_sde(grid)?, &init, derive_seed(DEFAULT_SEED, "prop3-noise"))?;
        let report = stationary_profile_check(&states, t)?;
        let oracle = GaussianPath::integrate(
            &rf_forward_sde_linear(1, DEFAULT_DELTA),
            &MomentState::from_gaussian(&p0),
            &TimeGrid::new(200, 0.0, t, DEFAULT_DELTA)?,
        )?;
        let oracle_var = oracle.moments().last().expect("non-empty").var_diag[0];
        let pass = report.interpolation_rel_dev <= MC_VAR_REL;
        Ok((
            pass,
            format!(
                "variance {:.4} vs interpolation {:.4} ({:.2}%), moment oracle {oracle_var:.4}, profile check {}",
                report.variance[0],
                (1.0 - t) * (1.0 - t) + t * t,
                100.0 * report.interpolation_rel_dev,
                if report.pass { "pass" } else { "fail" }
            ),
        ))
    })
}

/// Criteria 1-10 in order.
pub fn run_all() -> Vec<CriterionOutcome> {
    vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ]
}

pub fn run_one(id: u32) -> Option<CriterionOutcome> {
    Some(match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(),
        _ => return None,
    })
}
