//! The `rectiflow` command line: subcommands, output files and replay.

pub mod config;
pub mod remote;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

pub use config::{Experiment, Format, Manifest, RunConfig, GIT_DESCRIBE, SEED_ENV};
pub use remote::{Double, RemoteConfig, RemoteFieldEndpoint, Transport};

use crate::error::{Error, Result};
use crate::experiments::{
    run_inversion_roundtrip, straightness, table5, time_straightness, write_paths_csv, write_paths_json,
    InversionReport, ProcessParams,
};
use crate::simulate::{run_process, ProcessKind};
use crate::state::{EnsembleStats, Trajectory};
use crate::verify::{self, CriterionOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rectiflow", version, about = "Controlled rectified-flow inversion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one process; writes paths and a JSON summary.
    Simulate(RunFlags),
    /// One inversion round trip; writes a JSON report.
    Invert(RunFlags),
    /// All nine rows of the inversion accuracy table.
    Table5(RunFlags),
    /// Sample paths of the RF, DDIM-style and controlled processes.
    Paths(RunFlags),
    /// Run the acceptance criteria; exit 0 when all pass.
    Check {
        /// Comma-separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded run and compare its files byte for byte.
    Replay {
        /// JSON summary written by an earlier run.
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a test-double vector field over stdio or TCP.
    ServeField {
        /// echo, wrong_dim, garbage, silent or analytic.
        #[arg(long, default_value = "analytic")]
        double: String,
        #[arg(long, default_value_t = 10.0)]
        mu: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Listen on this TCP address instead of stdio; prints the bound address.
        #[arg(long)]
        listen: Option<String>,
    },
}

/// Flags mirroring [`RunConfig`] keys. Unset flags keep the file value.
#[derive(Debug, Default, Clone, Args)]
pub struct RunFlags {
    /// TOML file with `RunConfig` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub process: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub schedule_preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Falls back to the config file, then RECTIFLOW_SEED, then 2024.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub dm_horizon: Option<f64>,
    #[arg(long)]
    pub sigma_schedule: Option<String>,
    #[arg(long)]
    pub score_source: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// External field endpoint: `tcp:HOST:PORT` or `cmd:PROGRAM ARG ...`.
    #[arg(long)]
    pub remote: Option<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub remote_timeout_ms: Option<u64>,
    #[arg(long)]
    pub remote_reentrant: bool,
}

impl RunFlags {
    /// File values overridden by flags, with the seed resolved against `env_seed`.
    pub fn resolve(&self, experiment: Experiment, env_seed: Option<&str>) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.experiment = experiment;
        if let Some(v) = &self.process {
            c.process = v.parse()?;
        }
        if let Some(v) = &self.method {
            c.method = v.parse()?;
        }
        if let Some(v) = &self.score_source {
            c.score_source = v.parse()?;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        set!(gamma, eta, steps, particles, dim, mu, delta, sigma_schedule, format);
        if self.schedule_preset.is_some() {
            c.schedule_preset = self.schedule_preset.clone();
        }
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.dm_horizon.is_some() {
            c.dm_horizon = self.dm_horizon;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        if let Some(endpoint) = &self.remote {
            c.remote = Some(RemoteConfig {
                endpoint: endpoint.clone(),
                ..c.remote.take().unwrap_or_else(|| RemoteConfig::new(endpoint.clone()))
            });
        }
        if let Some(r) = c.remote.as_mut() {
            if self.prompt.is_some() {
                r.prompt = self.prompt.clone();
            }
            if let Some(ms) = self.remote_timeout_ms {
                r.timeout_ms = ms;
            }
            r.reentrant |= self.remote_reentrant;
        } else if self.prompt.is_some() || self.remote_timeout_ms.is_some() || self.remote_reentrant {
            return Err(Error::invalid("remote", "remote options given without --remote"));
        }
        c.resolve_seed(env_seed)?;
        c.validate()?;
        Ok(c)
    }
}

/// What a run produced, for printing and replay.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
    pub artifacts: Vec<String>,
    pub summary: String,
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()))
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<String> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(name.to_string())
}

/// Writes `results` behind the manifest keys. The summary lists itself among the artifacts.
fn write_summary(dir: &Path, name: &str, cfg: &RunConfig, mut artifacts: Vec<String>, results: Value) -> Result<Vec<String>> {
    artifacts.push(name.to_string());
    let manifest = Manifest::new(cfg, artifacts.clone());
    let mut doc = match serde_json::to_value(&manifest)? {
        Value::Object(m) => m,
        _ => unreachable!("manifest serializes to an object"),
    };
    if let Value::Object(extra) = results {
        for (k, v) in extra {
            doc.insert(k, v);
        }
    }
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, &Value::Object(doc))?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(artifacts)
}

fn write_paths(dir: &Path, stem: &str, format: Format, trajs: &[Trajectory]) -> Result<String> {
    match format {
        Format::Csv => write_file(dir, &format!("{stem}.csv"), |w| write_paths_csv(trajs, w)),
        Format::Json => write_file(dir, &format!("{stem}.json"), |w| write_paths_json(trajs, w)),
    }
}

fn mean_of(values: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let v = values.collect::<Result<Vec<f64>>>()?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn path_metrics(trajs: &[Trajectory]) -> Result<Value> {
    let terminal: Vec<_> = trajs.iter().map(|t| t.terminal().clone()).collect();
    let stats = EnsembleStats::from_states(&terminal)?;
    let metric = |f: fn(&Trajectory) -> Result<f64>| -> Result<Value> {
        if trajs[0].states.len() < 3 {
            return Ok(Value::Null);
        }
        Ok(json!(mean_of(trajs.iter().map(f))?))
    };
    Ok(json!({
        "n_particles": trajs.len(),
        "terminal_mean": stats.mean,
        "terminal_var": stats.cov_diag,
        "mean_straightness": metric(straightness)?,
        "mean_time_straightness": metric(time_straightness)?,
    }))
}

fn simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let params = cfg.process_params()?;
    let field = cfg.remote.as_ref().map(RemoteFieldEndpoint::handle).transpose()?;
    let run = params.build_with_field(field)?;
    let trajs = run_process(&run.spec, &run.init, run.seed)?;
    let dir = output_dir(cfg);
    let paths = write_paths(&dir, "paths", cfg.format, &trajs)?;
    let metrics = path_metrics(&trajs)?;
    let summary = format!(
        "{}: {} particles x {} steps, terminal mean {}",
        cfg.process,
        trajs.len(),
        cfg.steps,
        metrics["terminal_mean"]
    );
    let artifacts = write_summary(&dir, "summary.json", cfg, vec![paths], json!({ "process": cfg.process, "metrics": metrics }))?;
    Ok(RunOutput {
        dir: Some(dir),
        artifacts,
        summary,
    })
}

fn report_value(report: &InversionReport) -> Result<Value> {
    let mut v = serde_json::to_value(report)?;
    if let Value::Object(m) = &mut v {
        // the run config sits at the top level; keep the resolved inversion settings apart
        if let Some(inv) = m.remove("config") {
            m.insert("inversion".into(), inv);
        }
    }
    Ok(v)
}

fn invert(cfg: &RunConfig) -> Result<RunOutput> {
    let report = run_inversion_roundtrip(&cfg.inversion_config()?)?;
    let dir = output_dir(cfg);
    let mut files = Vec::new();
    if cfg.format == Format::Csv {
        files.push(write_file(&dir, "per_sample.csv", |w| {
            writeln!(w, "sample,l1,l2")?;
            for (i, e) in report.per_sample.iter().enumerate() {
                writeln!(w, "{i},{:.16e},{:.16e}", e.l1, e.l2)?;
            }
            Ok(())
        })?);
    }
    let summary = format!(
        "{} (gamma {}, eta {}): L2 {:.4}, L1 {:.4} over {} samples",
        cfg.method.name(),
        cfg.gamma,
        cfg.eta,
        report.l2,
        report.l1,
        report.per_sample.len()
    );
    let artifacts = write_summary(&dir, "report.json", cfg, files, report_value(&report)?)?;
    Ok(RunOutput {
        dir: Some(dir),
        artifacts,
        summary,
    })
}

fn run_table5(cfg: &RunConfig) -> Result<RunOutput> {
    let t = table5(&cfg.inversion_config()?)?;
    let mut text = format!("{:<38} {:>10} {:>10} {:>10} {:>10}\n", "method", "L2", "L1", "paper L2", "paper L1");
    for r in &t.rows {
        text.push_str(&format!(
            "{:<38} {:>10.4} {:>10.4} {:>10.3} {:>10.3}\n",
            r.label, r.report.l2, r.report.l1, r.paper_l2, r.paper_l1
        ));
    }
    for c in &t.checks {
        text.push_str(&format!("{} {}\n", if c.pass { "PASS" } else { "FAIL" }, c.claim));
    }
    let (dir, artifacts) = match &cfg.out {
        Some(dir) => {
            let rows = t
                .rows
                .iter()
                .map(|r| {
                    Ok(json!({
                        "label": r.label,
                        "method": r.method,
                        "gamma": r.gamma,
                        "eta": r.eta,
                        "paper_l2": r.paper_l2,
                        "paper_l1": r.paper_l1,
                        "report": report_value(&r.report)?,
                    }))
                })
                .collect::<Result<Vec<_>>>()?;
            let a = write_summary(dir, "table5.json", cfg, vec![], json!({ "rows": rows, "checks": t.checks }))?;
            (Some(dir.clone()), a)
        }
        None => (None, vec![]),
    };
    Ok(RunOutput {
        dir,
        artifacts,
        summary: text.trim_end().to_string(),
    })
}

/// `(file stem, kind, gamma, eta)` of the processes drawn by `paths`.
fn path_processes(cfg: &RunConfig) -> Vec<(&'static str, ProcessKind, f64, f64)> {
    vec![
        ("rf_ode", ProcessKind::FwdCtrlOde, 0.0, 0.0),
        ("ddim_ode", ProcessKind::OuFwdOde, 0.0, 0.0),
        ("rf_sde", ProcessKind::RfFwdSde, 0.0, 0.0),
        ("ddpm_sde", ProcessKind::OuFwdSde, 0.0, 0.0),
        ("fwd_ctrl_ode", ProcessKind::FwdCtrlOde, cfg.gamma, 0.0),
        ("fwd_ctrl_sde", ProcessKind::FwdCtrlSde, cfg.gamma, 0.0),
        ("rev_ctrl_ode", ProcessKind::RevCtrlOde, 0.0, cfg.eta),
        ("rev_ctrl_sde", ProcessKind::RevCtrlSde, 0.0, cfg.eta),
    ]
}

fn paths(cfg: &RunConfig) -> Result<RunOutput> {
    let base = cfg.process_params()?;
    let dir = output_dir(cfg);
    let mut files = Vec::new();
    let mut metrics = Map::new();
    let mut straight = Vec::new();
    for (stem, kind, gamma, eta) in path_processes(cfg) {
        let params = ProcessParams {
            kind,
            gamma,
            eta,
            schedule: if stem == "rf_ode" { None } else { base.schedule },
            ..base.clone()
        };
        let run = params.build()?;
        let trajs = run_process(&run.spec, &run.init, run.seed)?;
        files.push(write_paths(&dir, &format!("paths_{stem}"), cfg.format, &trajs)?);
        let m = path_metrics(&trajs)?;
        straight.push((stem, m["mean_time_straightness"].as_f64().unwrap_or(f64::NAN)));
        metrics.insert(stem.into(), m);
    }
    let lookup = |s: &str| straight.iter().find(|(n, _)| *n == s).map_or(f64::NAN, |p| p.1);
    let (rf, ddim) = (lookup("rf_ode"), lookup("ddim_ode"));
    let rf_straighter = rf < ddim;
    let mut summary = straight
        .iter()
        .map(|(n, v)| format!("{n:<14} mean time-straightness {v:.4}"))
        .collect::<Vec<_>>()
        .join("\n");
    summary.push_str(&format!(
        "\n{} RF ODE paths straighter than DDIM paths ({rf:.4} < {ddim:.4})",
        if rf_straighter { "PASS" } else { "FAIL" }
    ));
    let results = json!({ "metrics": metrics, "rf_straighter_than_ddim": rf_straighter });
    let artifacts = write_summary(&dir, "summary.json", cfg, files, results)?;
    Ok(RunOutput {
        dir: Some(dir),
        artifacts,
        summary,
    })
}

/// Runs a resolved configuration.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Simulate => simulate(cfg),
        Experiment::Invert => invert(cfg),
        Experiment::Table5 => run_table5(cfg),
        Experiment::Paths => paths(cfg),
    }
}

/// Re-runs `manifest` into `out` and lists the artifacts whose bytes differ.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<(RunOutput, Vec<String>)> {
    let manifest = Manifest::load(manifest_path)?;
    let original = manifest_path.parent().unwrap_or(Path::new("."));
    if fs::canonicalize(original).ok() == fs::canonicalize(out).ok() {
        return Err(Error::invalid("out", "replay needs a directory other than the original run"));
    }
    let cfg = RunConfig {
        out: Some(out.to_path_buf()),
        ..manifest.config.clone()
    };
    let output = execute(&cfg)?;
    let mut differing = Vec::new();
    for name in &manifest.artifacts {
        let a = fs::read(original.join(name));
        let b = fs::read(out.join(name));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => differing.push(name.clone()),
        }
    }
    Ok((output, differing))
}

#[derive(Serialize)]
struct CheckReport<'a> {
    tool: &'a str,
    version: &'a str,
    git_describe: &'a str,
    pass: bool,
    criteria: &'a [CriterionOutcome],
}

/// Runs the selected criteria (all when `only` is empty), printing one line each.
pub fn check(only: &[u32], out: Option<&Path>) -> Result<bool> {
    let outcomes: Vec<CriterionOutcome> = if only.is_empty() {
        verify::run_all()
    } else {
        only.iter()
            .map(|&id| verify::run_one(id).ok_or_else(|| Error::invalid("only", format!("no criterion {id}"))))
            .collect::<Result<_>>()?
    };
    for o in &outcomes {
        println!("{}", o.line());
    }
    let pass = outcomes.iter().all(|o| o.pass);
    if let Some(dir) = out {
        write_file(dir, "check.json", |w| {
            let report = CheckReport {
                tool: config::TOOL,
                version: config::VERSION,
                git_describe: GIT_DESCRIBE,
                pass,
                criteria: &outcomes,
            };
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(pass)
}

fn serve(double: &str, mu: f64, dim: usize, listen: Option<&str>) -> Result<()> {
    let mut double: Double = double.parse()?;
    if let Double::Analytic { mu: m, dim: d } = &mut double {
        if dim < 1 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        (*m, *d) = (mu, dim);
    }
    match listen {
        None => remote::serve_stdio(&double),
        Some(addr) => {
            let bound = remote::serve_tcp(double, addr)?;
            println!("{bound}");
            std::io::stdout().flush()?;
            loop {
                std::thread::park();
            }
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

fn report_error(e: &Error) -> i32 {
    let code = exit_code(e);
    let kind = if code == EXIT_CONFIG { "config error" } else { "error" };
    eprintln!("{kind}: {e}");
    code
}

fn print_output(o: &RunOutput) {
    println!("{}", o.summary);
    if let Some(dir) = &o.dir {
        for a in &o.artifacts {
            println!("wrote {}", dir.join(a).display());
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let run_flags = |flags: &RunFlags, exp: Experiment| -> i32 {
        let result = flags.resolve(exp, env_seed.as_deref()).and_then(|cfg| execute(&cfg));
        match result {
            Ok(o) => {
                print_output(&o);
                EXIT_OK
            }
            Err(e) => report_error(&e),
        }
    };
    match cli.command {
        Command::Simulate(f) => run_flags(&f, Experiment::Simulate),
        Command::Invert(f) => run_flags(&f, Experiment::Invert),
        Command::Table5(f) => run_flags(&f, Experiment::Table5),
        Command::Paths(f) => run_flags(&f, Experiment::Paths),
        Command::Check { only, out } => match check(&only, out.as_deref()) {
            Ok(true) => EXIT_OK,
            Ok(false) => EXIT_FAILURE,
            Err(e) => report_error(&e),
        },
        Command::Replay { manifest, out } => match replay(&manifest, &out) {
            Ok((o, differing)) if differing.is_empty() => {
                print_output(&o);
                println!("replay identical: {} artifacts", o.artifacts.len());
                EXIT_OK
            }
            Ok((_, differing)) => {
                eprintln!("replay differs: {}", differing.join(", "));
                EXIT_FAILURE
            }
            Err(e) => report_error(&e),
        },
        Command::ServeField {
            double,
            mu,
            dim,
            listen,
        } => match serve(&double, mu, dim, listen.as_deref()) {
            Ok(()) => EXIT_OK,
            Err(e) => report_error(&e),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(f: impl FnOnce(&mut RunFlags)) -> RunFlags {
        let mut r = RunFlags::default();
        f(&mut r);
        r
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "gamma = 0.25\nsteps = 40\nseed = 3\nprocess = \"fwd_ctrl_sde\"\n").unwrap();
        let f = flags(|f| {
            f.config = Some(path.clone());
            f.steps = Some(60);
        });
        let c = f.resolve(Experiment::Simulate, Some("99")).unwrap();
        assert_eq!((c.gamma, c.steps, c.seed), (0.25, 60, Some(3)));
        assert_eq!(c.process, ProcessKind::FwdCtrlSde);
        let c = flags(|_| {}).resolve(Experiment::Simulate, Some("99")).unwrap();
        assert_eq!(c.seed, Some(99));
    }

    #[test]
    fn config_errors_map_to_exit_two() {
        let bad = flags(|f| f.gamma = Some(1.5)).resolve(Experiment::Simulate, None).unwrap_err();
        assert_eq!(exit_code(&bad), EXIT_CONFIG);
        let bad = flags(|f| f.process = Some("warp".into())).resolve(Experiment::Simulate, None).unwrap_err();
        assert_eq!(exit_code(&bad), EXIT_CONFIG);
        let bad = flags(|f| f.prompt = Some("a cat".into())).resolve(Experiment::Simulate, None).unwrap_err();
        assert_eq!(exit_code(&bad), EXIT_CONFIG);
        assert_eq!(run(["rectiflow", "simulate", "--bogus"]), EXIT_CONFIG);
        assert_eq!(run(["rectiflow", "invert", "--steps", "1"]), EXIT_CONFIG);
    }

    #[test]
    fn simulate_writes_two_files_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let cfg = flags(|f| {
            f.steps = Some(20);
            f.particles = Some(3);
            f.seed = Some(7);
            f.out = Some(a.clone());
        })
        .resolve(Experiment::Simulate, None)
        .unwrap();
        let out = execute(&cfg).unwrap();
        assert_eq!(out.artifacts, vec!["paths.csv", "summary.json"]);
        let csv = fs::read_to_string(a.join("paths.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 21);
        let (_, differing) = replay(&a.join("summary.json"), &dir.path().join("b")).unwrap();
        assert!(differing.is_empty(), "{differing:?}");
    }

    #[test]
    fn invert_report_has_the_documented_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = flags(|f| {
            f.method = Some("ctrl_sde".into());
            f.format = Some(Format::Json);
            f.out = Some(dir.path().to_path_buf());
        })
        .resolve(Experiment::Invert, None)
        .unwrap();
        let out = execute(&cfg).unwrap();
        assert_eq!(out.artifacts, vec!["report.json"]);
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        for key in ["config", "l1_sum", "l2_sum", "l1_mean", "l2_mean", "per_sample", "seed", "git_describe"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["per_sample"].as_array().unwrap().len(), 10);
    }
}
