//! The `rectiflow` binary: exit codes, files, seeds, replay and remote fields.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_rectiflow");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("RECTIFLOW_SEED").output().unwrap()
}

fn run_env(args: &[&str], seed: &str) -> Output {
    Command::new(BIN).args(args).env("RECTIFLOW_SEED", seed).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path| {
        let out = out.to_str().unwrap().to_string();
        vec!["simulate", "--process", "rf_fwd_sde", "--particles", "10", "--steps", "100", "--seed", "7", "--out"]
            .into_iter()
            .map(String::from)
            .chain([out])
            .collect::<Vec<_>>()
    };
    for out in [&a, &b] {
        let args = args(out);
        let o = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(files(&a), ["paths.csv", "summary.json"]);
    for f in ["paths.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("paths.csv")).unwrap().lines().count(), 1011);
}

#[test]
fn invalid_values_exit_two_naming_the_field() {
    let o = run(&["simulate", "--gamma", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    let o = run(&["invert", "--sigma-schedule", "knots:0,2,1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma_schedule"));
    assert_eq!(run(&["table5", "--schedule-preset", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(run_env(&["simulate", "--steps", "5"], "abc").status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_flags_and_seed_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "method = \"ctrl_sde\"\ngamma = 0.25\nsteps = 50\nparticles = 4\n").unwrap();
    let out = dir.path().join("inv");
    let o = run_env(
        &["invert", "--config", cfg.to_str().unwrap(), "--eta", "0.75", "--format", "json", "--out", out.to_str().unwrap()],
        "31",
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("report.json"));
    for key in ["config", "l1_sum", "l2_sum", "l1_mean", "l2_mean", "per_sample", "seed", "git_describe"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert_eq!(r["seed"], 31);
    assert_eq!(r["config"]["gamma"], 0.25);
    assert_eq!(r["config"]["eta"], 0.75);
    assert_eq!(r["config"]["steps"], 50);
    assert_eq!(r["per_sample"].as_array().unwrap().len(), 4);

    fs::write(&cfg, "gama = 0.3\n").unwrap();
    let o = run(&["invert", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn table5_doubling_steps_halves_rf_error() {
    let dir = tempfile::tempdir().unwrap();
    let l2 = |steps: &str| {
        let out = dir.path().join(steps);
        let o = run(&["table5", "--steps", steps, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout).to_string();
        assert!(text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count() == 6, "{text}");
        let t = json(&out.join("table5.json"));
        assert_eq!(t["rows"].as_array().unwrap().len(), 9);
        t["rows"][2]["report"]["l2"].as_f64().unwrap()
    };
    let ratio = l2("100") / l2("200");
    assert!((1.7..=2.3).contains(&ratio), "{ratio}");
}

#[test]
fn replay_reproduces_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = run(&["paths", "--steps", "30", "--particles", "3", "--out", first.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let summary = json(&first.join("summary.json"));
    assert_eq!(summary["artifacts"].as_array().unwrap().len(), 9);
    assert_eq!(summary["rf_straighter_than_ddim"], true);
    let again = dir.path().join("again");
    let o = run(&["replay", first.join("summary.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("replay identical: 9 artifacts"));

    // a tampered artifact is reported
    fs::write(first.join("paths_rf_ode.csv"), "x").unwrap();
    let third = dir.path().join("third");
    let o = run(&["replay", first.join("summary.json").to_str().unwrap(), "--out", third.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paths_rf_ode.csv"));
}

#[test]
fn remote_fields_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |out: &str, extra: &[&str]| {
        let out = dir.path().join(out);
        let mut args = vec!["simulate", "--process", "fwd_ctrl_ode", "--particles", "3", "--steps", "40", "--out"];
        let out_s = out.to_str().unwrap().to_string();
        args.push(&out_s);
        args.extend_from_slice(extra);
        (run(&args), out)
    };
    let (o, local) = sim("local", &[]);
    assert_eq!(o.status.code(), Some(0));
    let analytic = format!("cmd:{BIN} serve-field --double analytic");
    let (o, remote) = sim("remote", &["--remote", &analytic, "--prompt", "a dog"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(local.join("paths.csv")).unwrap(), fs::read(remote.join("paths.csv")).unwrap());
    assert_eq!(json(&remote.join("summary.json"))["config"]["remote"]["prompt"], "a dog");

    let wrong = format!("cmd:{BIN} serve-field --double wrong_dim");
    let (o, _) = sim("wrong", &["--remote", &wrong]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dimension") && err.contains("\"field\""), "{err}");

    let silent = format!("cmd:{BIN} serve-field --double silent");
    let (o, _) = sim("silent", &["--remote", &silent, "--remote-timeout-ms", "200"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("timed out"));

    let (o, _) = sim("bad", &["--remote", "ftp://x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_runs_selected_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check", "--only", "8,9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 2, "{stdout}");
    assert_eq!(json(&dir.path().join("check.json"))["pass"], true);
    assert_eq!(run(&["check", "--only", "12"]).status.code(), Some(2));
}
