//! End-to-end tests of the `decolab` binary: exit codes, error naming,
//! deterministic outputs, and the documented sentinel behaviors.

use std::path::Path;
use std::process::{Command, Output};

fn decolab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decolab"))
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_in(dir: &Path, scenario: &Path, extra: &[&str]) -> Output {
    decolab()
        .arg("run")
        .arg(scenario)
        .arg("--out")
        .arg(dir)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn two_level_scenario_passes_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        "decay.toml",
        r#"
name = "decay-demo"
command = "two-level-decay"
seed = 1

[parameters]
delta_e = "1 eV"

[output]
path = "decay.csv"
"#,
    );
    let out = run_in(tmp.path(), &scenario, &[]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "stdout:\n{stdout}");
    assert!(stdout.contains("status = pass"), "{stdout}");
    assert!(stdout.contains("check.fitted_rate_matches_closed_form.status = pass"));
    let csv = std::fs::read_to_string(tmp.path().join("decay.csv")).unwrap();
    assert!(csv.starts_with("t [s],re_rho01 [dimensionless]"), "{csv}");
    assert!(csv.lines().count() > 100);
}

#[test]
fn misspelled_key_is_named_and_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        "typo.toml",
        r#"
name = "typo"
command = "two-level-decay"

[parameters]
delta_ee = "1 eV"

[output]
path = "typo.csv"
"#,
    );
    let out = run_in(tmp.path(), &scenario, &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("`delta_ee`"), "{stderr}");
    assert!(!tmp.path().join("typo.csv").exists());
}

#[test]
fn zero_tau_reports_zero_rate_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        "unitary.toml",
        r#"
name = "unitary-limit"
command = "two-level-decay"

[parameters]
tau = "0 s"

[output]
path = "unitary.csv"
"#,
    );
    let out = run_in(tmp.path(), &scenario, &[]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{stdout}");
    assert!(
        stdout.contains("result.rate_closed_form_per_s = 0e0"),
        "{stdout}"
    );
}

#[test]
fn identical_lumps_give_zero_energy_and_inf_decay_time() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        "same.toml",
        r#"
name = "same-lumps"
command = "dp-lumps"

[parameters]
radius = "4e-7 m"
separation = "0 m"

[output]
path = "same.csv"
"#,
    );
    let out = run_in(tmp.path(), &scenario, &[]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{stdout}");
    let csv = std::fs::read_to_string(tmp.path().join("same.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.contains(",inf,"), "decay time must be the inf sentinel: {row}");
}

#[test]
fn stochastic_output_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        "mc.toml",
        r#"
name = "mc-small"
command = "mc-compare"
seed = 42

[parameters]
noise = "gaussian-global"
n_traj = 300
times = [10.0, 20.0]

[output]
path = "mc.csv"
"#,
    );
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    std::fs::create_dir_all(&dir_a).unwrap();
    std::fs::create_dir_all(&dir_b).unwrap();
    let out_a = run_in(&dir_a, &scenario, &[]);
    let out_b = run_in(&dir_b, &scenario, &[]);
    assert!(out_a.status.success());
    assert!(out_b.status.success());
    let a = std::fs::read(dir_a.join("mc.csv")).unwrap();
    let b = std::fs::read(dir_b.join("mc.csv")).unwrap();
    assert_eq!(a, b, "same scenario and seed must give identical bytes");

    // A different seed must actually change the sampled ensemble.
    let dir_c = tmp.path().join("c");
    std::fs::create_dir_all(&dir_c).unwrap();
    let out_c = run_in(&dir_c, &scenario, &["--seed", "43"]);
    assert!(out_c.status.success());
    let c = std::fs::read(dir_c.join("mc.csv")).unwrap();
    assert_ne!(a, c, "a different seed must change the ensemble bytes");
}

#[test]
fn list_commands_names_all_seven() {
    let out = decolab().arg("list-commands").output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    for name in [
        "two-level-decay",
        "milburn-table",
        "mc-compare",
        "local-me",
        "dp-lumps",
        "critical-radius",
        "trace-demo",
    ] {
        assert!(stdout.contains(name), "missing {name}: {stdout}");
    }
}

#[test]
fn every_shipped_scenario_runs_green() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 7, "one example per command: {names:?}");
    for scenario in names {
        let tmp = tempfile::tempdir().unwrap();
        let out = run_in(tmp.path(), &scenario, &[]);
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert!(
            out.status.success(),
            "{} failed:\n{stdout}\n{}",
            scenario.display(),
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(stdout.contains("status = pass"), "{stdout}");
    }
}

#[test]
fn trace_demo_negative_control_passes_with_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        "control.toml",
        r#"
name = "control"
command = "trace-demo"
seed = 7

[parameters]
n_steps = 20000
negative_control = true

[output]
path = "control.csv"
"#,
    );
    let out = run_in(tmp.path(), &scenario, &[]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{stdout}");
    assert!(
        stdout.contains("check.negative_control_charge_drifts.status = pass"),
        "{stdout}"
    );
}
