use std::path::Path;
use std::process::{Command, Output};

use emfsec_cli::experiment::{AGGREGATE_FILE, RECORDS_FILE};
use emfsec_cli::{EXIT_BAD_CONFIG, EXIT_FAILURE, EXIT_OK, OUTPUT_DIR_ENV};

fn emfsec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emfsec"))
        .args(args)
        .env_remove(OUTPUT_DIR_ENV)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn small_sweep(out: &Path) -> Output {
    emfsec(&[
        "sweep",
        "--pdmax-grid",
        "-2,6",
        "--realizations",
        "1",
        "--configs",
        "none,both",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn sweep_writes_records_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_sweep(dir.path());
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let records = std::fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap();
    let lines: Vec<&str> = records.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[0].starts_with("p_d_max_db,p_d_max,noise_config,realization_index,r_eps"));
    let aggregate = std::fs::read_to_string(dir.path().join(AGGREGATE_FILE)).unwrap();
    assert_eq!(aggregate.lines().count(), 1 + 4);
    assert!(dir.path().join("config.txt").exists());
}

#[test]
fn repeated_sweeps_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&small_sweep(a.path())), EXIT_OK);
    assert_eq!(code(&small_sweep(b.path())), EXIT_OK);
    for f in [RECORDS_FILE, AGGREGATE_FILE] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_emfsec"))
        .args(["sweep", "--pdmax-grid", "6", "--realizations", "1", "--configs", "none"])
        .env(OUTPUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), EXIT_OK);
    assert!(dir.path().join(RECORDS_FILE).exists());
}

#[test]
fn single_emits_json_with_trace() {
    let o = emfsec(&["single", "--pdmax-db", "-2", "--noise-config", "bs-only"]);
    assert_eq!(code(&o), EXIT_OK);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["noise_config"], "bs-only");
    assert!(v["result"]["r_eps"].as_f64().unwrap() >= 0.0);
    assert!(!v["result"]["trace"].as_array().unwrap().is_empty());
    let ue = &v["result"]["covariances"]["ue_noise"]["data"];
    assert!(ue
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|c| c.as_array().unwrap())
        .all(|x| x.as_f64() == Some(0.0)));
}

#[test]
fn single_output_is_deterministic() {
    let args = ["single", "--pdmax-db", "4", "--realization", "3"];
    assert_eq!(emfsec(&args).stdout, emfsec(&args).stdout);
}

#[test]
fn sop_reports_closed_form_and_sampled_values() {
    let o = emfsec(&["sop", "--pdmax-db", "6", "--samples", "20000"]);
    assert_eq!(code(&o), EXIT_OK);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["sop_sigmas"].as_f64().unwrap() < 4.0);
    assert!(v["exposure_sigmas"].as_f64().unwrap() < 4.0);
}

#[test]
fn bad_configuration_exits_two() {
    assert_eq!(code(&emfsec(&["config", "--set", "no.such_key=1"])), EXIT_BAD_CONFIG);
    assert_eq!(code(&emfsec(&["config", "--set", "outage.epsilon=2"])), EXIT_BAD_CONFIG);
    assert_eq!(code(&emfsec(&["sweep", "--configs", "nonsense"])), EXIT_BAD_CONFIG);
    assert_eq!(code(&emfsec(&["frobnicate"])), EXIT_BAD_CONFIG);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cfg");
    assert_eq!(
        code(&emfsec(&["config", "--config", missing.to_str().unwrap()])),
        EXIT_BAD_CONFIG
    );
}

#[test]
fn config_file_round_trips_through_the_cli() {
    let o = emfsec(&["config", "--set", "channel.g_u_max=0.25", "--seed", "9"]);
    assert_eq!(code(&o), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, &o.stdout).unwrap();
    let again = emfsec(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn validate_fails_with_injected_fault() {
    let o = emfsec(&["validate", "--inject-fault"]);
    assert_eq!(code(&o), EXIT_FAILURE);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], false);
}
