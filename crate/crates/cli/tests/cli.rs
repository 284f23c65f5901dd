//! End-to-end tests of the `ntn` binary: artifact layout, override
//! precedence, exit codes, and the aggregate commands.

use ntn_core::experiment::cmd_make_testbed;
use ntn_core::grid::LatentGrid;
use ntn_core::snapshot::write_snapshot;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ntn(cwd: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ntn"));
    cmd.current_dir(cwd);
    cmd.env_remove("NTN_SEED");
    cmd.env_remove("NTN_OUT");
    cmd
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Testbed models plus a small config referencing them by relative path.
fn fixture(dir: &Path, extra: &str) -> std::path::PathBuf {
    cmd_make_testbed(&dir.join("tb")).unwrap();
    let config = format!(
        r#"{{
  "model": {{"path": "tb/two_component.json"}},
  "pipeline": {{"steps": 8{extra}}},
  "prompt": {{"selector": [1]}}
}}"#
    );
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    path
}

#[test]
fn run_writes_artifacts_and_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "");

    let out = ntn(dir.path())
        .args(["run", "--config", "config.json", "--out", "out"])
        .output()
        .unwrap();
    assert_success(&out);
    for name in ["result.bin", "preview.pgm", "metrics.csv", "metrics.json", "trace.json", "resolved.json"]
    {
        assert!(dir.path().join("out").join(name).is_file(), "{name} missing");
    }

    // The resolved echo reproduces the run byte for byte elsewhere.
    let rerun = ntn(dir.path())
        .args(["run", "--config", "out/resolved.json", "--out", "out2"])
        .output()
        .unwrap();
    assert_success(&rerun);
    for name in ["result.bin", "metrics.csv", "preview.pgm"] {
        assert_eq!(
            fs::read(dir.path().join("out").join(name)).unwrap(),
            fs::read(dir.path().join("out2").join(name)).unwrap(),
            "{name} differs after rerun"
        );
    }

    // Repeating into the same directory is idempotent.
    let before = fs::read(dir.path().join("out/result.bin")).unwrap();
    let again = ntn(dir.path())
        .args(["run", "--config", "config.json", "--out", "out"])
        .output()
        .unwrap();
    assert_success(&again);
    assert_eq!(before, fs::read(dir.path().join("out/result.bin")).unwrap());
}

#[test]
fn seed_and_output_overrides_prefer_flag_then_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    cmd_make_testbed(&dir.path().join("tb")).unwrap();
    fs::write(
        dir.path().join("config.json"),
        r#"{
  "model": {"path": "tb/two_component.json"},
  "pipeline": {"steps": 6},
  "seed": 1,
  "output_dir": "from_config"
}"#,
    )
    .unwrap();

    let env_run = ntn(dir.path())
        .args(["run", "--config", "config.json"])
        .env("NTN_SEED", "2")
        .env("NTN_OUT", "from_env")
        .output()
        .unwrap();
    assert_success(&env_run);
    assert!(!dir.path().join("from_config").exists());
    let resolved = fs::read_to_string(dir.path().join("from_env/resolved.json")).unwrap();
    assert!(resolved.contains("\"seed\": 2"), "env seed should win over config: {resolved}");

    let flag_run = ntn(dir.path())
        .args(["run", "--config", "config.json", "--seed", "3", "--out", "from_flag"])
        .env("NTN_SEED", "2")
        .env("NTN_OUT", "from_env_again")
        .output()
        .unwrap();
    assert_success(&flag_run);
    assert!(!dir.path().join("from_env_again").exists());
    let resolved = fs::read_to_string(dir.path().join("from_flag/resolved.json")).unwrap();
    assert!(resolved.contains("\"seed\": 3"), "flag seed should win over env: {resolved}");

    let config_run = ntn(dir.path()).args(["run", "--config", "config.json"]).output().unwrap();
    assert_success(&config_run);
    let resolved = fs::read_to_string(dir.path().join("from_config/resolved.json")).unwrap();
    assert!(resolved.contains("\"seed\": 1"));
}

#[test]
fn exit_codes_distinguish_config_io_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), ", \"lambda\": 1.5");

    let bad_lambda = ntn(dir.path())
        .args(["run", "--config", "config.json", "--out", "out"])
        .output()
        .unwrap();
    assert_eq!(bad_lambda.status.code(), Some(2), "{}", stderr_of(&bad_lambda));

    fs::write(&config, r#"{"model": {"path": "tb/two_component.json"}}"#).unwrap();
    let bad_variant = ntn(dir.path())
        .args(["ablate", "--config", "config.json", "--out", "out", "--variant", "caseX"])
        .output()
        .unwrap();
    assert_eq!(bad_variant.status.code(), Some(2));
    assert!(stderr_of(&bad_variant).contains("caseA"), "should list valid variants");

    let missing = ntn(dir.path())
        .args(["run", "--config", "nope.json", "--out", "out"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));

    let snaps = dir.path().join("snaps");
    fs::create_dir(&snaps).unwrap();
    fs::write(snaps.join("step_0000.bin"), b"not a snapshot").unwrap();
    let malformed = ntn(dir.path()).args(["diagnose", "snaps"]).output().unwrap();
    assert_eq!(malformed.status.code(), Some(3));
    assert!(
        stderr_of(&malformed).contains("step_0000.bin"),
        "error should name the offending file: {}",
        stderr_of(&malformed)
    );

    let mut poisoned = LatentGrid::zeros(1, 4, 4).unwrap();
    poisoned.as_array_mut()[[0, 0, 0]] = f64::NAN;
    fs::remove_file(snaps.join("step_0000.bin")).unwrap();
    write_snapshot(&snaps.join("step_0000.bin"), &poisoned).unwrap();
    let non_finite = ntn(dir.path()).args(["diagnose", "snaps"]).output().unwrap();
    assert_eq!(non_finite.status.code(), Some(4), "{}", stderr_of(&non_finite));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let no_snaps = ntn(dir.path()).args(["diagnose", "empty"]).output().unwrap();
    assert_eq!(no_snaps.status.code(), Some(2));
}

#[test]
fn sweep_and_ablate_write_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "");

    let sweep = ntn(dir.path())
        .args(["sweep-lambda", "--config", "config.json", "--out", "sweep", "--lambdas", "0.7,0.5"])
        .output()
        .unwrap();
    assert_success(&sweep);
    for lambda in ["0.7", "0.5"] {
        assert!(dir.path().join("sweep").join(format!("lambda_{lambda}")).join("result.bin").is_file());
    }
    let summary = fs::read_to_string(dir.path().join("sweep/summary.csv")).unwrap();
    assert!(summary.starts_with("lambda,metric,scope,value\n"));
    assert!(summary.contains("\n0.7,") && summary.contains("\n0.5,"));

    let bad_sweep = ntn(dir.path())
        .args(["sweep-lambda", "--config", "config.json", "--out", "s2", "--lambdas", "1.5"])
        .output()
        .unwrap();
    assert_eq!(bad_sweep.status.code(), Some(2));

    let ablate = ntn(dir.path())
        .args(["ablate", "--config", "config.json", "--out", "ab", "--variant", "TTN"])
        .output()
        .unwrap();
    assert_success(&ablate);
    assert!(dir.path().join("ab/base/result.bin").is_file());
    assert!(dir.path().join("ab/TTN/result.bin").is_file());
    let paired = fs::read_to_string(dir.path().join("ab/paired.csv")).unwrap();
    assert!(paired.starts_with("metric,scope,base,variant\n"));
    assert!(paired.lines().count() > 1);
}

#[test]
fn make_testbed_and_diagnose_compose_with_trajectories() {
    let dir = tempfile::tempdir().unwrap();

    let made = ntn(dir.path()).args(["make-testbed", "--out", "tb2"]).output().unwrap();
    assert_success(&made);
    assert!(dir.path().join("tb2/two_component.json").is_file());
    assert!(dir.path().join("tb2/five_component_texture.json").is_file());

    fs::write(
        dir.path().join("config.json"),
        r#"{
  "model": {"path": "tb2/two_component.json"},
  "pipeline": {"steps": 6}
}"#,
    )
    .unwrap();
    let run = ntn(dir.path())
        .args(["run", "--config", "config.json", "--out", "out", "--emit-trajectory"])
        .output()
        .unwrap();
    assert_success(&run);
    assert!(dir.path().join("out/trajectory/step_0000.bin").is_file());

    let diagnose = ntn(dir.path()).args(["diagnose", "out/trajectory"]).output().unwrap();
    assert_success(&diagnose);
    let csv = fs::read_to_string(dir.path().join("out/trajectory/diagnostics.csv")).unwrap();
    assert!(csv.starts_with("step,metric,scope,value\n"));
    // 7 frames, 9 global rows each (no reference metrics).
    assert_eq!(csv.lines().count(), 1 + 7 * 9);

    let custom = ntn(dir.path())
        .args(["diagnose", "out/trajectory", "--out", "custom.csv"])
        .output()
        .unwrap();
    assert_success(&custom);
    assert!(dir.path().join("custom.csv").is_file());
}
