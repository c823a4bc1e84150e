//! End-to-end checks of the binary: exit codes, config handling, artifact
//! naming, and byte-level determinism across reruns and worker counts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwalk"))
        .args(args)
        .env_remove("GWALK_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gwalk-cli-{name}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    found.sort();
    found
}

#[test]
fn validate_passes_for_the_builtin_family() {
    let out = gwalk(&["run", "validate", "--family", "gaussian-binary", "--kappa", "3", "--no-json"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("result: PASS"));
}

#[test]
fn psi_at_one_prints_exactly_zero() {
    let out = gwalk(&["run", "psi", "--t", "1", "--no-json"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out).lines().next(), Some("0.0"));
}

#[test]
fn stochastic_kind_without_seed_is_a_usage_error() {
    let out = gwalk(&["run", "survival"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("plan.master_seed"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = fresh_dir("unknown-key");
    let config = dir.join("bad.toml");
    fs::write(
        &config,
        "kind = \"survival\"\n\n[plan]\nmaster_seed = 1\nbogus_knob = 2\n",
    )
    .unwrap();
    let out = gwalk(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bogus_knob"), "stderr: {}", stderr(&out));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn unknown_target_lists_the_kinds() {
    let out = gwalk(&["run", "no-such-kind"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("local-time"), "stderr: {}", stderr(&out));
}

#[test]
fn out_dir_env_var_receives_the_artifact() {
    let dir = fresh_dir("env-out");
    let out = Command::new(env!("CARGO_BIN_EXE_gwalk"))
        .args(["run", "psi", "--t", "2"])
        .env("GWALK_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let jsons = files_with_ext(&dir, "json");
    assert_eq!(jsons.len(), 1, "expected one artifact, got {jsons:?}");
    let name = jsons[0].file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("psi_"), "artifact name: {name}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn walk_run_writes_a_named_artifact() {
    let dir = fresh_dir("walk-artifact");
    let out = gwalk(&[
        "run",
        "walk",
        "--kappa",
        "3",
        "--p",
        "2",
        "--master-seed",
        "4242",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let jsons = files_with_ext(&dir, "json");
    assert_eq!(jsons.len(), 1);
    let body = fs::read_to_string(&jsons[0]).unwrap();
    assert!(body.contains("\"tau\""));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn reduce_run_emits_the_encoding_csv() {
    let dir = fresh_dir("reduce-csv");
    let out = gwalk(&[
        "run",
        "reduce",
        "--kappa",
        "3",
        "--p",
        "3",
        "--depth",
        "32",
        "--master-seed",
        "31",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csvs = files_with_ext(&dir, "csv");
    assert_eq!(csvs.len(), 1);
    let body = fs::read_to_string(&csvs[0]).unwrap();
    assert_eq!(body.lines().next(), Some("index,height,lukasiewicz"));
    let _ = fs::remove_dir_all(&dir);
}

/// Identical configs must produce byte-identical artifacts, whatever the
/// worker count; a different seed must claim a different artifact name.
#[test]
fn rerun_and_worker_count_leave_artifacts_byte_identical() {
    let base = fresh_dir("determinism");
    let config = base.join("run.toml");
    fs::write(
        &config,
        concat!(
            "kind = \"local-time\"\n\n",
            "[family]\nname = \"gaussian-binary\"\nkappa = 3.0\n\n",
            "[plan]\nn_grid = [8, 16]\nlambda_grid = [0.5, 1.0]\n",
            "replicates = 2000\nmaster_seed = 777\n",
        ),
    )
    .unwrap();

    let mut outputs = Vec::new();
    let mut codes = Vec::new();
    for (sub, workers) in [("a", None), ("b", Some("1")), ("c", Some("3"))] {
        let dir = base.join(sub);
        fs::create_dir_all(&dir).unwrap();
        let mut args = vec![
            "run".to_string(),
            config.to_str().unwrap().to_string(),
            "--out-dir".to_string(),
            dir.to_str().unwrap().to_string(),
        ];
        if let Some(w) = workers {
            args.push("--workers".to_string());
            args.push(w.to_string());
        }
        let out = Command::new(env!("CARGO_BIN_EXE_gwalk"))
            .args(&args)
            .env_remove("GWALK_OUT_DIR")
            .output()
            .unwrap();
        codes.push(out.status.code());
        let jsons = files_with_ext(&dir, "json");
        let csvs = files_with_ext(&dir, "csv");
        assert_eq!(jsons.len(), 1, "stderr: {}", stderr(&out));
        assert_eq!(csvs.len(), 1);
        outputs.push((
            jsons[0].file_name().unwrap().to_owned(),
            fs::read(&jsons[0]).unwrap(),
            fs::read(&csvs[0]).unwrap(),
        ));
    }
    assert_eq!(codes[0], codes[1]);
    assert_eq!(codes[0], codes[2]);
    assert_eq!(outputs[0].0, outputs[1].0, "artifact names must match");
    assert!(outputs[0].1 == outputs[1].1, "JSON bytes differ on rerun");
    assert!(outputs[0].1 == outputs[2].1, "JSON bytes differ across workers");
    assert!(outputs[0].2 == outputs[1].2, "CSV bytes differ on rerun");
    assert!(outputs[0].2 == outputs[2].2, "CSV bytes differ across workers");

    // Seed changes the semantic hash, so the artifact claims a new name.
    let dir = base.join("d");
    fs::create_dir_all(&dir).unwrap();
    let out = gwalk(&[
        "run",
        config.to_str().unwrap(),
        "--master-seed",
        "778",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.code().is_some(), "stderr: {}", stderr(&out));
    let jsons = files_with_ext(&dir, "json");
    assert_eq!(jsons.len(), 1, "stderr: {}", stderr(&out));
    assert_ne!(jsons[0].file_name().unwrap(), outputs[0].0.as_os_str());
    let _ = fs::remove_dir_all(&base);
}
