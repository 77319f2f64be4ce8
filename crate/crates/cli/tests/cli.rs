use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfergodic_cli::ledger::ResultsLedger;
use mfergodic_cli::ExperimentConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mfergodic"));
    c.env_remove("MFERGODIC_THREADS").env_remove("MFERGODIC_OUTPUT_DIR");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--output-dir").arg(out).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn shipped_configs_load() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.model().unwrap();
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn check_reports_pure_ou_rate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check", configs().join("pure_ou.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("check.json")).unwrap()).unwrap();
    let eta = report["eta"].as_f64().unwrap();
    assert!((eta - 2.0).abs() < 1e-12, "eta {eta}");
}

#[test]
fn expanding_drift_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("expanding_drift_negative_control.toml");
    let o = run(&["check", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dissipativity"));
}

#[test]
fn bad_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "schema-version = 1\nseed = 1\n[model]\nbuiltin = \"pure_ou\"\n[sim]\nn_particls = 10\n",
    );
    let o = run(&["check", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_particls"));

    let o = run(&["check", "/nonexistent.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = bin().args(["bench", "--only", "14"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn trivial_bench_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench", "--suite", "trivial"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.matches("[PASS]").count(), 4);
    assert!(dir.path().join("bench.csv").exists());
}

const SMALL_PAIR: &str = r#"
schema-version = 1
seed = 21
[model]
builtin = "mf_ou_cos"
[sim]
n_particles = 1024
replicas = 4
[vanishing]
probe_means = [0.0, 1.0]
probe_sds = [0.0, 1.0]
probe_particles = 256
probe_replicas = 2
"#;

#[test]
fn ergodic_pair_lands_in_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_PAIR);
    let out = dir.path().join("out");
    let o = run(&["ergodic-pair", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = ResultsLedger::in_dir(&out).rows().unwrap();
    assert_eq!(rows[0].benchmark, "mf_ou_cos");
    assert_eq!(rows[0].seed, 21);
    let target = (-1.0f64 / 3.0).exp();
    assert!((rows[0].estimate - target).abs() < 0.05 * target, "{:?}", rows[0]);
    for f in ["pair.json", "phi.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // the written config reproduces the hash
    let again = ExperimentConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(again.hash(), rows[0].config_hash);
}

const SMALL_VALUE: &str = r#"
schema-version = 1
seed = 3
[model]
builtin = "ou_cos"
[sim]
n_particles = 512
replicas = 3
[value]
beta = 0.5
"#;

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_VALUE);
    let mut estimates = vec![];
    for (threads, sub) in [("1", "a"), ("3", "b")] {
        let out = dir.path().join(sub);
        let o = bin()
            .args(["value-beta", cfg.to_str().unwrap()])
            .env("MFERGODIC_THREADS", threads)
            .env("MFERGODIC_OUTPUT_DIR", &out)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        estimates.push(ResultsLedger::in_dir(&out).rows().unwrap()[0].clone());
    }
    assert_eq!(estimates[0].estimate.to_bits(), estimates[1].estimate.to_bits());
    assert_eq!(estimates[0].config_hash, estimates[1].config_hash);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_VALUE);
    let o = run(&["value-beta", cfg.to_str().unwrap(), "--seed", "77"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rows = ResultsLedger::in_dir(dir.path()).rows().unwrap();
    assert_eq!(rows[0].seed, 77);
    let base = ExperimentConfig::parse(SMALL_VALUE, mfergodic_cli::config::Format::Toml).unwrap();
    assert_ne!(rows[0].config_hash, base.hash());
}

#[test]
fn toml_and_json_round_trip() {
    let cfg = ExperimentConfig::load(&configs().join("tanh_drive.toml")).unwrap();
    let from_toml = ExperimentConfig::parse(&cfg.to_toml().unwrap(), mfergodic_cli::config::Format::Toml).unwrap();
    let from_json = ExperimentConfig::parse(&cfg.to_json(), mfergodic_cli::config::Format::Json).unwrap();
    assert_eq!(from_toml.hash(), cfg.hash());
    assert_eq!(from_json.hash(), cfg.hash());
}
