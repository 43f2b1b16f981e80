use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qmm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const TINY: &str = r#"
experiment = "readout-resonant"
seed = 3
[params]
m_a = 4
m_b = 3
[detector]
photons = [0.0, 1.0]
n_traj = 2
periods = 12
warmup_periods = 6
auto_truncation = false
leakage_threshold = 1.0
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn describe_config_lists_and_resolves_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmm(&["describe-config"], dir.path());
    assert!(out.status.success());
    let list = String::from_utf8(out.stdout).unwrap();
    for name in [
        "readout-resonant",
        "readout-mismatch",
        "chain-scaling",
        "coupled-pair",
        "oracle-suite",
        "custom",
    ] {
        assert!(list.contains(name), "{list}");
    }
    let out = qmm(&["describe-config", "readout-mismatch"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("omega_a = 0.099"), "{text}");
    let path = write_config(dir.path(), "echo.toml", &text);
    assert!(qmm(&["describe-config", "--config", &path], dir.path())
        .status
        .success());
}

#[test]
fn run_writes_reproducible_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = qmm(
        &["--threads", "1", "run", "--config", &cfg, "--out", "first"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let first = dir.path().join("first");
    for f in [
        "config.toml",
        "manifest.json",
        "summary.csv",
        "spectra/photons_0.csv",
        "spectra/photons_1.csv",
        "series/photons_1_mean.csv",
        "series/photons_1_traj0.csv",
        "dumps/photons_1_traj0.bin",
    ] {
        assert!(first.join(f).is_file(), "missing {f}");
    }
    let summary = fs::read_to_string(first.join("summary.csv")).unwrap();
    assert!(summary.starts_with("photons,m_a,band_x,band_p,band_total"));
    assert_eq!(summary.lines().count(), 3);

    let echo = first.join("config.toml").to_string_lossy().into_owned();
    let out = qmm(&["run", "--config", &echo, "--out", "second"], dir.path());
    assert!(out.status.success());
    let second = dir.path().join("second");
    for f in [
        "summary.csv",
        "spectra/photons_1.csv",
        "series/photons_0_mean.csv",
        "series/photons_1_traj0.csv",
        "dumps/photons_1_traj0.bin",
    ] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn seed_flag_changes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    assert!(qmm(&["run", "--config", &cfg, "--out", "a"], dir.path())
        .status
        .success());
    assert!(qmm(
        &["run", "--config", &cfg, "--out", "b", "--seed", "4"],
        dir.path()
    )
    .status
    .success());
    let read = |d: &str| fs::read(dir.path().join(d).join("series/photons_1_traj0.csv")).unwrap();
    assert_ne!(read("a"), read("b"));
    let manifest = fs::read_to_string(dir.path().join("b/manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 4"));
}

#[test]
fn leakage_monitor_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("leakage_threshold = 1.0", "leakage_threshold = 1e-12");
    let cfg = write_config(dir.path(), "leaky.toml", &text);
    let out = qmm(&["run", "--config", &cfg, "--out", "leaky"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("leakage"));
    let manifest = fs::read_to_string(dir.path().join("leaky/manifest.json")).unwrap();
    assert!(manifest.contains("\"passed\": false"));
}

#[test]
fn invalid_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.toml",
        "experiment = \"custom\"\n[params]\nomega_b = -1.0\n",
    );
    let out = qmm(&["run", "--config", &bad], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("omega_b"));

    let out = qmm(&["run", "--config", "does-not-exist.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = qmm(
        &[
            "sweep", "--config", &cfg, "--param", "nonsense", "--values", "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.g_qq"));

    let out = qmm(&["sweep", "--config", &cfg, "--param", "g_a"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn sweep_writes_aggregate_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = qmm(
        &[
            "sweep",
            "--config",
            &cfg,
            "--out",
            "sw",
            "--param",
            "g_b",
            "--values",
            "0.005,0.01",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "g_b,snr,amplitude,passed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.005,"));
    assert!(dir.path().join("sw/g_b_001/summary.csv").is_file());
}

#[test]
fn oracle_suite_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "oracle.toml",
        "experiment = \"oracle-suite\"\n[oracle]\ndamping_trajectories = 200\nunitary_periods = 5.0\n",
    );
    let out = qmm(
        &["oracle-suite", "--config", &cfg, "--out", "oracle"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("PASS")).count(),
        7,
        "{stdout}"
    );
    let table = fs::read_to_string(dir.path().join("oracle/oracles.csv")).unwrap();
    assert!(table.starts_with("check,value,bound,threshold,passed"));

    let strict = write_config(
        dir.path(),
        "strict.toml",
        "experiment = \"oracle-suite\"\n[oracle]\ndamping_trajectories = 200\nunitary_periods = 5.0\ndamping_sigmas = 0.0\n",
    );
    let out = qmm(
        &["oracle-suite", "--config", &strict, "--out", "strict"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL amplitude_damping_max_z"));
}
