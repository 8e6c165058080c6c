use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_wavemix");

const ATOM: &str = r#"
[atom]
M = 3
f10_Hz = 4.82e9
Ec_Hz = 320e6
Gamma10_Hz = 44.2e6
Gamma_phi_Hz = 0.37e6
"#;

const DRIVE: &str = r#"
[drive]
f1_Hz = 4.82e9
f2_Hz = 4.825e9
P1_dBm = -125.0
P2_dBm = -125.0
k1 = 5.334838230116768e13
k2 = 5.334838230116768e13
"#;

const SPECTRUM: &str = r#"
[spectrum]
f_start_Hz = 4.79e9
f_stop_Hz = 4.86e9
points = 141
"#;

fn wavemix(cmd: &str, config: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .env_remove("WAVEMIX_THREADS")
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("").to_string();
    serde_json::from_str(&line).unwrap()
}

#[test]
fn spectrum_run_is_reproducible() {
    let cfg = format!("{ATOM}{DRIVE}{SPECTRUM}");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(wavemix("spectrum", &cfg, a.path(), &[]).status.code(), Some(0));
    assert_eq!(wavemix("spectrum", &cfg, b.path(), &["--threads", "1"]).status.code(), Some(0));
    for name in ["spectrum.csv", "peaks.csv", "config_echo.toml"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let csv = read(a.path(), "spectrum.csv");
    assert_eq!(csv.lines().count(), 142);
    let echo = read(a.path(), "config_echo.toml");
    assert!(echo.contains("gamma10_Hz"));
}

#[test]
fn conflicting_drive_modes_exit_with_config_error() {
    let cfg = format!("{ATOM}{DRIVE}Omega1_Hz = 1e7\n{SPECTRUM}");
    let dir = tempfile::tempdir().unwrap();
    let out = wavemix("spectrum", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["kind"], "config");
    assert_eq!(rec["exit_code"], 2);
    assert!(rec["key"].as_str().unwrap().contains("Omega1_Hz"));
    assert!(dir.path().join("out/error.json").exists());
}

#[test]
fn reversed_range_is_rejected() {
    let spec = SPECTRUM.replace("4.79e9", "4.90e9");
    let cfg = format!("{ATOM}{DRIVE}{spec}");
    let dir = tempfile::tempdir().unwrap();
    let out = wavemix("spectrum", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["kind"], "config");
}

#[test]
fn unknown_key_is_reported_with_line() {
    let cfg = format!("{ATOM}Ej_Hz = 1e9\n{DRIVE}{SPECTRUM}");
    let dir = tempfile::tempdir().unwrap();
    let out = wavemix("spectrum", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["line"], 8);
}

#[test]
fn sweep_writes_map_and_peaks() {
    let sweep = "\n[sweep]\naxis = \"omega2\"\nstart = 4.823e9\nstop = 4.827e9\nsteps = 3\n";
    let cfg = format!("{ATOM}{DRIVE}{SPECTRUM}{sweep}");
    let dir = tempfile::tempdir().unwrap();
    let out = wavemix("sweep", &cfg, dir.path(), &["--threads", "2", "--strict"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(dir.path(), "map.csv").lines().count() > 3);
    assert!(!read(dir.path(), "peaks.csv").is_empty());
    assert!(!read(dir.path(), "rows.csv").is_empty());
}

#[test]
fn spectroscopy_writes_reflection_map() {
    let block = r#"
[spectroscopy]
probe_f_start_Hz = 4.7e9
probe_f_stop_Hz = 4.9e9
probe_points = 21
probe_P_dBm = -150.0
drive_P_start_dBm = -140.0
drive_P_stop_dBm = -120.0
drive_P_steps = 3
"#;
    let cfg = format!("{ATOM}{block}");
    let dir = tempfile::tempdir().unwrap();
    let out = wavemix("spectroscopy", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path(), "spectroscopy.json")).unwrap();
    assert!(meta.is_object());
    assert!(read(dir.path(), "r_map.csv").lines().count() > 21);
}

#[test]
fn validate_passes_on_reference_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = wavemix("validate", ATOM, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "validate.json")).unwrap();
    assert!(report.to_string().contains("positivity"));
}
