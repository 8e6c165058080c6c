//! Command-line front end: configuration parsing, command dispatch and the
//! CSV/JSON writers.
//!
//! Configuration files are TOML with one table per block. Every key is
//! checked; unknown keys, conflicting amplitude modes and bad ranges are
//! reported with the key path and the line they appear on.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::floquet::ConvergeOptions;
use crate::model::{ang, hz, rabi_from_power, DriveConfig, TransmonParams};
use crate::spectroscopy::{calibrate_zero_crossing, linear_regime_limit, two_tone_map, TwoToneSpec};
use crate::spectrum::{uniform_grid, SpectrumConfig, SpectrumResult, DEFAULT_P_OFF};
use crate::sweep::{detect_peaks, row_spectrum, run_sweep, Axis, Peak, SweepSpec, DEFAULT_PROMINENCE_DB};
use crate::timedomain::{compare_with_floquet, OracleOptions, TRACE_DRIFT_LIMIT};

/// Environment variable consulted for the worker count when `--threads`
/// is absent.
pub const THREADS_ENV: &str = "WAVEMIX_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Emission spectrum and detected peaks for one drive configuration.
    Spectrum,
    /// PSD map over one swept drive parameter.
    Sweep,
    /// Reflection map over probe frequency and pump power.
    Spectroscopy,
    /// Harmonic solver against the time-domain reference on small instances.
    Validate,
}

#[derive(Debug, Parser)]
#[command(name = "wavemix", version, about = "Wave mixing spectra of a driven transmon")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; overrides the WAVEMIX_THREADS variable.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Treat warnings (failed sweep rows, probe outside the linear regime)
    /// as failures.
    #[arg(long)]
    pub strict: bool,
}

fn default_levels() -> usize {
    crate::model::DEFAULT_LEVELS
}
fn default_f10() -> f64 {
    4.82e9
}
fn default_ec() -> f64 {
    320e6
}
fn default_gamma10() -> f64 {
    44.2e6
}
fn default_gamma_phi() -> f64 {
    0.37e6
}

/// Transmon parameters in Hz. Defaults are the reference device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomBlock {
    #[serde(rename = "M", default = "default_levels")]
    pub levels: usize,
    #[serde(rename = "f10_Hz", default = "default_f10")]
    pub f10_hz: f64,
    #[serde(rename = "Ec_Hz", default = "default_ec")]
    pub ec_hz: f64,
    #[serde(rename = "Gamma10_Hz", default = "default_gamma10")]
    pub gamma10_hz: f64,
    #[serde(rename = "Gamma_phi_Hz", default = "default_gamma_phi")]
    pub gamma_phi_hz: f64,
}

impl Default for AtomBlock {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            f10_hz: default_f10(),
            ec_hz: default_ec(),
            gamma10_hz: default_gamma10(),
            gamma_phi_hz: default_gamma_phi(),
        }
    }
}

/// Two carriers with either Rabi frequencies (Hz) or source powers (dBm)
/// plus calibration factors `k` in Hz per sqrt(mW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveBlock {
    #[serde(rename = "f1_Hz")]
    pub f1_hz: f64,
    #[serde(rename = "f2_Hz")]
    pub f2_hz: f64,
    #[serde(rename = "Omega1_Hz", default, skip_serializing_if = "Option::is_none")]
    pub omega1_hz: Option<f64>,
    #[serde(rename = "Omega2_Hz", default, skip_serializing_if = "Option::is_none")]
    pub omega2_hz: Option<f64>,
    #[serde(rename = "P1_dBm", default, skip_serializing_if = "Option::is_none")]
    pub p1_dbm: Option<f64>,
    #[serde(rename = "P2_dBm", default, skip_serializing_if = "Option::is_none")]
    pub p2_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(rename = "phase1_rad", default)]
    pub phase1: f64,
    #[serde(rename = "phase2_rad", default)]
    pub phase2: f64,
}

fn default_rbw() -> f64 {
    910e3
}
fn default_epsilon() -> f64 {
    100e3
}
fn default_p_off() -> f64 {
    DEFAULT_P_OFF
}
fn default_z0() -> f64 {
    crate::spectrum::DEFAULT_Z0
}
fn default_prominence() -> f64 {
    DEFAULT_PROMINENCE_DB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    #[serde(rename = "f_start_Hz")]
    pub f_start_hz: f64,
    #[serde(rename = "f_stop_Hz")]
    pub f_stop_hz: f64,
    pub points: usize,
    #[serde(rename = "rbw_Hz", default = "default_rbw")]
    pub rbw_hz: f64,
    #[serde(rename = "epsilon_Hz", default = "default_epsilon")]
    pub epsilon_hz: f64,
    #[serde(rename = "p_off_W", default = "default_p_off")]
    pub p_off_w: f64,
    #[serde(rename = "z0_Ohm", default = "default_z0")]
    pub z0_ohm: f64,
    #[serde(rename = "min_prominence_dB", default = "default_prominence")]
    pub min_prominence_db: f64,
}

fn default_l() -> usize {
    8
}
fn default_l_max() -> usize {
    crate::floquet::DEFAULT_MAX_CUTOFF
}
fn default_tol() -> f64 {
    1e-9
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    /// Starting (or fixed, when not adaptive) harmonic cutoff.
    #[serde(rename = "L", default = "default_l")]
    pub cutoff: usize,
    #[serde(rename = "L_max", default = "default_l_max")]
    pub max_cutoff: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_true")]
    pub adaptive: bool,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            cutoff: default_l(),
            max_cutoff: default_l_max(),
            tol: default_tol(),
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// One of P1, P2, P_both (dBm), omega1, omega2, delta_omega, Omega1,
    /// Omega2 (Hz).
    pub axis: String,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

fn default_zero_crossing() -> f64 {
    -130.0
}

/// Probe frequency by pump power map. Calibration factors are in Hz per
/// sqrt(mW); when absent they are chosen so that the two-level saturation
/// zero of a resonant probe falls at `zero_crossing_dBm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopyBlock {
    #[serde(rename = "probe_f_start_Hz")]
    pub probe_f_start_hz: f64,
    #[serde(rename = "probe_f_stop_Hz")]
    pub probe_f_stop_hz: f64,
    pub probe_points: usize,
    #[serde(rename = "probe_P_dBm")]
    pub probe_p_dbm: f64,
    #[serde(rename = "drive_f_Hz", default, skip_serializing_if = "Option::is_none")]
    pub drive_f_hz: Option<f64>,
    #[serde(rename = "drive_P_start_dBm")]
    pub drive_p_start_dbm: f64,
    #[serde(rename = "drive_P_stop_dBm")]
    pub drive_p_stop_dbm: f64,
    #[serde(rename = "drive_P_steps")]
    pub drive_p_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_probe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_drive: Option<f64>,
    #[serde(rename = "zero_crossing_dBm", default = "default_zero_crossing")]
    pub zero_crossing_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub atom: AtomBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumBlock>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectroscopy: Option<SpectroscopyBlock>,
}

/// Configuration problem located in the source file where possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.key, self.line) {
            (Some(k), Some(l)) => write!(f, "{k} (line {l}): {}", self.message),
            (Some(k), None) => write!(f, "{k}: {}", self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Name of the `[table]` in force at `line` (1-based).
fn table_at(src: &str, line: usize) -> Option<String> {
    src.lines()
        .take(line)
        .filter_map(|l| {
            let t = l.trim();
            (t.starts_with('[') && t.ends_with(']')).then(|| t.trim_matches(|c| c == '[' || c == ']').trim().to_string())
        })
        .last()
}

/// Line on which `key` is assigned inside `[table]`.
fn locate(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, l) in src.lines().enumerate() {
        let t = l.trim();
        if t.starts_with('[') && t.ends_with(']') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        } else if current == table {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    // a table that exists without the key: point at its header
    src.lines()
        .position(|l| l.trim() == format!("[{table}]"))
        .map(|i| i + 1)
}

fn between_backticks(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn from_toml_error(src: &str, e: &toml::de::Error) -> ConfigError {
    let message = e.message().trim().to_string();
    let line = e.span().map(|s| line_of(src, s.start));
    let table = line.and_then(|l| table_at(src, l));
    let field = between_backticks(&message).map(str::to_string);
    let key = match (table, field) {
        (Some(t), Some(f)) => Some(format!("{t}.{f}")),
        (None, Some(f)) => Some(f),
        (Some(t), None) => Some(t),
        (None, None) => None,
    };
    ConfigError { key, line, message }
}

impl RunConfig {
    /// Parses and validates configuration text.
    pub fn parse_str(src: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| from_toml_error(src, &e))?;
        cfg.validate(Some(src))?;
        Ok(cfg)
    }

    fn err(src: Option<&str>, table: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            key: Some(format!("{table}.{key}")),
            line: src.and_then(|s| locate(s, table, key)),
            message: message.into(),
        }
    }

    /// Semantic checks that the deserializer cannot express.
    pub fn validate(&self, src: Option<&str>) -> std::result::Result<(), ConfigError> {
        let a = &self.atom;
        if a.levels < 2 {
            return Err(Self::err(src, "atom", "M", "at least two levels are required"));
        }
        for (key, v) in [("f10_Hz", a.f10_hz), ("Gamma10_Hz", a.gamma10_hz)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Self::err(src, "atom", key, "must be positive"));
            }
        }
        for (key, v) in [("Ec_Hz", a.ec_hz), ("Gamma_phi_Hz", a.gamma_phi_hz)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Self::err(src, "atom", key, "must be non-negative"));
            }
        }
        self.params().map_err(|e| Self::err(src, "atom", "M", e.to_string()))?;

        if let Some(d) = &self.drive {
            let rabi = d.omega1_hz.is_some() || d.omega2_hz.is_some();
            let power = d.p1_dbm.is_some() || d.p2_dbm.is_some() || d.k1.is_some() || d.k2.is_some();
            if rabi && power {
                let key = if d.omega1_hz.is_some() { "Omega1_Hz" } else { "Omega2_Hz" };
                return Err(Self::err(
                    src,
                    "drive",
                    key,
                    "Rabi (Omega*_Hz) and power (P*_dBm, k*) amplitude modes are mutually exclusive",
                ));
            }
            if !rabi && !power {
                return Err(Self::err(
                    src,
                    "drive",
                    "Omega1_Hz",
                    "give either Omega1_Hz/Omega2_Hz or P1_dBm/P2_dBm with k1/k2",
                ));
            }
            if power {
                for (key, v) in [("P1_dBm", d.p1_dbm), ("P2_dBm", d.p2_dbm), ("k1", d.k1), ("k2", d.k2)] {
                    if v.is_none() {
                        return Err(Self::err(src, "drive", key, "missing in power amplitude mode"));
                    }
                }
            }
            self.drive_config().map_err(|e| Self::err(src, "drive", "f1_Hz", e.to_string()))?;
        }

        if let Some(s) = &self.spectrum {
            if !(s.f_stop_hz > s.f_start_hz) {
                return Err(Self::err(src, "spectrum", "f_stop_Hz", "f_stop_Hz must exceed f_start_Hz"));
            }
            if s.points < 2 {
                return Err(Self::err(src, "spectrum", "points", "at least 2 points are required"));
            }
            for (key, v) in [
                ("rbw_Hz", s.rbw_hz),
                ("epsilon_Hz", s.epsilon_hz),
                ("p_off_W", s.p_off_w),
                ("z0_Ohm", s.z0_ohm),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Self::err(src, "spectrum", key, "must be positive"));
                }
            }
            if !(s.min_prominence_db >= 0.0) {
                return Err(Self::err(src, "spectrum", "min_prominence_dB", "must be non-negative"));
            }
        }

        let sv = &self.solver;
        if sv.max_cutoff < sv.cutoff.max(1) {
            return Err(Self::err(src, "solver", "L_max", "must be at least L"));
        }
        if !(sv.tol > 0.0) {
            return Err(Self::err(src, "solver", "tol", "must be positive"));
        }

        if let Some(w) = &self.sweep {
            let axis: Axis = w.axis.parse().map_err(|e: Error| Self::err(src, "sweep", "axis", e.to_string()))?;
            if w.steps == 0 {
                return Err(Self::err(src, "sweep", "steps", "at least one step is required"));
            }
            if !(w.start.is_finite() && w.stop.is_finite()) {
                return Err(Self::err(src, "sweep", "stop", "range must be finite"));
            }
            if let Some(d) = &self.drive {
                let power_axis = matches!(axis, Axis::P1 | Axis::P2 | Axis::PBoth);
                if power_axis && d.p1_dbm.is_none() {
                    return Err(Self::err(
                        src,
                        "sweep",
                        "axis",
                        "power axes need a drive given in P1_dBm/P2_dBm with k1/k2",
                    ));
                }
            }
        }

        if let Some(p) = &self.spectroscopy {
            if !(p.probe_f_stop_hz > p.probe_f_start_hz) {
                return Err(Self::err(
                    src,
                    "spectroscopy",
                    "probe_f_stop_Hz",
                    "probe_f_stop_Hz must exceed probe_f_start_Hz",
                ));
            }
            if p.probe_points < 2 {
                return Err(Self::err(src, "spectroscopy", "probe_points", "at least 2 points are required"));
            }
            if p.drive_p_steps == 0 {
                return Err(Self::err(src, "spectroscopy", "drive_P_steps", "at least one step is required"));
            }
            for (key, v) in [("k_probe", p.k_probe), ("k_drive", p.k_drive)] {
                if let Some(k) = v {
                    if !(k > 0.0 && k.is_finite()) {
                        return Err(Self::err(src, "spectroscopy", key, "must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn params(&self) -> crate::Result<TransmonParams> {
        let a = &self.atom;
        TransmonParams::new(a.levels, ang(a.f10_hz), a.ec_hz, ang(a.gamma10_hz), ang(a.gamma_phi_hz))
    }

    pub fn drive_config(&self) -> crate::Result<DriveConfig> {
        let d = self
            .drive
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no [drive] block".into()))?;
        let base = match (d.omega1_hz, d.omega2_hz) {
            (None, None) => DriveConfig::power(
                ang(d.f1_hz),
                ang(d.f2_hz),
                d.p1_dbm.unwrap_or(f64::NEG_INFINITY),
                d.p2_dbm.unwrap_or(f64::NEG_INFINITY),
                ang(d.k1.unwrap_or(0.0)),
                ang(d.k2.unwrap_or(0.0)),
            )?,
            (w1, w2) => DriveConfig::rabi(
                ang(d.f1_hz),
                ang(d.f2_hz),
                ang(w1.unwrap_or(0.0)),
                ang(w2.unwrap_or(0.0)),
            )?,
        };
        Ok(base.with_phases(d.phase1, d.phase2))
    }

    pub fn spectrum_config(&self) -> crate::Result<SpectrumConfig> {
        let s = self
            .spectrum
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no [spectrum] block".into()))?;
        let mut cfg = SpectrumConfig::uniform_hz(s.f_start_hz, s.f_stop_hz, s.points)?;
        cfg.rbw = ang(s.rbw_hz);
        cfg.epsilon = ang(s.epsilon_hz);
        cfg.p_off = s.p_off_w;
        cfg.z0 = s.z0_ohm;
        Ok(cfg)
    }

    pub fn converge_options(&self) -> ConvergeOptions {
        ConvergeOptions {
            tol: self.solver.tol,
            max_cutoff: self.solver.max_cutoff,
        }
    }

    /// Effective configuration as TOML, preceded by derived quantities as
    /// comments. Parsing the echo gives back the same configuration.
    pub fn echo(&self) -> String {
        let body = toml::to_string(self).expect("configuration serializes");
        let mut head = String::from("# effective configuration\n");
        if let Ok(p) = self.params() {
            if let Ok(g) = p.decoherence_rate(0, 1) {
                head.push_str(&format!("# derived gamma10_Hz = {:.16e}\n", hz(g)));
            }
            let f: Vec<String> = p.transition_freqs().iter().map(|w| format!("{:.6e}", hz(*w))).collect();
            head.push_str(&format!("# derived transition frequencies (Hz): {}\n", f.join(", ")));
        }
        head + &body
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> std::result::Result<RunConfig, ConfigError> {
    let src = fs::read_to_string(path).map_err(|e| ConfigError {
        key: None,
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    RunConfig::parse_str(&src)
}

/// Fixed 17-significant-digit scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Solver(String),
    Io(String),
    Validation(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Solver(_) | RunError::Io(_) => EXIT_SOLVER,
            RunError::Validation(_) => EXIT_VALIDATION,
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        let (kind, message, key, line) = match self {
            RunError::Config(c) => ("config", c.message.clone(), c.key.clone(), c.line),
            RunError::Solver(m) => ("solver", m.clone(), None, None),
            RunError::Io(m) => ("io", m.clone(), None, None),
            RunError::Validation(m) => ("validation", m.clone(), None, None),
        };
        serde_json::json!({
            "status": "error",
            "kind": kind,
            "message": message,
            "key": key,
            "line": line,
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(c) => write!(f, "configuration error: {c}"),
            RunError::Solver(m) => write!(f, "solver failure: {m}"),
            RunError::Io(m) => write!(f, "output error: {m}"),
            RunError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

fn missing(table: &str) -> RunError {
    RunError::Config(ConfigError {
        key: Some(table.to_string()),
        line: None,
        message: format!("this command needs a [{table}] block"),
    })
}

fn write_file(dir: &Path, name: &str, content: &str) -> std::result::Result<(), RunError> {
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn peak_line(prefix: Option<f64>, p: &Peak) -> String {
    let mut s = String::new();
    if let Some(v) = prefix {
        s.push_str(&num(v));
        s.push(',');
    }
    let harmonic = p.harmonic.map(|l| l.to_string()).unwrap_or_default();
    s.push_str(&format!(
        "{},{},{},{},{}\n",
        num(hz(p.freq)),
        num(p.height_db),
        num(p.prominence_db),
        harmonic,
        p.label
    ));
    s
}

fn spectrum_csv(r: &SpectrumResult) -> String {
    let mut s = String::from("f_Hz,s_co,s_inco,s_total,psd_n_db\n");
    for i in 0..r.grid.len() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            num(hz(r.grid[i])),
            num(r.s_coherent[i]),
            num(r.s_incoherent[i]),
            num(r.s_total[i]),
            num(r.psd_n_db[i])
        ));
    }
    s
}

fn cmd_spectrum(cfg: &RunConfig, out: &Path) -> std::result::Result<(), RunError> {
    let s = cfg.spectrum.as_ref().ok_or_else(|| missing("spectrum"))?;
    cfg.drive.as_ref().ok_or_else(|| missing("drive"))?;
    let params = cfg.params()?;
    let drive = cfg.drive_config()?;
    let scfg = cfg.spectrum_config()?;
    let result = row_spectrum(
        &params,
        &drive,
        &scfg,
        cfg.solver.adaptive,
        cfg.solver.cutoff,
        cfg.converge_options(),
    )?;
    let peaks = detect_peaks(&result, s.min_prominence_db)?;
    write_file(out, "spectrum.csv", &spectrum_csv(&result))?;
    let mut p = String::from("f_Hz,height_db,prominence_db,harmonic,label\n");
    for pk in &peaks {
        p.push_str(&peak_line(None, pk));
    }
    write_file(out, "peaks.csv", &p)?;
    log::info!("spectrum: L = {}, {} peaks", result.cutoff, peaks.len());
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path, strict: bool) -> std::result::Result<(), RunError> {
    let w = cfg.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let s = cfg.spectrum.as_ref().ok_or_else(|| missing("spectrum"))?;
    cfg.drive.as_ref().ok_or_else(|| missing("drive"))?;
    let spec = SweepSpec {
        axis: w.axis.parse()?,
        values: SweepSpec::linspace(w.start, w.stop, w.steps)?,
        params: cfg.params()?,
        drive: cfg.drive_config()?,
        spectrum: cfg.spectrum_config()?,
        adaptive: cfg.solver.adaptive,
        cutoff: cfg.solver.cutoff,
        converge: cfg.converge_options(),
        min_prominence_db: s.min_prominence_db,
    };
    let grid = run_sweep(&spec)?;
    let mut map = String::from("axis_value,f_Hz,psd_n_db\n");
    let mut peaks = String::from("axis_value,f_Hz,height_db,prominence_db,harmonic,label\n");
    let mut rows = String::from("axis_value,status,L,message\n");
    for row in &grid.rows {
        match &row.outcome {
            Ok((r, pk)) => {
                for (f, y) in r.grid.iter().zip(&r.psd_n_db) {
                    map.push_str(&format!("{},{},{}\n", num(row.value), num(hz(*f)), num(*y)));
                }
                for p in pk {
                    peaks.push_str(&peak_line(Some(row.value), p));
                }
                rows.push_str(&format!("{},ok,{},\n", num(row.value), r.cutoff));
            }
            Err(msg) => {
                let clean = msg.replace(['"', '\n'], "'");
                rows.push_str(&format!("{},failed,,\"{}\"\n", num(row.value), clean));
            }
        }
    }
    write_file(out, "map.csv", &map)?;
    write_file(out, "peaks.csv", &peaks)?;
    write_file(out, "rows.csv", &rows)?;
    let failed = grid.failed_rows();
    if failed > 0 {
        log::warn!("{failed} of {} sweep rows failed", grid.rows.len());
        if strict {
            return Err(RunError::Solver(format!("{failed} sweep rows failed")));
        }
    }
    Ok(())
}

fn cmd_spectroscopy(cfg: &RunConfig, out: &Path, strict: bool) -> std::result::Result<(), RunError> {
    let b = cfg.spectroscopy.as_ref().ok_or_else(|| missing("spectroscopy"))?;
    let params = cfg.params()?;
    let auto_k = || {
        calibrate_zero_crossing(&params.with_levels(2)?, b.zero_crossing_dbm).ok_or_else(|| {
            Error::InvalidParameter("the two-level reflection has no saturation zero for these rates".into())
        })
    };
    let k_probe = match b.k_probe {
        Some(k) => ang(k),
        None => auto_k()?,
    };
    let k_drive = match b.k_drive {
        Some(k) => ang(k),
        None => auto_k()?,
    };
    let spec = TwoToneSpec {
        probe_grid: uniform_grid(ang(b.probe_f_start_hz), ang(b.probe_f_stop_hz), b.probe_points)?,
        probe_power_dbm: b.probe_p_dbm,
        k_probe,
        drive_freq: b.drive_f_hz.map(ang).unwrap_or(params.omega10()),
        drive_powers_dbm: SweepSpec::linspace(b.drive_p_start_dbm, b.drive_p_stop_dbm, b.drive_p_steps)?,
        k_drive,
    };
    let map = two_tone_map(&params, &spec, cfg.converge_options())?;
    let mut s = String::from("probe_f_Hz,drive_P_dBm,abs_r,arg_r\n");
    for (i, p) in map.drive_powers_dbm.iter().enumerate() {
        for (j, f) in map.probe_grid.iter().enumerate() {
            let r = map.r[i][j];
            s.push_str(&format!("{},{},{},{}\n", num(hz(*f)), num(*p), num(r.norm()), num(r.arg())));
        }
    }
    write_file(out, "r_map.csv", &s)?;
    let meta = serde_json::json!({
        "linear_regime": map.linear_regime,
        "probe_rabi_Hz": hz(rabi_from_power(b.probe_p_dbm, k_probe)),
        "linear_limit_Hz": hz(linear_regime_limit(&params)),
        "k_probe_Hz_per_sqrt_mW": hz(k_probe),
        "k_drive_Hz_per_sqrt_mW": hz(k_drive),
    });
    write_file(out, "spectroscopy.json", &(serde_json::to_string_pretty(&meta).unwrap() + "\n"))?;
    if !map.linear_regime && strict {
        return Err(RunError::Solver("probe power outside the linear-response regime".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Small instances solved both by the harmonic solver and by direct time
/// integration, using the rates of the configured atom.
pub fn validation_suite(cfg: &RunConfig) -> crate::Result<Vec<Check>> {
    let base = cfg.params()?;
    let cases = [(2usize, 1.0, 2.5e6), (3, 0.1, 26e6), (3, 2.0, 2.5e6)];
    let mut checks = Vec::new();
    for (levels, scale, half_sep) in cases {
        let p = base.with_levels(levels)?;
        let w = scale * p.gamma10();
        let d = DriveConfig::rabi(p.omega10() + ang(half_sep), p.omega10() - ang(half_sep), w, w)?;
        let grid: Vec<f64> = (0..11).map(|i| p.omega10() + ang(-100e6 + 20e6 * i as f64)).collect();
        let c = compare_with_floquet(&p, &d, &grid, OracleOptions::default())?;
        let tag = format!("M{levels}_Omega{scale}G_delta{}MHz", half_sep / 1e6);
        let mut push = |what: &str, measured: f64, tolerance: f64| {
            checks.push(Check {
                name: format!("{tag}_{what}"),
                measured,
                tolerance,
                pass: measured <= tolerance,
            })
        };
        push("amplitudes", c.amplitude_error, 1e-6);
        push("incoherent_spectrum", c.spectrum_error, 1e-4);
        push("trace_drift", c.max_trace_drift, TRACE_DRIFT_LIMIT);
        push("positivity", if c.positivity_violated { 1.0 } else { 0.0 }, 0.0);
    }
    Ok(checks)
}

fn cmd_validate(cfg: &RunConfig, out: &Path) -> std::result::Result<(), RunError> {
    let checks = validation_suite(cfg)?;
    let all = checks.iter().all(|c| c.pass);
    let report = serde_json::json!({ "pass": all, "checks": checks });
    write_file(out, "validate.json", &(serde_json::to_string_pretty(&report).unwrap() + "\n"))?;
    if all {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(RunError::Validation(failed.join(", ")))
    }
}

/// Worker count from the flag, then the environment.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Option<usize> {
    flag.or_else(|| env.and_then(|v| v.trim().parse().ok())).filter(|n| *n > 0)
}

/// Runs one command and writes its outputs into `out`.
pub fn run_command(cmd: Command, cfg: &RunConfig, out: &Path, strict: bool) -> std::result::Result<(), RunError> {
    fs::create_dir_all(out)?;
    write_file(out, "config_echo.toml", &cfg.echo())?;
    match cmd {
        Command::Spectrum => cmd_spectrum(cfg, out),
        Command::Sweep => cmd_sweep(cfg, out, strict),
        Command::Spectroscopy => cmd_spectroscopy(cfg, out, strict),
        Command::Validate => cmd_validate(cfg, out),
    }
}

/// Full command-line run; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let env = std::env::var(THREADS_ENV).ok();
    if let Some(n) = resolve_threads(cli.threads, env.as_deref()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already initialised: {e}");
        }
    }
    let outcome = parse_config(&cli.config)
        .map_err(RunError::Config)
        .and_then(|cfg| run_command(cli.command, &cfg, &cli.out, cli.strict));
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let record = e.record();
            eprintln!("{record}");
            if fs::create_dir_all(&cli.out).is_ok() {
                let _ = fs::write(cli.out.join("error.json"), record + "\n");
            }
            e.exit_code()
        }
    }
}
