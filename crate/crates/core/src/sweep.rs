//! One-dimensional parameter sweeps over the drive and peak detection on the
//! resulting PSD rows.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{assemble_generator, merge_degenerate_drives, solve_steady_state, ConvergeOptions};
use crate::model::{ang, hz, Amplitudes, DriveConfig, TransmonParams};
use crate::spectrum::{compute_spectrum, spectrum_for, SpectrumConfig, SpectrumResult};

/// Default minimum prominence for a peak (dB on the normalized PSD).
pub const DEFAULT_PROMINENCE_DB: f64 = 0.05;

/// Swept parameter. Powers are in dBm, frequencies and Rabi rates in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    P1,
    P2,
    #[serde(rename = "P_both")]
    PBoth,
    #[serde(rename = "omega1")]
    Omega1Freq,
    #[serde(rename = "omega2")]
    Omega2Freq,
    /// `omega2 - omega1` with the mean carrier held fixed.
    #[serde(rename = "delta_omega")]
    DeltaOmega,
    #[serde(rename = "Omega1")]
    Rabi1,
    #[serde(rename = "Omega2")]
    Rabi2,
}

impl Axis {
    pub const ALL: [Axis; 8] = [
        Axis::P1,
        Axis::P2,
        Axis::PBoth,
        Axis::Omega1Freq,
        Axis::Omega2Freq,
        Axis::DeltaOmega,
        Axis::Rabi1,
        Axis::Rabi2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::P1 => "P1",
            Axis::P2 => "P2",
            Axis::PBoth => "P_both",
            Axis::Omega1Freq => "omega1",
            Axis::Omega2Freq => "omega2",
            Axis::DeltaOmega => "delta_omega",
            Axis::Rabi1 => "Omega1",
            Axis::Rabi2 => "Omega2",
        }
    }

    /// Drive configuration at axis value `v`.
    pub fn apply(&self, base: &DriveConfig, v: f64) -> Result<DriveConfig> {
        let mut d = *base;
        match self {
            Axis::P1 | Axis::P2 | Axis::PBoth => {
                let Amplitudes::Power { p1_dbm, p2_dbm, k1, k2 } = base.amplitudes else {
                    return Err(Error::InvalidParameter(format!(
                        "sweeping {} needs a power-specified drive with calibration factors",
                        self.name()
                    )));
                };
                let (p1, p2) = match self {
                    Axis::P1 => (v, p2_dbm),
                    Axis::P2 => (p1_dbm, v),
                    _ => (v, v),
                };
                d.amplitudes = Amplitudes::Power {
                    p1_dbm: p1,
                    p2_dbm: p2,
                    k1,
                    k2,
                };
            }
            Axis::Omega1Freq => d.omega1 = ang(v),
            Axis::Omega2Freq => d.omega2 = ang(v),
            Axis::DeltaOmega => {
                let ws = base.omega_s();
                d.omega1 = ws - ang(v) / 2.0;
                d.omega2 = ws + ang(v) / 2.0;
            }
            Axis::Rabi1 | Axis::Rabi2 => {
                let (r1, r2) = base.rabi_frequencies();
                d.amplitudes = if *self == Axis::Rabi1 {
                    Amplitudes::Rabi { rabi1: ang(v), rabi2: r2 }
                } else {
                    Amplitudes::Rabi { rabi1: r1, rabi2: ang(v) }
                };
            }
        }
        d.validate()?;
        Ok(d)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Axis::ALL.iter().map(|a| a.name()).collect();
                Error::InvalidParameter(format!("unknown sweep axis '{s}', expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub params: TransmonParams,
    pub drive: DriveConfig,
    pub spectrum: SpectrumConfig,
    /// Converge the harmonic cutoff per row; otherwise use `cutoff` as is.
    pub adaptive: bool,
    pub cutoff: usize,
    pub converge: ConvergeOptions,
    pub min_prominence_db: f64,
}

impl SweepSpec {
    /// `steps` equally spaced axis values from `start` to `stop`.
    pub fn linspace(start: f64, stop: f64, steps: usize) -> Result<Vec<f64>> {
        if steps == 0 || !start.is_finite() || !stop.is_finite() {
            return Err(Error::InvalidParameter("sweep range is empty".into()));
        }
        if steps == 1 {
            return Ok(vec![start]);
        }
        let h = (stop - start) / (steps - 1) as f64;
        Ok((0..steps).map(|i| start + h * i as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Peak {
    /// rad/s
    pub freq: f64,
    pub height_db: f64,
    pub prominence_db: f64,
    /// Odd harmonic `l` with `freq = omega_s + l delta`, when classified.
    pub harmonic: Option<i64>,
    pub label: String,
}

pub type PeakList = Vec<Peak>;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub drive: Option<DriveConfig>,
    pub outcome: std::result::Result<(SpectrumResult, PeakList), String>,
}

impl SweepRow {
    pub fn cutoff(&self) -> Option<usize> {
        self.outcome.as_ref().ok().map(|(s, _)| s.cutoff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
}

impl SweepGrid {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Spectrum of one drive configuration, merging coincident carriers.
pub fn row_spectrum(
    params: &TransmonParams,
    drive: &DriveConfig,
    cfg: &SpectrumConfig,
    adaptive: bool,
    cutoff: usize,
    opts: ConvergeOptions,
) -> Result<SpectrumResult> {
    let drive = if drive.is_degenerate() {
        merge_degenerate_drives(drive)?
    } else {
        *drive
    };
    if adaptive {
        spectrum_for(params, &drive, cfg, cutoff.max(1), opts)
    } else {
        let gen = assemble_generator(params, &drive, cutoff)?;
        let state = solve_steady_state(&gen)?;
        compute_spectrum(&state, &gen, params, &drive, cfg)
    }
}

/// Evaluates every row independently. A failing row is recorded with its
/// reason and does not stop the sweep. Row order follows the axis values
/// whatever the thread count.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepGrid> {
    spec.spectrum.validate()?;
    if spec.values.is_empty() {
        return Err(Error::InvalidParameter("sweep has no axis values".into()));
    }
    let rows = spec
        .values
        .par_iter()
        .map(|&v| {
            let drive = match spec.axis.apply(&spec.drive, v) {
                Ok(d) => d,
                Err(e) => {
                    return SweepRow {
                        value: v,
                        drive: None,
                        outcome: Err(e.to_string()),
                    }
                }
            };
            let outcome = row_spectrum(&spec.params, &drive, &spec.spectrum, spec.adaptive, spec.cutoff, spec.converge)
                .and_then(|s| detect_peaks(&s, spec.min_prominence_db).map(|p| (s, p)))
                .map_err(|e| {
                    log::warn!("sweep row {} = {v}: {e}", spec.axis);
                    e.to_string()
                });
            SweepRow {
                value: v,
                drive: Some(drive),
                outcome,
            }
        })
        .collect();
    Ok(SweepGrid { axis: spec.axis, rows })
}

/// Label of the mixing product at harmonic `l` (odd), e.g. `2w1-w2`.
pub fn mixing_label(l: i64) -> String {
    let (a, b) = if l > 0 { ("w1", "w2") } else { ("w2", "w1") };
    let n = (l.abs() - 1) / 2;
    match n {
        0 => a.to_string(),
        1 => format!("2{a}-{b}"),
        _ => format!("{}{a}-{n}{b}", n + 1),
    }
}

/// Local maxima of the PSD with at least `min_prominence_db` of topographic
/// prominence, sorted by frequency. A peak within half a grid step of
/// `omega_s + l delta` (l odd) is labelled with its mixing product.
pub fn detect_peaks(result: &SpectrumResult, min_prominence_db: f64) -> Result<PeakList> {
    let g = &result.grid;
    let y = &result.psd_n_db;
    if g.len() < 3 {
        return Ok(Vec::new());
    }
    let step = (g[g.len() - 1] - g[0]) / (g.len() - 1) as f64;
    if g.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
        return Err(Error::NonUniformGrid);
    }
    let n = y.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // extend over a flat top
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let top = (i + j) / 2;
                let h = y[top];
                let mut left_min = h;
                let mut k = i;
                while k > 0 {
                    k -= 1;
                    if y[k] > h {
                        break;
                    }
                    left_min = left_min.min(y[k]);
                }
                let mut right_min = h;
                let mut k = j;
                while k + 1 < n {
                    k += 1;
                    if y[k] > h {
                        break;
                    }
                    right_min = right_min.min(y[k]);
                }
                let prominence = h - left_min.max(right_min);
                if prominence >= min_prominence_db {
                    let (harmonic, label) = classify(g[top], result.omega_s, result.delta, step);
                    peaks.push(Peak {
                        freq: g[top],
                        height_db: h,
                        prominence_db: prominence,
                        harmonic,
                        label,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(peaks)
}

fn classify(freq: f64, omega_s: f64, delta: f64, step: f64) -> (Option<i64>, String) {
    if delta == 0.0 {
        return if (freq - omega_s).abs() <= 0.5 * step * (1.0 + 1e-9) {
            (Some(1), "w1".to_string())
        } else {
            (None, "unclassified".to_string())
        };
    }
    let x = (freq - omega_s) / delta;
    let l = 2 * ((x - 1.0) / 2.0).round() as i64 + 1;
    let target = omega_s + l as f64 * delta;
    if (freq - target).abs() <= 0.5 * step * (1.0 + 1e-9) {
        (Some(l), mixing_label(l))
    } else {
        (None, "unclassified".to_string())
    }
}

/// Frequency (Hz) of the mixing product at harmonic l for this drive.
pub fn product_frequency_hz(drive: &DriveConfig, l: i64) -> f64 {
    hz(drive.omega_s() + l as f64 * drive.delta())
}
