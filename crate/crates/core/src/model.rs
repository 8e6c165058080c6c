//! Physical parameters of the driven transmon.
//!
//! Everything here is stored in angular units (rad/s). Configuration files and
//! CSV outputs use Hz; the conversion happens at the edges.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Default number of transmon levels kept in the simulation.
pub const DEFAULT_LEVELS: usize = 5;

/// Hz -> rad/s.
pub fn ang(f_hz: f64) -> f64 {
    2.0 * PI * f_hz
}

/// rad/s -> Hz.
pub fn hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Transition frequencies, level energies and relaxation rates of the
/// truncated transmon ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    /// `omega_{m,m-1}` for m = 1..M (length M-1).
    pub transition_freqs: Vec<f64>,
    /// `omega_m` with `omega_0 = 0` (length M).
    pub level_energies: Vec<f64>,
    /// `Gamma_{m,m-1} = m Gamma_10` (length M-1).
    pub relax_rates: Vec<f64>,
    /// Set when the charging energy is negative, i.e. the ladder spacing grows
    /// with m instead of shrinking.
    pub inverted_anharmonicity: bool,
}

/// Builds the level ladder. Each transition sits `(m-1) E_C/hbar` below the
/// fundamental one and the relaxation rate grows linearly with m.
pub fn derive_ladder(omega10: f64, ec_over_h: f64, gamma10: f64, levels: usize) -> Result<Ladder> {
    if levels < 2 {
        return Err(Error::InvalidParameter(format!(
            "level count must be at least 2, got {levels}"
        )));
    }
    if !(omega10 > 0.0) || !omega10.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "omega10 must be positive, got {omega10}"
        )));
    }
    if !ec_over_h.is_finite() {
        return Err(Error::InvalidParameter("charging energy must be finite".into()));
    }
    if !(gamma10 >= 0.0) || !gamma10.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Gamma10 must be non-negative, got {gamma10}"
        )));
    }
    let inverted = ec_over_h < 0.0;
    if inverted {
        log::warn!("negative charging energy {ec_over_h} Hz: anharmonicity sign is inverted");
    }
    let ec = ang(ec_over_h);
    let transition_freqs: Vec<f64> = (1..levels).map(|m| omega10 - (m as f64 - 1.0) * ec).collect();
    let mut level_energies = Vec::with_capacity(levels);
    level_energies.push(0.0);
    let mut acc = 0.0;
    for w in &transition_freqs {
        acc += w;
        level_energies.push(acc);
    }
    let relax_rates = (1..levels).map(|m| m as f64 * gamma10).collect();
    Ok(Ladder {
        transition_freqs,
        level_energies,
        relax_rates,
        inverted_anharmonicity: inverted,
    })
}

/// Atom parameters. Immutable once built; the ladder is derived eagerly.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmonParams {
    levels: usize,
    omega10: f64,
    ec_over_h: f64,
    gamma10: f64,
    gamma_phi: f64,
    ladder: Ladder,
}

impl TransmonParams {
    /// `omega10`, `gamma10` and `gamma_phi` in rad/s, `ec_over_h` in Hz.
    pub fn new(levels: usize, omega10: f64, ec_over_h: f64, gamma10: f64, gamma_phi: f64) -> Result<Self> {
        if !(gamma_phi >= 0.0) || !gamma_phi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Gamma_phi must be non-negative, got {gamma_phi}"
            )));
        }
        let ladder = derive_ladder(omega10, ec_over_h, gamma10, levels)?;
        Ok(Self {
            levels,
            omega10,
            ec_over_h,
            gamma10,
            gamma_phi,
            ladder,
        })
    }

    /// The characterized device: 4.82 GHz, E_C/h = 320 MHz,
    /// Gamma_10/2pi = 44.2 MHz, Gamma_phi/2pi = 0.37 MHz.
    pub fn reference(levels: usize) -> Result<Self> {
        Self::new(levels, ang(4.82e9), 320e6, ang(44.2e6), ang(0.37e6))
    }

    pub fn levels(&self) -> usize {
        self.levels
    }
    pub fn omega10(&self) -> f64 {
        self.omega10
    }
    pub fn ec_over_h(&self) -> f64 {
        self.ec_over_h
    }
    pub fn gamma10(&self) -> f64 {
        self.gamma10
    }
    pub fn gamma_phi(&self) -> f64 {
        self.gamma_phi
    }
    pub fn ladder(&self) -> &Ladder {
        &self.ladder
    }
    pub fn transition_freqs(&self) -> &[f64] {
        &self.ladder.transition_freqs
    }
    pub fn level_energies(&self) -> &[f64] {
        &self.ladder.level_energies
    }
    pub fn relax_rates(&self) -> &[f64] {
        &self.ladder.relax_rates
    }

    /// `Gamma_{m,m-1}`; zero for m = 0.
    pub fn relax_rate(&self, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.ladder.relax_rates[m - 1]
        }
    }

    /// Copy with a different truncation.
    pub fn with_levels(&self, levels: usize) -> Result<Self> {
        Self::new(levels, self.omega10, self.ec_over_h, self.gamma10, self.gamma_phi)
    }

    /// Copy with a different pure dephasing rate.
    pub fn with_gamma_phi(&self, gamma_phi: f64) -> Result<Self> {
        Self::new(self.levels, self.omega10, self.ec_over_h, self.gamma10, gamma_phi)
    }

    /// Decoherence rate of the `|m><n|` element:
    /// `(n Gamma_{n,n-1} + m Gamma_{m,m-1})/2 + (m-n)^2 Gamma_phi`.
    pub fn decoherence_rate(&self, m: usize, n: usize) -> Result<f64> {
        if m >= self.levels || n >= self.levels {
            return Err(Error::InvalidParameter(format!(
                "level index ({m}, {n}) outside 0..{}",
                self.levels
            )));
        }
        Ok(self.xi(m, n))
    }

    /// Unchecked variant used in the inner assembly loops.
    pub(crate) fn xi(&self, m: usize, n: usize) -> f64 {
        let d = m as f64 - n as f64;
        0.5 * (n as f64 * self.relax_rate(n) + m as f64 * self.relax_rate(m)) + d * d * self.gamma_phi
    }

    /// Largest decay rate in the model, used for step-size bounds.
    pub fn max_decay_rate(&self) -> f64 {
        let mut max = 0.0f64;
        for m in 0..self.levels {
            for n in 0..self.levels {
                max = max.max(self.xi(m, n));
            }
        }
        max
    }
}

/// Rabi frequency of a tone of power `p_dbm` with calibration `k`
/// (rad/s per sqrt(mW)). The field amplitude scales with the square root of
/// the power.
pub fn rabi_from_power(p_dbm: f64, k: f64) -> f64 {
    k * (10f64.powf(p_dbm / 10.0)).sqrt()
}

/// Inverse of [`rabi_from_power`].
pub fn power_from_rabi(rabi: f64, k: f64) -> f64 {
    20.0 * (rabi / k).log10()
}

/// How the two tone strengths are specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Amplitudes {
    /// Rabi frequencies in rad/s.
    Rabi { rabi1: f64, rabi2: f64 },
    /// Source powers in dBm with calibration factors in rad/s per sqrt(mW).
    Power { p1_dbm: f64, p2_dbm: f64, k1: f64, k2: f64 },
}

/// A drive tone as seen in the frame rotating at the mean carrier frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    /// `Omega e^{-i phi}`: coefficient of the raising part of the coupling.
    pub amplitude: C64,
    /// The tone oscillates as `e^{-i order delta t}` on the raising operator.
    pub order: i32,
}

/// Two continuous tones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    pub omega1: f64,
    pub omega2: f64,
    pub amplitudes: Amplitudes,
    pub phase1: f64,
    pub phase2: f64,
}

impl DriveConfig {
    pub fn rabi(omega1: f64, omega2: f64, rabi1: f64, rabi2: f64) -> Result<Self> {
        let d = Self {
            omega1,
            omega2,
            amplitudes: Amplitudes::Rabi { rabi1, rabi2 },
            phase1: 0.0,
            phase2: 0.0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn power(omega1: f64, omega2: f64, p1_dbm: f64, p2_dbm: f64, k1: f64, k2: f64) -> Result<Self> {
        let d = Self {
            omega1,
            omega2,
            amplitudes: Amplitudes::Power { p1_dbm, p2_dbm, k1, k2 },
            phase1: 0.0,
            phase2: 0.0,
        };
        d.validate()?;
        Ok(d)
    }

    /// A single tone; the second tone sits at the same frequency with zero
    /// amplitude, so the configuration is solvable without harmonics.
    pub fn single(omega: f64, rabi: f64) -> Result<Self> {
        Self::rabi(omega, omega, rabi, 0.0)
    }

    pub fn with_phases(mut self, phase1: f64, phase2: f64) -> Self {
        self.phase1 = phase1;
        self.phase2 = phase2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega1.is_finite() && self.omega2.is_finite()) || self.omega1 <= 0.0 || self.omega2 <= 0.0 {
            return Err(Error::InvalidParameter("carrier frequencies must be positive".into()));
        }
        match self.amplitudes {
            Amplitudes::Rabi { rabi1, rabi2 } => {
                if !(rabi1 >= 0.0 && rabi2 >= 0.0) || !rabi1.is_finite() || !rabi2.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "Rabi frequencies must be non-negative, got ({rabi1}, {rabi2})"
                    )));
                }
            }
            Amplitudes::Power { p1_dbm, p2_dbm, k1, k2 } => {
                if !(k1 >= 0.0 && k2 >= 0.0) || !k1.is_finite() || !k2.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "calibration factors must be non-negative, got ({k1}, {k2})"
                    )));
                }
                if p1_dbm.is_nan() || p2_dbm.is_nan() {
                    return Err(Error::InvalidParameter("source power is NaN".into()));
                }
            }
        }
        Ok(())
    }

    /// Mean carrier frequency; the rotating frame runs at this rate.
    pub fn omega_s(&self) -> f64 {
        (self.omega1 + self.omega2) / 2.0
    }

    /// Half the carrier separation.
    pub fn delta(&self) -> f64 {
        (self.omega1 - self.omega2) / 2.0
    }

    /// `(Omega_1, Omega_2)` in rad/s.
    pub fn rabi_frequencies(&self) -> (f64, f64) {
        match self.amplitudes {
            Amplitudes::Rabi { rabi1, rabi2 } => (rabi1, rabi2),
            Amplitudes::Power { p1_dbm, p2_dbm, k1, k2 } => (rabi_from_power(p1_dbm, k1), rabi_from_power(p2_dbm, k2)),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.omega1 == self.omega2
    }

    /// The two tones in the rotating frame. Tone 1 sits at `omega_s + delta`
    /// (harmonic order +1), tone 2 at `omega_s - delta` (order -1); both
    /// collapse to order 0 when the carriers coincide.
    pub fn tones(&self) -> [Tone; 2] {
        let (r1, r2) = self.rabi_frequencies();
        let (o1, o2) = if self.is_degenerate() { (0, 0) } else { (1, -1) };
        [
            Tone {
                amplitude: C64::from_polar(r1, -self.phase1),
                order: o1,
            },
            Tone {
                amplitude: C64::from_polar(r2, -self.phase2),
                order: o2,
            },
        ]
    }

    /// Same tones with frequencies and amplitudes exchanged.
    pub fn swapped(&self) -> Self {
        let amplitudes = match self.amplitudes {
            Amplitudes::Rabi { rabi1, rabi2 } => Amplitudes::Rabi { rabi1: rabi2, rabi2: rabi1 },
            Amplitudes::Power { p1_dbm, p2_dbm, k1, k2 } => Amplitudes::Power {
                p1_dbm: p2_dbm,
                p2_dbm: p1_dbm,
                k1: k2,
                k2: k1,
            },
        };
        Self {
            omega1: self.omega2,
            omega2: self.omega1,
            amplitudes,
            phase1: self.phase2,
            phase2: self.phase1,
        }
    }
}
