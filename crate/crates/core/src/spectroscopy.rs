//! Reflection coefficient of the mirror-terminated line, for a single probe
//! and for a weak probe in the presence of a second (pump) tone.
//!
//! `r = 1 + (2i/Omega_p) sum_m sqrt(m) Gamma_{m,m-1} <sigma_{m-1,m}>` taken at
//! the probe frequency. For a weak resonant probe on a two-level atom this
//! reduces to `1 - Gamma_10/gamma_10`.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::floquet::{
    assemble_generator, converge_harmonics, merge_degenerate_drives, solve_steady_state, ConvergeOptions,
    FourierState,
};
use crate::model::{rabi_from_power, DriveConfig, TransmonParams};

/// Probe strength above which the linear-response reading is flagged.
pub fn linear_regime_limit(params: &TransmonParams) -> f64 {
    params.gamma10() / 10.0
}

/// `sum_m sqrt(m) Gamma_{m,m-1} X[m-1,m,l]`.
fn emitted_field(state: &FourierState, params: &TransmonParams, l: i64) -> C64 {
    (1..params.levels())
        .map(|m| (m as f64).sqrt() * params.relax_rate(m) * state.get(m - 1, m, l))
        .sum()
}

/// Reflection of a single continuous tone of Rabi frequency `rabi_p`.
pub fn reflection_single_tone(params: &TransmonParams, omega_p: f64, rabi_p: f64) -> Result<C64> {
    if !(rabi_p > 0.0) {
        return Err(Error::InvalidParameter("probe Rabi frequency must be positive".into()));
    }
    let drive = DriveConfig::single(omega_p, rabi_p)?;
    let state = solve_steady_state(&assemble_generator(params, &drive, 0)?)?;
    Ok(C64::new(1.0, 0.0) + C64::new(0.0, 2.0 / rabi_p) * emitted_field(&state, params, 0))
}

/// Reflection of a probe (tone 1) while a pump (tone 2) is applied. The
/// probe response is read from the harmonic oscillating at the probe
/// frequency. When both tones coincide they are merged and the reflection
/// of the combined field is returned.
pub fn reflection_two_tone(
    params: &TransmonParams,
    omega_p: f64,
    rabi_p: f64,
    omega_d: f64,
    rabi_d: f64,
    opts: ConvergeOptions,
) -> Result<C64> {
    if !(rabi_p > 0.0) {
        return Err(Error::InvalidParameter("probe Rabi frequency must be positive".into()));
    }
    if rabi_d == 0.0 {
        return reflection_single_tone(params, omega_p, rabi_p);
    }
    let drive = DriveConfig::rabi(omega_p, omega_d, rabi_p, rabi_d)?;
    if drive.is_degenerate() {
        let merged = merge_degenerate_drives(&drive)?;
        let total = merged.rabi_frequencies().0;
        let state = solve_steady_state(&assemble_generator(params, &merged, 0)?)?;
        let phase = C64::from_polar(1.0, merged.phase1);
        return Ok(C64::new(1.0, 0.0) + C64::new(0.0, 2.0 / total) * phase * emitted_field(&state, params, 0));
    }
    let state = converge_harmonics(params, &drive, 4, opts)?;
    // the lowering coherence at the probe frequency sits at harmonic -1
    Ok(C64::new(1.0, 0.0) + C64::new(0.0, 2.0 / rabi_p) * emitted_field(&state, params, -1))
}

/// Inputs of a probe-frequency by pump-power reflection map.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoToneSpec {
    /// Probe frequencies (rad/s).
    pub probe_grid: Vec<f64>,
    pub probe_power_dbm: f64,
    /// rad/s per sqrt(mW).
    pub k_probe: f64,
    pub drive_freq: f64,
    pub drive_powers_dbm: Vec<f64>,
    pub k_drive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionMap {
    pub probe_grid: Vec<f64>,
    pub drive_powers_dbm: Vec<f64>,
    /// Pump Rabi frequency of each row (rad/s).
    pub drive_rabi: Vec<f64>,
    /// `r[row][col]`: row = pump power, column = probe frequency.
    pub r: Vec<Vec<C64>>,
    /// False when the probe is stronger than the linear-response limit.
    pub linear_regime: bool,
}

/// `|r|` over probe frequency and pump power. Points are independent and
/// evaluated in parallel; the layout of the result does not depend on the
/// scheduling.
pub fn two_tone_map(params: &TransmonParams, spec: &TwoToneSpec, opts: ConvergeOptions) -> Result<ReflectionMap> {
    let rabi_p = rabi_from_power(spec.probe_power_dbm, spec.k_probe);
    let linear_regime = rabi_p <= linear_regime_limit(params);
    if !linear_regime {
        log::warn!(
            "probe Rabi frequency {:.3e} rad/s exceeds the linear-response limit {:.3e} rad/s",
            rabi_p,
            linear_regime_limit(params)
        );
    }
    let drive_rabi: Vec<f64> = spec
        .drive_powers_dbm
        .iter()
        .map(|p| rabi_from_power(*p, spec.k_drive))
        .collect();
    let cells: Vec<(usize, usize)> = (0..drive_rabi.len())
        .flat_map(|i| (0..spec.probe_grid.len()).map(move |j| (i, j)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(i, j)| reflection_two_tone(params, spec.probe_grid[j], rabi_p, spec.drive_freq, drive_rabi[i], opts))
        .collect::<Result<Vec<C64>>>()?;
    let r = values.chunks(spec.probe_grid.len()).map(|c| c.to_vec()).collect();
    Ok(ReflectionMap {
        probe_grid: spec.probe_grid.clone(),
        drive_powers_dbm: spec.drive_powers_dbm.clone(),
        drive_rabi,
        r,
        linear_regime,
    })
}

/// Probe Rabi frequency at which a resonant two-level probe is fully
/// absorbed: `Omega^2 = Gamma (Gamma - gamma)`. None when `Gamma <= gamma`.
pub fn two_level_zero_rabi(params: &TransmonParams) -> Option<f64> {
    let g = params.gamma10();
    let gam = params.decoherence_rate(0, 1).ok()?;
    (g > gam).then(|| (g * (g - gam)).sqrt())
}

/// Calibration factor placing the two-level zero crossing at `p_dbm`.
pub fn calibrate_zero_crossing(params: &TransmonParams, p_dbm: f64) -> Option<f64> {
    two_level_zero_rabi(params).map(|w| w / rabi_from_power(p_dbm, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ang;

    #[test]
    fn weak_resonant_limit() {
        let p = TransmonParams::reference(2).unwrap();
        let r = reflection_single_tone(&p, p.omega10(), 1e-4 * p.gamma10()).unwrap();
        let want = 1.0 - p.gamma10() / p.decoherence_rate(0, 1).unwrap();
        assert!((r.re - want).abs() < 1e-6 && r.im.abs() < 1e-6, "{r}");
        assert!((want + 0.96706).abs() < 1e-4);
    }

    #[test]
    fn far_detuned_probe_is_reflected() {
        let p = TransmonParams::reference(3).unwrap();
        let r = reflection_single_tone(&p, p.omega10() + ang(2e9), 1e-3 * p.gamma10()).unwrap();
        assert!((r.norm() - 1.0).abs() < 1e-3, "{r}");
        // residual dispersive phase of order Gamma/Delta
        let want = -p.gamma10() / ang(2e9);
        assert!((r.im / want - 1.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn saturation_zero() {
        let p = TransmonParams::reference(2).unwrap();
        let w = two_level_zero_rabi(&p).unwrap();
        let r = reflection_single_tone(&p, p.omega10(), w).unwrap();
        assert!(r.norm() < 1e-3, "{r}");
        let k = calibrate_zero_crossing(&p, -130.0).unwrap();
        assert!((rabi_from_power(-130.0, k) - w).abs() < 1e-6 * w);
    }

    #[test]
    fn zero_pump_map_matches_single_tone() {
        let p = TransmonParams::reference(3).unwrap();
        let k = calibrate_zero_crossing(&p, -130.0).unwrap();
        let spec = TwoToneSpec {
            probe_grid: vec![ang(4.80e9), ang(4.82e9), ang(4.83e9)],
            probe_power_dbm: -150.0,
            k_probe: k,
            drive_freq: ang(4.82e9),
            drive_powers_dbm: vec![f64::NEG_INFINITY],
            k_drive: k,
        };
        let map = two_tone_map(&p, &spec, ConvergeOptions::default()).unwrap();
        let wp = rabi_from_power(-150.0, k);
        for (j, w) in spec.probe_grid.iter().enumerate() {
            let single = reflection_single_tone(&p, *w, wp).unwrap();
            assert!((map.r[0][j] - single).norm() < 1e-8);
        }
        assert!(map.linear_regime);
    }

    #[test]
    fn tiny_pump_is_continuous_with_single_tone() {
        let p = TransmonParams::reference(3).unwrap();
        let wp = 1e-3 * p.gamma10();
        let a = reflection_two_tone(&p, ang(4.815e9), wp, ang(4.82e9), 1e-9, ConvergeOptions::default()).unwrap();
        let b = reflection_single_tone(&p, ang(4.815e9), wp).unwrap();
        assert!((a - b).norm() < 1e-6, "{a} vs {b}");
    }
}
