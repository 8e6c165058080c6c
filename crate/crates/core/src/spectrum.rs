//! Coherent and incoherent emission spectra and the normalized PSD.
//!
//! Both channels carry the prefactor `hbar / 4 pi` and the emission weights
//! `C_mn = u_m u_n` with `u_m = sqrt(m omega_{m,m-1} Gamma_{m,m-1})`. The line
//! impedance cancels between the field and power definitions, so it never
//! enters the kernels.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::floquet::block::{BlockSystem, Layout, SparseRow};
use crate::floquet::{assemble_generator, converge_harmonics, ConvergeOptions, FloquetGenerator, FourierState};
use crate::model::{ang, DriveConfig, TransmonParams, HBAR};

/// Default Lorentzian width of the coherent lines, 2 pi x 100 kHz.
pub const DEFAULT_EPSILON: f64 = 2.0 * PI * 100e3;
/// Analyzer resolution bandwidth, 2 pi x 910 kHz.
pub const DEFAULT_RBW: f64 = 2.0 * PI * 910e3;
/// Background noise power used when none is configured (W).
pub const DEFAULT_P_OFF: f64 = 1e-19;
/// Nominal line impedance (ohm). Kept for the record; it cancels.
pub const DEFAULT_Z0: f64 = 50.0;
/// Relative size of negative incoherent values that are treated as round-off.
pub const CLIP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumConfig {
    /// Lab-frame angular frequencies (rad/s), strictly increasing.
    pub grid: Vec<f64>,
    /// Default coherent line width (rad/s).
    pub epsilon: f64,
    /// Per-harmonic widths overriding `epsilon`.
    pub epsilon_by_harmonic: Vec<(i64, f64)>,
    pub rbw: f64,
    pub p_off: f64,
    pub z0: f64,
}

impl SpectrumConfig {
    pub fn new(grid: Vec<f64>) -> Self {
        Self {
            grid,
            epsilon: DEFAULT_EPSILON,
            epsilon_by_harmonic: Vec::new(),
            rbw: DEFAULT_RBW,
            p_off: DEFAULT_P_OFF,
            z0: DEFAULT_Z0,
        }
    }

    /// Uniform grid between two frequencies given in Hz, inclusive.
    pub fn uniform_hz(f_start: f64, f_stop: f64, points: usize) -> Result<Self> {
        Ok(Self::new(uniform_grid(ang(f_start), ang(f_stop), points)?))
    }

    pub fn epsilon_for(&self, l: i64) -> f64 {
        self.epsilon_by_harmonic
            .iter()
            .find(|(k, _)| *k == l)
            .map(|(_, e)| *e)
            .unwrap_or(self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("spectrum grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("spectrum grid must be strictly increasing".into()));
        }
        let eps_ok = self.epsilon > 0.0 && self.epsilon_by_harmonic.iter().all(|(_, e)| *e > 0.0);
        if !eps_ok {
            return Err(Error::InvalidParameter("Lorentzian widths must be positive".into()));
        }
        if !(self.rbw > 0.0) {
            return Err(Error::InvalidParameter("resolution bandwidth must be positive".into()));
        }
        if !(self.p_off > 0.0) {
            return Err(Error::InvalidParameter("background power P_off must be positive".into()));
        }
        Ok(())
    }
}

/// `points` equally spaced values from `start` to `stop` inclusive.
pub fn uniform_grid(start: f64, stop: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(stop > start) {
        return Err(Error::InvalidParameter(format!(
            "grid needs start < stop and at least 2 points (got {start}..{stop}, {points})"
        )));
    }
    let step = (stop - start) / (points - 1) as f64;
    Ok((0..points).map(|i| start + step * i as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub grid: Vec<f64>,
    pub s_coherent: Vec<f64>,
    pub s_incoherent: Vec<f64>,
    pub s_total: Vec<f64>,
    pub psd_n_db: Vec<f64>,
    pub omega_s: f64,
    pub delta: f64,
    pub cutoff: usize,
    pub levels: usize,
}

/// `u_m = sqrt(m omega_{m,m-1} Gamma_{m,m-1})` for m = 1..M-1, index m-1.
pub fn emission_amplitudes(params: &TransmonParams) -> Vec<f64> {
    params
        .transition_freqs()
        .iter()
        .zip(params.relax_rates())
        .enumerate()
        .map(|(k, (w, g))| ((k + 1) as f64 * w * g).sqrt())
        .collect()
}

/// The (M-1) x (M-1) matrix `C_mn`, row m-1, column n-1.
pub fn emission_coefficients(params: &TransmonParams) -> Vec<Vec<f64>> {
    let u = emission_amplitudes(params);
    u.iter().map(|a| u.iter().map(|b| a * b).collect()).collect()
}

/// Weight of every coherent line, `sum_mn C_mn X[m,m-1,l] X[n-1,n,-l]`.
pub fn coherent_weights(state: &FourierState, params: &TransmonParams) -> Vec<(i64, C64)> {
    let c = emission_coefficients(params);
    let big_l = state.cutoff() as i64;
    let levels = params.levels();
    (-big_l..=big_l)
        .map(|l| {
            let mut w = C64::new(0.0, 0.0);
            for m in 1..levels {
                for n in 1..levels {
                    w += c[m - 1][n - 1] * state.get(m, m - 1, l) * state.get(n - 1, n, -l);
                }
            }
            (l, w)
        })
        .collect()
}

/// Sum of Lorentzians at `omega_s + l delta`.
pub fn coherent_spectrum(
    state: &FourierState,
    params: &TransmonParams,
    drive: &DriveConfig,
    cfg: &SpectrumConfig,
) -> Vec<f64> {
    let weights: Vec<(f64, f64, f64)> = coherent_weights(state, params)
        .into_iter()
        .filter(|(_, w)| w.re != 0.0)
        .map(|(l, w)| (drive.omega_s() + l as f64 * state.delta(), w.re, cfg.epsilon_for(l)))
        .collect();
    let pre = HBAR / (4.0 * PI);
    cfg.grid
        .iter()
        .map(|&w| {
            pre * weights
                .iter()
                .map(|(c, a, e)| a * e / ((w - c) * (w - c) + e * e))
                .sum::<f64>()
        })
        .collect()
}

/// Fluctuation spectrum from the regression theorem in harmonic space.
///
/// The regression vector starts from `(A rho - <A> rho)` expanded in
/// harmonics, with `A = sum_n u_n sigma_{n-1,n}`. Its trace vanishes in every
/// harmonic, so the ground-state population is eliminated, which removes
/// the stationary kernel. Averaging over the start time keeps only the
/// zeroth harmonic of the propagated vector.
pub struct IncoherentSolver {
    layout: Layout,
    minus_b: BlockSystem,
    c0: Vec<Vec<C64>>,
    readout: Vec<(usize, usize, f64)>,
    omega_s: f64,
}

impl IncoherentSolver {
    pub fn new(gen: &FloquetGenerator, state: &FourierState, params: &TransmonParams, omega_s: f64) -> Result<Self> {
        let lat = gen.lattice();
        if state.lattice() != lat {
            return Err(Error::InvalidParameter(
                "steady state and generator use different lattices".into(),
            ));
        }
        let levels = lat.levels;
        let u = emission_amplitudes(params);
        let u_of = |k: usize| if k >= 1 && k < levels { u[k - 1] } else { 0.0 };

        let keep = |ix: crate::floquet::FloquetIndex| gen.in_sector(ix, true) && !(ix.m == 0 && ix.n == 0);
        let layout = gen.layout(keep);

        let mut rows: Vec<SparseRow> = vec![Vec::new(); lat.dimension()];
        for block in layout.blocks() {
            for &g in block {
                let mut row = Vec::with_capacity(gen.row(g).len() + levels);
                for &(col, v) in gen.row(g) {
                    let ix = lat.index(col);
                    if ix.m == 0 && ix.n == 0 {
                        for k in 1..levels {
                            row.push((lat.flat(k, k, ix.l), v));
                        }
                    } else {
                        row.push((col, -v));
                    }
                }
                // folded ground-state columns enter with +v here because the
                // whole row is negated: -(A_col0 * (-sum x_kk)) = +v x_kk
                rows[g] = row;
            }
        }
        let minus_b = BlockSystem::assemble(&rows, &layout)?;

        let big_l = lat.cutoff as i64;
        let e: Vec<C64> = (-big_l..=big_l)
            .map(|l| (1..levels).map(|n| u_of(n) * state.get(n - 1, n, l)).sum())
            .collect();
        let mut full = vec![C64::new(0.0, 0.0); lat.dimension()];
        for block in layout.blocks() {
            for &g in block {
                let ix = lat.index(g);
                let mut v = u_of(ix.n + 1) * state.get(ix.m, ix.n + 1, ix.l);
                for (k, ek) in e.iter().enumerate() {
                    if ek.re == 0.0 && ek.im == 0.0 {
                        continue;
                    }
                    let lp = k as i64 - big_l;
                    v -= ek * state.get(ix.m, ix.n, ix.l - lp);
                }
                full[g] = v;
            }
        }
        let c0 = layout.gather(&full);
        let readout = (1..levels)
            .filter_map(|m| layout.position(lat.flat(m, m - 1, 0)).map(|(b, k)| (b, k, u_of(m))))
            .collect();
        Ok(Self {
            layout,
            minus_b,
            c0,
            readout,
            omega_s,
        })
    }

    /// `S_inco(omega)` before clipping.
    pub fn eval(&self, omega: f64) -> Result<f64> {
        let nu = omega - self.omega_s;
        let mut sys = self.minus_b.clone();
        sys.shift_diagonal(C64::new(0.0, nu));
        let fac = sys.factor().map_err(|_| Error::ResolventFailure { omega })?;
        let mut x = self.c0.clone();
        fac.solve(&mut x);
        let mut acc = C64::new(0.0, 0.0);
        for &(b, k, u) in &self.readout {
            acc += u * x[b][k];
        }
        if !acc.re.is_finite() {
            return Err(Error::ResolventFailure { omega });
        }
        Ok(HBAR / (4.0 * PI) * acc.re)
    }

    pub fn unknowns(&self) -> usize {
        self.layout.len()
    }
}

/// Incoherent spectrum over the grid, evaluated in parallel, with tiny
/// negative values clipped to zero.
pub fn incoherent_spectrum(
    state: &FourierState,
    gen: &FloquetGenerator,
    params: &TransmonParams,
    drive: &DriveConfig,
    cfg: &SpectrumConfig,
) -> Result<Vec<f64>> {
    let solver = IncoherentSolver::new(gen, state, params, drive.omega_s())?;
    let raw: Vec<f64> = cfg
        .grid
        .par_iter()
        .map(|&w| solver.eval(w))
        .collect::<Result<Vec<f64>>>()?;
    clip_negative(&cfg.grid, raw)
}

/// Clips negatives no larger than `CLIP_TOLERANCE * max`; anything more
/// negative is an error.
pub fn clip_negative(grid: &[f64], mut values: Vec<f64>) -> Result<Vec<f64>> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    for (v, w) in values.iter_mut().zip(grid) {
        if *v < 0.0 {
            if *v >= -CLIP_TOLERANCE * max {
                *v = 0.0;
            } else {
                return Err(Error::NegativeSpectrum {
                    omega: *w,
                    value: *v,
                    max,
                });
            }
        }
    }
    Ok(values)
}

/// `10 log10(1 + S dw_RBW / P_off)`.
pub fn normalize_psd(s_total: &[f64], cfg: &SpectrumConfig) -> Result<Vec<f64>> {
    if !(cfg.p_off > 0.0) {
        return Err(Error::InvalidParameter("background power P_off must be positive".into()));
    }
    Ok(s_total
        .iter()
        .map(|s| 10.0 * (1.0 + s.max(0.0) * cfg.rbw / cfg.p_off).log10())
        .collect())
}

/// Both channels and the PSD from an already solved steady state.
pub fn compute_spectrum(
    state: &FourierState,
    gen: &FloquetGenerator,
    params: &TransmonParams,
    drive: &DriveConfig,
    cfg: &SpectrumConfig,
) -> Result<SpectrumResult> {
    cfg.validate()?;
    let s_coherent = coherent_spectrum(state, params, drive, cfg);
    let s_incoherent = incoherent_spectrum(state, gen, params, drive, cfg)?;
    let s_total: Vec<f64> = s_coherent.iter().zip(&s_incoherent).map(|(a, b)| a + b).collect();
    let psd_n_db = normalize_psd(&s_total, cfg)?;
    Ok(SpectrumResult {
        grid: cfg.grid.clone(),
        s_coherent,
        s_incoherent,
        s_total,
        psd_n_db,
        omega_s: drive.omega_s(),
        delta: state.delta(),
        cutoff: state.cutoff(),
        levels: params.levels(),
    })
}

/// Converges the steady state from `l0` and evaluates the spectrum on the
/// final lattice.
pub fn spectrum_for(
    params: &TransmonParams,
    drive: &DriveConfig,
    cfg: &SpectrumConfig,
    l0: usize,
    opts: ConvergeOptions,
) -> Result<SpectrumResult> {
    let state = converge_harmonics(params, drive, l0, opts)?;
    let gen = assemble_generator(params, drive, state.cutoff())?;
    compute_spectrum(&state, &gen, params, drive, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::solve_steady_state;

    #[test]
    fn emission_coefficient_values() {
        let p = TransmonParams::reference(2).unwrap();
        let c = emission_coefficients(&p);
        assert_eq!(c.len(), 1);
        assert!((c[0][0] / (p.omega10() * p.gamma10()) - 1.0).abs() < 1e-15);
        let p = TransmonParams::reference(5).unwrap();
        let c = emission_coefficients(&p);
        let expected = (2.0 * p.omega10() * ang(4.5e9) * p.gamma10() * 2.0 * p.gamma10()).sqrt();
        assert!((c[0][1] / expected - 1.0).abs() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c[i][j], c[j][i]);
            }
        }
    }

    #[test]
    fn psd_normalization() {
        let mut cfg = SpectrumConfig::uniform_hz(1e9, 2e9, 3).unwrap();
        cfg.p_off = 2.0;
        cfg.rbw = 4.0;
        let psd = normalize_psd(&[0.0, 0.5, 1.0], &cfg).unwrap();
        assert_eq!(psd[0], 0.0);
        assert!((psd[1] - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!(psd[2] > psd[1]);
        cfg.p_off = 0.0;
        assert!(normalize_psd(&[0.0], &cfg).is_err());
    }

    #[test]
    fn clipping_rule() {
        let g = [1.0, 2.0, 3.0];
        assert_eq!(clip_negative(&g, vec![1.0, -1e-13, 0.5]).unwrap(), vec![1.0, 0.0, 0.5]);
        assert!(matches!(
            clip_negative(&g, vec![1.0, -1e-6, 0.5]),
            Err(Error::NegativeSpectrum { .. })
        ));
    }

    #[test]
    fn undriven_spectra_vanish() {
        let p = TransmonParams::reference(3).unwrap();
        let d = DriveConfig::rabi(ang(4.815e9), ang(4.825e9), 0.0, 0.0).unwrap();
        let cfg = SpectrumConfig::uniform_hz(4.80e9, 4.84e9, 41).unwrap();
        let r = spectrum_for(&p, &d, &cfg, 4, ConvergeOptions::default()).unwrap();
        assert!(r.s_total.iter().all(|v| *v == 0.0));
        assert!(r.psd_n_db.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn incoherent_power_sum_rule() {
        // The integral of the fluctuation spectrum equals
        // (hbar/4pi) pi C_11 (rho_11 - |rho_01|^2) for a two-level atom.
        let p = TransmonParams::new(2, ang(5e9), 0.0, ang(10e6), ang(1e6)).unwrap();
        let g = p.gamma10();
        let d = DriveConfig::single(p.omega10() + 0.3 * g, 0.7 * g).unwrap();
        let gen = assemble_generator(&p, &d, 0).unwrap();
        let st = solve_steady_state(&gen).unwrap();
        let solver = IncoherentSolver::new(&gen, &st, &p, d.omega_s()).unwrap();
        let half = 4000.0 * g;
        let n = 80001;
        let h = 2.0 * half / (n - 1) as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let w = d.omega_s() - half + h * i as f64;
            let wt = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            integral += wt * h * solver.eval(w).unwrap();
        }
        let fluct = st.population(1) - st.get(0, 1, 0).norm_sqr();
        let want = HBAR / (4.0 * PI) * PI * p.omega10() * g * fluct;
        // Lorentzian tails beyond the window carry about (2/pi)(width/half)
        assert!((integral / want - 1.0).abs() < 2e-3, "{integral} vs {want}");
    }
}
