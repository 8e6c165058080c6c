//! Brute-force reference: the master equation integrated in time with a fixed
//! RK4 step, written directly in terms of density matrices.
//!
//! Nothing here reuses the harmonic generator. The Hamiltonian, the double-sum
//! relaxation term and the dephasing term are applied as matrix products, so
//! agreement with [`crate::floquet`] checks the harmonic bookkeeping.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::floquet::{FourierState, Lattice};
use crate::model::{DriveConfig, Tone, TransmonParams, HBAR};
use crate::spectrum::emission_amplitudes;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Fraction of the shortest time scale allowed as a step.
pub const MAX_STEP_FRACTION: f64 = 1.0 / 50.0;
/// Trace drift that aborts an integration.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-7;
/// Elementwise periodicity tolerance for projection.
pub const PERIODICITY_TOL: f64 = 1e-7;

/// Square complex matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub dim: usize,
    pub data: Vec<C64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    /// `|k><k|`.
    pub fn projector(dim: usize, k: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(k, k)] = C64::new(1.0, 0.0);
        m
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut e = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                e = e.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        e
    }

    /// Whether the Hermitian part plus `shift * I` admits a Cholesky
    /// factorization, i.e. its smallest eigenvalue exceeds `-shift`.
    pub fn is_positive_shifted(&self, shift: f64) -> bool {
        let n = self.dim;
        let mut a = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = 0.5 * (self[(i, j)] + self[(j, i)].conj());
            }
            a[i * n + i] += shift;
        }
        for j in 0..n {
            let mut d = a[j * n + j].re;
            for k in 0..j {
                d -= a[j * n + k].norm_sqr();
            }
            if !(d > 0.0) {
                return false;
            }
            let d = d.sqrt();
            a[j * n + j] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= a[i * n + k] * a[j * n + k].conj();
                }
                a[i * n + j] = s / d;
            }
        }
        true
    }

    fn axpy(&mut self, a: f64, x: &Mat) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Right-hand side of the master equation in the frame rotating at the mean
/// carrier frequency.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    dim: usize,
    /// `omega_k - k omega_s`.
    energies: Vec<f64>,
    tones: [Tone; 2],
    delta: f64,
    /// `Gamma_{m,m-1}` for m = 1..M-1 (index m).
    relax: Vec<f64>,
    gamma_phi: f64,
}

impl MasterEquation {
    pub fn new(params: &TransmonParams, drive: &DriveConfig) -> Result<Self> {
        drive.validate()?;
        let dim = params.levels();
        let ws = drive.omega_s();
        let energies = params
            .level_energies()
            .iter()
            .enumerate()
            .map(|(k, e)| e - k as f64 * ws)
            .collect();
        let relax = (0..dim).map(|m| params.relax_rate(m)).collect();
        Ok(Self {
            dim,
            energies,
            tones: drive.tones(),
            delta: drive.delta(),
            relax,
            gamma_phi: params.gamma_phi(),
        })
    }

    /// Complex field envelope multiplying the raising operators.
    fn beta(&self, t: f64) -> C64 {
        self.tones
            .iter()
            .map(|tone| tone.amplitude * C64::from_polar(1.0, -(tone.order as f64) * self.delta * t))
            .sum()
    }

    /// Hamiltonian `sum_k E_k |k><k| - (1/2) sum_k sqrt(k) (beta |k><k-1| + h.c.)`.
    pub fn hamiltonian(&self, t: f64) -> Mat {
        let n = self.dim;
        let mut h = Mat::zeros(n);
        for k in 0..n {
            h[(k, k)] = C64::new(self.energies[k], 0.0);
        }
        let b = self.beta(t);
        for k in 1..n {
            let s = 0.5 * (k as f64).sqrt();
            h[(k, k - 1)] = -s * b;
            h[(k - 1, k)] = -s * b.conj();
        }
        h
    }

    /// `d rho / dt` for any operator `rho` (the map is linear, so it also
    /// propagates the non-Hermitian regression operators).
    pub fn rhs(&self, t: f64, rho: &Mat, out: &mut Mat) {
        let n = self.dim;
        let h = self.hamiltonian(t);
        // -i [H, rho]
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += h[(i, k)] * rho[(k, j)] - rho[(i, k)] * h[(k, j)];
                }
                out[(i, j)] = C64::new(acc.im, -acc.re);
            }
        }
        // sum_{m,n} sqrt(mn) Gamma_m / 2 ([L_m rho, L_n^+] + [L_n, rho L_m^+])
        // with L_m = |m-1><m|; written out as matrix elements.
        for m in 1..n {
            for q in 1..n {
                let c = ((m * q) as f64).sqrt() * self.relax[m] / 2.0;
                if c == 0.0 {
                    continue;
                }
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = ZERO;
                        // L_m rho L_q^+ : |m-1><m| rho |q><q-1|
                        if i == m - 1 && j == q - 1 {
                            acc += rho[(m, q)];
                        }
                        // - L_q^+ L_m rho : |q><q-1|m-1><m| rho, needs q == m
                        if q == m && i == q {
                            acc -= rho[(m, j)];
                        }
                        // L_q rho L_m^+ : |q-1><q| rho |m><m-1|
                        if i == q - 1 && j == m - 1 {
                            acc += rho[(q, m)];
                        }
                        // - rho L_m^+ L_q : rho |m><m-1|q-1><q|, needs q == m
                        if q == m && j == m {
                            acc -= rho[(i, m)];
                        }
                        out[(i, j)] += c * acc;
                    }
                }
            }
        }
        // Gamma_phi ([N rho, N] + [N, rho N])
        if self.gamma_phi > 0.0 {
            for i in 0..n {
                for j in 0..n {
                    let (a, b) = (i as f64, j as f64);
                    out[(i, j)] += self.gamma_phi * (2.0 * a * b - a * a - b * b) * rho[(i, j)];
                }
            }
        }
    }

    /// One classical RK4 step.
    pub fn step(&self, t: f64, dt: f64, rho: &mut Mat, scratch: &mut [Mat; 5]) {
        let [k1, k2, k3, k4, tmp] = scratch;
        self.rhs(t, rho, k1);
        tmp.data.copy_from_slice(&rho.data);
        tmp.axpy(dt / 2.0, k1);
        self.rhs(t + dt / 2.0, tmp, k2);
        tmp.data.copy_from_slice(&rho.data);
        tmp.axpy(dt / 2.0, k2);
        self.rhs(t + dt / 2.0, tmp, k3);
        tmp.data.copy_from_slice(&rho.data);
        tmp.axpy(dt, k3);
        self.rhs(t + dt, tmp, k4);
        for i in 0..rho.data.len() {
            rho.data[i] += dt / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
        }
    }

    /// Largest oscillation frequency in the rotating frame, including the
    /// level detunings.
    fn fastest_rate(&self) -> f64 {
        let mut w = 0.0f64;
        for a in &self.energies {
            for b in &self.energies {
                w = w.max((a - b).abs());
            }
        }
        w
    }

    fn scratch(&self) -> [Mat; 5] {
        std::array::from_fn(|_| Mat::zeros(self.dim))
    }
}

/// Largest admissible step: a fiftieth of the beat period, the Rabi period
/// and the shortest decay time.
pub fn max_step(params: &TransmonParams, drive: &DriveConfig) -> f64 {
    let (r1, r2) = drive.rabi_frequencies();
    let mut scales = vec![1.0 / params.max_decay_rate()];
    if drive.delta() != 0.0 {
        scales.push(2.0 * PI / drive.delta().abs());
    }
    let rmax = r1.max(r2);
    if rmax > 0.0 {
        scales.push(2.0 * PI / rmax);
    }
    MAX_STEP_FRACTION * scales.into_iter().fold(f64::INFINITY, f64::min)
}

/// Step used by the automatic drivers: the admissible bound, tightened so
/// level detunings are also resolved, then split into `accuracy` substeps.
pub fn default_step(params: &TransmonParams, drive: &DriveConfig, accuracy: f64) -> Result<f64> {
    let eq = MasterEquation::new(params, drive)?;
    let mut dt = max_step(params, drive);
    let fast = eq.fastest_rate() + drive.rabi_frequencies().0 + drive.rabi_frequencies().1;
    if fast > 0.0 {
        dt = dt.min(0.05 / fast);
    }
    Ok(dt / accuracy.max(1.0))
}

#[derive(Debug, Clone)]
pub struct DensityMatrixTrajectory {
    /// Sample times covering the final recording window, both ends included.
    pub times: Vec<f64>,
    pub rho: Vec<Mat>,
    /// `2 pi / |delta|`, or `None` for a single carrier.
    pub beat_period: Option<f64>,
    pub delta: f64,
    pub dt: f64,
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    /// Whether any recorded state had an eigenvalue below -1e-8.
    pub positivity_violated: bool,
}

impl DensityMatrixTrajectory {
    pub fn last(&self) -> &Mat {
        self.rho.last().expect("trajectory has samples")
    }
}

/// Integrates from the ground state to `t_end`, recording every step of the
/// final beat period (or of the final `1/Gamma_10` for a single carrier).
///
/// `t_end` is rounded up to a whole number of steps; when there is a beat the
/// step is shrunk so that one period is a whole number of steps.
pub fn integrate_master_equation(
    params: &TransmonParams,
    drive: &DriveConfig,
    t_end: f64,
    dt: f64,
) -> Result<DensityMatrixTrajectory> {
    integrate_from(params, drive, Mat::projector(params.levels(), 0), t_end, dt, true)
}

/// As [`integrate_master_equation`] with an explicit initial state. When
/// `check_duration` is false the minimum-duration rule is skipped, which is
/// useful for transient tests.
pub fn integrate_from(
    params: &TransmonParams,
    drive: &DriveConfig,
    rho0: Mat,
    t_end: f64,
    dt: f64,
    check_duration: bool,
) -> Result<DensityMatrixTrajectory> {
    let bound = max_step(params, drive);
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::StepSize(format!("dt = {dt:.3e} s exceeds the bound {bound:.3e} s")));
    }
    if check_duration && params.gamma10() > 0.0 && t_end < 20.0 / params.gamma10() * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "t_end = {t_end:.3e} s is shorter than 20 / Gamma_10"
        )));
    }
    let eq = MasterEquation::new(params, drive)?;
    let delta = drive.delta();
    let beat_period = (delta != 0.0).then(|| 2.0 * PI / delta.abs());
    let (dt, window_steps) = match beat_period {
        Some(t) => {
            // a multiple of 256 so start-time meshes up to 256 land on samples
            let per = ((t / dt / 256.0).ceil() as usize).max(1) * 256;
            (t / per as f64, per)
        }
        None => {
            let w = if params.gamma10() > 0.0 {
                1.0 / params.gamma10()
            } else {
                t_end / 4.0
            };
            (dt, ((w / dt).ceil() as usize).max(64))
        }
    };
    let total = ((t_end / dt).ceil() as usize).max(window_steps);
    let start_record = total - window_steps;

    let mut rho = rho0;
    let mut scratch = eq.scratch();
    let mut times = Vec::with_capacity(window_steps + 1);
    let mut states = Vec::with_capacity(window_steps + 1);
    let mut max_drift = 0.0f64;
    let mut max_herm = 0.0f64;
    let mut positivity_violated = false;
    let tr0 = rho.trace();
    let record = |k: usize, rho: &Mat, times: &mut Vec<f64>, states: &mut Vec<Mat>| {
        times.push(k as f64 * dt);
        states.push(rho.clone());
    };
    for k in 0..total {
        if k == start_record {
            record(k, &rho, &mut times, &mut states);
        }
        eq.step(k as f64 * dt, dt, &mut rho, &mut scratch);
        let drift = (rho.trace() - tr0).norm();
        max_drift = max_drift.max(drift);
        if drift > TRACE_DRIFT_LIMIT {
            return Err(Error::Accuracy(format!(
                "trace drifted by {drift:.3e} at t = {:.3e} s",
                (k + 1) as f64 * dt
            )));
        }
        if !rho.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Accuracy("state is no longer finite".into()));
        }
        if k + 1 > start_record {
            max_herm = max_herm.max(rho.hermiticity_error());
            if !rho.is_positive_shifted(1e-8) {
                positivity_violated = true;
            }
            record(k + 1, &rho, &mut times, &mut states);
        }
    }
    if positivity_violated {
        log::warn!("density matrix left the positive cone by more than 1e-8");
    }
    Ok(DensityMatrixTrajectory {
        times,
        rho: states,
        beat_period,
        delta,
        dt,
        max_trace_drift: max_drift,
        max_hermiticity_error: max_herm,
        positivity_violated,
    })
}

/// Longest time the oracle integrates before giving up on stationarity.
fn settle_time(params: &TransmonParams) -> f64 {
    // the slowest relaxation is bounded below by the smallest nonzero decay;
    // 40 of those leave transients far below 1e-12
    let slow = (0..params.levels())
        .flat_map(|m| (0..params.levels()).map(move |n| (m, n)))
        .map(|(m, n)| params.xi(m, n))
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min);
    40.0 / slow
}

/// Integrates long enough that the final beat period is periodic, choosing
/// the duration and step automatically. `accuracy` divides the step.
pub fn steady_trajectory(params: &TransmonParams, drive: &DriveConfig, accuracy: f64) -> Result<DensityMatrixTrajectory> {
    let dt = default_step(params, drive, accuracy)?;
    let mut t_end = settle_time(params).max(20.0 / params.gamma10().max(f64::MIN_POSITIVE));
    if drive.delta() != 0.0 {
        let t = 2.0 * PI / drive.delta().abs();
        t_end = ((t_end / t).ceil() + 1.0) * t;
    }
    integrate_master_equation(params, drive, t_end, dt)
}

/// Elementwise `|rho(t_end) - rho(t_end - T)|`.
pub fn periodicity_error(traj: &DensityMatrixTrajectory) -> f64 {
    traj.rho[0].max_abs_diff(traj.last())
}

/// Fourier amplitudes `X[m,n,l]` of the recorded period by the periodic
/// trapezoid rule.
pub fn fourier_project(traj: &DensityMatrixTrajectory, cutoff: usize) -> Result<FourierState> {
    let deviation = periodicity_error(traj);
    if deviation > PERIODICITY_TOL {
        return Err(Error::NonPeriodic { deviation });
    }
    let dim = traj.last().dim;
    let (cutoff, delta) = if traj.beat_period.is_some() {
        (cutoff, traj.delta)
    } else {
        (0, 0.0)
    };
    let lat = Lattice::new(dim, cutoff);
    let samples = traj.rho.len() - 1;
    let mut amps = vec![ZERO; lat.dimension()];
    for l in -(cutoff as i64)..=cutoff as i64 {
        let phases: Vec<C64> = traj.times[..samples]
            .iter()
            .map(|t| C64::from_polar(1.0 / samples as f64, -(l as f64) * delta * t))
            .collect();
        for m in 0..dim {
            for n in 0..dim {
                // Tr(|m><n| rho) = rho_nm
                let v: C64 = traj.rho[..samples]
                    .iter()
                    .zip(&phases)
                    .map(|(r, p)| r[(n, m)] * p)
                    .sum();
                amps[lat.flat(m, n, l)] = v;
            }
        }
    }
    FourierState::from_amplitudes(lat, delta, amps)
}

/// Options for [`incoherent_spectrum_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Starting number of start times per beat period.
    pub start_times: usize,
    /// Largest start-time mesh tried.
    pub max_start_times: usize,
    /// Relative change between meshes accepted as converged.
    pub mesh_tol: f64,
    /// Correlations are propagated until they fall below this fraction of
    /// their initial size.
    pub decay_floor: f64,
    /// Step refinement factor.
    pub accuracy: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            start_times: 16,
            max_start_times: 256,
            mesh_tol: 1e-7,
            decay_floor: 1e-12,
            accuracy: 2.0,
        }
    }
}

/// Minimum decay the correlation must reach inside the window.
pub const WINDOW_DECAY: f64 = 1e-4;

/// Incoherent spectrum by propagating two-time correlations in the time
/// domain and averaging over start times across one beat period.
pub fn incoherent_spectrum_oracle(
    params: &TransmonParams,
    drive: &DriveConfig,
    grid: &[f64],
    opts: OracleOptions,
) -> Result<Vec<f64>> {
    let traj = steady_trajectory(params, drive, opts.accuracy)?;
    let dev = periodicity_error(&traj);
    if dev > PERIODICITY_TOL {
        return Err(Error::NonPeriodic { deviation: dev });
    }
    let eq = MasterEquation::new(params, drive)?;
    let u = emission_amplitudes(params);
    let nu: Vec<f64> = grid.iter().map(|w| w - drive.omega_s()).collect();
    let samples = traj.rho.len() - 1;

    let spectrum_at = |k: usize| -> Result<Vec<f64>> {
        let rho = &traj.rho[k];
        let t0 = traj.times[k];
        correlation_spectrum(&eq, rho, t0, traj.dt, &u, &nu, opts, params)
    };

    if traj.beat_period.is_none() {
        let s = spectrum_at(samples)?;
        return Ok(s.into_iter().map(|v| HBAR / (4.0 * PI) * v).collect());
    }

    let mut mesh = opts.start_times.max(1);
    let mut cache: std::collections::BTreeMap<usize, Vec<f64>> = std::collections::BTreeMap::new();
    let mut previous: Option<Vec<f64>> = None;
    loop {
        if samples % mesh != 0 {
            return Err(Error::InvalidParameter(format!(
                "start-time mesh {mesh} does not divide the {samples} samples per period"
            )));
        }
        let stride = samples / mesh;
        let needed: Vec<usize> = (0..mesh).map(|j| j * stride).filter(|k| !cache.contains_key(k)).collect();
        let fresh: Vec<(usize, Vec<f64>)> = needed
            .par_iter()
            .map(|&k| spectrum_at(k).map(|s| (k, s)))
            .collect::<Result<Vec<_>>>()?;
        cache.extend(fresh);
        let mut avg = vec![0.0; grid.len()];
        for j in 0..mesh {
            for (a, v) in avg.iter_mut().zip(&cache[&(j * stride)]) {
                *a += v / mesh as f64;
            }
        }
        let avg: Vec<f64> = avg.into_iter().map(|v| HBAR / (4.0 * PI) * v).collect();
        if let Some(prev) = &previous {
            let scale = avg.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let change = avg.iter().zip(prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change <= opts.mesh_tol * scale || scale == 0.0 {
                return Ok(avg);
            }
            if 2 * mesh > opts.max_start_times {
                log::warn!("start-time average not converged: change {change:.3e} of {scale:.3e}");
                return Ok(avg);
            }
        }
        previous = Some(avg);
        mesh *= 2;
        if mesh > opts.max_start_times {
            return Ok(previous.unwrap());
        }
    }
}

/// `Re int_0^inf g(tau) e^{-i nu tau} dtau` for one start time, where
/// `g(tau) = Tr(A^+ Lambda(tau))` and `Lambda(0) = A rho - <A> rho`.
#[allow(clippy::too_many_arguments)]
fn correlation_spectrum(
    eq: &MasterEquation,
    rho: &Mat,
    t0: f64,
    dt: f64,
    u: &[f64],
    nu: &[f64],
    opts: OracleOptions,
    params: &TransmonParams,
) -> Result<Vec<f64>> {
    let dim = rho.dim;
    // A = sum_n u_n |n-1><n|
    let mut lam = Mat::zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            if i + 1 < dim {
                lam[(i, j)] = u[i] * rho[(i + 1, j)];
            }
        }
    }
    let mean: C64 = (1..dim).map(|n| u[n - 1] * rho[(n, n - 1)]).sum();
    for (l, r) in lam.data.iter_mut().zip(&rho.data) {
        *l -= mean * r;
    }
    let readout = |x: &Mat| -> C64 { (1..dim).map(|m| u[m - 1] * x[(m - 1, m)]).sum() };
    let size = |x: &Mat| x.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let initial = size(&lam);
    if initial == 0.0 {
        return Ok(vec![0.0; nu.len()]);
    }
    let slow = (0..dim)
        .flat_map(|m| (0..dim).map(move |n| (m, n)))
        .map(|(m, n)| params.xi(m, n))
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min);
    let tau_cap = 400.0 / slow;
    let max_steps = (tau_cap / dt).ceil() as usize;

    let mut g = vec![readout(&lam)];
    let mut scratch = eq.scratch();
    let mut k = 0usize;
    let mut smallest = 1.0f64;
    loop {
        eq.step(t0 + k as f64 * dt, dt, &mut lam, &mut scratch);
        k += 1;
        g.push(readout(&lam));
        let ratio = size(&lam) / initial;
        smallest = smallest.min(ratio);
        // Simpson needs an even number of intervals
        if ratio < opts.decay_floor && k % 2 == 0 {
            break;
        }
        if k >= max_steps {
            if smallest > WINDOW_DECAY {
                return Err(Error::Window { ratio: smallest });
            }
            if k % 2 == 0 {
                break;
            }
        }
    }
    let n = g.len() - 1;
    Ok(nu
        .iter()
        .map(|&w| {
            let rot = C64::from_polar(1.0, -w * dt);
            let mut ph = C64::new(1.0, 0.0);
            let mut acc = ZERO;
            for (j, gj) in g.iter().enumerate() {
                let wgt = if j == 0 || j == n {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += wgt * gj * ph;
                ph *= rot;
                if j % 256 == 255 {
                    ph = C64::from_polar(1.0, -w * dt * (j + 1) as f64);
                }
            }
            (acc * dt / 3.0).re
        })
        .collect())
}

/// Outcome of checking the harmonic solution against the time-domain
/// reference on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub cutoff: usize,
    /// Largest relative amplitude error over amplitudes above `AMPLITUDE_FLOOR`.
    pub amplitude_error: f64,
    /// Largest incoherent-spectrum difference relative to the spectrum maximum.
    pub spectrum_error: f64,
    pub max_trace_drift: f64,
    pub positivity_violated: bool,
}

/// Amplitudes smaller than this are excluded from relative comparisons.
pub const AMPLITUDE_FLOOR: f64 = 1e-10;

/// Solves one instance both ways and reports the discrepancies.
pub fn compare_with_floquet(
    params: &TransmonParams,
    drive: &DriveConfig,
    grid: &[f64],
    opts: OracleOptions,
) -> Result<OracleComparison> {
    use crate::floquet::{assemble_generator, converge_harmonics, ConvergeOptions};
    use crate::spectrum::{incoherent_spectrum, SpectrumConfig};

    let state = converge_harmonics(params, drive, 8, ConvergeOptions::default())?;
    let traj = steady_trajectory(params, drive, opts.accuracy)?;
    let proj = fourier_project(&traj, state.cutoff())?;
    let lat = state.lattice();
    let mut amplitude_error = 0.0f64;
    for (flat, a) in state.amplitudes().iter().enumerate() {
        if a.norm() > AMPLITUDE_FLOOR {
            let ix = lat.index(flat);
            let b = proj.get(ix.m, ix.n, ix.l);
            amplitude_error = amplitude_error.max((a - b).norm() / a.norm());
        }
    }
    let gen = assemble_generator(params, drive, state.cutoff())?;
    let fl = incoherent_spectrum(&state, &gen, params, drive, &SpectrumConfig::new(grid.to_vec()))?;
    let or = incoherent_spectrum_oracle(params, drive, grid, opts)?;
    let scale = or.iter().chain(&fl).cloned().fold(0.0, f64::max);
    let spectrum_error = if scale > 0.0 {
        fl.iter().zip(&or).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    } else {
        0.0
    };
    Ok(OracleComparison {
        cutoff: state.cutoff(),
        amplitude_error,
        spectrum_error,
        max_trace_drift: traj.max_trace_drift,
        positivity_violated: traj.positivity_violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ang;

    #[test]
    fn free_decay_is_exponential() {
        let p = TransmonParams::reference(3).unwrap();
        let d = DriveConfig::single(p.omega10(), 0.0).unwrap();
        let dt = max_step(&p, &d) / 4.0;
        let t_end = 3.0 / p.gamma10();
        let traj = integrate_from(&p, &d, Mat::projector(3, 1), t_end, dt, false).unwrap();
        for (t, r) in traj.times.iter().zip(&traj.rho) {
            let want = (-p.gamma10() * t).exp();
            assert!((r[(1, 1)].re / want - 1.0).abs() < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn lossless_rabi_flopping_period() {
        let p = TransmonParams::new(2, ang(5e9), 0.0, 0.0, 0.0).unwrap();
        let w = ang(10e6);
        let d = DriveConfig::single(p.omega10(), w).unwrap();
        let dt = max_step(&p, &d) / 10.0;
        let period = 2.0 * PI / w;
        let traj = integrate_from(&p, &d, Mat::projector(2, 0), 1.25 * period, dt, false).unwrap();
        // record window covers the final quarter; population at the end of a
        // full period plus a quarter is sin^2(pi/4) = 1/2
        let last = traj.last()[(1, 1)].re;
        let t = *traj.times.last().unwrap();
        let want = (w * t / 2.0).sin().powi(2);
        assert!((last - want).abs() < 1e-6, "{last} vs {want}");
    }

    #[test]
    fn oversized_step_is_rejected() {
        let p = TransmonParams::reference(2).unwrap();
        let d = DriveConfig::single(p.omega10(), 1e8).unwrap();
        let dt = 2.0 * max_step(&p, &d);
        assert!(matches!(
            integrate_master_equation(&p, &d, 1e-6, dt),
            Err(Error::StepSize(_))
        ));
    }

    #[test]
    fn projection_isolates_harmonics() {
        let delta = ang(2.5e6);
        let period = 2.0 * PI / delta;
        let n = 128;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * period / n as f64).collect();
        let rho = times
            .iter()
            .map(|t| {
                let mut m = Mat::zeros(2);
                m[(0, 0)] = C64::new(0.75, 0.0);
                m[(1, 1)] = C64::new(0.25, 0.0);
                m[(1, 0)] = C64::from_polar(1.0, 2.0 * delta * t);
                m
            })
            .collect();
        let traj = DensityMatrixTrajectory {
            times,
            rho,
            beat_period: Some(period),
            delta,
            dt: period / n as f64,
            max_trace_drift: 0.0,
            max_hermiticity_error: 0.0,
            positivity_violated: false,
        };
        let s = fourier_project(&traj, 4).unwrap();
        assert!((s.get(0, 1, 2) - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((s.get(0, 0, 0) - C64::new(0.75, 0.0)).norm() < 1e-12);
        for l in [-4, -3, -2, -1, 0, 1, 3, 4] {
            assert!(s.get(0, 1, l).norm() < 1e-12, "l = {l}");
        }
        for l in [1, 2, 3] {
            assert!(s.get(0, 0, l).norm() < 1e-12);
        }
    }

    #[test]
    fn non_periodic_trajectory_is_rejected() {
        let p = TransmonParams::reference(2).unwrap();
        let d = DriveConfig::rabi(ang(4.82e9), ang(4.80e9), p.gamma10(), p.gamma10()).unwrap();
        let dt = max_step(&p, &d) / 2.0;
        let traj = integrate_from(&p, &d, Mat::projector(2, 0), 0.1 / p.gamma10(), dt, false).unwrap();
        assert!(matches!(fourier_project(&traj, 3), Err(Error::NonPeriodic { .. })));
    }

    #[test]
    fn undriven_oracle_spectrum_is_zero() {
        let p = TransmonParams::reference(2).unwrap();
        let d = DriveConfig::single(p.omega10(), 0.0).unwrap();
        let grid = [p.omega10() - 1e8, p.omega10(), p.omega10() + 1e8];
        let s = incoherent_spectrum_oracle(&p, &d, &grid, OracleOptions::default()).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn positivity_check() {
        let mut m = Mat::projector(2, 0);
        assert!(m.is_positive_shifted(1e-8));
        m[(1, 1)] = C64::new(-1e-6, 0.0);
        assert!(!m.is_positive_shifted(1e-8));
    }
}
