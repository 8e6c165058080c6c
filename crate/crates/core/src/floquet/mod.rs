//! Harmonic-balance representation of the bichromatically driven master
//! equation and its periodic steady state.
//!
//! Unknowns are `X[m,n,l] = Tr(sigma_mn rho)^{(l)}`, the l-th Fourier
//! coefficient (in `e^{i l delta t}`) of the expectation of `|m><n|` in the
//! frame rotating at the mean carrier frequency.

pub mod block;
pub mod dense;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{DriveConfig, Tone, TransmonParams};
use block::{rcond_estimate, BlockSystem, Layout, SparseRow};

/// Default harmonic cutoff for a single solve.
pub const DEFAULT_CUTOFF: usize = 20;
/// Largest cutoff tried by [`converge_harmonics`].
pub const DEFAULT_MAX_CUTOFF: usize = 512;
/// Reciprocal condition number below which the steady state is rejected.
pub const RCOND_LIMIT: f64 = 1e-14;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloquetIndex {
    pub m: usize,
    pub n: usize,
    pub l: i64,
}

/// Shape of the truncated lattice `(m, n, l)` with `|l| <= cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub levels: usize,
    pub cutoff: usize,
}

impl Lattice {
    pub fn new(levels: usize, cutoff: usize) -> Self {
        Self { levels, cutoff }
    }

    pub fn harmonics(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn dimension(&self) -> usize {
        self.levels * self.levels * self.harmonics()
    }

    #[inline]
    pub fn contains_l(&self, l: i64) -> bool {
        l.unsigned_abs() as usize <= self.cutoff
    }

    #[inline]
    pub fn flat(&self, m: usize, n: usize, l: i64) -> usize {
        (m * self.levels + n) * self.harmonics() + (l + self.cutoff as i64) as usize
    }

    pub fn index(&self, flat: usize) -> FloquetIndex {
        let h = self.harmonics();
        let pair = flat / h;
        FloquetIndex {
            m: pair / self.levels,
            n: pair % self.levels,
            l: (flat % h) as i64 - self.cutoff as i64,
        }
    }
}

/// Sparse harmonic generator `A` with `dX/dt = A X`.
#[derive(Debug, Clone)]
pub struct FloquetGenerator {
    lattice: Lattice,
    delta: f64,
    tones: [Tone; 2],
    rows: Vec<SparseRow>,
    theta: Vec<f64>,
    xi: Vec<f64>,
    parity: bool,
    trace_scale: f64,
}

impl FloquetGenerator {
    pub fn lattice(&self) -> Lattice {
        self.lattice
    }
    pub fn dimension(&self) -> usize {
        self.lattice.dimension()
    }
    pub fn cutoff(&self) -> usize {
        self.lattice.cutoff
    }
    pub fn levels(&self) -> usize {
        self.lattice.levels
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn tones(&self) -> &[Tone; 2] {
        &self.tones
    }
    /// `Theta_mn`, detuning of `|m><n|` in the rotating frame.
    pub fn detuning(&self, m: usize, n: usize) -> f64 {
        self.theta[m * self.lattice.levels + n]
    }
    /// `Xi_mn`, decay rate of `|m><n|`.
    pub fn decay(&self, m: usize, n: usize) -> f64 {
        self.xi[m * self.lattice.levels + n]
    }
    /// True when every active tone shifts the harmonic index, so amplitudes
    /// split into sectors of fixed `(m - n + l) mod 2`.
    pub fn has_parity(&self) -> bool {
        self.parity
    }
    pub fn row(&self, i: usize) -> &[(usize, C64)] {
        &self.rows[i]
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.rows[row].iter().filter(|(c, _)| *c == col).map(|(_, v)| *v).sum()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|(j, v)| v * x[*j]).sum())
            .collect()
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Block layout grouping unknowns by harmonic. `keep` filters the lattice
    /// points; the central block is l = 0.
    pub(crate) fn layout(&self, keep: impl Fn(FloquetIndex) -> bool) -> Layout {
        let lat = self.lattice;
        let mut blocks = vec![Vec::new(); lat.harmonics()];
        for m in 0..lat.levels {
            for n in 0..lat.levels {
                for l in -(lat.cutoff as i64)..=lat.cutoff as i64 {
                    if keep(FloquetIndex { m, n, l }) {
                        blocks[(l + lat.cutoff as i64) as usize].push(lat.flat(m, n, l));
                    }
                }
            }
        }
        Layout::new(lat.dimension(), blocks, lat.cutoff)
    }

    /// Whether index `ix` lies in the sector of the given parity. Always true
    /// when the generator has no parity structure.
    pub(crate) fn in_sector(&self, ix: FloquetIndex, odd: bool) -> bool {
        if !self.parity {
            return true;
        }
        let p = (ix.m as i64 - ix.n as i64 + ix.l).rem_euclid(2) == 1;
        p == odd
    }
}

/// Builds the harmonic generator.
///
/// When the carriers coincide there is no beat and the cutoff is forced to 0.
/// Two active tones at the same carrier must be merged first with
/// [`merge_degenerate_drives`].
pub fn assemble_generator(params: &TransmonParams, drive: &DriveConfig, cutoff: usize) -> Result<FloquetGenerator> {
    drive.validate()?;
    let tones = drive.tones();
    let active: Vec<&Tone> = tones.iter().filter(|t| t.amplitude.norm() > 0.0).collect();
    let delta = drive.delta();
    if drive.is_degenerate() && active.len() == 2 {
        return Err(Error::DegenerateDrive);
    }
    let cutoff = if delta == 0.0 {
        if cutoff > 0 {
            log::debug!("degenerate carriers: harmonic cutoff reduced to 0");
        }
        0
    } else {
        if cutoff == 0 && !active.is_empty() {
            return Err(Error::InvalidParameter(
                "a driven bichromatic problem needs a harmonic cutoff of at least 1".into(),
            ));
        }
        cutoff
    };
    let parity = active.iter().all(|t| t.order != 0);

    let levels = params.levels();
    let lat = Lattice::new(levels, cutoff);
    let omega_s = drive.omega_s();
    let energies = params.level_energies();
    let mut theta = vec![0.0; levels * levels];
    let mut xi = vec![0.0; levels * levels];
    for m in 0..levels {
        for n in 0..levels {
            theta[m * levels + n] = (n as f64 - m as f64) * omega_s - (energies[n] - energies[m]);
            xi[m * levels + n] = params.xi(m, n);
        }
    }

    let big_l = cutoff as i64;
    let mut rows: Vec<SparseRow> = Vec::with_capacity(lat.dimension());
    for m in 0..levels {
        for n in 0..levels {
            let th = theta[m * levels + n];
            let x = xi[m * levels + n];
            for l in -big_l..=big_l {
                let mut row: SparseRow = Vec::with_capacity(10);
                row.push((lat.flat(m, n, l), C64::new(-x, th - l as f64 * delta)));
                for t in &active {
                    let a = t.amplitude;
                    let h = t.order as i64;
                    let half_i = C64::new(0.0, 0.5);
                    if n >= 1 && lat.contains_l(l + h) {
                        row.push((lat.flat(m, n - 1, l + h), half_i * (n as f64).sqrt() * a));
                    }
                    if n + 1 < levels && lat.contains_l(l - h) {
                        row.push((lat.flat(m, n + 1, l - h), half_i * ((n + 1) as f64).sqrt() * a.conj()));
                    }
                    if m >= 1 && lat.contains_l(l - h) {
                        row.push((lat.flat(m - 1, n, l - h), -half_i * (m as f64).sqrt() * a.conj()));
                    }
                    if m + 1 < levels && lat.contains_l(l + h) {
                        row.push((lat.flat(m + 1, n, l + h), -half_i * ((m + 1) as f64).sqrt() * a));
                    }
                }
                if m + 1 < levels && n + 1 < levels {
                    let feed = (((m + 1) * (n + 1)) as f64).sqrt() / 2.0
                        * (params.relax_rate(n + 1) + params.relax_rate(m + 1));
                    row.push((lat.flat(m + 1, n + 1, l), C64::new(feed, 0.0)));
                }
                rows.push(row);
            }
        }
    }
    let trace_scale = if params.gamma10() > 0.0 { params.gamma10() } else { 1.0 };
    Ok(FloquetGenerator {
        lattice: lat,
        delta,
        tones,
        rows,
        theta,
        xi,
        parity,
        trace_scale,
    })
}

/// Collapses two tones on the same carrier into one with the summed complex
/// amplitude.
pub fn merge_degenerate_drives(drive: &DriveConfig) -> Result<DriveConfig> {
    if !drive.is_degenerate() {
        return Err(Error::InvalidParameter(
            "drives can only be merged when both carriers coincide".into(),
        ));
    }
    let (r1, r2) = drive.rabi_frequencies();
    let sum = C64::from_polar(r1, drive.phase1) + C64::from_polar(r2, drive.phase2);
    let phase = if sum.norm() > 0.0 { sum.arg() } else { 0.0 };
    Ok(DriveConfig::rabi(drive.omega1, drive.omega2, sum.norm(), 0.0)?.with_phases(phase, 0.0))
}

/// Periodic steady state on the harmonic lattice.
#[derive(Debug, Clone)]
pub struct FourierState {
    lattice: Lattice,
    delta: f64,
    amplitudes: Vec<C64>,
    pub converged: bool,
    /// `max |A X|` in rad/s.
    pub residual: f64,
    /// `max |A X| / (|A|_inf |X|_inf)`.
    pub relative_residual: f64,
    /// Reciprocal condition estimate of the constrained system.
    pub rcond: f64,
}

impl FourierState {
    /// Wraps amplitudes produced elsewhere, e.g. by projecting a time-domain
    /// trajectory. Residual and condition fields are left as NaN.
    pub fn from_amplitudes(lattice: Lattice, delta: f64, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != lattice.dimension() {
            return Err(Error::InvalidParameter(format!(
                "expected {} amplitudes, got {}",
                lattice.dimension(),
                amplitudes.len()
            )));
        }
        Ok(Self {
            lattice,
            delta,
            amplitudes,
            converged: true,
            residual: f64::NAN,
            relative_residual: f64::NAN,
            rcond: f64::NAN,
        })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }
    pub fn cutoff(&self) -> usize {
        self.lattice.cutoff
    }
    pub fn levels(&self) -> usize {
        self.lattice.levels
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// `X[m,n,l]`, zero outside the lattice.
    pub fn get(&self, m: usize, n: usize, l: i64) -> C64 {
        if m >= self.lattice.levels || n >= self.lattice.levels || !self.lattice.contains_l(l) {
            return ZERO;
        }
        self.amplitudes[self.lattice.flat(m, n, l)]
    }

    pub fn population(&self, m: usize) -> f64 {
        self.get(m, m, 0).re
    }

    pub fn trace(&self) -> C64 {
        (0..self.lattice.levels).map(|m| self.get(m, m, 0)).sum()
    }

    /// Largest `|X[m,n,l] - conj(X[n,m,-l])|`.
    pub fn hermiticity_error(&self) -> f64 {
        let lat = self.lattice;
        let mut e = 0.0f64;
        for i in 0..lat.dimension() {
            let ix = lat.index(i);
            e = e.max((self.amplitudes[i] - self.get(ix.n, ix.m, -ix.l).conj()).norm());
        }
        e
    }

    /// Largest amplitude in the odd sector `(m - n + l)` odd.
    pub fn parity_violation(&self) -> f64 {
        let lat = self.lattice;
        (0..lat.dimension())
            .filter(|&i| {
                let ix = lat.index(i);
                (ix.m as i64 - ix.n as i64 + ix.l).rem_euclid(2) == 1
            })
            .map(|i| self.amplitudes[i].norm())
            .fold(0.0, f64::max)
    }
}

/// Solves `A X = 0` with the trace fixed to one.
///
/// The (0,0,0) equation is replaced by the trace condition and the result is
/// solved blockwise over harmonics. Only the sector of even `m - n + l` can be
/// populated from the trace condition, so the odd sector is skipped when the
/// generator has parity structure.
pub fn solve_steady_state(gen: &FloquetGenerator) -> Result<FourierState> {
    let lat = gen.lattice;
    let layout = gen.layout(|ix| gen.in_sector(ix, false));
    let anchor = lat.flat(0, 0, 0);
    let scale = gen.trace_scale;
    let mut rows: Vec<SparseRow> = gen.rows.clone();
    rows[anchor] = (0..lat.levels)
        .map(|m| (lat.flat(m, m, 0), C64::new(scale, 0.0)))
        .collect();
    let sys = BlockSystem::assemble(&rows, &layout)?;
    let rcond = match rcond_estimate(&sys, &layout) {
        Ok(r) => r,
        Err(Error::Singular) => 0.0,
        Err(e) => return Err(e),
    };
    if !(rcond >= RCOND_LIMIT) {
        return Err(Error::DegenerateSteadyState { rcond });
    }
    let fac = sys.factor().map_err(|_| Error::DegenerateSteadyState { rcond: 0.0 })?;
    let mut rhs = vec![ZERO; lat.dimension()];
    rhs[anchor] = C64::new(scale, 0.0);
    let mut parts = layout.gather(&rhs);
    fac.solve(&mut parts);
    let mut x = vec![ZERO; lat.dimension()];
    layout.scatter(&parts, &mut x);

    let ax = gen.apply(&x);
    let residual = ax.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let xmax = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let relative_residual = residual / (gen.norm_inf() * xmax).max(f64::MIN_POSITIVE);

    for m in 0..lat.levels {
        let p = x[lat.flat(m, m, 0)];
        if !(p.re >= -1e-8 && p.re <= 1.0 + 1e-8) || p.im.abs() > 1e-8 {
            return Err(Error::Diagnostics(format!(
                "population of level {m} is {p}, outside [0, 1]"
            )));
        }
    }
    let coupled = gen.tones.iter().any(|t| t.amplitude.norm() > 0.0 && t.order != 0);
    Ok(FourierState {
        lattice: lat,
        delta: gen.delta,
        amplitudes: x,
        converged: !coupled,
        residual,
        relative_residual,
        rcond,
    })
}

/// Options for [`converge_harmonics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergeOptions {
    /// Max-norm change of the low harmonics that counts as converged.
    pub tol: f64,
    /// Hard cap on the cutoff.
    pub max_cutoff: usize,
}

impl Default for ConvergeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_cutoff: DEFAULT_MAX_CUTOFF,
        }
    }
}

/// Doubles the cutoff from `l0` until the harmonics `|l| <= l0` stop
/// changing. Degenerate carriers need no harmonics and return at cutoff 0.
pub fn converge_harmonics(
    params: &TransmonParams,
    drive: &DriveConfig,
    l0: usize,
    opts: ConvergeOptions,
) -> Result<FourierState> {
    if l0 == 0 {
        return Err(Error::InvalidParameter("initial cutoff must be positive".into()));
    }
    let gen = assemble_generator(params, drive, l0)?;
    let mut state = solve_steady_state(&gen)?;
    let coupled = gen.tones.iter().any(|t| t.amplitude.norm() > 0.0 && t.order != 0);
    if !coupled {
        state.converged = true;
        return Ok(state);
    }
    let mut cutoff = l0;
    let mut last_delta = f64::INFINITY;
    while cutoff < opts.max_cutoff {
        let next = (2 * cutoff).min(opts.max_cutoff);
        let gen = assemble_generator(params, drive, next)?;
        let new_state = solve_steady_state(&gen)?;
        let mut change = 0.0f64;
        let big_l = l0 as i64;
        for m in 0..params.levels() {
            for n in 0..params.levels() {
                for l in -big_l..=big_l {
                    change = change.max((new_state.get(m, n, l) - state.get(m, n, l)).norm());
                }
            }
        }
        log::debug!("harmonic cutoff {cutoff} -> {next}: change {change:.3e}");
        last_delta = change;
        state = new_state;
        cutoff = next;
        if change < opts.tol {
            state.converged = true;
            return Ok(state);
        }
    }
    Err(Error::NonConvergence {
        cutoff: opts.max_cutoff,
        last_delta,
    })
}
