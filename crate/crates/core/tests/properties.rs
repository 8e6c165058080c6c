use num_complex::Complex64 as C64;
use proptest::prelude::*;

use wavemix::floquet::{assemble_generator, converge_harmonics, solve_steady_state, ConvergeOptions};
use wavemix::model::*;
use wavemix::spectroscopy::reflection_single_tone;
use wavemix::spectrum::*;
use wavemix::sweep::{detect_peaks, run_sweep, Axis, SweepSpec};

fn params(levels: usize) -> TransmonParams {
    TransmonParams::reference(levels).unwrap()
}

fn symmetric_grid(center: f64, half_width: f64, points: usize) -> Vec<f64> {
    let h = 2.0 * half_width / (points - 1) as f64;
    (0..points).map(|i| center - half_width + h * i as f64).collect()
}

fn spectrum(p: &TransmonParams, d: &DriveConfig, grid: Vec<f64>) -> SpectrumResult {
    spectrum_for(p, d, &SpectrumConfig::new(grid), 8, ConvergeOptions::default()).unwrap()
}

/// Largest pointwise difference between `a` and the reversed `b`, relative
/// to the largest value.
fn mirror_mismatch(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().cloned().fold(0.0, f64::max);
    a.iter().zip(b.iter().rev()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ladder_spacing_and_rates(
        f10 in 3e9..8e9f64,
        ec in 50e6..400e6f64,
        g in 1e6..60e6f64,
        levels in 2usize..7,
    ) {
        let l = derive_ladder(ang(f10), ec, ang(g), levels).unwrap();
        for m in 1..levels {
            let w = l.transition_freqs[m - 1];
            prop_assert!((hz(w) - (f10 - (m - 1) as f64 * ec)).abs() <= 1e-6 * f10);
            prop_assert!((l.relax_rates[m - 1] - m as f64 * ang(g)).abs() <= 1e-12 * ang(g) * m as f64);
            prop_assert!((l.level_energies[m] - l.level_energies[m - 1] - w).abs() <= 1e-6 * w);
        }
        prop_assert!(!l.inverted_anharmonicity);
    }

    #[test]
    fn decoherence_is_symmetric(m in 0usize..5, n in 0usize..5, gphi in 0.0..5e6f64) {
        let p = params(5).with_gamma_phi(ang(gphi)).unwrap();
        prop_assert_eq!(p.decoherence_rate(m, n).unwrap(), p.decoherence_rate(n, m).unwrap());
    }

    #[test]
    fn square_root_power_law(p_dbm in -160.0..-90.0f64, k in 1e10..1e15f64) {
        let a = rabi_from_power(p_dbm, k);
        let b = rabi_from_power(p_dbm + 20.0 * 2f64.log10(), k);
        prop_assert!((b / a - 2.0).abs() < 1e-12);
        prop_assert!((power_from_rabi(a, k) - p_dbm).abs() < 1e-9);
    }

    #[test]
    fn psd_is_monotone_in_power(a in 0.0..1e-20f64, b in 0.0..1e-20f64, poff in 1e-22..1e-16f64) {
        let mut cfg = SpectrumConfig::uniform_hz(4.8e9, 4.9e9, 2).unwrap();
        cfg.p_off = poff;
        let v = normalize_psd(&[a, b], &cfg).unwrap();
        prop_assert!(v[0] >= 0.0 && v[1] >= 0.0);
        prop_assert_eq!(a < b, v[0] < v[1]);
    }

    #[test]
    fn clipping_only_removes_round_off(v in prop::collection::vec(0.0..1.0f64, 2..40), idx in 0usize..40, neg in 0.0..1.0f64) {
        let mut v = v;
        let i = idx % v.len();
        let max = v.iter().cloned().fold(0.0, f64::max);
        let grid: Vec<f64> = (0..v.len()).map(|k| k as f64).collect();
        v[i] = -neg * CLIP_TOLERANCE * max;
        let c = clip_negative(&grid, v.clone()).unwrap();
        prop_assert!(c.iter().all(|x| *x >= 0.0));
        if max > 0.0 {
            v[i] = -10.0 * CLIP_TOLERANCE * max;
            prop_assert!(clip_negative(&grid, v).is_err());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fourier_state_invariants(
        levels in 2usize..5,
        r1 in 0.05..2.5f64,
        r2 in 0.05..2.5f64,
        f1 in -40e6..40e6f64,
        sep in 2e6..60e6f64,
    ) {
        let p = params(levels);
        let d = DriveConfig::rabi(
            p.omega10() + ang(f1),
            p.omega10() + ang(f1 + sep),
            r1 * p.gamma10(),
            r2 * p.gamma10(),
        ).unwrap();
        let s = converge_harmonics(&p, &d, 8, ConvergeOptions::default()).unwrap();
        prop_assert!((s.trace() - C64::new(1.0, 0.0)).norm() < 1e-10);
        prop_assert!(s.hermiticity_error() < 1e-10);
        prop_assert_eq!(s.parity_violation(), 0.0);
        for m in 0..levels {
            let x = s.population(m);
            prop_assert!((-1e-10..=1.0 + 1e-10).contains(&x));
        }
    }

    #[test]
    fn single_tone_reflection_is_passive(levels in 2usize..5, det in -300e6..300e6f64, r in 1e-3..20.0f64) {
        let p = params(levels);
        let v = reflection_single_tone(&p, p.omega10() + ang(det), r * p.gamma10()).unwrap();
        prop_assert!(v.norm() <= 1.0 + 1e-6, "{}", v);
    }

    #[test]
    fn mirror_symmetry_of_two_level_atom(r1 in 0.1..2.0f64, r2 in 0.1..2.0f64, half in 1e6..20e6f64) {
        let p = params(2);
        let a = DriveConfig::rabi(p.omega10() - ang(half), p.omega10() + ang(half), r1 * p.gamma10(), r2 * p.gamma10()).unwrap();
        let b = DriveConfig::rabi(p.omega10() - ang(half), p.omega10() + ang(half), r2 * p.gamma10(), r1 * p.gamma10()).unwrap();
        let grid = symmetric_grid(p.omega10(), ang(80e6), 41);
        let sa = spectrum(&p, &a, grid.clone());
        let sb = spectrum(&p, &b, grid);
        prop_assert!(mirror_mismatch(&sa.s_incoherent, &sb.s_incoherent) <= 1e-8);
        prop_assert!(mirror_mismatch(&sa.s_coherent, &sb.s_coherent) <= 1e-8);
    }
}

#[test]
fn transmon_breaks_mirror_symmetry() {
    let p = params(5);
    let w = p.gamma10();
    let a = DriveConfig::rabi(p.omega10() - ang(5e6), p.omega10() + ang(5e6), 0.7 * w, 1.4 * w).unwrap();
    let b = DriveConfig::rabi(p.omega10() - ang(5e6), p.omega10() + ang(5e6), 1.4 * w, 0.7 * w).unwrap();
    let grid = symmetric_grid(p.omega10(), ang(80e6), 41);
    let sa = spectrum(&p, &a, grid.clone());
    let sb = spectrum(&p, &b, grid);
    assert!(mirror_mismatch(&sa.s_total, &sb.s_total) > 1e-3);
}

#[test]
fn swapped_drive_reverses_harmonics_for_transmon() {
    let p = params(4);
    let d = DriveConfig::rabi(ang(4.81e9), ang(4.834e9), 0.9 * p.gamma10(), 0.4 * p.gamma10()).unwrap();
    let a = solve_steady_state(&assemble_generator(&p, &d, 12).unwrap()).unwrap();
    let b = solve_steady_state(&assemble_generator(&p, &d.swapped(), 12).unwrap()).unwrap();
    for m in 0..4 {
        for n in 0..4 {
            for l in -12..=12 {
                assert!((a.get(m, n, l) - b.get(m, n, -l)).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn peaks_are_sorted_and_near_their_labels() {
    let p = params(5);
    let d = DriveConfig::rabi(ang(4.815e9), ang(4.825e9), p.gamma10(), p.gamma10()).unwrap();
    let cfg = SpectrumConfig::uniform_hz(4.74e9, 4.90e9, 1601).unwrap();
    let r = spectrum_for(&p, &d, &cfg, 8, ConvergeOptions::default()).unwrap();
    let peaks = detect_peaks(&r, 0.05).unwrap();
    assert!(peaks.len() >= 4);
    let step = r.grid[1] - r.grid[0];
    for w in peaks.windows(2) {
        assert!(w[0].freq < w[1].freq);
    }
    for pk in peaks.iter().filter(|p| p.harmonic.is_some()) {
        let l = pk.harmonic.unwrap();
        let target = r.omega_s + l as f64 * r.delta;
        assert!((pk.freq - target).abs() <= 0.5 * step * (1.0 + 1e-9));
    }
    let classified: Vec<f64> = peaks.iter().filter(|p| p.harmonic.is_some()).map(|p| p.freq).collect();
    for w in classified.windows(2) {
        assert!((w[1] - w[0] - 2.0 * r.delta.abs()).abs() <= step * (1.0 + 1e-9));
    }
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let p = params(3);
    let spec = SweepSpec {
        axis: Axis::Omega2Freq,
        values: SweepSpec::linspace(4.82e9, 4.83e9, 6).unwrap(),
        params: p.clone(),
        drive: DriveConfig::rabi(ang(4.82e9), ang(4.82e9), 0.5 * p.gamma10(), 0.5 * p.gamma10()).unwrap(),
        spectrum: SpectrumConfig::uniform_hz(4.79e9, 4.85e9, 121).unwrap(),
        adaptive: true,
        cutoff: 8,
        converge: ConvergeOptions::default(),
        min_prominence_db: 0.05,
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_sweep(&spec).unwrap());
    let b = four.install(|| run_sweep(&spec).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.failed_rows(), 0);
    // the first row has coincident carriers and is solved as a single tone
    assert_eq!(a.rows[0].cutoff(), Some(0));
}
