use wavemix::model::{ang, DriveConfig, TransmonParams};
use wavemix::timedomain::{compare_with_floquet, OracleOptions, TRACE_DRIFT_LIMIT};

fn check(levels: usize, scale: f64, half_sep_hz: f64) {
    let p = TransmonParams::reference(levels).unwrap();
    let w = scale * p.gamma10();
    let d = DriveConfig::rabi(p.omega10() + ang(half_sep_hz), p.omega10() - ang(half_sep_hz), w, w).unwrap();
    let grid: Vec<f64> = (0..11).map(|i| p.omega10() + ang(-100e6 + 20e6 * i as f64)).collect();
    let c = compare_with_floquet(&p, &d, &grid, OracleOptions::default()).unwrap();
    assert!(c.amplitude_error <= 1e-6, "amplitudes {:e}", c.amplitude_error);
    assert!(c.spectrum_error <= 1e-4, "spectrum {:e}", c.spectrum_error);
    assert!(c.max_trace_drift <= TRACE_DRIFT_LIMIT);
    assert!(!c.positivity_violated);
}

#[test]
fn two_level_close_tones() {
    check(2, 1.0, 2.5e6);
}

#[test]
fn two_level_strong_drive() {
    check(2, 2.0, 26e6);
}

#[test]
fn three_level_weak_wide_tones() {
    check(3, 0.1, 26e6);
}

#[test]
fn three_level_strong_close_tones() {
    check(3, 2.0, 2.5e6);
}
