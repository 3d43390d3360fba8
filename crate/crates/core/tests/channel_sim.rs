use cablewatch_core::channel::{
    build_line_model, dft_grid, impulse_response, input_reflection_response, realize, synthesize_echo,
    synthesize_echo_clean, transmission_response, CableSpec, FaultSpec, LoadSpec,
};
use cablewatch_core::reflectometry::{correlate, generate_probe, MultitoneConfig};
use cablewatch_core::state::CableState;
use proptest::prelude::*;

const C0: f64 = 299_792_458.0;
const RATE: f64 = 160.0e6;
const N: usize = 2048;

fn delay_samples(cable: &CableSpec, distance_m: f64) -> f64 {
    2.0 * distance_m / (cable.velocity_factor * C0) * RATE
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn mean_abs(v: &[num_complex::Complex64]) -> f64 {
    v.iter().map(|c| c.norm()).sum::<f64>() / v.len() as f64
}

#[test]
fn seventy_metre_line_shows_events_at_fault_delays() {
    let cable = CableSpec::sym_4core();
    let z0 = cable.z0_ohm;
    let faults = [
        FaultSpec::with_default_perturbation(35.0, 0.005, z0),
        FaultSpec::with_default_perturbation(69.5, 0.03, z0),
    ];
    let model = build_line_model(&cable, &faults, &LoadSpec::matched_to(z0)).unwrap();
    let real = realize(&model, &dft_grid(RATE, N), 0).unwrap();
    let h: Vec<f64> = impulse_response(&real, RATE).unwrap().iter().map(|v| v.abs()).collect();
    let floor = {
        let mut s = h.clone();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    for pos in [35.0, 69.5] {
        let k = delay_samples(&cable, pos).round() as usize;
        let local = h[k - 1..=k + 1].iter().cloned().fold(0.0, f64::max);
        let window_max = h[k - 6..=k + 6].iter().cloned().fold(0.0, f64::max);
        assert_eq!(local, window_max, "event at {pos} m is not near sample {k}");
        assert!(local > 20.0 * floor, "event at {pos} m: {local} vs floor {floor}");
    }
}

#[test]
fn ripple_period_matches_fault_distance() {
    let cable = CableSpec::pijf_6quad();
    let z0 = cable.z0_ohm;
    let v = cable.velocity_factor * C0;
    let faults = [FaultSpec::with_default_perturbation(21.0, 0.03, z0)];
    // A port mismatch at the input makes the fault echo beat against it.
    let model = build_line_model(&cable, &faults, &LoadSpec::matched_to(z0))
        .unwrap()
        .with_reference(50.0);
    let grid = linspace(1.0e6, 50.0e6, 4096);
    let mag: Vec<f64> = input_reflection_response(&model, &grid)
        .unwrap()
        .iter()
        .map(|g| g.norm())
        .collect();
    let mean = mag.iter().sum::<f64>() / mag.len() as f64;
    // Direct transform of the ripple over candidate round-trip delays.
    let spectrum = |tau: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (f, m) in grid.iter().zip(&mag) {
            let ph = 2.0 * std::f64::consts::PI * f * tau;
            re += (m - mean) * ph.cos();
            im += (m - mean) * ph.sin();
        }
        re.hypot(im)
    };
    let taus: Vec<f64> = (0..3000).map(|i| 100e-9 + i as f64 * 0.1e-9).collect();
    let best = taus
        .iter()
        .cloned()
        .max_by(|a, b| spectrum(*a).total_cmp(&spectrum(*b)))
        .unwrap();
    let period = 1.0 / best;
    let expected = v / (2.0 * 21.0);
    assert!(
        (period - expected).abs() / expected < 0.02,
        "ripple period {period} Hz, expected {expected} Hz"
    );
}

#[test]
fn faults_lower_the_transmission() {
    let cable = CableSpec::pijf_6quad();
    let z0 = cable.z0_ohm;
    let grid = linspace(2.0e6, 40.0e6, 191);
    let load = LoadSpec::new(400.0);
    for pos in [3.0, 12.0, 21.0] {
        let h = |faults: &[FaultSpec]| {
            let m = build_line_model(&cable, faults, &load).unwrap();
            mean_abs(&transmission_response(&m, &grid).unwrap())
        };
        let healthy = h(&[]);
        let small = h(&[FaultSpec::with_default_perturbation(pos, 0.005, z0)]);
        let large = h(&[FaultSpec::with_default_perturbation(pos, 0.03, z0)]);
        assert!(healthy > small && small > large, "{pos} m: {healthy} {small} {large}");
    }
}

#[test]
fn isolated_fault_echo_delay_matches_geometry() {
    let cable = CableSpec::sym_4core();
    let z0 = cable.z0_ohm;
    let probe = generate_probe(&MultitoneConfig::default()).unwrap();
    let grid = dft_grid(probe.waveform.sample_rate_hz, probe.waveform.len());
    for pos in [5.0, 17.5, 30.0, 48.0, 61.0] {
        let faults = [FaultSpec::with_default_perturbation(pos, 0.03, z0)];
        let model = build_line_model(&cable, &faults, &LoadSpec::matched_to(z0)).unwrap();
        let real = realize(&model, &grid, 0).unwrap();
        let echo = synthesize_echo_clean(&probe.waveform, &real).unwrap();
        let r = correlate(&probe, &echo, cable.velocity_factor).unwrap();
        let (k, _) = r
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let lag = k as f64 - r.zero_lag_index as f64;
        let expected = delay_samples(&cable, pos);
        assert!((lag - expected).abs() <= 1.0, "{pos} m: lag {lag}, expected {expected}");
    }
}

#[test]
fn realizations_and_echoes_are_deterministic() {
    let cable = CableSpec::pijf_10twp();
    let faults = [FaultSpec::with_default_perturbation(5.79, 0.03, cable.z0_ohm)];
    let model = build_line_model(&cable, &faults, &LoadSpec::new(200.0)).unwrap();
    let probe = generate_probe(&MultitoneConfig::default()).unwrap();
    let grid = dft_grid(probe.waveform.sample_rate_hz, probe.waveform.len());
    let a = realize(&model, &grid, 9).unwrap();
    let b = realize(&model, &grid, 9).unwrap();
    assert_eq!(a, b);
    let ea = synthesize_echo(&probe.waveform, &a, 20.0, 9).unwrap();
    let eb = synthesize_echo(&probe.waveform, &b, 20.0, 9).unwrap();
    assert_eq!(ea, eb);
    assert_ne!(ea, synthesize_echo(&probe.waveform, &a, 20.0, 10).unwrap());
}

fn fault_strategy() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0f64..23.0, prop_oneof![Just(0.001), Just(0.005), Just(0.01), Just(0.03), Just(0.3)], 0.0f64..200.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn input_reflection_is_passive(
        faults in proptest::collection::vec(fault_strategy(), 0..4),
        load_w in prop_oneof![Just(None), (1.0f64..600.0).prop_map(Some)],
        reference in 20.0f64..200.0,
    ) {
        let cable = CableSpec::pijf_6quad();
        let faults: Vec<FaultSpec> = faults
            .into_iter()
            .map(|(pos, extent, z)| FaultSpec {
                position_m: pos,
                extent_m: extent,
                severity_class: CableState::from_extent(extent),
                z_perturbation_ohm: z,
            })
            .collect();
        let load = load_w.map(LoadSpec::new).unwrap_or_else(LoadSpec::open);
        if let Ok(model) = build_line_model(&cable, &faults, &load) {
            let model = model.with_reference(reference);
            let grid = linspace(0.1e6, 80.0e6, 64);
            for g in input_reflection_response(&model, &grid).unwrap() {
                prop_assert!(g.norm() <= 1.0 + 1e-9, "|gamma| = {}", g.norm());
            }
        }
    }
}
