use cablewatch_core::channel::CableSpec;
use cablewatch_core::dataset::synthesize_batch;
use cablewatch_core::fusion::Priors;
use cablewatch_core::reflectometry::{
    calibrate_velocity_factor, correlate, detect_peaks, generate_probe, localize, meters_per_sample, MultitoneConfig,
    Probe, Reflectogram,
};
use cablewatch_core::scenario::{CableScenario, FaultVariability, InstantDraw, Synthesizer};
use cablewatch_core::state::CableState;
use cablewatch_core::threshold::{class_means, thresholds_from_class_means, Placement};
use cablewatch_core::workbench::extract_evidence;
use cablewatch_core::{FaultSpec, Waveform};
use num_complex::Complex64;
use rustfft::FftPlanner;

fn power_spectrum(w: &Waveform) -> Vec<f64> {
    let mut buf: Vec<Complex64> = w.samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..buf.len() / 2].iter().map(|c| c.norm_sqr()).collect()
}

#[test]
fn masked_band_is_forty_db_down() {
    let cfg = MultitoneConfig::default().with_band_masked(20.0e6, 30.0e6);
    let probe = generate_probe(&cfg).unwrap();
    let spec = power_spectrum(&probe.waveform);
    let df = cfg.effective_rate_hz() / cfg.symbol_len() as f64;
    let (mut inside, mut n_in) = (0.0, 0);
    for (k, p) in spec.iter().enumerate() {
        let f = k as f64 * df;
        if (20.0e6..=30.0e6).contains(&f) {
            inside += p;
            n_in += 1;
        }
    }
    let active: Vec<f64> = cfg
        .tone_bins()
        .iter()
        .zip(&cfg.active_tone_mask)
        .filter(|(_, &on)| on)
        .map(|(&k, _)| spec[k])
        .collect();
    let active_mean = active.iter().sum::<f64>() / active.len() as f64;
    let ratio_db = 10.0 * (inside / n_in as f64 / active_mean).max(1e-300).log10();
    assert!(ratio_db <= -40.0, "masked band at {ratio_db} dB");
}

fn probe_with_echo(delay: isize, gain: f64) -> (Probe, Waveform) {
    let probe = generate_probe(&MultitoneConfig::default()).unwrap();
    let d = probe.waveform.delayed(delay);
    let mut echo = probe.waveform.clone();
    for (e, x) in echo.samples.iter_mut().zip(&d.samples) {
        *e += gain * x;
    }
    (probe, echo)
}

#[test]
fn localization_is_linear_in_delay() {
    let vf = 0.66;
    let step = meters_per_sample(&MultitoneConfig::default(), vf);
    let delays: Vec<f64> = (0..12).map(|i| 20.0 + 14.0 * i as f64).collect();
    let mut est = Vec::new();
    for &d in &delays {
        let (probe, echo) = probe_with_echo(d as isize, 0.3);
        let r = correlate(&probe, &echo, vf).unwrap();
        let peaks = detect_peaks(&r, None, 0.1).unwrap();
        let p = peaks
            .peaks
            .iter()
            .filter(|p| p.distance_m > 2.0 * step)
            .max_by(|a, b| a.magnitude.total_cmp(&b.magnitude))
            .unwrap();
        est.push(localize(p, &r).unwrap());
    }
    let n = delays.len() as f64;
    let (mx, my) = (delays.iter().sum::<f64>() / n, est.iter().sum::<f64>() / n);
    let sxy: f64 = delays.iter().zip(&est).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = delays.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    assert!((slope - step).abs() / step < 1e-3, "slope {slope} vs {step}");
    for (x, y) in delays.iter().zip(&est) {
        assert!((y - (icpt + slope * x)).abs() < 0.5 * step);
    }
}

#[test]
fn peak_at_tx_localizes_to_zero() {
    let (probe, echo) = probe_with_echo(60, 0.3);
    let r = correlate(&probe, &echo, 0.66).unwrap();
    let peaks = detect_peaks(&r, None, 0.1).unwrap();
    let tx = peaks.peaks.iter().find(|p| p.sample_index == r.tx_peak_index).unwrap();
    assert!(localize(tx, &r).unwrap().abs() < 1e-9);
}

fn single_fault_scenario(cable: CableSpec, fault_m: f64) -> CableScenario {
    let mut s = CableScenario::balanced("loc", cable, fault_m);
    s.variability = FaultVariability {
        perturbation_sigma: 0.0,
    };
    s.load_levels_w = vec![200.0];
    s.omtdr.symbols = 4;
    s
}

fn located(s: &CableScenario, seed: u64, state: CableState) -> (f64, f64) {
    let syn = Synthesizer::new(s, seed).unwrap();
    let draw = InstantDraw {
        id: 0,
        state,
        load_w: 200.0,
    };
    let base = syn.baseline(200.0).unwrap();
    let vf = calibrate_velocity_factor(&correlate(&syn.probe, &base, s.cable.velocity_factor).unwrap(), s.cable.length_m)
        .unwrap();
    let b = correlate(&syn.probe, &base, vf).unwrap();
    let r = correlate(&syn.probe, &syn.echo(&draw).unwrap(), vf).unwrap();
    let peaks = detect_peaks(&r, Some(&b), s.omtdr.peak_threshold).unwrap();
    let d = peaks
        .peaks
        .iter()
        .max_by(|a, b| a.magnitude.total_cmp(&b.magnitude))
        .map(|p| p.distance_m)
        .unwrap_or(f64::NAN);
    (d, peaks.psi3())
}

#[test]
fn long_cable_fault_lands_near_21_m() {
    let s = single_fault_scenario(CableSpec::pijf_6quad(), 21.0);
    for seed in 0..8 {
        let (d, _) = located(&s, seed, CableState::LargeFault);
        assert!((20.3..=21.2).contains(&d), "seed {seed}: {d} m");
    }
}

#[test]
fn short_cable_fault_lands_near_5_79_m() {
    let s = single_fault_scenario(CableSpec::pijf_10twp(), 5.79);
    for seed in 0..8 {
        let (d, _) = located(&s, seed, CableState::LargeFault);
        assert!((5.4..=6.0).contains(&d), "seed {seed}: {d} m");
    }
}

#[test]
fn psi3_grows_with_severity() {
    for (cable, pos) in [(CableSpec::pijf_6quad(), 12.0), (CableSpec::sym_4core(), 35.0)] {
        let s = single_fault_scenario(cable, pos);
        for seed in 0..4 {
            let psi = CableState::ALL.map(|st| located(&s, seed, st).1);
            assert!(psi[2] > psi[1] && psi[1] > psi[0], "seed {seed}: {psi:?}");
        }
    }
}

#[test]
fn large_fault_at_35_m_is_flagged_large() {
    let mut s = CableScenario::balanced("mc35", CableSpec::sym_4core(), 35.0);
    s.mix = Priors::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
    let batch = synthesize_batch(&s, [0, 0, 90], 1).unwrap();
    let ev = extract_evidence(&batch, &s, s.cable.velocity_factor).unwrap();
    let mut pools: [Vec<f64>; 3] = Default::default();
    for e in &ev {
        pools[e.state.index()].push(e.psi3.unwrap());
    }
    let th = thresholds_from_class_means(class_means(&pools).unwrap(), Placement(0.5)).unwrap();

    let large = s.faults.large_fault.clone();
    assert_eq!(large, vec![FaultSpec::with_default_perturbation(35.0, 0.03, s.cable.z0_ohm)]);
    let mut hits = 0;
    for seed in 100..200 {
        let syn = Synthesizer::new(&s, seed).unwrap();
        let draw = InstantDraw {
            id: seed,
            state: CableState::LargeFault,
            load_w: s.load_levels_w[(seed % 3) as usize],
        };
        let b = correlate(&syn.probe, &syn.baseline(draw.load_w).unwrap(), s.cable.velocity_factor).unwrap();
        let r = correlate(&syn.probe, &syn.echo(&draw).unwrap(), s.cable.velocity_factor).unwrap();
        let peaks = detect_peaks(&r, Some(&b), s.omtdr.peak_threshold).unwrap();
        if th.classify(peaks.psi3()) == CableState::LargeFault {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits} of 100 runs flagged Large");
}

#[test]
fn reflectogram_files_roundtrip() {
    let (probe, echo) = probe_with_echo(40, 0.2);
    let r = correlate(&probe, &echo, 0.66).unwrap();
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let back = Reflectogram::read_csv(csv.as_slice(), probe.config.clone(), 0.66).unwrap();
    assert_eq!(back.values, r.values);
    assert_eq!(back.tx_peak_index, r.tx_peak_index);
    let mut bin = Vec::new();
    r.write_binary(&mut bin).unwrap();
    let back = Reflectogram::read_binary(bin.as_slice(), probe.config.clone(), 0.66).unwrap();
    assert_eq!(back.values, r.values);
}
