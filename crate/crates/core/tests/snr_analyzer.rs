use cablewatch_core::channel::{build_line_model, s_parameters, CableSpec, FaultSpec, LoadSpec};
use cablewatch_core::scenario::{CableScenario, InstantDraw, Synthesizer};
use cablewatch_core::snr::{carrier_grid, mean_snr_db, parse_snr_csv, write_snr_csv, LineEnd, SnrTrace};
use cablewatch_core::state::CableState;

fn scenario() -> CableScenario {
    CableScenario::balanced("snr", CableSpec::pijf_6quad(), 12.0)
}

#[test]
fn exported_917_carrier_file_roundtrips() {
    let s = scenario();
    let syn = Synthesizer::new(&s, 8).unwrap();
    let traces = syn
        .snr(&InstantDraw {
            id: 3,
            state: CableState::SmallFault,
            load_w: 600.0,
        })
        .unwrap();
    assert_eq!(traces[0].snr_db.len(), 917);
    let mut buf = Vec::new();
    write_snr_csv(&mut buf, &traces).unwrap();
    let back = parse_snr_csv(buf.as_slice()).unwrap();
    assert_eq!(back, traces.to_vec());
    let mut again = Vec::new();
    write_snr_csv(&mut again, &back).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn three_cm_fault_lowers_mean_snr() {
    let mut s = scenario();
    s.plc.trace_sigma_db = 0.0;
    s.plc.carrier_sigma_db = 0.0;
    s.variability.perturbation_sigma = 0.0;
    let syn = Synthesizer::new(&s, 0).unwrap();
    for load_w in [200.0, 400.0, 600.0] {
        let psi2 = |state| {
            let [near, _] = syn.snr(&InstantDraw { id: 0, state, load_w }).unwrap();
            mean_snr_db(&near).unwrap()
        };
        assert!(psi2(CableState::Healthy) > psi2(CableState::LargeFault), "{load_w} W");
    }
}

fn snr_from(h: &[num_complex::Complex64], grid: &[f64], end: LineEnd) -> SnrTrace {
    SnrTrace {
        carrier_grid_hz: grid.to_vec(),
        snr_db: h.iter().map(|v| 45.0 + 20.0 * v.norm().log10()).collect(),
        end,
        instant_id: 0,
        load_w: None,
    }
}

#[test]
fn near_and_far_agree_on_a_reciprocal_line() {
    let cable = CableSpec::pijf_6quad();
    let grid = carrier_grid(2.0e6, 28.0e6, 917);
    for faults in [
        vec![],
        vec![FaultSpec::with_default_perturbation(7.0, 0.03, cable.z0_ohm)],
        vec![
            FaultSpec::with_default_perturbation(3.0, 0.005, cable.z0_ohm),
            FaultSpec::with_default_perturbation(19.0, 0.03, cable.z0_ohm),
        ],
    ] {
        let model = build_line_model(&cable, &faults, &LoadSpec::new(400.0)).unwrap();
        let s = s_parameters(&model, &grid).unwrap();
        let fwd: Vec<_> = s.iter().map(|m| m.s21).collect();
        let rev: Vec<_> = s.iter().map(|m| m.s12).collect();
        let near = mean_snr_db(&snr_from(&fwd, &grid, LineEnd::Near)).unwrap();
        let far = mean_snr_db(&snr_from(&rev, &grid, LineEnd::Far)).unwrap();
        assert!((near - far).abs() < 1e-9, "{near} vs {far}");
    }
}

#[test]
fn noise_free_simulated_ends_match() {
    let mut s = scenario();
    s.plc.trace_sigma_db = 0.0;
    s.plc.carrier_sigma_db = 0.0;
    let syn = Synthesizer::new(&s, 1).unwrap();
    let [near, far] = syn
        .snr(&InstantDraw {
            id: 1,
            state: CableState::LargeFault,
            load_w: 200.0,
        })
        .unwrap();
    assert!((mean_snr_db(&near).unwrap() - mean_snr_db(&far).unwrap()).abs() < 1e-9);
}
