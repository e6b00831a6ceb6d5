mod common;

use common::*;
use dispatch_core::io::{parse_feeder, parse_scenario};
use dispatch_core::model::{balanced_phasors, validate_feeder, CMat};
use dispatch_core::{DgUnit, ElasticLoad, Error, HorizonScenario, LineSegment, Phase, PhaseSet};
use proptest::prelude::*;

const SMALL_FEEDER: &str = r#"{
  "bases": {"kva": 1000, "kv": 2.4},
  "nodes": [
    {"id": "src", "phases": "abc"},
    {"id": "mid", "phases": "abc", "vmin": 0.95, "vmax": 1.05,
     "capacitor": {"susceptance_per_phase": [0.1, 0.1, 0.1]}},
    {"id": "end", "phases": "c", "min_pf": 0.8}
  ],
  "lines": [
    {"from": "src", "to": "mid", "phases": "abc",
     "primitive_z": {"re": [[0.2,0.05,0.05,0.05],[0.05,0.2,0.05,0.05],[0.05,0.05,0.2,0.05],[0.05,0.05,0.05,0.3]],
                     "im": [[0.6,0.2,0.2,0.2],[0.2,0.6,0.2,0.2],[0.2,0.2,0.6,0.2],[0.2,0.2,0.2,0.7]]},
     "neutrals": 1, "i_max": 400},
    {"from": "mid", "to": "end", "phases": "c", "z_phase": {"re": [[0.01]], "im": [[0.02]]}}
  ],
  "dg": [{"node": "mid", "phases": "ab", "pmin": 0, "pmax": 200, "qmin": -50, "qmax": 50}],
  "elastic": [{"node": "end", "phase": "c", "energy_kwh": 30, "window": [22, 3], "cap_kw": 10}]
}"#;

fn with(text: &str, from: &str, to: &str) -> String {
    assert!(text.contains(from), "fixture lacks {from}");
    text.replacen(from, to, 1)
}

#[test]
fn small_feeder_converts_to_per_unit() {
    let model = parse_feeder(SMALL_FEEDER).unwrap();
    let zb = 2.4 * 2.4 * 1000.0 / 1000.0;
    assert_eq!(model.nodes.len(), 3);
    assert_eq!(model.lines[0].neutrals(), 1);
    assert_eq!(model.lines[0].z.nrows(), 3);
    // a single neutral row: Z_pp - z_pn z_np / z_nn
    let zpn = c(0.05, 0.2);
    let expect = (c(0.2, 0.6) - zpn * zpn / c(0.3, 0.7)) / zb;
    assert!((model.lines[0].z[(0, 0)] - expect).norm() < 1e-14);
    assert!((model.lines[0].i_max.unwrap() - 400.0 / model.bases.i_amp()).abs() < 1e-12);
    assert!((model.lines[1].z[(0, 0)] - c(0.01, 0.02)).norm() < 1e-15);
    assert_eq!(model.nodes[1].capacitor, [0.1; 3]);
    assert_eq!(model.nodes[2].min_pf, [0.8; 3]);
    assert!((model.dg[0].pmax - 0.2).abs() < 1e-15);
    assert!((model.elastic[0].energy - 0.03).abs() < 1e-15);
    assert_eq!(model.elastic[0].cap, Some(0.01));
}

#[test]
fn min_pf_on_missing_phases_is_flagged() {
    let model = parse_feeder(SMALL_FEEDER).unwrap();
    let mut s = HorizonScenario::flat(&model, 24, 1.0);
    s.dg_cost = vec![vec![0.0; 24]];
    let v = validate_feeder(&model, &s);
    assert!(v.iter().any(|x| x.message.contains("needs a positive active load")));
    for slot in &mut s.p_load {
        slot[2][2] = 0.01;
    }
    let v = validate_feeder(&model, &s);
    // the scalar PF fans out to phases a and b, which node "end" lacks
    assert_eq!(v.len(), 2, "{v:?}");
    assert!(v.iter().all(|x| x.subject == "node end" && x.message.contains("missing phase")));
}

#[test]
fn shipped_ieee13_files_validate_cleanly() {
    let (model, scenario) = ieee13();
    let v = validate_feeder(&model, &scenario);
    assert!(v.is_empty(), "{v:?}");
    assert_eq!(model.nodes[0].id, "650");
    assert_eq!(scenario.slots, 24);
}

#[test]
fn line_phase_missing_at_an_endpoint_is_one_violation() {
    let mut model = lateral_feeder();
    model.nodes[2].phases = phases("c");
    let s = one_slot(&model, 1.0);
    let v = validate_feeder(&model, &s);
    assert_eq!(v.len(), 1, "{v:?}");
    assert!(v[0].subject.starts_with("line"));
}

#[test]
fn elastic_energy_beyond_capacity_is_one_violation() {
    let mut model = two_bus(c(0.01, 0.02), 0.9, 1.1);
    model.elastic.push(ElasticLoad { node: 1, phase: Phase::A, energy: 0.31, window: (2, 4), cap: Some(0.1) });
    let s = HorizonScenario::flat(&model, 4, 1.0);
    let v = validate_feeder(&model, &s);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].subject, "elastic 0");
    model.elastic[0].energy = 0.3;
    assert!(validate_feeder(&model, &s).is_empty());
}

#[test]
fn structural_faults_are_each_reported() {
    let base = two_bus(c(0.01, 0.02), 0.9, 1.1);
    let s = one_slot(&base, 1.0);

    let mut m = base.clone();
    m.nodes[1].id = "src".into();
    assert!(validate_feeder(&m, &s).iter().any(|v| v.message == "duplicate id"));

    let mut m = base.clone();
    m.lines[0].z = CMat::zeros(1, 1);
    assert!(validate_feeder(&m, &s).iter().any(|v| v.message == "singular impedance"));

    let mut m = base.clone();
    m.lines.push(LineSegment::new(1, 0, phases("a"), CMat::from_element(1, 1, c(0.01, 0.0))));
    assert!(validate_feeder(&m, &s).iter().any(|v| v.message.contains("not a tree")));

    let mut m = base.clone();
    m.dg.push(DgUnit { node: 1, phases: phases("a"), pmin: 0.2, pmax: 0.1, qmin: 0.0, qmax: 0.0 });
    let sdg = one_slot(&m, 1.0);
    let v = validate_feeder(&m, &sdg);
    assert!(v.iter().any(|v| v.message.contains("lower limit above")));
    // the scenario lacks a cost row for the new unit
    assert!(validate_feeder(&m, &s).iter().any(|v| v.message.contains("DG cost")));

    let mut m = base.clone();
    m.nodes[1].vmin = 1.2;
    assert!(validate_feeder(&m, &s).iter().any(|v| v.message.contains("voltage limits")));

    let mut s2 = s.clone();
    s2.p_load[0][1] = [0.0, 0.1, 0.0];
    assert!(validate_feeder(&base, &s2).iter().any(|v| v.message.contains("missing phase b")));
}

#[test]
fn empty_horizon_is_flagged() {
    let model = two_bus(c(0.01, 0.02), 0.9, 1.1);
    let s = HorizonScenario::flat(&model, 0, 1.0);
    assert!(validate_feeder(&model, &s).iter().any(|v| v.message == "empty horizon"));
}

#[test]
fn malformed_files_give_typed_errors() {
    let bad_node = with(SMALL_FEEDER, r#""from": "mid", "to": "end""#, r#""from": "mid", "to": "nowhere""#);
    assert!(matches!(parse_feeder(&bad_node), Err(Error::UnknownNode(id)) if id == "nowhere"));

    let both = with(SMALL_FEEDER, r#""z_phase""#, r#""primitive_z": {"re": [[1.0]]}, "z_phase""#);
    assert!(matches!(parse_feeder(&both), Err(Error::Input(_))));

    let wrong_size = with(SMALL_FEEDER, r#""neutrals": 1"#, r#""neutrals": 2"#);
    assert!(matches!(parse_feeder(&wrong_size), Err(Error::Input(_))));

    let bad_phase = with(SMALL_FEEDER, r#""phase": "c""#, r#""phase": "x""#);
    assert!(matches!(parse_feeder(&bad_phase), Err(Error::Input(_))));

    assert!(matches!(parse_feeder("{"), Err(Error::Json(_))));

    let model = parse_feeder(SMALL_FEEDER).unwrap();
    let scenario = r#"{"T": 2, "dt_hours": 1, "kappa": [1, 2], "dg_cost": [[1, 1]],
        "loads": {"end": {"a": {"p": [1, 2], "q": [0, 0]}}},
        "pcc": {"vmag": 1.0, "angles_deg": [0, -120, 120]}}"#;
    assert!(matches!(parse_scenario(scenario, &model), Err(Error::UnknownPhase { phase: 'a', .. })));
    let short = scenario.replace(r#""a": {"p": [1, 2]"#, r#""c": {"p": [1]"#);
    assert!(matches!(parse_scenario(&short, &model), Err(Error::Input(_))));
    let fine = scenario.replace(r#""a": {"#, r#""c": {"#);
    let s = parse_scenario(&fine, &model).unwrap();
    assert!((s.p_load[1][2][2] - 0.002).abs() < 1e-15);
    assert!((s.pcc_voltage[0][1].arg().to_degrees() + 120.0).abs() < 1e-12);
    assert_eq!(s.w_v, 0.5);
}

#[test]
fn wrapping_window_covers_the_day_boundary() {
    let el = ElasticLoad { node: 1, phase: Phase::A, energy: 0.0, window: (22, 3), cap: None };
    assert_eq!(el.slots(24), vec![21, 22, 23, 0, 1, 2]);
    let plain = ElasticLoad { window: (9, 16), ..el.clone() };
    assert_eq!(plain.slots(24), (8..16).collect::<Vec<_>>());
    let out = ElasticLoad { window: (0, 3), ..el };
    assert!(out.slots(24).is_empty());
}

#[test]
fn capacitor_settings_copy_leaves_original_untouched() {
    let model = parse_feeder(SMALL_FEEDER).unwrap();
    let m2 = model.with_capacitors(&[(1, [0.2, 0.0, 0.3])]);
    assert_eq!(m2.nodes[1].capacitor, [0.2, 0.0, 0.3]);
    assert_eq!(model.nodes[1].capacitor, [0.1; 3]);
}

proptest! {
    #[test]
    fn balanced_phasors_sum_to_zero(vmag in 0.5f64..1.5, offset in -180.0f64..180.0) {
        let v = balanced_phasors(vmag, offset);
        prop_assert!((v[0] + v[1] + v[2]).norm() < 1e-12);
        for z in v {
            prop_assert!((z.norm() - vmag).abs() < 1e-12);
        }
        let lag = (v[0] / v[1]).arg().to_degrees();
        prop_assert!((lag - 120.0).abs() < 1e-9);
    }

    #[test]
    fn scaled_loads_are_linear(f in 0.0f64..20.0) {
        let (_, s) = ieee13();
        let scaled = s.scaled_loads(f);
        for (a, b) in s.p_load.iter().flatten().flatten().zip(scaled.p_load.iter().flatten().flatten()) {
            prop_assert!((a * f - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        prop_assert_eq!(&scaled.kappa, &s.kappa);
    }

    #[test]
    fn phase_set_parse_round_trips(mask in 1u8..8) {
        let text: String = Phase::ALL.iter().filter(|p| mask & (1 << p.index()) != 0).map(|p| p.letter()).collect();
        let set = PhaseSet::parse(&text).unwrap();
        prop_assert_eq!(set.to_string(), text);
        prop_assert_eq!(set.len(), mask.count_ones() as usize);
    }
}
