mod common;

use common::*;
use dispatch_core::loadflow::{
    admittance_with_capacitors, brute_force_opf, power_mismatch, zbus_fixed_point, GridOutcome,
    SearchGrid, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use dispatch_core::{DgUnit, ElasticLoad, Error, Phase};
use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;

fn pcc(v: &[Complex64; 3], n: usize) -> Vec<Complex64> {
    v[..n].to_vec()
}

#[test]
fn zero_injections_give_the_linear_solution() {
    let mut model = lateral_feeder();
    model.nodes[1].capacitor = [0.01, 0.02, 0.0];
    let scenario = one_slot(&model, 1.02);
    let y = admittance_with_capacitors(&model).unwrap();
    let v0 = pcc(&scenario.pcc_voltage[0], 3);
    let v = zbus_fixed_point(&y, &[c(0.0, 0.0); 4], &v0, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    // every non-PCC row of Y v must vanish
    let i = &y * &v;
    assert!(i.rows(3, 4).iter().all(|z| z.norm() < 1e-12));
    assert!((0..3).all(|k| v[k] == v0[k]));
    // capacitors raise the voltage above the source
    assert!(v[3].norm() > 1.02);
}

#[test]
fn capacitor_susceptance_lands_on_the_diagonal() {
    let mut model = lateral_feeder();
    model.nodes[2].capacitor = [0.0, 0.05, 0.0];
    let plain = dispatch_core::matrices::build_system_admittance(&model).unwrap();
    let with = admittance_with_capacitors(&model).unwrap();
    let diff = &with - &plain;
    assert!((diff[(6, 6)] - c(0.0, 0.05)).norm() < 1e-15);
    assert_eq!(diff.iter().filter(|z| z.norm() > 0.0).count(), 1);
}

#[test]
fn wrong_injection_count_is_an_input_error() {
    let model = two_bus(c(0.01, 0.02), 0.0, 2.0);
    let y = admittance_with_capacitors(&model).unwrap();
    let r = zbus_fixed_point(&y, &[c(0.0, 0.0); 2], &[c(1.0, 0.0)], DEFAULT_TOL, DEFAULT_MAX_ITER);
    assert!(matches!(r, Err(Error::Input(_))));
}

#[test]
fn overload_beyond_the_nose_diverges() {
    let model = two_bus(c(0.05, 0.10), 0.0, 2.0);
    let y = admittance_with_capacitors(&model).unwrap();
    // far beyond the maximum transferable power of the line
    let r = zbus_fixed_point(&y, &[c(-20.0, -10.0)], &[c(1.0, 0.0)], DEFAULT_TOL, DEFAULT_MAX_ITER);
    assert!(matches!(r, Err(Error::LoadFlowDiverged { iterations: 200, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_point_meets_injections(p in -0.5f64..0.3, q in -0.3f64..0.3, r in 0.005f64..0.05, x in 0.01f64..0.1) {
        let model = two_bus(c(r, x), 0.0, 2.0);
        let y = admittance_with_capacitors(&model).unwrap();
        let s = [c(p, q)];
        let v = zbus_fixed_point(&y, &s, &[c(1.0, 0.0)], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let mismatch = power_mismatch(&y, &v);
        prop_assert!((mismatch[1] - s[0]).norm() < 10.0 * DEFAULT_TOL);
    }

    #[test]
    fn fixed_point_meets_injections_on_three_phase_lateral(seed in 0u64..10_000) {
        let model = lateral_feeder();
        let scenario = one_slot(&model, 1.0);
        let y = admittance_with_capacitors(&model).unwrap();
        let mut gen = rng(seed);
        let s: Vec<Complex64> = (0..4)
            .map(|_| {
                use rand::Rng;
                c(gen.random_range(-0.4..0.1), gen.random_range(-0.2..0.2))
            })
            .collect();
        let v = zbus_fixed_point(&y, &s, &pcc(&scenario.pcc_voltage[0], 3), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let mismatch = power_mismatch(&y, &v);
        for k in 0..4 {
            prop_assert!((mismatch[3 + k] - s[k]).norm() < 10.0 * DEFAULT_TOL);
        }
    }
}

/// Receiving-end voltage magnitude and sending-end active power of a
/// single line feeding a constant-power load `P + jQ` from a 1.0 p.u.
/// source, from the quartic `|V|⁴ + (2(rP + xQ) - 1)|V|² + |z|²|S|² = 0`.
fn analytic_drop(r: f64, x: f64, p: f64, q: f64) -> (f64, f64) {
    let b = 2.0 * (r * p + x * q) - 1.0;
    let c0 = (r * r + x * x) * (p * p + q * q);
    let v2 = (-b + (b * b - 4.0 * c0).sqrt()) / 2.0;
    (v2.sqrt(), p + r * (p * p + q * q) / v2)
}

fn fine_grid(vmin: f64, vmax: f64, eq_tol: f64) -> SearchGrid {
    SearchGrid {
        vmag_min: vmin,
        vmag_max: vmax,
        vmag_step: 1e-4,
        angle_min_deg: -6.0,
        angle_max_deg: 0.0,
        angle_step_deg: 0.01,
        eq_tol,
    }
}

#[test]
fn grid_search_reproduces_analytic_voltage_drop() {
    let (r, x, p, q) = (0.05, 0.10, 0.5, 0.2);
    let model = two_bus(c(r, x), 0.0, 2.0);
    let mut s = one_slot(&model, 1.0);
    s.p_load[0][1] = [p, 0.0, 0.0];
    s.q_load[0][1] = [q, 0.0, 0.0];
    let eq_tol = 1.5e-3;
    let out = brute_force_opf(&model, &s, 0, &fine_grid(0.90, 1.0, eq_tol)).unwrap();
    let GridOutcome::Optimal(best) = out else { panic!("expected a feasible point") };
    let (vmag, p0) = analytic_drop(r, x, p, q);
    let mw = model.bases.mw();
    assert!((best.objective - mw * p0).abs() <= 2.0 * mw * eq_tol, "{} vs {}", best.objective, mw * p0);
    assert!((best.voltages[1].norm() - vmag).abs() < 2e-3);
}

#[test]
fn expensive_generation_stops_on_the_voltage_floor() {
    let mut model = two_bus(c(0.05, 0.10), 0.96, 1.05);
    model.dg.push(DgUnit { node: 1, phases: phases("a"), pmin: 0.0, pmax: 1.0, qmin: 0.0, qmax: 0.0 });
    let mut s = one_slot(&model, 1.0);
    s.p_load[0][1] = [0.8, 0.0, 0.0];
    s.q_load[0][1] = [0.3, 0.0, 0.0];
    s.dg_cost = vec![vec![100.0]];
    let (unaided, _) = analytic_drop(0.05, 0.10, 0.8, 0.3);
    assert!(unaided < 0.96);
    let out = brute_force_opf(&model, &s, 0, &fine_grid(0.95, 1.0, 1.5e-3)).unwrap();
    let GridOutcome::Optimal(best) = out else { panic!("expected a feasible point") };
    assert!((best.voltages[1].norm() - 0.96).abs() < 2e-4);
    assert!(best.feasible_points > 1);
}

#[test]
fn unreachable_voltage_window_is_infeasible() {
    let model = two_bus(c(0.05, 0.10), 1.05, 1.06);
    let mut s = one_slot(&model, 1.0);
    s.p_load[0][1] = [0.5, 0.0, 0.0];
    s.q_load[0][1] = [0.2, 0.0, 0.0];
    let out = brute_force_opf(&model, &s, 0, &fine_grid(0.9, 1.1, 1.5e-3)).unwrap();
    assert_eq!(out, GridOutcome::Infeasible);
}

#[test]
fn grid_search_refuses_large_or_elastic_instances() {
    let model = lateral_feeder();
    let s = one_slot(&model, 1.0);
    assert!(brute_force_opf(&model, &s, 0, &fine_grid(0.9, 1.0, 1e-3)).is_err());
    let mut model = two_bus(c(0.05, 0.10), 0.9, 1.1);
    model.elastic.push(ElasticLoad { node: 1, phase: Phase::A, energy: 0.1, window: (1, 1), cap: None });
    let s = one_slot(&model, 1.0);
    assert!(brute_force_opf(&model, &s, 0, &fine_grid(0.9, 1.0, 1e-3)).is_err());
}

#[test]
fn thermal_limit_prunes_grid_points() {
    let mut model = two_bus(c(0.05, 0.10), 0.9, 1.1);
    model.dg.push(DgUnit { node: 1, phases: phases("a"), pmin: 0.0, pmax: 1.0, qmin: 0.0, qmax: 0.0 });
    let mut s = one_slot(&model, 1.0);
    s.p_load[0][1] = [0.8, 0.0, 0.0];
    s.dg_cost = vec![vec![100.0]];
    let grid = fine_grid(0.9, 1.0, 1.5e-3);
    let GridOutcome::Optimal(free) = brute_force_opf(&model, &s, 0, &grid).unwrap() else { panic!() };
    model.lines[0].i_max = Some(0.5);
    let GridOutcome::Optimal(capped) = brute_force_opf(&model, &s, 0, &grid).unwrap() else { panic!() };
    let current = |v: &DVector<Complex64>| ((v[0] - v[1]) / c(0.05, 0.10)).norm();
    assert!(current(&free.voltages) > 0.5);
    assert!(current(&capped.voltages) <= 0.5);
    assert!(capped.objective > free.objective);
}
