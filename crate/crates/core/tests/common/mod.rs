//! Feeders and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use dispatch_conic::SolverConfig;
use dispatch_core::io::{load_feeder, load_scenario};
use dispatch_core::matrices::pcc_scaling;
use dispatch_core::model::{balanced_phasors, Bases, CMat};
use dispatch_core::{
    pipeline, ConstraintFlags, DispatchProblem, FeederModel, HorizonScenario, IndexMap,
    LineSegment, NodeSpec, Outcome, PhaseSet,
};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn ieee13() -> (FeederModel, HorizonScenario) {
    let model = load_feeder(data_dir().join("ieee13_feeder.json")).expect("feeder file");
    let scenario = load_scenario(data_dir().join("ieee13_scenario.json"), &model).expect("scenario file");
    (model, scenario)
}

pub fn phases(s: &str) -> PhaseSet {
    PhaseSet::parse(s).unwrap()
}

pub fn node(id: &str, ph: &str, vmin: f64, vmax: f64) -> NodeSpec {
    let mut n = NodeSpec::new(id, phases(ph));
    n.vmin = vmin;
    n.vmax = vmax;
    n
}

pub fn bases() -> Bases {
    Bases { kva: 1000.0, kv: 2.4 }
}

/// PCC and one load node joined by a single-phase line of impedance `z`.
pub fn two_bus(z: Complex64, vmin: f64, vmax: f64) -> FeederModel {
    FeederModel {
        nodes: vec![node("src", "a", 0.0, f64::INFINITY), node("load", "a", vmin, vmax)],
        lines: vec![LineSegment::new(0, 1, phases("a"), CMat::from_element(1, 1, z))],
        dg: Vec::new(),
        elastic: Vec::new(),
        bases: bases(),
    }
}

/// A coupled three-phase impedance with dominant diagonal.
pub fn coupled_z(scale: f64) -> CMat {
    CMat::from_fn(3, 3, |i, j| {
        if i == j {
            c(0.010, 0.030) * scale
        } else {
            c(0.003, 0.010) * scale
        }
    })
}

/// Three-phase PCC, a three-phase node, and a single-phase lateral on
/// phase b hanging off the second node.
pub fn lateral_feeder() -> FeederModel {
    let mut main = LineSegment::new(0, 1, phases("abc"), coupled_z(1.0));
    main.y_shunt = CMat::from_fn(3, 3, |i, j| if i == j { c(0.0, 2e-3) } else { c(0.0, -4e-4) });
    let mut lat = LineSegment::new(1, 2, phases("b"), CMat::from_element(1, 1, c(0.02, 0.015)));
    lat.y_shunt = CMat::from_element(1, 1, c(0.0, 5e-4));
    FeederModel {
        nodes: vec![
            node("src", "abc", 0.0, f64::INFINITY),
            node("mid", "abc", 0.0, f64::INFINITY),
            node("end", "b", 0.0, f64::INFINITY),
        ],
        lines: vec![main, lat],
        dg: Vec::new(),
        elastic: Vec::new(),
        bases: bases(),
    }
}

/// Voltages near nominal with the PCC rows set to the slot's phasors.
pub fn random_voltages(
    rng: &mut impl Rng,
    model: &FeederModel,
    scenario: &HorizonScenario,
    t: usize,
) -> DVector<Complex64> {
    let index = IndexMap::new(model);
    let a = pcc_scaling(model, scenario, t);
    DVector::from_iterator(
        index.n_tot(),
        (0..index.n_tot()).map(|k| {
            if k < index.pcc_len() {
                a[k]
            } else {
                let (_, p) = index.entry(k);
                let base = balanced_phasors(1.0, 0.0)[p.index()].arg();
                let mag = rng.random_range(0.85..1.1);
                let ang = base + rng.random_range(-0.2..0.2);
                Complex64::from_polar(mag, ang)
            }
        }),
    )
}

/// `x = D⁻¹ v` for the slot's PCC scaling.
pub fn scaled(model: &FeederModel, scenario: &HorizonScenario, t: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
    let a = pcc_scaling(model, scenario, t);
    DVector::from_iterator(v.len(), v.iter().zip(&a).map(|(x, d)| x / d))
}

pub fn outer(x: &DVector<Complex64>) -> CMat {
    x * x.adjoint()
}

pub fn solve(model: &FeederModel, scenario: &HorizonScenario, problem: DispatchProblem) -> Outcome {
    pipeline::run(model, scenario, &problem, &SolverConfig::default(), 1e-5).expect("pipeline")
}

pub fn dispatch(model: &FeederModel, scenario: &HorizonScenario, flags: ConstraintFlags) -> Outcome {
    solve(model, scenario, DispatchProblem::dispatch(flags))
}

pub fn no_flags() -> ConstraintFlags {
    ConstraintFlags::default()
}

/// Single-slot scenario with a balanced PCC at `vmag` and unit price.
pub fn one_slot(model: &FeederModel, vmag: f64) -> HorizonScenario {
    let mut s = HorizonScenario::flat(model, 1, vmag);
    s.kappa = vec![1.0];
    s
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
