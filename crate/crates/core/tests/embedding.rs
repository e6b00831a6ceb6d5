mod common;

use common::*;
use dispatch_conic::{solve as conic_solve, ConstraintKind, SolverConfig, SolverStatus};
use dispatch_core::embed::{
    assemble, assemble_dispatch, assemble_feasibility, embed_matrix, real_embedding,
    structure_constraints,
};
use dispatch_core::model::CMat;
use dispatch_core::recovery::{extract_hermitian, leading_vector, rank1_check, recover_voltages};
use dispatch_core::{
    ConstraintFlags, DgUnit, DispatchProblem, ElasticLoad, Error, FeederModel, HorizonScenario,
    Phase, SystemMatrices,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn random_complex(rng: &mut impl Rng, n: usize, m: usize) -> CMat {
    CMat::from_fn(n, m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMat {
    let a = random_complex(rng, n, n);
    (&a + a.adjoint()) * c(0.5, 0.0)
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[test]
fn embedding_preserves_trace_inner_product() {
    let mut r = rng(1);
    for _ in 0..50 {
        let h = random_hermitian(&mut r, 5);
        let g = random_complex(&mut r, 5, 3);
        let x = &g * g.adjoint();
        let lhs = real_embedding(&h).unwrap().dot_dense(&embed_matrix(&x));
        let rhs = (&h * &x).trace();
        assert!(rhs.im.abs() < 1e-12);
        assert!((lhs - rhs.re).abs() < 1e-12 * rhs.re.abs().max(1.0));
    }
}

#[test]
fn real_matrix_embeds_block_diagonally() {
    let a = DMatrix::from_fn(4, 4, |i, j| (i + j) as f64 * 0.3 - 1.0);
    let h = (&a + a.transpose()).map(|v| c(v, 0.0));
    let s = real_embedding(&h).unwrap();
    assert!(!s.entries.is_empty());
    assert!(s.entries.iter().all(|&(i, j, _)| (i < 4) == (j < 4)));
}

#[test]
fn non_hermitian_matrix_is_rejected() {
    let mut h = CMat::identity(3, 3);
    h[(0, 1)] = c(0.0, 1.0);
    assert!(matches!(real_embedding(&h), Err(Error::NotHermitian(_))));
}

#[test]
fn rank_one_matrix_embeds_with_double_eigenvalue() {
    let x = random_complex(&mut rng(2), 4, 1);
    let xx = &x * x.adjoint();
    let ev = sorted_eigenvalues(&embed_matrix(&xx));
    let norm2 = x.norm_squared();
    assert!((ev[0] - norm2).abs() < 1e-12 * norm2);
    assert!((ev[1] - norm2).abs() < 1e-12 * norm2);
    assert!(ev[2..].iter().all(|v| v.abs() < 1e-12 * norm2));
}

#[test]
fn structured_block_round_trips_to_the_complex_matrix() {
    let x = random_complex(&mut rng(3), 5, 1);
    let xx = &x * x.adjoint();
    let back = extract_hermitian(&embed_matrix(&xx)).unwrap();
    assert!((back - &xx).camax() < 1e-15);
}

#[test]
fn unstructured_real_block_is_rejected() {
    let mut s = embed_matrix(&CMat::identity(2, 2));
    s[(0, 1)] = 0.3;
    assert!(matches!(extract_hermitian(&s), Err(Error::Structure(_))));
    assert!(extract_hermitian(&DMatrix::identity(3, 3)).is_err());
}

#[test]
fn rank_ratio_examples() {
    let x = random_complex(&mut rng(4), 6, 1);
    let (ok, ratio) = rank1_check(&(&x * x.adjoint()), 1e-5);
    assert!(ok && ratio < 1e-14);
    let d = CMat::from_diagonal(&DVector::from_vec(vec![c(1.0, 0.0), c(0.5, 0.0)]));
    assert_eq!(rank1_check(&d, 1e-5), (false, 0.5));
    let (ok, ratio) = rank1_check(&CMat::zeros(3, 3), 1e-5);
    assert!(!ok && ratio.is_infinite());
}

#[test]
fn wrong_anchor_is_reported() {
    let x = DVector::from_vec(vec![c(0.9, 0.0), c(0.8, -0.1)]);
    let scale = [c(1.0, 0.0), c(1.0, 0.0)];
    assert!(matches!(
        recover_voltages(&(&x * x.adjoint()), &scale, 1),
        Err(Error::Anchoring(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hermitian_psd_round_trip(seed in 0u64..100_000, n in 1usize..7, k in 1usize..4) {
        let g = random_complex(&mut rng(seed), n, k);
        let x = &g * g.adjoint();
        let back = extract_hermitian(&embed_matrix(&x)).unwrap();
        prop_assert!((back - &x).camax() < 1e-12 * x.camax().max(1.0));
    }

    #[test]
    fn voltages_round_trip_through_outer_product(
        seed in 0u64..100_000,
        free in 1usize..6,
        angle in -3.0f64..3.0,
    ) {
        let mut r = rng(seed);
        let pcc = [Complex64::from_polar(1.02, angle), Complex64::from_polar(0.98, angle - 2.1)];
        let mut x = random_complex(&mut r, 2 + free, 1).column(0).into_owned();
        x[0] = c(1.0, 0.0);
        x[1] = c(1.0, 0.0);
        let scale: Vec<Complex64> = (0..x.len()).map(|k| if k < 2 { pcc[k] } else { c(1.0, 0.0) }).collect();
        let v = recover_voltages(&(&x * x.adjoint()), &scale, 2).unwrap();
        for k in 0..x.len() {
            prop_assert!((v[k] - scale[k] * x[k]).norm() < 1e-10);
        }
        let lead = leading_vector(&(&x * x.adjoint())).unwrap();
        prop_assert!(lead[0].im.abs() < 1e-12 && lead[0].re > 0.0);
    }
}

fn audit_feeder() -> (FeederModel, HorizonScenario) {
    let mut model = two_bus(c(0.01, 0.02), 0.9, 1.1);
    model.lines[0].i_max = Some(2.0);
    model.lines[0].p_loss_max = Some(0.05);
    model.nodes[1].min_pf = [0.9, 0.0, 0.0];
    model.dg.push(DgUnit { node: 1, phases: phases("a"), pmin: 0.0, pmax: 0.2, qmin: -0.1, qmax: 0.1 });
    model.elastic.push(ElasticLoad { node: 1, phase: Phase::A, energy: 0.05, window: (1, 1), cap: Some(0.1) });
    let mut s = one_slot(&model, 1.0);
    s.p_load[0][1] = [0.3, 0.0, 0.0];
    s.q_load[0][1] = [0.1, 0.0, 0.0];
    s.pcc_min_pf = vec![[0.8, 0.0, 0.0]];
    (model, s)
}

#[test]
fn one_slot_without_units_has_only_balance_rows() {
    let model = two_bus(c(0.01, 0.02), 0.0, f64::INFINITY);
    let mut s = one_slot(&model, 1.0);
    s.p_load[0][1] = [0.3, 0.0, 0.0];
    let mats = SystemMatrices::build(&model, &s).unwrap();
    let a = assemble_dispatch(&mats, &model, &s, ConstraintFlags::default()).unwrap();
    assert_eq!(a.program.blocks.len(), 1);
    assert!(a.program.blocks[0].complex_structure);
    assert_eq!(a.program.n_scalar, 0);
    assert_eq!(a.program.constraints.len(), a.program.count(ConstraintKind::Eq));
    let balance = a.program.constraints.iter().filter(|c| c.label.starts_with("balance")).count();
    let anchor = a.program.constraints.iter().filter(|c| c.label.starts_with("anchor")).count();
    assert_eq!((balance, anchor, a.program.constraints.len()), (2, 1, 3));
}

#[test]
fn constraint_count_matches_hand_count() {
    let (model, s) = audit_feeder();
    let mats = SystemMatrices::build(&model, &s).unwrap();
    let all = ConstraintFlags::parse_list("thermal,neutral,pcc-pf,node-pf").unwrap();
    let a = assemble_dispatch(&mats, &model, &s, all).unwrap();
    // anchor 1, DG P and Q boxes 4, voltage 2, PCC PF 2, current and loss 2,
    // node PF 3, elastic cap and energy 2
    assert_eq!(a.program.constraints.len(), 16);
    assert_eq!(a.program.count(ConstraintKind::Eq), 5);
    assert_eq!(a.program.count(ConstraintKind::Le), 6);
    assert_eq!(a.program.count(ConstraintKind::Ge), 5);
    assert_eq!(a.program.blocks.len(), 2);
    assert_eq!(a.program.n_scalar, 1);
    assert_eq!(a.layout.node_pf_blocks.len(), 1);

    let f = assemble_feasibility(&mats, &model, &s, all, 0.5).unwrap();
    // voltage rows replaced by a deviation block with two rows
    assert_eq!(f.program.constraints.len(), 16);
    assert_eq!(f.program.blocks.len(), 3);
    assert_eq!(f.layout.deviation_blocks.len(), 1);
    assert!(!f.program.constraints.iter().any(|c| c.label.starts_with("voltage")));
}

#[test]
fn deviation_weight_must_lie_strictly_inside_unit_interval() {
    let (model, s) = audit_feeder();
    let mats = SystemMatrices::build(&model, &s).unwrap();
    for w in [0.0, 1.0, -0.2, f64::NAN] {
        let p = DispatchProblem::feasibility(ConstraintFlags::default(), w);
        assert!(assemble(&mats, &model, &s, &p).is_err(), "w_v = {w}");
    }
}

#[test]
fn unknown_constraint_family_is_rejected() {
    assert!(ConstraintFlags::parse_list("pcc-pf, voltage").is_err());
    let f = ConstraintFlags::parse_list(" thermal ,node-pf").unwrap();
    assert!(f.thermal && f.node_pf && !f.pcc_pf && !f.neutral);
}

#[test]
fn pcc_rows_use_tangent_of_power_factor_angle() {
    let (model, s) = audit_feeder();
    let mats = SystemMatrices::build(&model, &s).unwrap();
    let flags = ConstraintFlags::parse_list("pcc-pf").unwrap();
    let a = assemble_dispatch(&mats, &model, &s, flags).unwrap();
    let row = a.program.constraints.iter().find(|c| c.label.starts_with("pcc-pf-lag")).unwrap();
    // on any rank-1 point the row evaluates to 0.75 P0 - Q0
    let x = DVector::from_vec(vec![c(1.0, 0.0), c(0.97, -0.02)]);
    let m = embed_matrix(&(&x * x.adjoint()));
    let phi = &mats.slot(0).phi[0];
    let (p0, q0) = (
        dispatch_core::matrices::quad_form(&phi.p, &x),
        dispatch_core::matrices::quad_form(&phi.q, &x),
    );
    let got = row.expr.eval(std::slice::from_ref(&m), &[0.0]);
    assert!((got - (0.75 * p0 - q0)).abs() < 1e-12 * p0.abs().max(1.0));
}

#[test]
fn explicit_structure_rows_give_the_same_optimum() {
    let (model, s) = audit_feeder();
    let mats = SystemMatrices::build(&model, &s).unwrap();
    let a = assemble_dispatch(&mats, &model, &s, ConstraintFlags::parse_list("pcc-pf").unwrap()).unwrap();
    let mut explicit = a.program.clone();
    let rows = structure_constraints(&explicit);
    assert_eq!(rows.len(), 2 * 3);
    for blk in &mut explicit.blocks {
        blk.complex_structure = false;
    }
    for (e, label) in rows {
        explicit.add_constraint(e, ConstraintKind::Eq, 0.0, label);
    }
    let cfg = SolverConfig::default();
    let implicit = conic_solve(&a.program, &cfg).unwrap();
    let with_rows = conic_solve(&explicit, &cfg).unwrap();
    assert_eq!(implicit.status, SolverStatus::Optimal);
    assert_eq!(with_rows.status, SolverStatus::Optimal);
    assert!(rel_err(implicit.objective, with_rows.objective) < 1e-6);
}
