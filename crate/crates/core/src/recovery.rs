//! Rank checks and recovery of physical quantities from solved programs.

use dispatch_conic::{SolverResult, SolverStatus};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::embed::{AssembledProgram, EntryBlock};
use crate::error::{Error, Result};
use crate::matrices::{quad_form, trace_product, SystemMatrices};
use crate::model::{CMat, FeederModel, HorizonScenario};

pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-5;

/// Complex matrix `S11 + j S21` of a structured real block.
pub fn extract_hermitian(s: &DMatrix<f64>) -> Result<CMat> {
    let m = s.nrows();
    if m % 2 != 0 || s.ncols() != m {
        return Err(Error::Structure(f64::INFINITY));
    }
    let n = m / 2;
    let scale = s.amax().max(1.0);
    let mut dev: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            dev = dev.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((s[(i, j)] - s[(n + i, n + j)]).abs());
            dev = dev.max((s[(i, n + j)] + s[(n + i, j)]).abs());
        }
    }
    if dev > 1e-6 * scale {
        return Err(Error::Structure(dev));
    }
    let mut x = CMat::from_fn(n, n, |i, j| {
        let re = 0.5 * (s[(i, j)] + s[(n + i, n + j)]);
        let im = 0.5 * (s[(n + i, j)] - s[(i, n + j)]);
        Complex64::new(re, im)
    });
    for i in 0..n {
        x[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = 0.5 * (x[(i, j)] + x[(j, i)].conj());
            x[(i, j)] = v;
            x[(j, i)] = v.conj();
        }
    }
    Ok(x)
}

/// Eigenvalues in descending order with matching eigenvectors.
fn sorted_eigen(x: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(x.clone());
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = CMat::from_fn(x.nrows(), x.nrows(), |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

/// Returns whether `λ₂/λ₁ <= threshold`, and the ratio. A non-positive
/// leading eigenvalue gives `(false, ∞)`.
pub fn rank1_check(x: &CMat, threshold: f64) -> (bool, f64) {
    let (vals, _) = sorted_eigen(x);
    if vals.is_empty() || !(vals[0] > 0.0) {
        return (false, f64::INFINITY);
    }
    let ratio = if vals.len() > 1 { vals[1].max(0.0) / vals[0] } else { 0.0 };
    (ratio <= threshold, ratio)
}

/// Leading scaled vector `√λ₁ u₁`, rotated so its first entry is real and
/// positive.
pub fn leading_vector(x: &CMat) -> Result<DVector<Complex64>> {
    let (vals, vecs) = sorted_eigen(x);
    let l1 = vals.first().copied().unwrap_or(0.0);
    if !(l1 > 0.0) {
        return Err(Error::Degenerate(l1));
    }
    let mut u: DVector<Complex64> = vecs.column(0).into_owned();
    if let Some(first) = u.iter().find(|c| c.norm() > 1e-12).copied() {
        let rot = first.conj() / first.norm();
        u *= rot;
    }
    Ok(u * Complex64::new(l1.sqrt(), 0.0))
}

/// Physical voltages `v = D √λ₁ u₁`; fails if the PCC entries do not match
/// their references within 1e-6 p.u.
pub fn recover_voltages(x: &CMat, pcc_scale: &[Complex64], pcc_len: usize) -> Result<DVector<Complex64>> {
    let xs = leading_vector(x)?;
    let v = DVector::from_iterator(xs.len(), xs.iter().zip(pcc_scale).map(|(a, d)| a * d));
    let dev = (0..pcc_len)
        .map(|k| (v[k] - pcc_scale[k]).norm())
        .fold(0.0, f64::max);
    if dev > 1e-6 {
        return Err(Error::Anchoring(dev));
    }
    Ok(v)
}

/// Quantities recovered for one slot.
#[derive(Clone, Debug)]
pub struct SlotSolution {
    pub x: CMat,
    pub rank_ratio: f64,
    pub tight: bool,
    /// Physical voltages, when the anchoring check passes.
    pub voltages: Option<DVector<Complex64>>,
    /// Per row of the index map.
    pub vmag: Vec<f64>,
    pub p_injection: Vec<f64>,
    pub q_injection: Vec<f64>,
    /// Power drawn from the grid per phase (NaN on absent phases).
    pub pcc_p: [f64; 3],
    pub pcc_q: [f64; 3],
    pub pcc_pf: [f64; 3],
    /// `[dg][phase]`, zero on phases the unit does not cover.
    pub dg_p: Vec<[f64; 3]>,
    pub dg_q: Vec<[f64; 3]>,
    /// `[line][position]`, p.u.
    pub line_current: Vec<Vec<f64>>,
    pub neutral_current: Vec<Vec<f64>>,
}

impl SlotSolution {
    pub fn vmin(&self, pcc_len: usize) -> f64 {
        self.vmag[pcc_len..].iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn vmax(&self, pcc_len: usize) -> f64 {
        self.vmag[pcc_len..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct DispatchSolution {
    pub objective: f64,
    pub slots: Vec<SlotSolution>,
    /// `[elastic load][slot]`, p.u. power (zero outside the window).
    pub elastic: Vec<Vec<f64>>,
    /// Squared voltage deviation bounds of the feasibility mode.
    pub deviations: Vec<(EntryBlock, f64)>,
    pub tight: bool,
    pub max_rank_ratio: f64,
}

/// Evaluates quadratic forms either on a rank-1 vector or on the full matrix.
enum Operand<'a> {
    Vector(&'a DVector<Complex64>),
    Matrix(&'a CMat),
}

impl Operand<'_> {
    fn eval(&self, h: &CMat) -> f64 {
        match self {
            Operand::Vector(x) => quad_form(h, x),
            Operand::Matrix(x) => trace_product(h, x),
        }
    }
}

pub fn power_factor(p: f64, q: f64) -> f64 {
    let s = p.hypot(q);
    if s > 0.0 {
        p / s
    } else {
        1.0
    }
}

/// Powers, currents and power factors of one slot, evaluated on the
/// rank-1 vector when `scaled_voltage` is given and on `x` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn recover_powers(
    x: &CMat,
    scaled_voltage: Option<&DVector<Complex64>>,
    mats: &SystemMatrices,
    model: &FeederModel,
    scenario: &HorizonScenario,
    elastic: &[Vec<f64>],
    slot: usize,
) -> SlotSolution {
    let op = match scaled_voltage {
        Some(v) => Operand::Vector(v),
        None => Operand::Matrix(x),
    };
    let sm = mats.slot(slot);
    let n_tot = mats.n_tot();
    let mut p_inj = vec![0.0; n_tot];
    let mut q_inj = vec![0.0; n_tot];
    let mut vmag = vec![0.0; n_tot];
    for k in 0..n_tot {
        p_inj[k] = op.eval(&sm.phi[k].p);
        q_inj[k] = op.eval(&sm.phi[k].q);
        vmag[k] = op.eval(&sm.phi[k].v).max(0.0).sqrt();
    }
    let nan3 = [f64::NAN; 3];
    let (mut pcc_p, mut pcc_q, mut pcc_pf) = (nan3, nan3, nan3);
    for p in model.nodes[0].phases.iter() {
        let k = mats.index.row(model, 0, p).unwrap();
        pcc_p[p.index()] = p_inj[k];
        pcc_q[p.index()] = q_inj[k];
        pcc_pf[p.index()] = power_factor(p_inj[k], q_inj[k]);
    }
    let mut dg_p = Vec::with_capacity(model.dg.len());
    let mut dg_q = Vec::with_capacity(model.dg.len());
    for dg in &model.dg {
        let mut pg = [0.0; 3];
        let mut qg = [0.0; 3];
        for p in dg.phases.iter() {
            let k = mats.index.row(model, dg.node, p).unwrap();
            let el: f64 = model
                .elastic
                .iter()
                .zip(elastic)
                .filter(|(e, _)| e.node == dg.node && e.phase == p)
                .map(|(_, s)| s[slot])
                .sum();
            let yc = model.nodes[dg.node].capacitor[p.index()];
            pg[p.index()] = p_inj[k] + scenario.p_load[slot][dg.node][p.index()] + el;
            qg[p.index()] = q_inj[k] + scenario.q_load[slot][dg.node][p.index()] - yc * vmag[k] * vmag[k];
        }
        dg_p.push(pg);
        dg_q.push(qg);
    }
    let line_current = sm
        .line_current
        .iter()
        .map(|phis| phis.iter().map(|h| op.eval(h).max(0.0).sqrt()).collect())
        .collect();
    let neutral_current = sm
        .neutral_current
        .iter()
        .map(|phis| phis.iter().map(|h| op.eval(h).max(0.0).sqrt()).collect())
        .collect();
    SlotSolution {
        x: x.clone(),
        rank_ratio: f64::NAN,
        tight: false,
        voltages: None,
        vmag,
        p_injection: p_inj,
        q_injection: q_inj,
        pcc_p,
        pcc_q,
        pcc_pf,
        dg_p,
        dg_q,
        line_current,
        neutral_current,
    }
}

/// Turns an optimal solver result into physical schedules.
pub fn recover_solution(
    assembled: &AssembledProgram,
    result: &SolverResult,
    mats: &SystemMatrices,
    model: &FeederModel,
    scenario: &HorizonScenario,
    rank_threshold: f64,
) -> Result<DispatchSolution> {
    if result.status != SolverStatus::Optimal {
        return Err(Error::Input(format!("cannot recover a {} result", result.status)));
    }
    let layout = &assembled.layout;
    let elastic: Vec<Vec<f64>> = layout
        .elastic_vars
        .iter()
        .map(|vars| vars.iter().map(|v| v.map_or(0.0, |k| result.scalars[k].max(0.0))).collect())
        .collect();
    let pcc_len = mats.index.pcc_len();
    let mut slots = Vec::with_capacity(scenario.slots);
    for t in 0..scenario.slots {
        let x = extract_hermitian(&result.psd[layout.slot_blocks[t]])?;
        let (tight, ratio) = rank1_check(&x, rank_threshold);
        let scaled = leading_vector(&x).ok();
        let voltages = recover_voltages(&x, &mats.slot(t).pcc_scale, pcc_len).ok();
        let use_vec = if tight { scaled.as_ref() } else { None };
        let mut s = recover_powers(&x, use_vec, mats, model, scenario, &elastic, t);
        s.rank_ratio = ratio;
        s.tight = tight;
        s.voltages = voltages;
        slots.push(s);
    }
    let deviations = layout
        .deviation_blocks
        .iter()
        .map(|e| (*e, result.psd[e.block][(0, 0)]))
        .collect();
    let tight = slots.iter().all(|s| s.tight);
    let max_rank_ratio = slots.iter().map(|s| s.rank_ratio).fold(0.0, f64::max);
    Ok(DispatchSolution {
        objective: result.objective + layout.objective_offset,
        slots,
        elastic,
        deviations,
        tight,
        max_rank_ratio,
    })
}

/// Generation cost recomputed from recovered powers (currency units).
pub fn recomputed_cost(sol: &DispatchSolution, model: &FeederModel, scenario: &HorizonScenario) -> f64 {
    let mw = model.bases.mw();
    let mut total = 0.0;
    for (t, s) in sol.slots.iter().enumerate() {
        for p in model.nodes[0].phases.iter() {
            total += scenario.kappa[t] * mw * s.pcc_p[p.index()];
        }
        for (d, dg) in model.dg.iter().enumerate() {
            for p in dg.phases.iter() {
                total += scenario.dg_cost[d][t] * mw * s.dg_p[d][p.index()];
            }
        }
    }
    total
}

/// Largest violation of the nodal balance equalities at non-DG entries,
/// evaluated on the recovered powers.
pub fn balance_residual(
    sol: &DispatchSolution,
    mats: &SystemMatrices,
    model: &FeederModel,
    scenario: &HorizonScenario,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (t, s) in sol.slots.iter().enumerate() {
        for (k, n, p) in mats.index.entries() {
            if n == 0 || model.dg_at(n, p).is_some() {
                continue;
            }
            let el: f64 = model
                .elastic
                .iter()
                .zip(&sol.elastic)
                .filter(|(e, _)| e.node == n && e.phase == p)
                .map(|(_, v)| v[t])
                .sum();
            let yc = model.nodes[n].capacitor[p.index()];
            let rp = s.p_injection[k] + scenario.p_load[t][n][p.index()] + el;
            let rq = s.q_injection[k] + scenario.q_load[t][n][p.index()] - yc * s.vmag[k] * s.vmag[k];
            worst = worst.max(rp.abs()).max(rq.abs());
        }
    }
    worst
}
