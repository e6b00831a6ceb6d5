//! Assembly of the dispatch and feasibility-screening relaxations as real
//! block-structured conic programs.
//!
//! Each slot owns one structured PSD block `S_t = M(X_t)` of dimension
//! `2 n_tot`, with `M(H) = [[Re H, -Im H], [Im H, Re H]]`. A Hermitian
//! constraint `Tr(H X_t)` becomes `Tr(½ M(H) S_t)`. The structure of `S_t`
//! is kept by the solver rather than by explicit equality rows; see
//! [`structure_constraints`] for the explicit form.

use dispatch_conic::{ConicProgram, ConstraintKind, LinearExpr, SymSparse};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrices::{hermitian_deviation, SystemMatrices};
use crate::model::{CMat, FeederModel, HorizonScenario};
use crate::phase::Phase;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Minimum-cost dispatch with hard voltage limits.
    Dispatch,
    /// Voltage-deviation screening with soft voltage targets.
    Feasibility,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConstraintFlags {
    pub thermal: bool,
    pub neutral: bool,
    pub pcc_pf: bool,
    pub node_pf: bool,
}

impl ConstraintFlags {
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut f = ConstraintFlags::default();
        for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "thermal" => f.thermal = true,
                "neutral" => f.neutral = true,
                "pcc-pf" => f.pcc_pf = true,
                "node-pf" => f.node_pf = true,
                other => return Err(Error::Input(format!("unknown constraint family '{other}'"))),
            }
        }
        Ok(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispatchProblem {
    pub mode: Mode,
    pub flags: ConstraintFlags,
    pub w_v: f64,
}

impl DispatchProblem {
    pub fn dispatch(flags: ConstraintFlags) -> Self {
        Self {
            mode: Mode::Dispatch,
            flags,
            w_v: 0.5,
        }
    }

    pub fn feasibility(flags: ConstraintFlags, w_v: f64) -> Self {
        Self {
            mode: Mode::Feasibility,
            flags,
            w_v,
        }
    }
}

/// A 2×2 block attached to one (node, phase, slot).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntryBlock {
    pub node: usize,
    pub phase: Phase,
    pub slot: usize,
    pub block: usize,
}

/// Where each physical quantity lives in the assembled program.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProgramLayout {
    pub n_tot: usize,
    pub slot_blocks: Vec<usize>,
    /// `[elastic load][slot]`
    pub elastic_vars: Vec<Vec<Option<usize>>>,
    /// Squared voltage deviation blocks of the feasibility mode.
    pub deviation_blocks: Vec<EntryBlock>,
    pub node_pf_blocks: Vec<EntryBlock>,
    /// Constant part of the generation cost, not representable in the
    /// linear objective.
    pub objective_offset: f64,
}

#[derive(Clone, Debug)]
pub struct AssembledProgram {
    pub program: ConicProgram,
    pub layout: ProgramLayout,
}

/// `½ M(H)` of a Hermitian matrix, scaled by `scale`.
fn embed_scaled(h: &CMat, scale: f64) -> SymSparse {
    let n = h.nrows();
    let mut s = SymSparse::new(2 * n);
    let f = 0.5 * scale;
    for i in 0..n {
        for j in i..n {
            let v = h[(i, j)];
            if v.re != 0.0 {
                s.push(i, j, f * v.re);
                s.push(n + i, n + j, f * v.re);
            }
            if v.im != 0.0 {
                s.push(i, n + j, -f * v.im);
                if i != j {
                    s.push(j, n + i, f * v.im);
                }
            }
        }
    }
    s
}

/// Real symmetric data matrix `½ M(H)` with `Tr(H X) = Tr(½ M(H) M(X))`.
pub fn real_embedding(h: &CMat) -> Result<SymSparse> {
    let dev = hermitian_deviation(h);
    let scale = h.iter().fold(1.0_f64, |a, v| a.max(v.norm()));
    if dev > 1e-12 * scale {
        return Err(Error::NotHermitian(dev));
    }
    Ok(embed_scaled(h, 1.0))
}

/// `M(X) = [[Re X, -Im X], [Im X, Re X]]`.
pub fn embed_matrix(x: &CMat) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let v = x[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    })
}

/// Explicit equality rows `S11 = S22`, `S12 = -S21` for every structured
/// block of `program`.
pub fn structure_constraints(program: &ConicProgram) -> Vec<(LinearExpr, String)> {
    let mut out = Vec::new();
    for (b, blk) in program.blocks.iter().enumerate() {
        if !blk.complex_structure {
            continue;
        }
        let n = blk.dim / 2;
        for i in 0..n {
            for j in i..n {
                let mut m = SymSparse::new(blk.dim);
                m.push(i, j, 1.0);
                m.push(n + i, n + j, -1.0);
                let mut e = LinearExpr::new();
                e.add_psd(b, m);
                out.push((e, format!("structure-re b{b} {i},{j}")));
                let mut m = SymSparse::new(blk.dim);
                m.push(i, n + j, 0.5);
                if i != j {
                    m.push(j, n + i, 0.5);
                }
                let mut e = LinearExpr::new();
                e.add_psd(b, m);
                out.push((e, format!("structure-im b{b} {i},{j}")));
            }
        }
    }
    out
}

/// Adds the rows of [`structure_constraints`] to a program.
pub fn add_structure_constraints(program: &mut ConicProgram) {
    for (e, label) in structure_constraints(program) {
        program.add_constraint(e, ConstraintKind::Eq, 0.0, label);
    }
}

fn tan_arccos(eta: f64) -> f64 {
    (1.0 - eta * eta).sqrt() / eta
}

struct Builder<'a> {
    model: &'a FeederModel,
    scenario: &'a HorizonScenario,
    mats: &'a SystemMatrices,
    program: ConicProgram,
    layout: ProgramLayout,
}

impl<'a> Builder<'a> {
    fn name(&self, node: usize, phase: Phase, t: usize) -> String {
        format!("{}.{} t{}", self.model.nodes[node].id, phase, t + 1)
    }

    fn herm(&self, t: usize, h: &CMat, scale: f64) -> LinearExpr {
        let mut e = LinearExpr::new();
        e.add_psd(self.layout.slot_blocks[t], embed_scaled(h, scale));
        e
    }

    fn row(&self, node: usize, phase: Phase) -> usize {
        self.mats.index.row(self.model, node, phase).expect("phase present at node")
    }

    /// Elastic variables drawing power at (node, phase) in slot `t`.
    fn elastic_at(&self, node: usize, phase: Phase, t: usize) -> Vec<usize> {
        self.model
            .elastic
            .iter()
            .enumerate()
            .filter(|(_, el)| el.node == node && el.phase == phase)
            .filter_map(|(d, _)| self.layout.elastic_vars[d][t])
            .collect()
    }

    fn add(&mut self, e: LinearExpr, kind: ConstraintKind, rhs: f64, label: String) {
        self.program.add_constraint(e, kind, rhs, label);
    }

    /// `lo <= e <= hi`, collapsing to an equality when the bounds coincide.
    fn add_range(&mut self, e: LinearExpr, lo: f64, hi: f64, label: String) {
        if lo == hi {
            self.add(e, ConstraintKind::Eq, lo, label);
            return;
        }
        if lo.is_finite() {
            self.add(e.clone(), ConstraintKind::Ge, lo, format!("{label} min"));
        }
        if hi.is_finite() {
            self.add(e, ConstraintKind::Le, hi, format!("{label} max"));
        }
    }

    fn cost_weight(&self, problem: &DispatchProblem) -> f64 {
        let w = match problem.mode {
            Mode::Dispatch => 1.0,
            Mode::Feasibility => problem.w_v,
        };
        w * self.model.bases.mw()
    }

    fn objective(&mut self, problem: &DispatchProblem) {
        let w = self.cost_weight(problem);
        for t in 0..self.scenario.slots {
            let sm = self.mats.slot(t);
            let b = self.layout.slot_blocks[t];
            let kappa = self.scenario.kappa[t];
            for p in self.model.nodes[0].phases.iter() {
                let k = self.row(0, p);
                if kappa != 0.0 {
                    self.program.objective.add_psd(b, embed_scaled(&sm.phi[k].p, w * kappa));
                }
            }
            for (s, dg) in self.model.dg.iter().enumerate() {
                let c = self.scenario.dg_cost[s][t];
                if c == 0.0 {
                    continue;
                }
                for p in dg.phases.iter() {
                    let k = self.row(dg.node, p);
                    self.program.objective.add_psd(b, embed_scaled(&sm.phi[k].p, w * c));
                    for v in self.elastic_at(dg.node, p, t) {
                        self.program.objective.add_lp(v, w * c);
                    }
                    self.layout.objective_offset += w * c * self.scenario.p_load[t][dg.node][p.index()];
                }
            }
        }
    }

    fn balance(&mut self, t: usize) {
        let n_tot = self.mats.n_tot();
        for k in self.mats.index.pcc_len()..n_tot {
            let (n, p) = self.mats.index.entry(k);
            let sm = self.mats.slot(t);
            let pl = self.scenario.p_load[t][n][p.index()];
            let ql = self.scenario.q_load[t][n][p.index()];
            let yc = self.model.nodes[n].capacitor[p.index()];

            let mut pe = self.herm(t, &sm.phi[k].p, 1.0);
            for v in self.elastic_at(n, p, t) {
                pe.add_lp(v, 1.0);
            }
            let mut qe = self.herm(t, &sm.phi[k].q, 1.0);
            if yc != 0.0 {
                qe.add_psd(self.layout.slot_blocks[t], embed_scaled(&sm.phi[k].v, -yc));
            }
            let name = self.name(n, p, t);
            match self.model.dg_at(n, p) {
                Some(s) => {
                    let dg = &self.model.dg[s];
                    let (pmin, pmax, qmin, qmax) = (dg.pmin, dg.pmax, dg.qmin, dg.qmax);
                    self.add_range(pe, pmin - pl, pmax - pl, format!("dg-p {name}"));
                    self.add_range(qe, qmin - ql, qmax - ql, format!("dg-q {name}"));
                }
                None => {
                    self.add(pe, ConstraintKind::Eq, -pl, format!("balance-p {name}"));
                    self.add(qe, ConstraintKind::Eq, -ql, format!("balance-q {name}"));
                }
            }
        }
    }

    fn anchoring(&mut self, t: usize) {
        let n = self.mats.n_tot();
        let m = self.mats.index.pcc_len();
        for i in 0..m {
            for j in i..m {
                let e = self.herm(t, &herm_unit(n, i, j), 1.0);
                self.add(e, ConstraintKind::Eq, 1.0, format!("anchor-re {i},{j} t{}", t + 1));
                if i != j {
                    let mut h = CMat::zeros(n, n);
                    h[(i, j)] = Complex64::new(0.0, 0.5);
                    h[(j, i)] = Complex64::new(0.0, -0.5);
                    let e = self.herm(t, &h, 1.0);
                    self.add(e, ConstraintKind::Eq, 0.0, format!("anchor-im {i},{j} t{}", t + 1));
                }
            }
        }
    }

    fn voltage_limits(&mut self, t: usize) {
        for k in self.mats.index.pcc_len()..self.mats.n_tot() {
            let (n, p) = self.mats.index.entry(k);
            let node = &self.model.nodes[n];
            let (lo, hi) = (node.vmin, node.vmax);
            let e = self.herm(t, &self.mats.slot(t).phi[k].v, 1.0);
            let name = format!("voltage {}", self.name(n, p, t));
            let lo2 = if lo > 0.0 { lo * lo } else { f64::NEG_INFINITY };
            self.add_range(e, lo2, hi * hi, name);
        }
    }

    /// `[[α, d], [d, 1]] ⪰ 0` with `d = Tr(Φ_V X) - v_ref²`.
    fn deviation_blocks(&mut self, t: usize, weight: f64) {
        let vref2 = self.scenario.v_ref * self.scenario.v_ref;
        for k in self.mats.index.pcc_len()..self.mats.n_tot() {
            let (n, p) = self.mats.index.entry(k);
            let blk = self.program.add_block(2, false);
            let mut z22 = LinearExpr::new();
            z22.add_psd(blk, unit2(1, 1, 1.0));
            let name = self.name(n, p, t);
            self.add(z22, ConstraintKind::Eq, 1.0, format!("deviation-unit {name}"));
            let mut link = self.herm(t, &self.mats.slot(t).phi[k].v, -1.0);
            link.add_psd(blk, unit2(0, 1, 0.5));
            self.add(link, ConstraintKind::Eq, -vref2, format!("deviation-link {name}"));
            self.program.objective.add_psd(blk, unit2(0, 0, weight));
            self.layout.deviation_blocks.push(EntryBlock {
                node: n,
                phase: p,
                slot: t,
                block: blk,
            });
        }
    }

    fn pcc_pf(&mut self, t: usize) {
        for p in self.model.nodes[0].phases.iter() {
            let eta = self.scenario.pcc_min_pf[t][p.index()];
            if eta <= 0.0 {
                continue;
            }
            let k = self.row(0, p);
            let sm = self.mats.slot(t);
            let et = tan_arccos(eta);
            let mut lower = self.herm(t, &sm.phi[k].p, et);
            lower.add_psd(self.layout.slot_blocks[t], embed_scaled(&sm.phi[k].q, -1.0));
            let mut upper = self.herm(t, &sm.phi[k].p, et);
            upper.add_psd(self.layout.slot_blocks[t], embed_scaled(&sm.phi[k].q, 1.0));
            let name = self.name(0, p, t);
            self.add(lower, ConstraintKind::Ge, 0.0, format!("pcc-pf-lag {name}"));
            self.add(upper, ConstraintKind::Ge, 0.0, format!("pcc-pf-lead {name}"));
        }
    }

    fn thermal(&mut self, t: usize) -> Result<()> {
        for (l, line) in self.model.lines.iter().enumerate() {
            for (pos, p) in line.phases.iter().enumerate() {
                let phi = &self.mats.slot(t).line_current[l][pos];
                let name = format!("{}.{} t{}", self.model.line_name(l), p, t + 1);
                if let Some(imax) = line.i_max {
                    if !(imax > 0.0) {
                        return Err(Error::NonPositiveLimit { what: format!("line {name} current"), value: imax });
                    }
                    if imax.is_finite() {
                        let e = self.herm(t, phi, 1.0);
                        self.add(e, ConstraintKind::Le, imax * imax, format!("thermal {name}"));
                    }
                }
                if let Some(pmax) = line.p_loss_max {
                    if !(pmax > 0.0) {
                        return Err(Error::NonPositiveLimit { what: format!("line {name} loss"), value: pmax });
                    }
                    if pmax.is_finite() {
                        let r = line.z[(pos, pos)].re;
                        let e = self.herm(t, phi, r);
                        self.add(e, ConstraintKind::Le, pmax, format!("loss {name}"));
                    }
                }
            }
        }
        Ok(())
    }

    fn neutral(&mut self, t: usize) -> Result<()> {
        for (l, line) in self.model.lines.iter().enumerate() {
            let Some(limits) = &line.i_neutral_max else { continue };
            if line.neutral_map.is_none() || limits.len() > line.neutrals() {
                return Err(Error::NoNeutral { line: self.model.line_name(l) });
            }
            for (q, &imax) in limits.iter().enumerate() {
                let name = format!("{} n{} t{}", self.model.line_name(l), q, t + 1);
                if !(imax > 0.0) {
                    return Err(Error::NonPositiveLimit { what: format!("neutral {name}"), value: imax });
                }
                if imax.is_finite() {
                    let e = self.herm(t, &self.mats.slot(t).neutral_current[l][q], 1.0);
                    self.add(e, ConstraintKind::Le, imax * imax, format!("neutral {name}"));
                }
            }
        }
        Ok(())
    }

    /// `[[(P_L tanφ)², d], [d, 1]] ⪰ 0` with `d = Q_L - y_C Tr(Φ_V X)`.
    fn node_pf(&mut self, t: usize) -> Result<()> {
        for k in self.mats.index.pcc_len()..self.mats.n_tot() {
            let (n, p) = self.mats.index.entry(k);
            let eta = self.model.nodes[n].min_pf[p.index()];
            if eta <= 0.0 {
                continue;
            }
            let pl = self.scenario.p_load[t][n][p.index()];
            let ql = self.scenario.q_load[t][n][p.index()];
            let name = self.name(n, p, t);
            if !(pl > 0.0) {
                return Err(Error::Input(format!("minimum PF at {name} needs a positive active load")));
            }
            let bound = pl * tan_arccos(eta);
            let blk = self.program.add_block(2, false);
            let mut z11 = LinearExpr::new();
            z11.add_psd(blk, unit2(0, 0, 1.0));
            self.add(z11, ConstraintKind::Eq, bound * bound, format!("node-pf-bound {name}"));
            let mut z22 = LinearExpr::new();
            z22.add_psd(blk, unit2(1, 1, 1.0));
            self.add(z22, ConstraintKind::Eq, 1.0, format!("node-pf-unit {name}"));
            let yc = self.model.nodes[n].capacitor[p.index()];
            let mut link = self.herm(t, &self.mats.slot(t).phi[k].v, yc);
            link.add_psd(blk, unit2(0, 1, 0.5));
            self.add(link, ConstraintKind::Eq, ql, format!("node-pf-link {name}"));
            self.layout.node_pf_blocks.push(EntryBlock {
                node: n,
                phase: p,
                slot: t,
                block: blk,
            });
        }
        Ok(())
    }

    fn elastic(&mut self) {
        let dt = self.scenario.dt_hours;
        for (d, el) in self.model.elastic.iter().enumerate() {
            let mut energy = LinearExpr::new();
            for t in 0..self.scenario.slots {
                let Some(v) = self.layout.elastic_vars[d][t] else { continue };
                energy.add_lp(v, dt);
                if let Some(cap) = el.cap {
                    let mut e = LinearExpr::new();
                    e.add_lp(v, 1.0);
                    self.add(e, ConstraintKind::Le, cap, format!("elastic-cap {d} t{}", t + 1));
                }
            }
            self.add(energy, ConstraintKind::Eq, el.energy, format!("elastic-energy {d}"));
        }
    }
}

fn unit2(i: usize, j: usize, v: f64) -> SymSparse {
    let mut m = SymSparse::new(2);
    m.push(i, j, v);
    m
}

fn check_shapes(model: &FeederModel, scenario: &HorizonScenario, mats: &SystemMatrices) -> Result<()> {
    let t = scenario.slots;
    let ok = scenario.kappa.len() == t
        && scenario.p_load.len() == t
        && scenario.q_load.len() == t
        && scenario.pcc_voltage.len() == t
        && scenario.pcc_min_pf.len() == t
        && scenario.dg_cost.len() == model.dg.len()
        && scenario.dg_cost.iter().all(|c| c.len() == t)
        && mats.slots() == t
        && scenario.p_load.iter().chain(&scenario.q_load).all(|s| s.len() == model.nodes.len());
    if !ok {
        return Err(Error::Input("scenario series do not match the horizon length".into()));
    }
    for (d, el) in model.elastic.iter().enumerate() {
        let (s, f) = el.window;
        if s < 1 || f < 1 || s > t || f > t {
            return Err(Error::Input(format!("elastic load {d}: window [{s}, {f}] outside the horizon")));
        }
    }
    Ok(())
}

/// Assembles the program for either mode.
pub fn assemble(
    mats: &SystemMatrices,
    model: &FeederModel,
    scenario: &HorizonScenario,
    problem: &DispatchProblem,
) -> Result<AssembledProgram> {
    check_shapes(model, scenario, mats)?;
    if problem.mode == Mode::Feasibility && !(problem.w_v > 0.0 && problem.w_v < 1.0) {
        return Err(Error::Input(format!("w_v = {} outside (0, 1)", problem.w_v)));
    }
    let n_tot = mats.n_tot();
    let mut b = Builder {
        model,
        scenario,
        mats,
        program: ConicProgram::new(),
        layout: ProgramLayout {
            n_tot,
            ..ProgramLayout::default()
        },
    };
    for _ in 0..scenario.slots {
        let blk = b.program.add_block(2 * n_tot, true);
        b.layout.slot_blocks.push(blk);
    }
    for el in &model.elastic {
        let mut vars = vec![None; scenario.slots];
        for t in el.slots(scenario.slots) {
            vars[t] = Some(b.program.add_scalar());
        }
        b.layout.elastic_vars.push(vars);
    }
    b.objective(problem);
    for t in 0..scenario.slots {
        b.anchoring(t);
        b.balance(t);
        match problem.mode {
            Mode::Dispatch => b.voltage_limits(t),
            Mode::Feasibility => b.deviation_blocks(t, 1.0 - problem.w_v),
        }
        if problem.flags.pcc_pf {
            b.pcc_pf(t);
        }
        if problem.flags.thermal {
            b.thermal(t)?;
        }
        if problem.flags.neutral {
            b.neutral(t)?;
        }
        if problem.flags.node_pf {
            b.node_pf(t)?;
        }
    }
    b.elastic();
    b.program.compress();
    Ok(AssembledProgram {
        program: b.program,
        layout: b.layout,
    })
}

pub fn assemble_dispatch(
    mats: &SystemMatrices,
    model: &FeederModel,
    scenario: &HorizonScenario,
    flags: ConstraintFlags,
) -> Result<AssembledProgram> {
    assemble(mats, model, scenario, &DispatchProblem::dispatch(flags))
}

pub fn assemble_feasibility(
    mats: &SystemMatrices,
    model: &FeederModel,
    scenario: &HorizonScenario,
    flags: ConstraintFlags,
    w_v: f64,
) -> Result<AssembledProgram> {
    assemble(mats, model, scenario, &DispatchProblem::feasibility(flags, w_v))
}

/// Hermitian selector with `Tr(H X) = Re X_ij`.
pub fn herm_unit(n: usize, i: usize, j: usize) -> CMat {
    let mut h = CMat::zeros(n, n);
    if i == j {
        h[(i, i)] = Complex64::new(1.0, 0.0);
    } else {
        h[(i, j)] = Complex64::new(0.5, 0.0);
        h[(j, i)] = Complex64::new(0.5, 0.0);
    }
    h
}
