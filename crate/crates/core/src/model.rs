//! Feeder and horizon descriptions in per-unit, Kron reduction, validation.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phase::{Phase, PhaseSet};

pub type CMat = DMatrix<Complex64>;

/// Per-phase power base and line-to-neutral voltage base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bases {
    pub kva: f64,
    pub kv: f64,
}

impl Bases {
    pub fn z_ohm(&self) -> f64 {
        self.kv * self.kv * 1000.0 / self.kva
    }
    pub fn i_amp(&self) -> f64 {
        self.kva / self.kv
    }
    pub fn mw(&self) -> f64 {
        self.kva / 1000.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub phases: PhaseSet,
    pub vmin: f64,
    pub vmax: f64,
    /// Capacitor susceptance per phase (p.u.), indexed by [`Phase::index`].
    pub capacitor: [f64; 3],
    /// Alternative susceptance settings of a switchable bank.
    pub switch_levels: Vec<[f64; 3]>,
    /// Minimum power factor per phase; zero leaves the phase unconstrained.
    pub min_pf: [f64; 3],
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, phases: PhaseSet) -> Self {
        Self {
            id: id.into(),
            phases,
            vmin: 0.0,
            vmax: f64::INFINITY,
            capacitor: [0.0; 3],
            switch_levels: Vec::new(),
            min_pf: [0.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSegment {
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    /// Series phase impedance (p.u.), `phases.len()` square.
    pub z: CMat,
    /// Total shunt admittance (p.u.); half is placed at each end.
    pub y_shunt: CMat,
    /// Maps phase currents to neutral currents; present when the line was
    /// given by its primitive matrix with at least one neutral.
    pub neutral_map: Option<CMat>,
    pub i_max: Option<f64>,
    pub p_loss_max: Option<f64>,
    pub i_neutral_max: Option<Vec<f64>>,
}

impl LineSegment {
    pub fn new(from: usize, to: usize, phases: PhaseSet, z: CMat) -> Self {
        let n = phases.len();
        Self {
            from,
            to,
            phases,
            z,
            y_shunt: CMat::zeros(n, n),
            neutral_map: None,
            i_max: None,
            p_loss_max: None,
            i_neutral_max: None,
        }
    }

    pub fn neutrals(&self) -> usize {
        self.neutral_map.as_ref().map_or(0, |t| t.nrows())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgUnit {
    pub node: usize,
    pub phases: PhaseSet,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticLoad {
    pub node: usize,
    pub phase: Phase,
    /// Energy to deliver, p.u. power times hours.
    pub energy: f64,
    /// First and last slot, 1-based and inclusive. A start later than the
    /// end wraps around the end of the horizon.
    pub window: (usize, usize),
    pub cap: Option<f64>,
}

impl ElasticLoad {
    /// Zero-based slots inside the window.
    pub fn slots(&self, horizon: usize) -> Vec<usize> {
        let (s, f) = self.window;
        if s == 0 || f == 0 || s > horizon || f > horizon {
            return Vec::new();
        }
        if s <= f {
            (s - 1..f).collect()
        } else {
            (s - 1..horizon).chain(0..f).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeederModel {
    /// The first node is the point of common coupling.
    pub nodes: Vec<NodeSpec>,
    pub lines: Vec<LineSegment>,
    pub dg: Vec<DgUnit>,
    pub elastic: Vec<ElasticLoad>,
    pub bases: Bases,
}

impl FeederModel {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn line_name(&self, l: usize) -> String {
        let line = &self.lines[l];
        format!("{}-{}", self.nodes[line.from].id, self.nodes[line.to].id)
    }

    pub fn dg_at(&self, node: usize, phase: Phase) -> Option<usize> {
        self.dg
            .iter()
            .position(|d| d.node == node && d.phases.contains(phase))
    }

    /// Returns a copy with every capacitor set to the given susceptances.
    pub fn with_capacitors(&self, settings: &[(usize, [f64; 3])]) -> FeederModel {
        let mut m = self.clone();
        for &(n, y) in settings {
            m.nodes[n].capacitor = y;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonScenario {
    pub slots: usize,
    pub dt_hours: f64,
    /// Grid price per slot, currency per MWh.
    pub kappa: Vec<f64>,
    /// Generation cost per DG unit and slot, currency per MWh.
    pub dg_cost: Vec<Vec<f64>>,
    /// Non-deferrable load, `[slot][node][phase]`, p.u.
    pub p_load: Vec<Vec<[f64; 3]>>,
    pub q_load: Vec<Vec<[f64; 3]>>,
    /// PCC voltage phasors per slot and phase (p.u.).
    pub pcc_voltage: Vec<[Complex64; 3]>,
    /// Minimum PCC power factor per slot and phase; zero disables.
    pub pcc_min_pf: Vec<[f64; 3]>,
    pub w_v: f64,
    pub v_ref: f64,
}

impl HorizonScenario {
    /// Single-slot scenario without loads, PCC at `vmag` with a balanced
    /// positive sequence.
    pub fn flat(model: &FeederModel, slots: usize, vmag: f64) -> Self {
        let n = model.nodes.len();
        Self {
            slots,
            dt_hours: 1.0,
            kappa: vec![0.0; slots],
            dg_cost: vec![vec![0.0; slots]; model.dg.len()],
            p_load: vec![vec![[0.0; 3]; n]; slots],
            q_load: vec![vec![[0.0; 3]; n]; slots],
            pcc_voltage: vec![balanced_phasors(vmag, 0.0); slots],
            pcc_min_pf: vec![[0.0; 3]; slots],
            w_v: 0.5,
            v_ref: 1.0,
        }
    }

    /// Multiplies every non-deferrable load by `factor`.
    pub fn scaled_loads(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for slot in s.p_load.iter_mut().chain(s.q_load.iter_mut()) {
            for node in slot.iter_mut() {
                for v in node.iter_mut() {
                    *v *= factor;
                }
            }
        }
        s
    }
}

/// `vmag` at angles `offset`, `offset - 120°`, `offset + 120°`.
pub fn balanced_phasors(vmag: f64, offset_deg: f64) -> [Complex64; 3] {
    let mk = |deg: f64| Complex64::from_polar(vmag, deg.to_radians());
    [mk(offset_deg), mk(offset_deg - 120.0), mk(offset_deg + 120.0)]
}

/// Eliminates `primitive.nrows() - phase_count` grounded neutrals.
///
/// Returns the phase impedance matrix and the map from phase currents to
/// neutral currents.
pub fn kron_reduce(primitive: &CMat, phase_count: usize) -> Result<(CMat, CMat)> {
    let n = primitive.nrows();
    if primitive.ncols() != n || phase_count == 0 || phase_count > n {
        return Err(Error::Input(format!(
            "primitive matrix is {}x{}, cannot keep {phase_count} phases",
            n,
            primitive.ncols()
        )));
    }
    let p = phase_count;
    let q = n - p;
    let zpp = primitive.view((0, 0), (p, p)).into_owned();
    if q == 0 {
        return Ok((zpp, CMat::zeros(0, p)));
    }
    let zpn = primitive.view((0, p), (p, q));
    let znp = primitive.view((p, 0), (q, p)).into_owned();
    let znn = primitive.view((p, p), (q, q)).into_owned();
    let lu = znn.lu();
    let t = lu.solve(&znp).ok_or(Error::KronFailed)?;
    if t.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::KronFailed);
    }
    let t = -t;
    let zphase = zpp + zpn * &t;
    Ok((zphase, t))
}

/// One failed check of [`validate_feeder`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Checks every structural and data invariant; an empty list means valid.
pub fn validate_feeder(model: &FeederModel, scenario: &HorizonScenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |subject: String, message: String| out.push(Violation { subject, message });
    let nn = model.nodes.len();
    let t = scenario.slots;

    if nn == 0 {
        bad("feeder".into(), "no nodes".into());
        return out;
    }
    if !(model.bases.kva > 0.0 && model.bases.kv > 0.0) {
        bad("bases".into(), "base power and voltage must be positive".into());
    }
    let mut seen = HashSet::new();
    for node in &model.nodes {
        let s = format!("node {}", node.id);
        if !seen.insert(node.id.as_str()) {
            bad(s.clone(), "duplicate id".into());
        }
        if node.phases.is_empty() {
            bad(s.clone(), "empty phase set".into());
        }
        if !(node.vmin >= 0.0 && node.vmin < node.vmax) {
            bad(s.clone(), format!("voltage limits [{}, {}] invalid", node.vmin, node.vmax));
        }
        for p in Phase::ALL {
            let eta = node.min_pf[p.index()];
            if !(0.0..=1.0).contains(&eta) {
                bad(s.clone(), format!("minimum PF {eta} on phase {p} outside [0, 1]"));
            }
            if !(node.capacitor[p.index()] >= 0.0) {
                bad(s.clone(), format!("negative capacitor susceptance on phase {p}"));
            }
            if (eta > 0.0 || node.capacitor[p.index()] != 0.0) && !node.phases.contains(p) {
                bad(s.clone(), format!("data on missing phase {p}"));
            }
        }
        for lvl in &node.switch_levels {
            if lvl.iter().any(|v| !(*v >= 0.0)) {
                bad(s.clone(), "negative switch level".into());
            }
        }
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nn];
    for (l, line) in model.lines.iter().enumerate() {
        if line.from >= nn || line.to >= nn {
            bad(format!("line {l}"), "endpoint out of range".into());
            continue;
        }
        let s = format!("line {}", model.line_name(l));
        if line.from == line.to {
            bad(s.clone(), "self loop".into());
        }
        adj[line.from].push(line.to);
        adj[line.to].push(line.from);
        if line.phases.is_empty() {
            bad(s.clone(), "empty phase set".into());
        }
        let ends = model.nodes[line.from]
            .phases
            .intersection(model.nodes[line.to].phases);
        if !line.phases.is_subset(ends) {
            bad(
                s.clone(),
                format!("phases {} not present at both endpoints ({ends})", line.phases),
            );
        }
        let k = line.phases.len();
        if line.z.nrows() != k || line.z.ncols() != k {
            bad(s.clone(), format!("impedance is {}x{}, expected {k}x{k}", line.z.nrows(), line.z.ncols()));
        } else if line.z.clone().try_inverse().is_none() {
            bad(s.clone(), "singular impedance".into());
        }
        if line.y_shunt.nrows() != k || line.y_shunt.ncols() != k {
            bad(s.clone(), "shunt admittance dimension mismatch".into());
        }
        for (what, v) in [("i_max", line.i_max), ("p_loss_max", line.p_loss_max)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    bad(s.clone(), format!("{what} must be positive"));
                }
            }
        }
        if let Some(lim) = &line.i_neutral_max {
            if lim.len() != line.neutrals() {
                bad(s.clone(), "neutral limits without matching neutral data".into());
            }
        }
    }
    if model.lines.len() + 1 != nn {
        bad(
            "feeder".into(),
            format!("{} lines for {} nodes is not a tree", model.lines.len(), nn),
        );
    }
    let mut visited = vec![false; nn];
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !visited[w] {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    for (i, v) in visited.iter().enumerate() {
        if !v {
            bad(format!("node {}", model.nodes[i].id), "not connected to the PCC".into());
        }
    }

    let mut dg_phase: HashMap<(usize, Phase), usize> = HashMap::new();
    for (k, dg) in model.dg.iter().enumerate() {
        let s = format!("dg {k}");
        if dg.node >= nn {
            bad(s, "node out of range".into());
            continue;
        }
        if dg.node == 0 {
            bad(s.clone(), "DG at the PCC".into());
        }
        if dg.phases.is_empty() || !dg.phases.is_subset(model.nodes[dg.node].phases) {
            bad(s.clone(), format!("phases {} not at node {}", dg.phases, model.nodes[dg.node].id));
        }
        if !(dg.pmin <= dg.pmax) || !(dg.qmin <= dg.qmax) {
            bad(s.clone(), "lower limit above upper limit".into());
        }
        for p in dg.phases.iter() {
            if dg_phase.insert((dg.node, p), k).is_some() {
                bad(s.clone(), format!("second unit on phase {p}"));
            }
        }
    }

    for (k, el) in model.elastic.iter().enumerate() {
        let s = format!("elastic {k}");
        if el.node >= nn {
            bad(s, "node out of range".into());
            continue;
        }
        if !model.nodes[el.node].phases.contains(el.phase) {
            bad(s.clone(), format!("phase {} not at node {}", el.phase, model.nodes[el.node].id));
        }
        if el.node == 0 {
            bad(s.clone(), "elastic load at the PCC".into());
        }
        let (a, b) = el.window;
        if a < 1 || b < 1 || a > t || b > t {
            bad(s.clone(), format!("window [{a}, {b}] outside 1..={t}"));
            continue;
        }
        if !(el.energy >= 0.0) {
            bad(s.clone(), "negative energy".into());
        }
        if let Some(cap) = el.cap {
            let most = cap * scenario.dt_hours * el.slots(t).len() as f64;
            if el.energy > most * (1.0 + 1e-12) {
                bad(s.clone(), format!("energy {} exceeds cap x window = {}", el.energy, most));
            }
        }
    }

    let sc = "scenario".to_string();
    if t == 0 {
        bad(sc.clone(), "empty horizon".into());
    }
    if !(scenario.dt_hours > 0.0) {
        bad(sc.clone(), "slot duration must be positive".into());
    }
    let lens = [
        ("kappa", scenario.kappa.len()),
        ("p_load", scenario.p_load.len()),
        ("q_load", scenario.q_load.len()),
        ("pcc_voltage", scenario.pcc_voltage.len()),
        ("pcc_min_pf", scenario.pcc_min_pf.len()),
    ];
    for (what, len) in lens {
        if len != t {
            bad(sc.clone(), format!("{what} has {len} entries, expected {t}"));
        }
    }
    if scenario.kappa.iter().any(|v| !v.is_finite()) {
        bad(sc.clone(), "non-finite price".into());
    }
    if scenario.dg_cost.len() != model.dg.len() || scenario.dg_cost.iter().any(|c| c.len() != t) {
        bad(sc.clone(), "DG cost series must have one row of length T per unit".into());
    }
    if scenario.dg_cost.iter().flatten().any(|v| !v.is_finite()) {
        bad(sc.clone(), "non-finite DG cost".into());
    }
    for (slot, loads) in scenario.p_load.iter().zip(&scenario.q_load).enumerate() {
        if loads.0.len() != nn || loads.1.len() != nn {
            bad(sc.clone(), format!("slot {}: load table does not cover every node", slot + 1));
            continue;
        }
        for (n, node) in model.nodes.iter().enumerate() {
            for p in Phase::ALL {
                let (pl, ql) = (loads.0[n][p.index()], loads.1[n][p.index()]);
                if !pl.is_finite() || !ql.is_finite() {
                    bad(sc.clone(), format!("slot {}: non-finite load at {}", slot + 1, node.id));
                } else if (pl != 0.0 || ql != 0.0) && !node.phases.contains(p) {
                    bad(sc.clone(), format!("slot {}: load on missing phase {p} of {}", slot + 1, node.id));
                }
                if node.min_pf[p.index()] > 0.0 && node.phases.contains(p) && !(pl > 0.0) {
                    bad(
                        format!("node {}", node.id),
                        format!("slot {}: minimum PF on phase {p} needs a positive active load", slot + 1),
                    );
                }
            }
        }
    }
    for (slot, v0) in scenario.pcc_voltage.iter().enumerate() {
        for p in model.nodes[0].phases.iter() {
            if !(v0[p.index()].norm() > 0.0) {
                bad(sc.clone(), format!("slot {}: zero PCC voltage on phase {p}", slot + 1));
            }
        }
    }
    for eta in scenario.pcc_min_pf.iter().flatten() {
        if !(0.0..=1.0).contains(eta) {
            bad(sc.clone(), format!("PCC minimum PF {eta} outside [0, 1]"));
        }
    }
    if !(scenario.w_v > 0.0 && scenario.w_v < 1.0) {
        bad(sc.clone(), format!("w_v = {} outside (0, 1)", scenario.w_v));
    }
    if !(scenario.v_ref > 0.0) {
        bad(sc, "reference voltage must be positive".into());
    }
    out
}
