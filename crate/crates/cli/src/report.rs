//! Machine-readable run reports and the solution file consumed by
//! `validate`.

use std::fmt::Write as _;

use dispatch_core::model::{FeederModel, HorizonScenario};
use dispatch_core::recovery::DispatchSolution;
use dispatch_core::IndexMap;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub seed: u64,
    pub tol: f64,
    pub rank_threshold: f64,
    pub w_v: f64,
    pub enable: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccRow {
    pub slot: usize,
    pub phase: char,
    pub p_kw: f64,
    pub q_kvar: f64,
    pub pf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgSchedule {
    pub node: String,
    pub phases: String,
    /// `[slot][phase position]`
    pub p_kw: Vec<Vec<f64>>,
    pub q_kvar: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticSchedule {
    pub node: String,
    pub phase: char,
    pub energy_kwh: f64,
    pub delivered_kwh: f64,
    /// Power per slot, zero outside the window.
    pub p_kw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageExtremes {
    pub slot: usize,
    pub vmin_pu: f64,
    pub vmax_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageFlag {
    pub node: String,
    pub phase: char,
    pub slot: usize,
    pub vmag_pu: f64,
    pub vmin_pu: f64,
    pub vmax_pu: f64,
}

/// Largest residual per constraint family, in per-unit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationResiduals {
    pub balance: f64,
    pub generation_limits: f64,
    pub voltage_limits: f64,
    pub line_current: f64,
    pub pcc_power_factor: f64,
    pub pcc_voltage: f64,
    /// Distance between the load-flow solution for the scheduled injections
    /// and the reported voltages.
    pub loadflow: f64,
    /// Relative gap between reported and recomputed cost.
    pub cost: f64,
}

impl ValidationResiduals {
    pub fn worst(&self) -> f64 {
        [
            self.balance,
            self.generation_limits,
            self.voltage_limits,
            self.line_current,
            self.pcc_power_factor,
            self.pcc_voltage,
            self.loadflow,
            self.cost,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn flagged(&self, tol: f64) -> Vec<&'static str> {
        let fam = [
            ("balance", self.balance),
            ("generation-limits", self.generation_limits),
            ("voltage-limits", self.voltage_limits),
            ("line-current", self.line_current),
            ("pcc-power-factor", self.pcc_power_factor),
            ("pcc-voltage", self.pcc_voltage),
            ("loadflow", self.loadflow),
            ("cost", self.cost),
        ];
        fam.into_iter().filter(|(_, v)| !(*v <= tol)).map(|(n, _)| n).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    /// Index into each switchable node's level list, in node order.
    pub levels: Vec<usize>,
    pub status: String,
    pub objective: Option<f64>,
    pub tight: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub status: String,
    pub tight: bool,
    /// Total cost over the horizon (currency units).
    pub objective: Option<f64>,
    pub iterations: usize,
    pub rank_ratios: Vec<f64>,
    pub pcc: Vec<PccRow>,
    pub dg: Vec<DgSchedule>,
    pub elastic: Vec<ElasticSchedule>,
    pub voltages: Vec<VoltageExtremes>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub voltage_flags: Vec<VoltageFlag>,
    /// Feasibility mode: whether the dispatch run can proceed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proceed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationResiduals>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_levels: Option<Vec<usize>>,
    pub config: ConfigEcho,
}

impl RunReport {
    pub fn empty(mode: &str, status: &str, config: ConfigEcho) -> Self {
        Self {
            mode: mode.to_string(),
            status: status.to_string(),
            tight: false,
            objective: None,
            iterations: 0,
            rank_ratios: Vec::new(),
            pcc: Vec::new(),
            dg: Vec::new(),
            elastic: Vec::new(),
            voltages: Vec::new(),
            voltage_flags: Vec::new(),
            proceed: None,
            validation: None,
            sweep: Vec::new(),
            best_levels: None,
            config,
        }
    }

    /// Fills the schedule sections from a recovered solution.
    pub fn fill(&mut self, sol: &DispatchSolution, model: &FeederModel, scenario: &HorizonScenario) {
        let kva = model.bases.kva;
        let pcc_len = IndexMap::new(model).pcc_len();
        self.tight = sol.tight;
        self.objective = Some(sol.objective);
        self.rank_ratios = sol.slots.iter().map(|s| s.rank_ratio).collect();
        self.pcc.clear();
        for (t, s) in sol.slots.iter().enumerate() {
            for p in model.nodes[0].phases.iter() {
                let i = p.index();
                self.pcc.push(PccRow {
                    slot: t + 1,
                    phase: p.letter(),
                    p_kw: s.pcc_p[i] * kva,
                    q_kvar: s.pcc_q[i] * kva,
                    pf: s.pcc_pf[i],
                });
            }
        }
        self.dg = model
            .dg
            .iter()
            .enumerate()
            .map(|(d, dg)| {
                let pick = |v: &[f64; 3]| dg.phases.iter().map(|p| v[p.index()] * kva).collect();
                DgSchedule {
                    node: model.nodes[dg.node].id.clone(),
                    phases: dg.phases.to_string(),
                    p_kw: sol.slots.iter().map(|s| pick(&s.dg_p[d])).collect(),
                    q_kvar: sol.slots.iter().map(|s| pick(&s.dg_q[d])).collect(),
                }
            })
            .collect();
        self.elastic = model
            .elastic
            .iter()
            .zip(&sol.elastic)
            .map(|(e, sched)| ElasticSchedule {
                node: model.nodes[e.node].id.clone(),
                phase: e.phase.letter(),
                energy_kwh: e.energy * kva,
                delivered_kwh: sched.iter().sum::<f64>() * scenario.dt_hours * kva,
                p_kw: sched.iter().map(|v| v * kva).collect(),
            })
            .collect();
        self.voltages = sol
            .slots
            .iter()
            .enumerate()
            .map(|(t, s)| VoltageExtremes {
                slot: t + 1,
                vmin_pu: s.vmin(pcc_len),
                vmax_pu: s.vmax(pcc_len),
            })
            .collect();
    }

    /// One row per slot and PCC phase with the fixed column set
    /// `slot,phase,p_pcc_kw,q_pcc_kvar,pf_pcc,dg<i>_p_kw,dg<i>_q_kvar...,rank_ratio,vmin_pu,vmax_pu`.
    /// Generator columns are zero when the unit does not cover the phase.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot,phase,p_pcc_kw,q_pcc_kvar,pf_pcc");
        for d in 0..self.dg.len() {
            let _ = write!(out, ",dg{}_p_kw,dg{}_q_kvar", d + 1, d + 1);
        }
        out.push_str(",rank_ratio,vmin_pu,vmax_pu\n");
        for row in &self.pcc {
            let t = row.slot - 1;
            let _ = write!(out, "{},{},{:.6},{:.6},{:.6}", row.slot, row.phase, row.p_kw, row.q_kvar, row.pf);
            for dg in &self.dg {
                let pos = dg.phases.chars().position(|c| c == row.phase);
                let (p, q) = pos.map_or((0.0, 0.0), |k| (dg.p_kw[t][k], dg.q_kvar[t][k]));
                let _ = write!(out, ",{p:.6},{q:.6}");
            }
            let v = &self.voltages[t];
            let _ = writeln!(out, ",{:.3e},{:.6},{:.6}", self.rank_ratios[t], v.vmin_pu, v.vmax_pu);
        }
        out
    }
}

/// Voltages and schedules of a dispatch run in engineering units, enough to
/// replay every constraint check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub objective: f64,
    pub slots: Vec<SlotRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    /// Per-unit phasors in index-map order (node order, then phase).
    pub v_re: Vec<f64>,
    pub v_im: Vec<f64>,
    /// `[dg][phase a, b, c]` in kW / kvar.
    pub dg_p_kw: Vec<[f64; 3]>,
    pub dg_q_kvar: Vec<[f64; 3]>,
    /// One entry per elastic load, kW.
    pub elastic_kw: Vec<f64>,
}

impl SlotRecord {
    pub fn voltages(&self) -> Vec<Complex64> {
        self.v_re.iter().zip(&self.v_im).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }
}

impl SolutionFile {
    /// `None` when some slot has no recoverable voltage vector.
    pub fn from_solution(sol: &DispatchSolution, model: &FeederModel) -> Option<Self> {
        let kva = model.bases.kva;
        let slots = sol
            .slots
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let v = s.voltages.as_ref()?;
                Some(SlotRecord {
                    v_re: v.iter().map(|c| c.re).collect(),
                    v_im: v.iter().map(|c| c.im).collect(),
                    dg_p_kw: s.dg_p.iter().map(|a| a.map(|x| x * kva)).collect(),
                    dg_q_kvar: s.dg_q.iter().map(|a| a.map(|x| x * kva)).collect(),
                    elastic_kw: sol.elastic.iter().map(|e| e[t] * kva).collect(),
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            objective: sol.objective,
            slots,
        })
    }
}
