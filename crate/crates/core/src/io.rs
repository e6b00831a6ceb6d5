//! JSON feeder and scenario files.
//!
//! Files use engineering units: kW, kvar and kWh for powers and energies,
//! ohms and siemens for primitive impedances and shunt admittances, amperes
//! for current limits. Already-reduced phase impedances (`z_phase`) and
//! capacitor susceptances are given in per-unit. Everything is converted to
//! per-unit on load.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    kron_reduce, Bases, CMat, DgUnit, ElasticLoad, FeederModel, HorizonScenario, LineSegment,
    NodeSpec,
};
use crate::phase::{Phase, PhaseSet};

/// Complex matrix as separate real and imaginary row lists; a missing part
/// is zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub im: Vec<Vec<f64>>,
}

impl ComplexMatrix {
    pub fn to_matrix(&self, what: &str) -> Result<CMat> {
        let n = self.re.len().max(self.im.len());
        let check = |rows: &Vec<Vec<f64>>| rows.is_empty() || (rows.len() == n && rows.iter().all(|r| r.len() == n));
        if !check(&self.re) || !check(&self.im) {
            return Err(Error::Input(format!("{what}: matrix must be square with matching parts")));
        }
        Ok(CMat::from_fn(n, n, |i, j| {
            let re = self.re.get(i).map_or(0.0, |r| r[j]);
            let im = self.im.get(i).map_or(0.0, |r| r[j]);
            Complex64::new(re, im)
        }))
    }

    pub fn from_matrix(m: &CMat) -> Self {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect()
        };
        Self {
            re: rows(|c| c.re),
            im: rows(|c| c.im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; n]),
            ScalarOrList::List(l) if l.len() == n => Ok(l.clone()),
            ScalarOrList::List(l) => Err(Error::Input(format!("{what}: expected {n} values, got {}", l.len()))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CapacitorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub susceptance_per_phase: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub switch_levels: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: String,
    pub phases: PhaseSet,
    #[serde(default)]
    pub vmin: Option<f64>,
    #[serde(default)]
    pub vmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitor: Option<CapacitorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_pf: Option<ScalarOrList>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineEntry {
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primitive_z: Option<ComplexMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_phase: Option<ComplexMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_shunt: Option<ComplexMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutrals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_loss_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_neutral_max: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgEntry {
    pub node: String,
    pub phases: PhaseSet,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticEntry {
    pub node: String,
    pub phase: String,
    pub energy_kwh: f64,
    pub window: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_kw: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasesEntry {
    pub kva: f64,
    pub kv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeederFile {
    pub bases: BasesEntry,
    pub nodes: Vec<NodeEntry>,
    pub lines: Vec<LineEntry>,
    #[serde(default)]
    pub dg: Vec<DgEntry>,
    #[serde(default)]
    pub elastic: Vec<ElasticEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccEntry {
    pub vmag: ScalarOrList,
    pub angles_deg: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(rename = "T")]
    pub t: usize,
    pub dt_hours: f64,
    pub kappa: Vec<f64>,
    #[serde(default)]
    pub dg_cost: Vec<Vec<f64>>,
    /// node id -> phase letter -> series
    #[serde(default)]
    pub loads: BTreeMap<String, BTreeMap<String, LoadSeries>>,
    pub pcc: PccEntry,
    #[serde(default = "zero_pf")]
    pub pcc_min_pf: ScalarOrList,
    #[serde(default = "default_wv")]
    pub w_v: f64,
    #[serde(default = "default_vref")]
    pub v_ref: f64,
}

fn zero_pf() -> ScalarOrList {
    ScalarOrList::Scalar(0.0)
}
fn default_wv() -> f64 {
    0.5
}
fn default_vref() -> f64 {
    1.0
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_phase(s: &str) -> Result<Phase> {
    let mut ch = s.chars();
    match (ch.next().and_then(Phase::from_char), ch.next()) {
        (Some(p), None) => Ok(p),
        _ => Err(Error::Input(format!("bad phase '{s}'"))),
    }
}

impl FeederFile {
    pub fn to_model(&self) -> Result<FeederModel> {
        let bases = Bases {
            kva: self.bases.kva,
            kv: self.bases.kv,
        };
        if !(bases.kva > 0.0 && bases.kv > 0.0) {
            return Err(Error::Input("bases must be positive".into()));
        }
        let zb = bases.z_ohm();
        let ib = bases.i_amp();
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut spec = NodeSpec::new(n.id.clone(), n.phases);
                spec.vmin = n.vmin.unwrap_or(0.0);
                spec.vmax = n.vmax.unwrap_or(f64::INFINITY);
                if let Some(cap) = &n.capacitor {
                    spec.switch_levels = cap.switch_levels.clone();
                    spec.capacitor = cap
                        .susceptance_per_phase
                        .or_else(|| cap.switch_levels.first().copied())
                        .unwrap_or([0.0; 3]);
                }
                if let Some(pf) = &n.min_pf {
                    let v = pf.expand(3, &format!("node {} min_pf", n.id))?;
                    spec.min_pf = [v[0], v[1], v[2]];
                }
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = FeederModel {
            nodes,
            lines: Vec::new(),
            dg: Vec::new(),
            elastic: Vec::new(),
            bases,
        };
        let idx = |m: &FeederModel, id: &str| m.node_index(id).ok_or_else(|| Error::UnknownNode(id.to_string()));

        for l in &self.lines {
            let name = format!("{}-{}", l.from, l.to);
            let from = idx(&model, &l.from)?;
            let to = idx(&model, &l.to)?;
            let k = l.phases.len();
            let (z, t) = match (&l.primitive_z, &l.z_phase) {
                (Some(p), None) => {
                    let prim = p.to_matrix(&name)? / Complex64::new(zb, 0.0);
                    if let Some(q) = l.neutrals {
                        if prim.nrows() != k + q {
                            return Err(Error::Input(format!(
                                "line {name}: primitive is {0}x{0}, expected {1} phases + {q} neutrals",
                                prim.nrows(),
                                k
                            )));
                        }
                    }
                    let (z, t) = kron_reduce(&prim, k)?;
                    (z, if t.nrows() > 0 { Some(t) } else { None })
                }
                (None, Some(zp)) => (zp.to_matrix(&name)?, None),
                _ => {
                    return Err(Error::Input(format!(
                        "line {name}: give exactly one of primitive_z and z_phase"
                    )))
                }
            };
            let mut line = LineSegment::new(from, to, l.phases, z);
            if let Some(y) = &l.y_shunt {
                line.y_shunt = y.to_matrix(&name)? * Complex64::new(zb, 0.0);
            }
            line.neutral_map = t;
            line.i_max = l.i_max.map(|a| a / ib);
            line.p_loss_max = l.p_loss_max.map(|kw| kw / bases.kva);
            line.i_neutral_max = l.i_neutral_max.as_ref().map(|v| v.iter().map(|a| a / ib).collect());
            model.lines.push(line);
        }
        for d in &self.dg {
            model.dg.push(DgUnit {
                node: idx(&model, &d.node)?,
                phases: d.phases,
                pmin: d.pmin / bases.kva,
                pmax: d.pmax / bases.kva,
                qmin: d.qmin / bases.kva,
                qmax: d.qmax / bases.kva,
            });
        }
        for e in &self.elastic {
            model.elastic.push(ElasticLoad {
                node: idx(&model, &e.node)?,
                phase: parse_phase(&e.phase)?,
                energy: e.energy_kwh / bases.kva,
                window: (e.window[0], e.window[1]),
                cap: e.cap_kw.map(|c| c / bases.kva),
            });
        }
        Ok(model)
    }
}

impl ScenarioFile {
    pub fn to_scenario(&self, model: &FeederModel) -> Result<HorizonScenario> {
        let t = self.t;
        let kva = model.bases.kva;
        let nn = model.nodes.len();
        let mut p_load = vec![vec![[0.0; 3]; nn]; t];
        let mut q_load = vec![vec![[0.0; 3]; nn]; t];
        for (node, phases) in &self.loads {
            let n = model.node_index(node).ok_or_else(|| Error::UnknownNode(node.clone()))?;
            for (ph, series) in phases {
                let p = parse_phase(ph)?;
                if !model.nodes[n].phases.contains(p) {
                    return Err(Error::UnknownPhase {
                        node: node.clone(),
                        phase: p.letter(),
                    });
                }
                if series.p.len() != t || series.q.len() != t {
                    return Err(Error::Input(format!("load {node}.{ph}: series length differs from T = {t}")));
                }
                for s in 0..t {
                    p_load[s][n][p.index()] += series.p[s] / kva;
                    q_load[s][n][p.index()] += series.q[s] / kva;
                }
            }
        }
        let vmag = self.pcc.vmag.expand(t, "pcc.vmag")?;
        let pcc_voltage = vmag
            .iter()
            .map(|&m| {
                let a = self.pcc.angles_deg;
                [0, 1, 2].map(|k| Complex64::from_polar(m, a[k].to_radians()))
            })
            .collect();
        let pf = self.pcc_min_pf.expand(t, "pcc_min_pf")?;
        Ok(HorizonScenario {
            slots: t,
            dt_hours: self.dt_hours,
            kappa: self.kappa.clone(),
            dg_cost: self.dg_cost.clone(),
            p_load,
            q_load,
            pcc_voltage,
            pcc_min_pf: pf.iter().map(|&e| [e; 3]).collect(),
            w_v: self.w_v,
            v_ref: self.v_ref,
        })
    }
}

pub fn parse_feeder(text: &str) -> Result<FeederModel> {
    serde_json::from_str::<FeederFile>(text)?.to_model()
}

pub fn parse_scenario(text: &str, model: &FeederModel) -> Result<HorizonScenario> {
    serde_json::from_str::<ScenarioFile>(text)?.to_scenario(model)
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<FeederModel> {
    parse_feeder(&read(path.as_ref())?)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    Ok(serde_json::from_str(&read(path.as_ref())?)?)
}

pub fn load_scenario(path: impl AsRef<Path>, model: &FeederModel) -> Result<HorizonScenario> {
    load_scenario_file(path)?.to_scenario(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FEEDER: &str = r#"{
        "bases": {"kva": 1000, "kv": 2.0},
        "nodes": [
            {"id": "src", "phases": "abc"},
            {"id": "load", "phases": "ac", "vmin": 0.9, "vmax": 1.1,
             "capacitor": {"switch_levels": [[0.1, 0, 0.1], [0, 0, 0]]}, "min_pf": [0.9, 0, 0]}
        ],
        "lines": [
            {"from": "src", "to": "load", "phases": "ac",
             "primitive_z": {"re": [[1, 0.2, 0.1], [0.2, 1, 0.1], [0.1, 0.1, 2]],
                             "im": [[2, 0.5, 0.4], [0.5, 2, 0.4], [0.4, 0.4, 2.5]]},
             "y_shunt": {"im": [[1e-4, 0], [0, 1e-4]]},
             "neutrals": 1, "i_max": 500}
        ],
        "dg": [{"node": "load", "phases": "a", "pmin": 0, "pmax": 100, "qmin": -50, "qmax": 50}],
        "elastic": [{"node": "load", "phase": "c", "energy_kwh": 20, "window": [2, 3], "cap_kw": 15}]
    }"#;

    #[test]
    fn feeder_units_are_converted() {
        let m = parse_feeder(FEEDER).unwrap();
        let zb = 4.0;
        assert_eq!(m.nodes.len(), 2);
        assert_eq!(m.nodes[1].capacitor, [0.1, 0.0, 0.1]);
        assert_eq!(m.nodes[1].switch_levels.len(), 2);
        let line = &m.lines[0];
        assert_eq!(line.neutrals(), 1);
        // z11 - z13 z31 / z33 in ohms, then per-unit
        let z = |r: f64, x: f64| Complex64::new(r, x);
        let expect = (z(1.0, 2.0) - z(0.1, 0.4) * z(0.1, 0.4) / z(2.0, 2.5)) / zb;
        assert!((line.z[(0, 0)] - expect).norm() < 1e-12);
        assert!((line.y_shunt[(0, 0)].im - 4e-4).abs() < 1e-15);
        assert!((line.i_max.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.dg[0].pmax - 0.1).abs() < 1e-15);
        assert!((m.elastic[0].cap.unwrap() - 0.015).abs() < 1e-15);
        assert_eq!(m.elastic[0].phase, Phase::C);
    }

    #[test]
    fn scenario_expands_scalars() {
        let m = parse_feeder(FEEDER).unwrap();
        let s = parse_scenario(
            r#"{"T": 3, "dt_hours": 1, "kappa": [1, 2, 3], "dg_cost": [[5, 5, 5]],
                "loads": {"load": {"a": {"p": [100, 200, 300], "q": [10, 20, 30]}}},
                "pcc": {"vmag": 1.0, "angles_deg": [0, -120, 120]}, "pcc_min_pf": 0.8}"#,
            &m,
        )
        .unwrap();
        assert_eq!(s.pcc_min_pf, vec![[0.8; 3]; 3]);
        assert!((s.p_load[2][1][0] - 0.3).abs() < 1e-15);
        assert!((s.pcc_voltage[0][1].arg().to_degrees() + 120.0).abs() < 1e-12);
        assert!(parse_scenario(
            r#"{"T": 2, "dt_hours": 1, "kappa": [1, 2],
                "loads": {"load": {"b": {"p": [1, 1], "q": [0, 0]}}},
                "pcc": {"vmag": 1.0, "angles_deg": [0, -120, 120]}}"#,
            &m
        )
        .is_err());
    }
}
