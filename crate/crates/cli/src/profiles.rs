//! Seeded load-profile generation.

use std::collections::BTreeMap;

use dispatch_core::io::{LoadSeries, PccEntry, ScalarOrList, ScenarioFile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakLoad {
    /// kW
    pub p: f64,
    /// kvar
    pub q: f64,
}

/// Everything needed to expand peak loads into a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub dt_hours: f64,
    pub kappa: Vec<f64>,
    /// One entry per generator, a constant or a full series.
    #[serde(default)]
    pub dg_cost: Vec<ScalarOrList>,
    pub pcc: PccEntry,
    #[serde(default)]
    pub pcc_min_pf: Option<ScalarOrList>,
    #[serde(default)]
    pub w_v: Option<f64>,
    #[serde(default)]
    pub v_ref: Option<f64>,
    /// Standard deviation of the multiplicative noise (mean 1).
    pub std: f64,
    pub shapes: BTreeMap<String, Vec<f64>>,
    pub default_shape: String,
    #[serde(default)]
    pub node_shapes: BTreeMap<String, String>,
    /// node id -> phase letter -> peak load
    pub base_loads: BTreeMap<String, BTreeMap<String, PeakLoad>>,
}

/// Expands `spec` into a scenario. One multiplier `g ~ N(1, std)`, clamped
/// at zero, is drawn per node and slot and applied to both P and Q of every
/// phase at that node.
pub fn generate(spec: &ProfileSpec, seed: u64) -> Result<ScenarioFile, CliError> {
    let t = spec.t;
    if spec.kappa.len() != t {
        return Err(CliError::Input(format!("kappa has {} entries, T = {t}", spec.kappa.len())));
    }
    for (name, shape) in &spec.shapes {
        if shape.len() != t {
            return Err(CliError::Input(format!("shape '{name}' has {} entries, T = {t}", shape.len())));
        }
    }
    let shape_of = |node: &str| -> Result<&Vec<f64>, CliError> {
        let name = spec.node_shapes.get(node).unwrap_or(&spec.default_shape);
        spec.shapes
            .get(name)
            .ok_or_else(|| CliError::Input(format!("unknown shape '{name}'")))
    };
    let noise = Normal::new(1.0, spec.std)
        .map_err(|e| CliError::Input(format!("std = {}: {e}", spec.std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loads = BTreeMap::new();
    for (node, phases) in &spec.base_loads {
        let shape = shape_of(node)?;
        let g: Vec<f64> = (0..t).map(|_| noise.sample(&mut rng).max(0.0)).collect();
        let mut per_phase = BTreeMap::new();
        for (ph, peak) in phases {
            let series = LoadSeries {
                p: (0..t).map(|s| peak.p * shape[s] * g[s]).collect(),
                q: (0..t).map(|s| peak.q * shape[s] * g[s]).collect(),
            };
            per_phase.insert(ph.clone(), series);
        }
        loads.insert(node.clone(), per_phase);
    }
    let dg_cost = spec
        .dg_cost
        .iter()
        .enumerate()
        .map(|(d, c)| match c {
            ScalarOrList::Scalar(v) => Ok(vec![*v; t]),
            ScalarOrList::List(l) if l.len() == t => Ok(l.clone()),
            ScalarOrList::List(l) => Err(CliError::Input(format!(
                "dg_cost[{d}] has {} entries, T = {t}",
                l.len()
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioFile {
        t,
        dt_hours: spec.dt_hours,
        kappa: spec.kappa.clone(),
        dg_cost,
        loads,
        pcc: spec.pcc.clone(),
        pcc_min_pf: spec.pcc_min_pf.clone().unwrap_or(ScalarOrList::Scalar(0.0)),
        w_v: spec.w_v.unwrap_or(0.5),
        v_ref: spec.v_ref.unwrap_or(1.0),
    })
}
