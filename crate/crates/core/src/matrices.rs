//! System admittance matrix and the Hermitian quadratic forms for nodal
//! power, squared voltage magnitude, and line/neutral current magnitude.
//!
//! All forms act on the scaled voltage vector `x = D⁻¹ v`, where `D` is
//! diagonal with the PCC phasors on PCC rows and ones elsewhere, so the PCC
//! entries of `x` are exactly one.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{CMat, FeederModel, HorizonScenario};
use crate::phase::Phase;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Dense row numbering of the (node, phase) pairs, PCC first.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    offsets: Vec<usize>,
    rows: Vec<(usize, Phase)>,
    pcc_len: usize,
}

impl IndexMap {
    pub fn new(model: &FeederModel) -> Self {
        let mut offsets = Vec::with_capacity(model.nodes.len());
        let mut rows = Vec::new();
        for (n, node) in model.nodes.iter().enumerate() {
            offsets.push(rows.len());
            rows.extend(node.phases.iter().map(|p| (n, p)));
        }
        let pcc_len = model.nodes.first().map_or(0, |n| n.phases.len());
        Self {
            offsets,
            rows,
            pcc_len,
        }
    }

    pub fn n_tot(&self) -> usize {
        self.rows.len()
    }

    /// Number of leading rows that belong to the PCC.
    pub fn pcc_len(&self) -> usize {
        self.pcc_len
    }

    pub fn row(&self, model: &FeederModel, node: usize, phase: Phase) -> Option<usize> {
        let pos = model.nodes.get(node)?.phases.position(phase)?;
        Some(self.offsets[node] + pos)
    }

    pub fn entry(&self, row: usize) -> (usize, Phase) {
        self.rows[row]
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Phase)> + '_ {
        self.rows.iter().enumerate().map(|(r, &(n, p))| (r, n, p))
    }
}

fn line_rows(model: &FeederModel, index: &IndexMap, l: usize) -> (Vec<usize>, Vec<usize>) {
    let line = &model.lines[l];
    let rm = line.phases.iter().map(|p| index.row(model, line.from, p).unwrap()).collect();
    let rn = line.phases.iter().map(|p| index.row(model, line.to, p).unwrap()).collect();
    (rm, rn)
}

fn line_admittance(model: &FeederModel, l: usize) -> Result<CMat> {
    let z = &model.lines[l].z;
    let inv = z.clone().try_inverse().ok_or_else(|| Error::SingularImpedance { line: model.line_name(l) })?;
    if inv.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SingularImpedance { line: model.line_name(l) });
    }
    Ok(inv)
}

/// Assembles the bus admittance matrix of the π-model network.
pub fn build_system_admittance(model: &FeederModel) -> Result<CMat> {
    let index = IndexMap::new(model);
    let n = index.n_tot();
    let mut y = CMat::zeros(n, n);
    for l in 0..model.lines.len() {
        let zinv = line_admittance(model, l)?;
        let half = &model.lines[l].y_shunt * Complex64::new(0.5, 0.0);
        let (rm, rn) = line_rows(model, &index, l);
        for a in 0..rm.len() {
            for b in 0..rm.len() {
                let self_term = zinv[(a, b)] + half[(a, b)];
                y[(rm[a], rm[b])] += self_term;
                y[(rn[a], rn[b])] += self_term;
                y[(rm[a], rn[b])] -= zinv[(a, b)];
                y[(rn[a], rm[b])] -= zinv[(a, b)];
            }
        }
    }
    Ok(y)
}

/// Diagonal of the PCC scaling matrix for one slot.
pub fn pcc_scaling(model: &FeederModel, scenario: &HorizonScenario, slot: usize) -> Vec<Complex64> {
    let index = IndexMap::new(model);
    (0..index.n_tot())
        .map(|r| {
            let (n, p) = index.entry(r);
            if n == 0 {
                scenario.pcc_voltage[slot][p.index()]
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect()
}

/// `Dᴴ M D` for diagonal `D = diag(a)`.
fn congruence(m: &mut CMat, a: &[Complex64]) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] != ZERO {
                m[(i, j)] = a[i].conj() * m[(i, j)] * a[j];
            }
        }
    }
}

/// Hermitian forms for active power, reactive power and squared voltage
/// magnitude of one (node, phase) entry.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiTriplet {
    pub p: CMat,
    pub q: CMat,
    pub v: CMat,
}

fn phi_triplet_at(y: &CMat, a: &[Complex64], k: usize) -> PhiTriplet {
    let n = y.nrows();
    let mut sum = CMat::zeros(n, n);
    let mut diff = CMat::zeros(n, n);
    for j in 0..n {
        let ykj = y[(k, j)];
        if ykj == ZERO {
            continue;
        }
        sum[(k, j)] += ykj;
        sum[(j, k)] += ykj.conj();
        diff[(k, j)] += ykj;
        diff[(j, k)] -= ykj.conj();
    }
    congruence(&mut sum, a);
    congruence(&mut diff, a);
    let p = sum * Complex64::new(0.5, 0.0);
    let q = diff * Complex64::new(0.0, 0.5);
    let mut v = CMat::zeros(n, n);
    v[(k, k)] = Complex64::new(a[k].norm_sqr(), 0.0);
    PhiTriplet { p, q, v }
}

pub fn build_phi_triplet(
    y: &CMat,
    model: &FeederModel,
    scenario: &HorizonScenario,
    node: usize,
    phase: Phase,
    slot: usize,
) -> Result<PhiTriplet> {
    let index = IndexMap::new(model);
    let k = index.row(model, node, phase).ok_or_else(|| Error::UnknownPhase {
        node: model.nodes.get(node).map_or_else(|| node.to_string(), |n| n.id.clone()),
        phase: phase.letter(),
    })?;
    Ok(phi_triplet_at(y, &pcc_scaling(model, scenario, slot), k))
}

/// Series current operator of a line: `i = B v`, one row per line phase.
fn current_operator(model: &FeederModel, index: &IndexMap, l: usize) -> Result<CMat> {
    let zinv = line_admittance(model, l)?;
    let (rm, rn) = line_rows(model, index, l);
    let mut b = CMat::zeros(rm.len(), index.n_tot());
    for r in 0..rm.len() {
        for c in 0..rm.len() {
            b[(r, rm[c])] += zinv[(r, c)];
            b[(r, rn[c])] -= zinv[(r, c)];
        }
    }
    Ok(b)
}

/// `bᴴ b` for a row vector `b`, after column scaling by `a`.
fn outer_row(row: &[Complex64], a: &[Complex64]) -> CMat {
    let n = row.len();
    let b: Vec<Complex64> = row.iter().zip(a).map(|(r, s)| r * s).collect();
    CMat::from_fn(n, n, |i, j| b[i].conj() * b[j])
}

pub fn build_line_current_matrix(
    model: &FeederModel,
    scenario: &HorizonScenario,
    line: usize,
    phase: Phase,
    slot: usize,
) -> Result<CMat> {
    let index = IndexMap::new(model);
    let pos = model.lines[line].phases.position(phase).ok_or_else(|| Error::PhaseNotOnLine {
        line: model.line_name(line),
        phase: phase.letter(),
    })?;
    let b = current_operator(model, &index, line)?;
    let row: Vec<Complex64> = b.row(pos).iter().copied().collect();
    Ok(outer_row(&row, &pcc_scaling(model, scenario, slot)))
}

pub fn build_neutral_current_matrix(
    model: &FeederModel,
    scenario: &HorizonScenario,
    line: usize,
    neutral: usize,
    slot: usize,
) -> Result<CMat> {
    let index = IndexMap::new(model);
    let t = model.lines[line]
        .neutral_map
        .as_ref()
        .filter(|t| neutral < t.nrows())
        .ok_or_else(|| Error::NoNeutral { line: model.line_name(line) })?;
    let b = current_operator(model, &index, line)?;
    let tb = t * b;
    let row: Vec<Complex64> = tb.row(neutral).iter().copied().collect();
    Ok(outer_row(&row, &pcc_scaling(model, scenario, slot)))
}

/// Forms for every entry, line phase and neutral of one PCC operating point.
#[derive(Clone, Debug)]
pub struct SlotMatrices {
    pub pcc_scale: Vec<Complex64>,
    /// Indexed by row of the [`IndexMap`].
    pub phi: Vec<PhiTriplet>,
    /// `[line][position within line phases]`
    pub line_current: Vec<Vec<CMat>>,
    /// `[line][neutral]`
    pub neutral_current: Vec<Vec<CMat>>,
}

/// All matrices of a horizon. Slots sharing the same PCC phasors share one
/// [`SlotMatrices`].
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub index: IndexMap,
    pub y: CMat,
    /// Series current operators, one per line.
    pub current_ops: Vec<CMat>,
    variants: Vec<SlotMatrices>,
    slot_variant: Vec<usize>,
}

impl SystemMatrices {
    pub fn build(model: &FeederModel, scenario: &HorizonScenario) -> Result<Self> {
        let index = IndexMap::new(model);
        let y = build_system_admittance(model)?;
        let current_ops = (0..model.lines.len())
            .map(|l| current_operator(model, &index, l))
            .collect::<Result<Vec<_>>>()?;
        let mut variants: Vec<SlotMatrices> = Vec::new();
        let mut slot_variant = Vec::with_capacity(scenario.slots);
        for t in 0..scenario.slots {
            let a = pcc_scaling(model, scenario, t);
            if let Some(v) = variants.iter().position(|v| v.pcc_scale == a) {
                slot_variant.push(v);
                continue;
            }
            let phi = (0..index.n_tot()).map(|k| phi_triplet_at(&y, &a, k)).collect();
            let mut line_current = Vec::new();
            let mut neutral_current = Vec::new();
            for (l, b) in current_ops.iter().enumerate() {
                line_current.push(
                    (0..b.nrows())
                        .map(|r| outer_row(&b.row(r).iter().copied().collect::<Vec<_>>(), &a))
                        .collect(),
                );
                let neutral = match &model.lines[l].neutral_map {
                    Some(t) => {
                        let tb = t * b;
                        (0..tb.nrows())
                            .map(|r| outer_row(&tb.row(r).iter().copied().collect::<Vec<_>>(), &a))
                            .collect()
                    }
                    None => Vec::new(),
                };
                neutral_current.push(neutral);
            }
            variants.push(SlotMatrices {
                pcc_scale: a,
                phi,
                line_current,
                neutral_current,
            });
            slot_variant.push(variants.len() - 1);
        }
        Ok(Self {
            index,
            y,
            current_ops,
            variants,
            slot_variant,
        })
    }

    pub fn slot(&self, t: usize) -> &SlotMatrices {
        &self.variants[self.slot_variant[t]]
    }

    pub fn slots(&self) -> usize {
        self.slot_variant.len()
    }

    /// Number of distinct PCC operating points actually built.
    pub fn distinct_variants(&self) -> usize {
        self.variants.len()
    }

    pub fn n_tot(&self) -> usize {
        self.index.n_tot()
    }
}

/// `xᴴ H x`, real part.
pub fn quad_form(h: &CMat, x: &DVector<Complex64>) -> f64 {
    (x.adjoint() * h * x)[(0, 0)].re
}

/// `Tr(H X)`, real part.
pub fn trace_product(h: &CMat, x: &CMat) -> f64 {
    let n = h.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let hij = h[(i, j)];
            if hij != ZERO {
                s += (hij * x[(j, i)]).re;
            }
        }
    }
    s
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_deviation(h: &CMat) -> f64 {
    let n = h.nrows();
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            d = d.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    d
}
