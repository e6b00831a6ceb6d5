//! Independent load-flow checks: a Z-bus fixed point for given injections
//! and an exhaustive grid search for feeders with at most two unknown
//! voltage entries.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrices::{build_system_admittance, IndexMap};
use crate::model::{CMat, FeederModel, HorizonScenario};
use crate::recovery::{power_factor, DispatchSolution};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Bus admittance with capacitor susceptances added on the diagonal.
pub fn admittance_with_capacitors(model: &FeederModel) -> Result<CMat> {
    let mut y = build_system_admittance(model)?;
    let index = IndexMap::new(model);
    for (k, n, p) in index.entries() {
        y[(k, k)] += Complex64::new(0.0, model.nodes[n].capacitor[p.index()]);
    }
    Ok(y)
}

/// Solves `v ⊙ conj(Y v) = s` on the non-PCC rows with the PCC rows fixed to
/// `v0` by iterating `v ← Y₂₂⁻¹(conj(s ⊘ v) − Y₂₁ v₀)`.
///
/// `s` holds one injection per non-PCC row (positive = generation).
pub fn zbus_fixed_point(
    y: &CMat,
    injections: &[Complex64],
    v0: &[Complex64],
    tol: f64,
    max_iter: usize,
) -> Result<DVector<Complex64>> {
    let n = y.nrows();
    let m = v0.len();
    if injections.len() != n - m {
        return Err(Error::Input(format!(
            "{} injections for {} free rows",
            injections.len(),
            n - m
        )));
    }
    let y22 = y.view((m, m), (n - m, n - m)).into_owned();
    let y21 = y.view((m, 0), (n - m, m));
    let lu = y22.lu();
    let v0v = DVector::from_column_slice(v0);
    let base = -(y21 * &v0v);
    let mut v2 = lu.solve(&base).ok_or(Error::Input("singular admittance block".into()))?;
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let rhs = DVector::from_iterator(
            n - m,
            (0..n - m).map(|k| (injections[k] / v2[k]).conj() + base[k]),
        );
        let next = lu.solve(&rhs).ok_or(Error::Input("singular admittance block".into()))?;
        change = (&next - &v2).iter().map(|c| c.norm()).fold(0.0, f64::max);
        v2 = next;
        if !change.is_finite() {
            break;
        }
        if change < tol {
            let mut v = DVector::zeros(n);
            v.rows_mut(0, m).copy_from(&v0v);
            v.rows_mut(m, n - m).copy_from(&v2);
            return Ok(v);
        }
    }
    Err(Error::LoadFlowDiverged {
        iterations: max_iter,
        change,
    })
}

/// Complex power `v ⊙ conj(Y v)` at every row.
pub fn power_mismatch(y: &CMat, v: &DVector<Complex64>) -> Vec<Complex64> {
    let i = y * v;
    v.iter().zip(i.iter()).map(|(a, b)| a * b.conj()).collect()
}

/// Non-PCC injections implied by a recovered schedule in slot `t`:
/// dispatched generation minus loads and elastic consumption.
pub fn scheduled_injections(
    sol: &DispatchSolution,
    model: &FeederModel,
    scenario: &HorizonScenario,
    t: usize,
) -> Vec<Complex64> {
    let index = IndexMap::new(model);
    let slot = &sol.slots[t];
    index
        .entries()
        .skip(index.pcc_len())
        .map(|(_, n, p)| {
            let el: f64 = model
                .elastic
                .iter()
                .zip(&sol.elastic)
                .filter(|(e, _)| e.node == n && e.phase == p)
                .map(|(_, s)| s[t])
                .sum();
            let (pg, qg) = match model.dg_at(n, p) {
                Some(d) => (slot.dg_p[d][p.index()], slot.dg_q[d][p.index()]),
                None => (0.0, 0.0),
            };
            Complex64::new(
                pg - scenario.p_load[t][n][p.index()] - el,
                qg - scenario.q_load[t][n][p.index()],
            )
        })
        .collect()
}

/// Grid description for [`brute_force_opf`]. Angles are offsets from the
/// PCC phasor of the same phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchGrid {
    pub vmag_min: f64,
    pub vmag_max: f64,
    pub vmag_step: f64,
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    pub angle_step_deg: f64,
    /// Tolerance on balance equalities at entries without generation.
    pub eq_tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOptimum {
    pub objective: f64,
    pub voltages: DVector<Complex64>,
    pub feasible_points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridOutcome {
    Optimal(GridOptimum),
    Infeasible,
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || hi < lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// Exhaustive search over voltage magnitude and angle of every non-PCC
/// entry (at most two) for the cheapest point meeting balance, generation,
/// voltage, current and PCC power-factor limits of slot `t`.
pub fn brute_force_opf(
    model: &FeederModel,
    scenario: &HorizonScenario,
    t: usize,
    grid: &SearchGrid,
) -> Result<GridOutcome> {
    let index = IndexMap::new(model);
    let n = index.n_tot();
    let m = index.pcc_len();
    let free = n - m;
    if free == 0 || free > 2 {
        return Err(Error::Input(format!("grid search supports 1 or 2 free entries, found {free}")));
    }
    if !model.elastic.is_empty() {
        return Err(Error::Input("grid search does not schedule elastic loads".into()));
    }
    let y = admittance_with_capacitors(model)?;
    let mags = steps(grid.vmag_min, grid.vmag_max, grid.vmag_step);
    let angs = steps(grid.angle_min_deg, grid.angle_max_deg, grid.angle_step_deg);
    let mut v = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for k in 0..m {
        let (_, p) = index.entry(k);
        v[k] = scenario.pcc_voltage[t][p.index()];
    }
    let ref_angle: Vec<f64> = (m..n)
        .map(|k| scenario.pcc_voltage[t][index.entry(k).1.index()].arg())
        .collect();
    let mw = model.bases.mw();
    let mut best: Option<GridOptimum> = None;
    let mut feasible = 0usize;

    let combos = mags.len() * angs.len();
    let total = combos.pow(free as u32);
    for code in 0..total {
        let mut c = code;
        for f in 0..free {
            let mi = c % combos;
            c /= combos;
            let mag = mags[mi / angs.len()];
            let ang = angs[mi % angs.len()].to_radians() + ref_angle[f];
            v[m + f] = Complex64::from_polar(mag, ang);
        }
        if let Some(cost) = evaluate(model, scenario, t, &index, &y, &v, grid.eq_tol, mw) {
            feasible += 1;
            if best.as_ref().is_none_or(|b| cost < b.objective) {
                best = Some(GridOptimum {
                    objective: cost,
                    voltages: v.clone(),
                    feasible_points: 0,
                });
            }
        }
    }
    Ok(match best {
        Some(mut b) => {
            b.feasible_points = feasible;
            GridOutcome::Optimal(b)
        }
        None => GridOutcome::Infeasible,
    })
}

/// Cost of a voltage point, or `None` when it violates a limit.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &FeederModel,
    scenario: &HorizonScenario,
    t: usize,
    index: &IndexMap,
    y: &CMat,
    v: &DVector<Complex64>,
    eq_tol: f64,
    mw: f64,
) -> Option<f64> {
    let s = power_mismatch(y, v);
    let mut cost = 0.0;
    for (k, n, p) in index.entries() {
        if n == 0 {
            let (p0, q0) = (s[k].re, s[k].im);
            let eta = scenario.pcc_min_pf[t][p.index()];
            if eta > 0.0 && (p0 < 0.0 || power_factor(p0, q0) < eta) {
                return None;
            }
            cost += scenario.kappa[t] * mw * p0;
            continue;
        }
        let node = &model.nodes[n];
        let vm = v[k].norm();
        if vm < node.vmin || vm > node.vmax {
            return None;
        }
        let pg = s[k].re + scenario.p_load[t][n][p.index()];
        let qg = s[k].im + scenario.q_load[t][n][p.index()];
        match model.dg_at(n, p) {
            Some(d) => {
                let dg = &model.dg[d];
                if pg < dg.pmin - eq_tol || pg > dg.pmax + eq_tol || qg < dg.qmin - eq_tol || qg > dg.qmax + eq_tol {
                    return None;
                }
                cost += scenario.dg_cost[d][t] * mw * pg;
            }
            None => {
                if pg.abs() > eq_tol || qg.abs() > eq_tol {
                    return None;
                }
            }
        }
    }
    let index_rows = |node: usize, l: &crate::model::LineSegment| -> Vec<usize> {
        l.phases.iter().map(|p| index.row(model, node, p).unwrap()).collect()
    };
    for line in &model.lines {
        let Some(imax) = line.i_max else { continue };
        let rm = index_rows(line.from, line);
        let rn = index_rows(line.to, line);
        let dv = DVector::from_iterator(rm.len(), rm.iter().zip(&rn).map(|(&a, &b)| v[a] - v[b]));
        let zinv = line.z.clone().try_inverse()?;
        let i = zinv * dv;
        if i.iter().any(|c| c.norm() > imax) {
            return None;
        }
    }
    Some(cost)
}
