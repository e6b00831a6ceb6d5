//! Primal-dual path-following solver on the homogeneous self-dual embedding.
//!
//! Natural-form programs are converted to the standard form
//! `min <c, x>  s.t.  A x = b,  x ∈ K` by adding one slack per inequality,
//! then rows are equilibrated and `b`, `c` normalized. Iterates follow the
//! embedding
//!
//! ```text
//!   A x - b τ = 0,   c τ - Aᵀ y - s = 0,   bᵀ y - <c, x> - κ = 0,
//!   (x, τ) ∈ K × R+,  (s, κ) ∈ K × R+
//! ```
//!
//! with Nesterov–Todd scaling and a Mehrotra predictor-corrector. Every
//! Newton system is reduced to the Schur matrix `A H Aᵀ` (H the NT scaling
//! operator) plus one scalar equation for `dτ`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::program::{ConicProgram, ConstraintKind, SymSparse};
use crate::schur::{SchurFactor, SchurLayout, SchurMatrix};
use crate::ConicError;

const CG_STEPS: usize = 25;
const STALL_ITERATIONS: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Relative tolerance on primal/dual feasibility and duality gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Steps shorter than this for three consecutive iterations abort the solve.
    pub min_step: f64,
    /// Initial relative diagonal regularization of the Schur matrix.
    pub reg_eps: f64,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            step_fraction: 0.98,
            min_step: 1e-9,
            reg_eps: 1e-13,
            verbose: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConicError> {
        if !(self.tol > 0.0) {
            return Err(ConicError::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(ConicError::Config("max_iter must be at least 1".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(ConicError::Config(format!(
                "step fraction must lie in (0, 1), got {}",
                self.step_fraction
            )));
        }
        if !(self.reg_eps >= 0.0) {
            return Err(ConicError::Config("regularization must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    NumericalFailure,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::PrimalInfeasible => "primal-infeasible",
            SolverStatus::DualInfeasible => "dual-infeasible",
            SolverStatus::IterationLimit => "iteration-limit",
            SolverStatus::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relative residuals of the normalized problem.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationInfo {
    pub iter: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub tau: f64,
    pub kappa: f64,
    pub mu: f64,
    pub step: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct SolverResult {
    pub status: SolverStatus,
    /// Primal PSD blocks, in program order.
    pub psd: Vec<DMatrix<f64>>,
    /// Primal scalar variables.
    pub scalars: Vec<f64>,
    /// One multiplier per program constraint.
    pub duals: Vec<f64>,
    /// Dual slack blocks paired with `psd`.
    pub dual_psd: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    /// Normalized Farkas ray: multipliers `y` with `bᵀy = 1` when primal
    /// infeasible, or the primal scalar ray when dual infeasible.
    pub certificate: Option<Vec<f64>>,
    pub history: Vec<IterationInfo>,
    pub solve_seconds: f64,
}

impl SolverResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

/// Vector in the product cone space.
#[derive(Clone, Debug)]
struct ConeVec {
    psd: Vec<DMatrix<f64>>,
    lp: DVector<f64>,
}

impl ConeVec {
    fn dot(&self, o: &ConeVec) -> f64 {
        let a: f64 = self.psd.iter().zip(&o.psd).map(|(x, y)| x.dot(y)).sum();
        a + self.lp.dot(&o.lp)
    }
    fn axpy(&mut self, a: f64, o: &ConeVec) {
        for (x, y) in self.psd.iter_mut().zip(&o.psd) {
            *x += y * a;
        }
        self.lp.axpy(a, &o.lp, 1.0);
    }
    fn scaled(&self, a: f64) -> ConeVec {
        ConeVec {
            psd: self.psd.iter().map(|m| m * a).collect(),
            lp: &self.lp * a,
        }
    }
    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

struct BlockData {
    dim: usize,
    structured: bool,
    c: DMatrix<f64>,
    rows: Vec<(usize, SymSparse, Vec<usize>)>,
}

/// Scaled standard-form data.
struct StdForm {
    m: usize,
    b: DVector<f64>,
    blocks: Vec<BlockData>,
    c_lp: DVector<f64>,
    lp_cols: Vec<Vec<(usize, f64)>>,
    row_scale: Vec<f64>,
    prim_scale: f64,
    obj_scale: f64,
    n_user_lp: usize,
    layout: SchurLayout,
    nu: f64,
}

/// Averages a structured block onto `[[A, -B], [B, A]]`.
fn project_structure(m: &mut DMatrix<f64>) {
    let n = m.nrows() / 2;
    for i in 0..n {
        for j in 0..n {
            let a = 0.5 * (m[(i, j)] + m[(n + i, n + j)]);
            m[(i, j)] = a;
            m[(n + i, n + j)] = a;
            let k = 0.5 * (m[(n + i, j)] - m[(i, n + j)]);
            m[(n + i, j)] = k;
            m[(i, n + j)] = -k;
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl StdForm {
    fn build(p: &ConicProgram) -> Self {
        let m = p.constraints.len();
        let n_slack = p
            .constraints
            .iter()
            .filter(|c| c.kind != ConstraintKind::Eq)
            .count();
        let n_lp = p.n_scalar + n_slack;

        let row_scale: Vec<f64> = p
            .constraints
            .iter()
            .map(|c| {
                let mx = c.expr.max_abs();
                if mx > 0.0 {
                    1.0 / mx
                } else {
                    1.0
                }
            })
            .collect();
        let b_raw: Vec<f64> = p
            .constraints
            .iter()
            .zip(&row_scale)
            .map(|(c, r)| c.rhs * r)
            .collect();
        let prim_scale = b_raw.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let obj_scale = p.objective.max_abs().max(1.0);

        let b = DVector::from_iterator(m, b_raw.iter().map(|v| v / prim_scale));

        let mut blocks: Vec<BlockData> = p
            .blocks
            .iter()
            .map(|blk| BlockData {
                dim: blk.dim,
                structured: blk.complex_structure,
                c: DMatrix::zeros(blk.dim, blk.dim),
                rows: Vec::new(),
            })
            .collect();
        for (bidx, mat) in &p.objective.psd {
            mat.add_to_dense(&mut blocks[*bidx].c, 1.0 / obj_scale);
        }
        let mut c_lp = DVector::zeros(n_lp);
        for &(k, v) in &p.objective.lp {
            c_lp[k] += v / obj_scale;
        }

        let mut lp_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_lp];
        let mut row_blocks: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut slack = p.n_scalar;
        for (i, con) in p.constraints.iter().enumerate() {
            let r = row_scale[i];
            for (bidx, mat) in &con.expr.psd {
                let mut a = mat.clone();
                a.compress();
                if a.entries.is_empty() {
                    continue;
                }
                a.scale(r);
                let sup = a.support();
                blocks[*bidx].rows.push((i, a, sup));
                row_blocks[i].push(*bidx);
            }
            let mut merged: Vec<(usize, f64)> = Vec::new();
            for &(k, v) in &con.expr.lp {
                match merged.iter_mut().find(|e| e.0 == k) {
                    Some(e) => e.1 += v,
                    None => merged.push((k, v)),
                }
            }
            for (k, v) in merged {
                if v != 0.0 {
                    lp_cols[k].push((i, v * r));
                }
            }
            match con.kind {
                ConstraintKind::Eq => {}
                ConstraintKind::Le => {
                    lp_cols[slack].push((i, r));
                    slack += 1;
                }
                ConstraintKind::Ge => {
                    lp_cols[slack].push((i, -r));
                    slack += 1;
                }
            }
        }
        for rb in &mut row_blocks {
            rb.sort_unstable();
            rb.dedup();
        }
        let layout = SchurLayout::build(blocks.len(), &row_blocks, &lp_cols);
        let nu = blocks.iter().map(|b| b.dim as f64).sum::<f64>() + n_lp as f64;
        Self {
            m,
            b,
            blocks,
            c_lp,
            lp_cols,
            row_scale,
            prim_scale,
            obj_scale,
            n_user_lp: p.n_scalar,
            layout,
            nu,
        }
    }

    fn c(&self) -> ConeVec {
        ConeVec {
            psd: self.blocks.iter().map(|b| b.c.clone()).collect(),
            lp: self.c_lp.clone(),
        }
    }

    fn zeros(&self) -> ConeVec {
        ConeVec {
            psd: self.blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect(),
            lp: DVector::zeros(self.c_lp.len()),
        }
    }

    fn identity(&self, v: f64) -> ConeVec {
        ConeVec {
            psd: self
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.dim, b.dim) * v)
                .collect(),
            lp: DVector::from_element(self.c_lp.len(), v),
        }
    }

    fn a_mul(&self, x: &ConeVec) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (b, blk) in self.blocks.iter().enumerate() {
            for (i, a, _) in &blk.rows {
                out[*i] += a.dot_dense(&x.psd[b]);
            }
        }
        for (k, col) in self.lp_cols.iter().enumerate() {
            for &(i, v) in col {
                out[i] += v * x.lp[k];
            }
        }
        out
    }

    fn at_mul(&self, y: &DVector<f64>) -> ConeVec {
        let mut out = self.zeros();
        for (b, blk) in self.blocks.iter().enumerate() {
            for (i, a, _) in &blk.rows {
                a.add_to_dense(&mut out.psd[b], y[*i]);
            }
        }
        for (k, col) in self.lp_cols.iter().enumerate() {
            out.lp[k] = col.iter().map(|&(i, v)| v * y[i]).sum();
        }
        out
    }

    fn project(&self, v: &mut ConeVec) {
        for (blk, m) in self.blocks.iter().zip(v.psd.iter_mut()) {
            symmetrize(m);
            if blk.structured {
                project_structure(m);
            }
        }
    }
}

struct NtBlock {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    lambda: DVector<f64>,
    w: DMatrix<f64>,
}

struct NtScaling {
    blocks: Vec<NtBlock>,
    /// x / s for the scalar cone
    lp_h: DVector<f64>,
    /// sqrt(x s)
    lp_lambda: DVector<f64>,
}

/// Returns `F` with `F Fᵀ = m` (Cholesky, falling back to an eigenvalue
/// square root) together with `F⁻¹`.
fn sqrt_factor(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if let Some(ch) = nalgebra::Cholesky::new(m.clone()) {
        let l = ch.unpack();
        if let Some(inv) = l.solve_lower_triangular(&DMatrix::identity(n, n)) {
            if inv.iter().all(|v| v.is_finite()) {
                return Some((l, inv));
            }
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    let floor = eig.eigenvalues.max().max(1e-300) * 1e-15;
    let mut f = eig.eigenvectors.clone();
    let mut finv = eig.eigenvectors.transpose();
    for k in 0..n {
        let s = eig.eigenvalues[k].max(floor).sqrt();
        f.column_mut(k).scale_mut(s);
        finv.row_mut(k).scale_mut(1.0 / s);
    }
    Some((f, finv))
}

fn nt_block(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtBlock> {
    let (l, l_inv) = sqrt_factor(x)?;
    let (r, _) = sqrt_factor(s)?;
    let prod = r.transpose() * &l;
    let svd = prod.svd(true, true);
    let vt = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let n = x.nrows();
    let mut g = &l * vt.transpose();
    let mut g_inv = &vt * &l_inv;
    for k in 0..n {
        let sq = lambda[k].sqrt();
        g.column_mut(k).scale_mut(1.0 / sq);
        g_inv.row_mut(k).scale_mut(sq);
    }
    let mut w = &g * g.transpose();
    symmetrize(&mut w);
    Some(NtBlock { g, g_inv, lambda, w })
}

#[derive(Clone)]
struct Point {
    x: ConeVec,
    y: DVector<f64>,
    s: ConeVec,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: ConeVec,
    dy: DVector<f64>,
    ds: ConeVec,
    dtau: f64,
    dkappa: f64,
}

/// Complementarity right-hand side in NT-scaled coordinates.
struct CompRhs {
    psd: Vec<DMatrix<f64>>,
    lp: DVector<f64>,
    tau: f64,
}

struct Newton<'a> {
    prob: &'a StdForm,
    nt: &'a NtScaling,
    factor: &'a SchurFactor,
    p: DVector<f64>,
    b_minus_ahc: DVector<f64>,
    denom: f64,
}

impl StdForm {
    fn h_apply(&self, nt: &NtScaling, u: &ConeVec) -> ConeVec {
        let psd = nt
            .blocks
            .iter()
            .zip(&u.psd)
            .map(|(blk, m)| {
                let mut r = &blk.w * m * &blk.w;
                symmetrize(&mut r);
                r
            })
            .collect();
        ConeVec {
            psd,
            lp: nt.lp_h.component_mul(&u.lp),
        }
    }

    fn scaling(&self, pt: &Point) -> Option<NtScaling> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (x, s) in pt.x.psd.iter().zip(&pt.s.psd) {
            blocks.push(nt_block(x, s)?);
        }
        let lp_h = pt.x.lp.component_div(&pt.s.lp);
        let lp_lambda = pt.x.lp.component_mul(&pt.s.lp).map(f64::sqrt);
        Some(NtScaling {
            blocks,
            lp_h,
            lp_lambda,
        })
    }

    fn schur_matrix(&self, nt: &NtScaling) -> SchurMatrix {
        let layout = &self.layout;
        let mut sm = SchurMatrix::zeros(layout);
        for (blk, ntb) in self.blocks.iter().zip(&nt.blocks) {
            let n = blk.dim;
            let w = &ntb.w;
            for (jpos, (j, aj, sup)) in blk.rows.iter().enumerate() {
                // G = W A_j W, built from the rows of A_j W that can be nonzero.
                let mut t = DMatrix::zeros(sup.len(), n);
                for &(p, q, v) in &aj.entries {
                    let pi = sup.binary_search(&p).unwrap();
                    let mut tr = t.row_mut(pi);
                    tr += w.row(q) * v;
                    if p != q {
                        let qi = sup.binary_search(&q).unwrap();
                        let mut tr = t.row_mut(qi);
                        tr += w.row(p) * v;
                    }
                }
                let wsub = w.select_columns(sup.iter());
                let g = wsub * t;
                for (i, ai, _) in blk.rows[..=jpos].iter() {
                    let v = ai.dot_dense(&g);
                    sm.add(layout, *i, *j, v);
                }
            }
        }
        for (k, col) in self.lp_cols.iter().enumerate() {
            let h = nt.lp_h[k];
            for (a, &(i, vi)) in col.iter().enumerate() {
                for &(j, vj) in &col[..=a] {
                    sm.add(layout, i, j, vi * vj * h);
                }
            }
        }
        sm
    }
}

impl<'a> Newton<'a> {
    /// `A H Aᵀ u`, applied through the cone operators rather than the
    /// assembled Schur matrix.
    fn apply_m(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut v = self.prob.at_mul(u);
        self.prob.project(&mut v);
        self.prob.a_mul(&self.prob.h_apply(self.nt, &v))
    }

    /// Schur solve by conjugate gradients on the operator form, using the
    /// (possibly regularized) factorization as preconditioner. Directions
    /// then satisfy the linearized equations to working accuracy even when
    /// the assembled matrix is badly conditioned.
    fn solve_m(&self, r: &DVector<f64>) -> DVector<f64> {
        let layout = &self.prob.layout;
        let target = 1e-14 * r.norm();
        let mut u = self.factor.solve(layout, r);
        let mut res = r - self.apply_m(&u);
        let mut best = (res.norm(), u.clone());
        let mut z = self.factor.solve(layout, &res);
        let mut dir = z.clone();
        let mut rz = res.dot(&z);
        for _ in 0..CG_STEPS {
            if best.0 <= target || !(rz > 0.0) {
                break;
            }
            let md = self.apply_m(&dir);
            let curv = dir.dot(&md);
            if !(curv > 0.0) {
                break;
            }
            let step = rz / curv;
            u.axpy(step, &dir, 1.0);
            res.axpy(-step, &md, 1.0);
            let rn = res.norm();
            if rn < best.0 {
                best = (rn, u.clone());
            }
            z = self.factor.solve(layout, &res);
            let rz_next = res.dot(&z);
            dir = &z + &dir * (rz_next / rz);
            rz = rz_next;
        }
        best.1
    }

    /// Solves the embedded Newton system for a given complementarity target
    /// and residual reduction `eta`.
    fn direction(&self, pt: &Point, res: &Res, rhs: &CompRhs, eta: f64) -> Direction {
        let prob = self.prob;
        let nt = self.nt;
        // r_x = G ξ Gᵀ with λ∘ξ = rhs
        let mut rx = prob.zeros();
        for (k, blk) in nt.blocks.iter().enumerate() {
            let n = blk.lambda.len();
            let mut xi = rhs.psd[k].clone();
            for i in 0..n {
                for j in 0..n {
                    xi[(i, j)] *= 2.0 / (blk.lambda[i] + blk.lambda[j]);
                }
            }
            rx.psd[k] = &blk.g * xi * blk.g.transpose();
        }
        rx.lp = rhs.lp.component_div(&pt.s.lp);
        prob.project(&mut rx);

        let h_rd = prob.h_apply(nt, &res.rd);
        let c = prob.c();
        let mut q = &res.rp * eta - prob.a_mul(&rx);
        q += prob.a_mul(&h_rd) * eta;
        let u = self.solve_m(&q);

        let num = rhs.tau / pt.tau + eta * res.rg + c.dot(&rx) - eta * c.dot(&h_rd)
            - self.b_minus_ahc.dot(&u);
        let dtau = num / self.denom;
        let dy = &u + &self.p * dtau;
        let mut ds = res.rd.scaled(eta);
        ds.axpy(-1.0, &prob.at_mul(&dy));
        ds.axpy(dtau, &c);
        prob.project(&mut ds);
        let mut dx = rx;
        dx.axpy(-1.0, &prob.h_apply(nt, &ds));
        prob.project(&mut dx);
        let dkappa = (rhs.tau - pt.kappa * dtau) / pt.tau;
        Direction {
            dx,
            dy,
            ds,
            dtau,
            dkappa,
        }
    }
}

struct Res {
    rp: DVector<f64>,
    rd: ConeVec,
    rg: f64,
}

fn residuals(prob: &StdForm, pt: &Point) -> Res {
    let rp = &prob.b * pt.tau - prob.a_mul(&pt.x);
    let mut rd = prob.c().scaled(pt.tau);
    rd.axpy(-1.0, &prob.at_mul(&pt.y));
    rd.axpy(-1.0, &pt.s);
    let rg = pt.kappa + prob.c().dot(&pt.x) - prob.b.dot(&pt.y);
    Res { rp, rd, rg }
}

/// Largest step keeping `lambda + a * d` PSD, for `d` in scaled coordinates.
fn psd_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let mut m = d.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
        }
    }
    symmetrize(&mut m);
    let ev = m.symmetric_eigenvalues();
    let mn = ev.min();
    if mn < 0.0 {
        -1.0 / mn
    } else {
        f64::INFINITY
    }
}

fn max_step(prob: &StdForm, nt: &NtScaling, pt: &Point, d: &Direction) -> f64 {
    let mut a = f64::INFINITY;
    for (k, blk) in nt.blocks.iter().enumerate() {
        let dxs = &blk.g_inv * &d.dx.psd[k] * blk.g_inv.transpose();
        let dss = blk.g.transpose() * &d.ds.psd[k] * &blk.g;
        a = a.min(psd_step(&blk.lambda, &dxs));
        a = a.min(psd_step(&blk.lambda, &dss));
    }
    let ratio = |v: f64, dv: f64| if dv < 0.0 { -v / dv } else { f64::INFINITY };
    for k in 0..pt.x.lp.len() {
        a = a.min(ratio(pt.x.lp[k], d.dx.lp[k]));
        a = a.min(ratio(pt.s.lp[k], d.ds.lp[k]));
    }
    a = a.min(ratio(pt.tau, d.dtau));
    a = a.min(ratio(pt.kappa, d.dkappa));
    let _ = prob;
    a
}

fn jordan_diag_scaled(lambda: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&lambda.map(|v| v * v))
}

/// Solves a conic program.
///
/// The call is deterministic: identical programs and configurations produce
/// bit-identical results.
pub fn solve(program: &ConicProgram, config: &SolverConfig) -> Result<SolverResult, ConicError> {
    program.validate()?;
    config.validate()?;
    let start = Instant::now();
    let prob = StdForm::build(program);
    let m = prob.m;

    let tau0 = 1.0 + prob.b.amax();
    let mut pt = Point {
        x: prob.identity(tau0),
        y: DVector::zeros(m),
        s: prob.identity(tau0),
        tau: 1.0,
        kappa: tau0 * tau0,
    };
    let bnorm = prob.b.norm();
    let cnorm = prob.c().norm();
    let mut history = Vec::new();
    let mut short_steps = 0;
    let mut best = (f64::INFINITY, pt.clone(), Residuals::default());
    let mut since_best = 0;
    let mut status = SolverStatus::IterationLimit;
    let mut iterations = 0;
    let mut last_res = Residuals::default();
    let mut certificate = None;

    for iter in 0..=config.max_iter {
        iterations = iter;
        let res = residuals(&prob, &pt);
        let pobj = prob.c().dot(&pt.x) / pt.tau;
        let dobj = prob.b.dot(&pt.y) / pt.tau;
        let r = Residuals {
            primal: res.rp.norm() / pt.tau / (1.0 + bnorm),
            dual: res.rd.norm() / pt.tau / (1.0 + cnorm),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        };
        last_res = r;
        let merit = r.primal.max(r.dual).max(r.gap);
        if merit < 0.99 * best.0 {
            best = (merit, pt.clone(), r);
            since_best = 0;
        } else {
            since_best += 1;
        }
        let mu = (pt.x.dot(&pt.s) + pt.tau * pt.kappa) / (prob.nu + 1.0);

        if r.primal <= config.tol && r.dual <= config.tol && r.gap <= config.tol {
            status = SolverStatus::Optimal;
            break;
        }
        let by = prob.b.dot(&pt.y);
        if by > 0.0 {
            let mut aty = prob.at_mul(&pt.y);
            aty.axpy(1.0, &pt.s);
            if aty.norm() <= config.tol * by {
                status = SolverStatus::PrimalInfeasible;
                let yc: Vec<f64> = (0..m).map(|i| pt.y[i] * prob.row_scale[i] / (by * prob.prim_scale)).collect();
                certificate = Some(yc);
                break;
            }
        }
        let cx = prob.c().dot(&pt.x);
        if cx < 0.0 && prob.a_mul(&pt.x).norm() <= config.tol * (-cx) {
            status = SolverStatus::DualInfeasible;
            certificate = Some(
                (0..prob.n_user_lp)
                    .map(|k| pt.x.lp[k] / (-cx))
                    .collect(),
            );
            break;
        }
        if iter == config.max_iter {
            status = SolverStatus::IterationLimit;
            break;
        }
        if since_best >= STALL_ITERATIONS {
            log::debug!("no progress for {since_best} iterations, stopping at merit {:.2e}", best.0);
            status = SolverStatus::NumericalFailure;
            break;
        }

        let Some(nt) = prob.scaling(&pt) else {
            status = SolverStatus::NumericalFailure;
            break;
        };
        let sm = prob.schur_matrix(&nt);
        let mut reg = config.reg_eps;
        let mut factor = None;
        for _ in 0..8 {
            if let Some(f) = SchurFactor::new(&sm, reg) {
                factor = Some(f);
                break;
            }
            reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
        }
        let Some(factor) = factor else {
            status = SolverStatus::NumericalFailure;
            break;
        };

        let c = prob.c();
        let hc = prob.h_apply(&nt, &c);
        let ahc = prob.a_mul(&hc);
        let mut newton = Newton {
            prob: &prob,
            nt: &nt,
            factor: &factor,
            p: DVector::zeros(m),
            b_minus_ahc: DVector::zeros(m),
            denom: 0.0,
        };
        let p = newton.solve_m(&(&prob.b + &ahc));
        let b_minus_ahc = &prob.b - &ahc;
        let denom = b_minus_ahc.dot(&p) + c.dot(&hc) + pt.kappa / pt.tau;
        newton = Newton {
            p,
            b_minus_ahc,
            denom,
            ..newton
        };

        // predictor
        let aff_rhs = CompRhs {
            psd: nt.blocks.iter().map(|b| -jordan_diag_scaled(&b.lambda)).collect(),
            lp: -nt.lp_lambda.map(|v| v * v),
            tau: -pt.tau * pt.kappa,
        };
        let daff = newton.direction(&pt, &res, &aff_rhs, 1.0);
        let a_aff = max_step(&prob, &nt, &pt, &daff).min(1.0);
        let mut xa = pt.x.clone();
        xa.axpy(a_aff, &daff.dx);
        let mut sa = pt.s.clone();
        sa.axpy(a_aff, &daff.ds);
        let mu_aff = (xa.dot(&sa) + (pt.tau + a_aff * daff.dtau) * (pt.kappa + a_aff * daff.dkappa))
            / (prob.nu + 1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let mut cor = CompRhs {
            psd: Vec::with_capacity(nt.blocks.len()),
            lp: DVector::zeros(pt.x.lp.len()),
            tau: sigma * mu - pt.tau * pt.kappa - daff.dtau * daff.dkappa,
        };
        for (k, blk) in nt.blocks.iter().enumerate() {
            let n = blk.lambda.len();
            let dxs = &blk.g_inv * &daff.dx.psd[k] * blk.g_inv.transpose();
            let dss = blk.g.transpose() * &daff.ds.psd[k] * &blk.g;
            let prod = &dxs * &dss;
            let jord = (&prod + prod.transpose()) * 0.5;
            let mut r = DMatrix::identity(n, n) * (sigma * mu) - jordan_diag_scaled(&blk.lambda) - jord;
            symmetrize(&mut r);
            cor.psd.push(r);
        }
        for k in 0..pt.x.lp.len() {
            cor.lp[k] = sigma * mu - pt.x.lp[k] * pt.s.lp[k] - daff.dx.lp[k] * daff.ds.lp[k];
        }
        let d = newton.direction(&pt, &res, &cor, 1.0 - sigma);
        let alpha = (config.step_fraction * max_step(&prob, &nt, &pt, &d)).min(1.0);

        let info = IterationInfo {
            iter,
            primal_objective: pobj * prob.obj_scale * prob.prim_scale,
            dual_objective: dobj * prob.obj_scale * prob.prim_scale,
            residuals: r,
            tau: pt.tau,
            kappa: pt.kappa,
            mu,
            step: alpha,
            sigma,
        };
        if config.verbose {
            log::info!(
                "{:4} pobj {:+.9e} dobj {:+.9e} pres {:.2e} dres {:.2e} gap {:.2e} tau {:.2e} kap {:.2e} step {:.3} sigma {:.2e}",
                iter, info.primal_objective, info.dual_objective, r.primal, r.dual, r.gap, pt.tau, pt.kappa, alpha, sigma
            );
        } else {
            log::debug!("iter {iter}: gap {:.3e} pres {:.3e} dres {:.3e} step {:.3}", r.gap, r.primal, r.dual, alpha);
        }
        history.push(info);

        if !(alpha > 0.0) || !alpha.is_finite() {
            status = SolverStatus::NumericalFailure;
            break;
        }
        if alpha < config.min_step {
            short_steps += 1;
            if short_steps >= 3 {
                status = SolverStatus::NumericalFailure;
                break;
            }
        } else {
            short_steps = 0;
        }

        pt.x.axpy(alpha, &d.dx);
        pt.s.axpy(alpha, &d.ds);
        pt.y.axpy(alpha, &d.dy, 1.0);
        pt.tau += alpha * d.dtau;
        pt.kappa += alpha * d.dkappa;
        prob.project(&mut pt.x);
        prob.project(&mut pt.s);

        // Keep the homogeneous variables from drifting over many orders of magnitude.
        let scale = pt.x.norm().max(pt.s.norm()).max(pt.tau).max(pt.kappa);
        if scale > 1e8 {
            let f = 1.0 / scale.sqrt();
            pt.x = pt.x.scaled(f);
            pt.s = pt.s.scaled(f);
            pt.y *= f;
            pt.tau *= f;
            pt.kappa *= f;
        }
    }

    // A run that ends without a verdict reports the best iterate it saw.
    if matches!(status, SolverStatus::IterationLimit | SolverStatus::NumericalFailure) && best.0 < f64::INFINITY {
        pt = best.1;
        last_res = best.2;
    }
    Ok(unscale(program, &prob, &pt, status, iterations, last_res, certificate, history, start))
}

#[allow(clippy::too_many_arguments)]
fn unscale(
    program: &ConicProgram,
    prob: &StdForm,
    pt: &Point,
    status: SolverStatus,
    iterations: usize,
    residuals: Residuals,
    certificate: Option<Vec<f64>>,
    history: Vec<IterationInfo>,
    start: Instant,
) -> SolverResult {
    let t = if pt.tau > 0.0 { pt.tau } else { 1.0 };
    let ps = prob.prim_scale / t;
    let os = prob.obj_scale / t;
    let psd: Vec<DMatrix<f64>> = pt.x.psd.iter().map(|m| m * ps).collect();
    let scalars: Vec<f64> = (0..prob.n_user_lp).map(|k| pt.x.lp[k] * ps).collect();
    let duals: Vec<f64> = (0..prob.m).map(|i| pt.y[i] * prob.row_scale[i] * os).collect();
    let dual_psd = pt.s.psd.iter().map(|m| m * os).collect();
    let objective = program.objective_value(&psd, &scalars);
    let dual_objective = program
        .constraints
        .iter()
        .zip(&duals)
        .map(|(c, y)| c.rhs * y)
        .sum();
    SolverResult {
        status,
        psd,
        scalars,
        duals,
        dual_psd,
        objective,
        dual_objective,
        iterations,
        residuals,
        certificate,
        history,
        solve_seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::LinearExpr;

    fn entry(dim: usize, i: usize, j: usize, v: f64) -> SymSparse {
        let mut m = SymSparse::new(dim);
        m.push(i, j, v);
        m
    }

    #[test]
    fn structure_projection_is_idempotent_and_symmetric() {
        let mut m = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 + if i == j { 10.0 } else { 0.0 });
        symmetrize(&mut m);
        project_structure(&mut m);
        let once = m.clone();
        project_structure(&mut m);
        assert_eq!(once, m);
        assert!((&m - m.transpose()).amax() < 1e-15);
        assert_eq!(m[(0, 1)], m[(2, 3)]);
        assert_eq!(m[(2, 1)], -m[(0, 3)]);
    }

    #[test]
    fn tiny_lp() {
        // min x0 + 2 x1  s.t. x0 + x1 = 1, x0 <= 0.25
        let mut p = ConicProgram::new();
        let x0 = p.add_scalar();
        let x1 = p.add_scalar();
        p.objective.add_lp(x0, 1.0);
        p.objective.add_lp(x1, 2.0);
        let mut e = LinearExpr::new();
        e.add_lp(x0, 1.0);
        e.add_lp(x1, 1.0);
        p.add_constraint(e, ConstraintKind::Eq, 1.0, "sum");
        let mut e = LinearExpr::new();
        e.add_lp(x0, 1.0);
        p.add_constraint(e, ConstraintKind::Le, 0.25, "cap");
        let r = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.objective - 1.75).abs() < 1e-6);
        assert!((r.scalars[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn dual_infeasible_lp() {
        // min -x  s.t. x - y = 0
        let mut p = ConicProgram::new();
        let x = p.add_scalar();
        let y = p.add_scalar();
        p.objective.add_lp(x, -1.0);
        let mut e = LinearExpr::new();
        e.add_lp(x, 1.0);
        e.add_lp(y, -1.0);
        p.add_constraint(e, ConstraintKind::Eq, 0.0, "tie");
        let r = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::DualInfeasible);
    }

    #[test]
    fn psd_block_with_offdiagonal_constraint() {
        // min X00 + X11 s.t. X01 = 1 -> X = [[1,1],[1,1]], objective 2
        let mut p = ConicProgram::new();
        let b = p.add_block(2, false);
        let mut obj = SymSparse::new(2);
        obj.push(0, 0, 1.0);
        obj.push(1, 1, 1.0);
        p.objective.add_psd(b, obj);
        let mut e = LinearExpr::new();
        e.add_psd(b, entry(2, 0, 1, 0.5));
        p.add_constraint(e, ConstraintKind::Eq, 1.0, "off");
        let r = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-6);
        assert!((r.psd[0][(0, 1)] - 1.0).abs() < 1e-5);
    }
}
