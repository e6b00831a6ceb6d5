use nalgebra::DMatrix;

use crate::ConicError;

/// Sparse real symmetric matrix stored as upper-triangular triplets.
///
/// An entry `(i, j, v)` with `i < j` stands for `v` at both `(i, j)` and
/// `(j, i)`. Duplicate coordinates are summed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymSparse {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            self.entries.push((r, c, v));
        }
    }

    /// Builds the sparse form of a dense symmetric matrix, keeping entries
    /// with magnitude above `drop_tol`.
    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let n = m.nrows();
        let mut s = Self::new(n);
        for j in 0..n {
            for i in 0..=j {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                if v.abs() > drop_tol {
                    s.entries.push((i, j, v));
                }
            }
        }
        s
    }

    /// Merges duplicate coordinates and drops exact zeros.
    pub fn compress(&mut self) {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(i, j, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => out.push((i, j, v)),
            }
        }
        out.retain(|e| e.2 != 0.0);
        self.entries = out;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.add_to_dense(&mut m, 1.0);
        m
    }

    /// `m += scale * self`.
    pub fn add_to_dense(&self, m: &mut DMatrix<f64>, scale: f64) {
        for &(i, j, v) in &self.entries {
            m[(i, j)] += scale * v;
            if i != j {
                m[(j, i)] += scale * v;
            }
        }
    }

    /// `Tr(self * m)` for a symmetric dense `m`.
    pub fn dot_dense(&self, m: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| {
                if i == j {
                    v * m[(i, i)]
                } else {
                    v * (m[(i, j)] + m[(j, i)])
                }
            })
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.2 *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc.max(e.2.abs()))
    }

    /// Sorted list of row indices touched by the full (symmetric) matrix.
    pub(crate) fn support(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.entries.iter().flat_map(|e| [e.0, e.1]).collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

/// Affine-free linear expression over PSD blocks and nonnegative scalars:
/// `sum_b Tr(A_b X_b) + sum_k a_k x_k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearExpr {
    pub psd: Vec<(usize, SymSparse)>,
    pub lp: Vec<(usize, f64)>,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_psd(&mut self, block: usize, m: SymSparse) {
        if m.entries.is_empty() {
            return;
        }
        if let Some((_, existing)) = self.psd.iter_mut().find(|(b, _)| *b == block) {
            existing.entries.extend(m.entries);
        } else {
            self.psd.push((block, m));
        }
    }

    pub fn add_lp(&mut self, var: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        if let Some((_, c)) = self.lp.iter_mut().find(|(v, _)| *v == var) {
            *c += coef;
        } else {
            self.lp.push((var, coef));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.psd.iter().all(|(_, m)| m.entries.is_empty()) && self.lp.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        let psd = self.psd.iter().fold(0.0_f64, |a, (_, m)| a.max(m.max_abs()));
        self.lp.iter().fold(psd, |a, &(_, c)| a.max(c.abs()))
    }

    /// Evaluates the expression at a point.
    pub fn eval(&self, psd: &[DMatrix<f64>], lp: &[f64]) -> f64 {
        let a: f64 = self.psd.iter().map(|(b, m)| m.dot_dense(&psd[*b])).sum();
        let l: f64 = self.lp.iter().map(|&(k, c)| c * lp[k]).sum();
        a + l
    }

    fn compress(&mut self) {
        for (_, m) in &mut self.psd {
            m.compress();
        }
        self.psd.retain(|(_, m)| !m.entries.is_empty());
        self.lp.retain(|&(_, c)| c != 0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    /// `expr == rhs`
    Eq,
    /// `expr <= rhs`
    Le,
    /// `expr >= rhs`
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub expr: LinearExpr,
    pub kind: ConstraintKind,
    pub rhs: f64,
    pub label: String,
}

/// A real symmetric PSD block.
///
/// A block with `complex_structure` set is the real embedding
/// `[[Re H, -Im H], [Im H, Re H]]` of a complex Hermitian block of half its
/// dimension. Every data matrix touching it must have that structure; the
/// solver keeps its iterates on the structured subspace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsdBlock {
    pub dim: usize,
    pub complex_structure: bool,
}

/// `min objective  s.t.  constraints,  X_b ⪰ 0,  x ≥ 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConicProgram {
    pub blocks: Vec<PsdBlock>,
    pub n_scalar: usize,
    pub objective: LinearExpr,
    pub constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, dim: usize, complex_structure: bool) -> usize {
        self.blocks.push(PsdBlock {
            dim,
            complex_structure,
        });
        self.blocks.len() - 1
    }

    pub fn add_scalar(&mut self) -> usize {
        self.n_scalar += 1;
        self.n_scalar - 1
    }

    pub fn add_constraint(
        &mut self,
        expr: LinearExpr,
        kind: ConstraintKind,
        rhs: f64,
        label: impl Into<String>,
    ) -> usize {
        self.constraints.push(Constraint {
            expr,
            kind,
            rhs,
            label: label.into(),
        });
        self.constraints.len() - 1
    }

    pub fn count(&self, kind: ConstraintKind) -> usize {
        self.constraints.iter().filter(|c| c.kind == kind).count()
    }

    /// Merges duplicate entries in every expression.
    pub fn compress(&mut self) {
        self.objective.compress();
        for c in &mut self.constraints {
            c.expr.compress();
        }
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.complex_structure && blk.dim % 2 != 0 {
                return Err(ConicError::OddStructuredBlock { block: b, dim: blk.dim });
            }
        }
        let check = |idx: usize, e: &LinearExpr, what: &str| -> Result<(), ConicError> {
            for (b, m) in &e.psd {
                let blk = self.blocks.get(*b).ok_or(ConicError::UnknownBlock {
                    constraint: idx,
                    block: *b,
                    count: self.blocks.len(),
                })?;
                for &(i, j, v) in &m.entries {
                    if i >= blk.dim || j >= blk.dim {
                        return Err(ConicError::EntryOutOfRange {
                            block: *b,
                            row: i,
                            col: j,
                            dim: blk.dim,
                        });
                    }
                    if !v.is_finite() {
                        return Err(ConicError::NonFinite(what.to_string()));
                    }
                }
            }
            for &(k, c) in &e.lp {
                if k >= self.n_scalar {
                    return Err(ConicError::UnknownScalar {
                        constraint: idx,
                        var: k,
                        count: self.n_scalar,
                    });
                }
                if !c.is_finite() {
                    return Err(ConicError::NonFinite(what.to_string()));
                }
            }
            Ok(())
        };
        check(usize::MAX, &self.objective, "objective")?;
        for (i, c) in self.constraints.iter().enumerate() {
            check(i, &c.expr, &c.label)?;
            if !c.rhs.is_finite() {
                return Err(ConicError::NonFinite(c.label.clone()));
            }
        }
        Ok(())
    }

    /// Evaluates the objective at a point.
    pub fn objective_value(&self, psd: &[DMatrix<f64>], lp: &[f64]) -> f64 {
        self.objective.eval(psd, lp)
    }

    /// Largest constraint violation at a point (equalities two-sided).
    pub fn max_violation(&self, psd: &[DMatrix<f64>], lp: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let v = c.expr.eval(psd, lp);
                match c.kind {
                    ConstraintKind::Eq => (v - c.rhs).abs(),
                    ConstraintKind::Le => (v - c.rhs).max(0.0),
                    ConstraintKind::Ge => (c.rhs - v).max(0.0),
                }
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_trace_matches_dense() {
        let mut a = SymSparse::new(3);
        a.push(0, 0, 2.0);
        a.push(2, 1, -1.5);
        a.push(0, 2, 0.5);
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let dense = a.to_dense();
        let expect = (dense * &m).trace();
        assert!((a.dot_dense(&m) - expect).abs() < 1e-14);
    }

    #[test]
    fn compress_merges_duplicates() {
        let mut a = SymSparse::new(2);
        a.push(0, 1, 1.0);
        a.push(1, 0, 2.0);
        a.push(1, 1, 1.0);
        a.push(1, 1, -1.0);
        a.compress();
        assert_eq!(a.entries, vec![(0, 1, 3.0)]);
    }

    #[test]
    fn validate_rejects_bad_references() {
        let mut p = ConicProgram::new();
        p.add_block(2, false);
        let mut e = LinearExpr::new();
        let mut m = SymSparse::new(2);
        m.push(0, 3, 1.0);
        e.add_psd(0, m);
        p.add_constraint(e, ConstraintKind::Eq, 1.0, "bad");
        assert!(matches!(p.validate(), Err(ConicError::EntryOutOfRange { .. })));

        let mut p = ConicProgram::new();
        let mut e = LinearExpr::new();
        e.add_lp(0, 1.0);
        p.add_constraint(e, ConstraintKind::Le, 1.0, "bad");
        assert!(matches!(p.validate(), Err(ConicError::UnknownScalar { .. })));

        let mut p = ConicProgram::new();
        p.add_block(3, true);
        assert!(matches!(p.validate(), Err(ConicError::OddStructuredBlock { .. })));
    }
}
