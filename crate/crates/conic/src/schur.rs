//! Bordered block-diagonal factorization of the Schur complement matrix.
//!
//! Rows touching the same PSD block (or sharing a scalar variable with such
//! rows) form a group; distinct groups never interact, so the Schur matrix
//! is block diagonal except for a dense border of linking rows. Each group
//! is factored on its own and the border is closed through its Schur
//! complement.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RowLoc {
    Group(usize, usize),
    Border(usize),
}

#[derive(Clone, Debug)]
pub(crate) struct SchurLayout {
    pub groups: Vec<Vec<usize>>,
    pub border: Vec<usize>,
    pub loc: Vec<RowLoc>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl SchurLayout {
    /// `row_blocks[i]`: PSD blocks touched by row `i`; `lp_cols[k]`: rows in
    /// which scalar variable `k` appears.
    pub fn build(n_blocks: usize, row_blocks: &[Vec<usize>], lp_cols: &[Vec<(usize, f64)>]) -> Self {
        let m = row_blocks.len();
        let mut uf = UnionFind::new(n_blocks);
        for blocks in row_blocks {
            for w in blocks.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        // Scalars shared by rows of different blocks glue those blocks.
        for col in lp_cols {
            let mut first: Option<usize> = None;
            for &(r, _) in col {
                if let Some(&b) = row_blocks[r].first() {
                    match first {
                        None => first = Some(b),
                        Some(f) => uf.union(f, b),
                    }
                }
            }
        }
        let mut row_group: Vec<Option<usize>> = row_blocks
            .iter()
            .map(|bl| bl.first().map(|&b| uf.find(b)))
            .collect();
        let psd_row: Vec<bool> = row_blocks.iter().map(|b| !b.is_empty()).collect();

        // Pure scalar rows join the single group they talk to, if any.
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (k, col) in lp_cols.iter().enumerate() {
            for &(r, _) in col {
                row_cols[r].push(k);
            }
        }
        for r in 0..m {
            if psd_row[r] {
                continue;
            }
            let mut reach: Option<usize> = None;
            let mut multi = false;
            for &k in &row_cols[r] {
                for &(r2, _) in &lp_cols[k] {
                    if psd_row[r2] {
                        let g = row_group[r2].unwrap();
                        match reach {
                            None => reach = Some(g),
                            Some(g0) if g0 != g => multi = true,
                            _ => {}
                        }
                    }
                }
            }
            row_group[r] = if multi { None } else { reach };
        }
        // Any scalar still spanning two groups pushes its pure rows to the border.
        loop {
            let mut changed = false;
            for col in lp_cols {
                let mut seen: Option<usize> = None;
                let mut conflict = false;
                for &(r, _) in col {
                    if let Some(g) = row_group[r] {
                        match seen {
                            None => seen = Some(g),
                            Some(g0) if g0 != g => conflict = true,
                            _ => {}
                        }
                    }
                }
                if conflict {
                    for &(r, _) in col {
                        if !psd_row[r] && row_group[r].is_some() {
                            row_group[r] = None;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut root_to_group: Vec<Option<usize>> = vec![None; n_blocks];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut border = Vec::new();
        let mut loc = vec![RowLoc::Border(0); m];
        for r in 0..m {
            match row_group[r] {
                Some(root) => {
                    let g = *root_to_group[root].get_or_insert_with(|| {
                        groups.push(Vec::new());
                        groups.len() - 1
                    });
                    loc[r] = RowLoc::Group(g, groups[g].len());
                    groups[g].push(r);
                }
                None => {
                    loc[r] = RowLoc::Border(border.len());
                    border.push(r);
                }
            }
        }
        Self {
            groups,
            border,
            loc,
        }
    }
}

/// Dense pieces of the Schur matrix in layout order.
pub(crate) struct SchurMatrix {
    pub gg: Vec<DMatrix<f64>>,
    pub gb: Vec<DMatrix<f64>>,
    pub bb: DMatrix<f64>,
}

impl SchurMatrix {
    pub fn zeros(layout: &SchurLayout) -> Self {
        let nb = layout.border.len();
        Self {
            gg: layout
                .groups
                .iter()
                .map(|g| DMatrix::zeros(g.len(), g.len()))
                .collect(),
            gb: layout.groups.iter().map(|g| DMatrix::zeros(g.len(), nb)).collect(),
            bb: DMatrix::zeros(nb, nb),
        }
    }

    /// Adds `v` at the symmetric pair of global rows `(i, j)`.
    pub fn add(&mut self, layout: &SchurLayout, i: usize, j: usize, v: f64) {
        match (layout.loc[i], layout.loc[j]) {
            (RowLoc::Group(g, a), RowLoc::Group(h, b)) => {
                debug_assert_eq!(g, h, "rows of different groups interact");
                self.gg[g][(a, b)] += v;
                if i != j {
                    self.gg[g][(b, a)] += v;
                }
            }
            (RowLoc::Group(g, a), RowLoc::Border(b)) | (RowLoc::Border(b), RowLoc::Group(g, a)) => {
                self.gb[g][(a, b)] += v;
            }
            (RowLoc::Border(a), RowLoc::Border(b)) => {
                self.bb[(a, b)] += v;
                if i != j {
                    self.bb[(b, a)] += v;
                }
            }
        }
    }

    /// Product with a vector in global row order.
    #[cfg(test)]
    pub fn mul(&self, layout: &SchurLayout, x: &DVector<f64>) -> DVector<f64> {
        let nb = layout.border.len();
        let xb = DVector::from_iterator(nb, layout.border.iter().map(|&r| x[r]));
        let mut yb = &self.bb * &xb;
        let mut out = DVector::zeros(x.len());
        for (g, rows) in layout.groups.iter().enumerate() {
            let xg = DVector::from_iterator(rows.len(), rows.iter().map(|&r| x[r]));
            let mut yg = &self.gg[g] * &xg;
            if nb > 0 {
                yg += &self.gb[g] * &xb;
                yb += self.gb[g].transpose() * &xg;
            }
            for (a, &r) in rows.iter().enumerate() {
                out[r] = yg[a];
            }
        }
        for (a, &r) in layout.border.iter().enumerate() {
            out[r] = yb[a];
        }
        out
    }

    fn max_diag(&self) -> f64 {
        let g = self
            .gg
            .iter()
            .flat_map(|m| m.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0_f64, f64::max);
        self.bb.diagonal().iter().fold(g, |a, &v| a.max(v))
    }
}

pub(crate) struct SchurFactor {
    lg: Vec<DMatrix<f64>>,
    zg: Vec<DMatrix<f64>>,
    lb: DMatrix<f64>,
}

fn chol_lower(mut m: DMatrix<f64>, reg: f64, floor: f64) -> Option<DMatrix<f64>> {
    for i in 0..m.nrows() {
        let d = m[(i, i)];
        m[(i, i)] = d + reg * d.abs() + floor;
    }
    nalgebra::Cholesky::new(m).map(|c| c.unpack())
}

impl SchurFactor {
    /// Cholesky factorization with relative diagonal regularization `reg`.
    pub fn new(mat: &SchurMatrix, reg: f64) -> Option<Self> {
        let floor = reg * mat.max_diag().max(1.0) * 1e-6;
        let mut lg = Vec::with_capacity(mat.gg.len());
        let mut zg = Vec::with_capacity(mat.gg.len());
        let mut sb = mat.bb.clone();
        for (mgg, mgb) in mat.gg.iter().zip(&mat.gb) {
            let l = chol_lower(mgg.clone(), reg, floor)?;
            let z = if mgb.ncols() > 0 {
                l.solve_lower_triangular(mgb)?
            } else {
                DMatrix::zeros(mgb.nrows(), 0)
            };
            if z.ncols() > 0 {
                sb -= z.transpose() * &z;
            }
            lg.push(l);
            zg.push(z);
        }
        let lb = chol_lower(sb, reg, floor)?;
        Some(Self { lg, zg, lb })
    }

    pub fn solve(&self, layout: &SchurLayout, rhs: &DVector<f64>) -> DVector<f64> {
        let nb = layout.border.len();
        let mut rb = DVector::from_iterator(nb, layout.border.iter().map(|&r| rhs[r]));
        let mut wg = Vec::with_capacity(layout.groups.len());
        for (g, rows) in layout.groups.iter().enumerate() {
            let rg = DVector::from_iterator(rows.len(), rows.iter().map(|&r| rhs[r]));
            let w = self.lg[g].solve_lower_triangular(&rg).expect("nonsingular factor");
            if nb > 0 {
                rb -= self.zg[g].transpose() * &w;
            }
            wg.push(w);
        }
        let zb = if nb > 0 {
            let t = self.lb.solve_lower_triangular(&rb).expect("nonsingular factor");
            self.lb.tr_solve_lower_triangular(&t).expect("nonsingular factor")
        } else {
            DVector::zeros(0)
        };
        let mut out = DVector::zeros(rhs.len());
        for (g, rows) in layout.groups.iter().enumerate() {
            let mut w = wg[g].clone();
            if nb > 0 {
                w -= &self.zg[g] * &zb;
            }
            let zgv = self.lg[g].tr_solve_lower_triangular(&w).expect("nonsingular factor");
            for (a, &r) in rows.iter().enumerate() {
                out[r] = zgv[a];
            }
        }
        for (a, &r) in layout.border.iter().enumerate() {
            out[r] = zb[a];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_separates_independent_blocks_and_borders_linking_rows() {
        // rows 0,1 -> block 0; rows 2,3 -> block 1; row 4 pure scalar linking
        // x0 (rows 1, 4) and x1 (rows 3, 4); row 5 pure scalar on x2 with row 0.
        let row_blocks = vec![vec![0], vec![0], vec![1], vec![1], vec![], vec![]];
        let lp_cols = vec![
            vec![(1, 1.0), (4, 1.0)],
            vec![(3, 1.0), (4, 1.0)],
            vec![(0, 1.0), (5, 1.0)],
        ];
        let l = SchurLayout::build(2, &row_blocks, &lp_cols);
        assert_eq!(l.groups.len(), 2);
        assert_eq!(l.border, vec![4]);
        assert!(matches!(l.loc[5], RowLoc::Group(0, _)));
    }

    #[test]
    fn bordered_solve_matches_dense() {
        let row_blocks = vec![vec![0], vec![0], vec![1], vec![1], vec![]];
        let lp_cols = vec![vec![(1, 1.0), (4, 1.0)], vec![(3, 1.0), (4, 1.0)]];
        let l = SchurLayout::build(2, &row_blocks, &lp_cols);
        // dense SPD matrix with the allowed sparsity
        let mut dense = DMatrix::<f64>::zeros(5, 5);
        let pattern = [(0, 0, 4.0), (1, 1, 5.0), (0, 1, 1.0), (2, 2, 3.0), (3, 3, 6.0), (2, 3, -1.0), (4, 4, 7.0), (1, 4, 0.5), (3, 4, -0.7)];
        let mut sm = SchurMatrix::zeros(&l);
        for &(i, j, v) in &pattern {
            dense[(i, j)] += v;
            if i != j {
                dense[(j, i)] += v;
            }
            sm.add(&l, i, j, v);
        }
        let f = SchurFactor::new(&sm, 0.0).unwrap();
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -1.0]);
        let z = f.solve(&l, &rhs);
        let r = &dense * &z - &rhs;
        assert!(r.norm() < 1e-12);
        assert!((sm.mul(&l, &z) - &rhs).norm() < 1e-12);
    }
}
