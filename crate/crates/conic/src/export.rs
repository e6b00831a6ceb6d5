//! Plain-text dump of a [`ConicProgram`] for cross-checking with other solvers.
//!
//! ```text
//! conic-program 1
//! block 0 64 structured
//! block 1 2 plain
//! scalars 3
//! *objective
//! 0 1 5 0.25          <- block row col value (upper triangle)
//! x 2 30              <- scalar variable, coefficient
//! *equalities
//! = 1 pcc-anchor      <- starts a constraint: sense, rhs, label
//! 0 0 0 1
//! *inequalities
//! <= 0.0025 vmax
//! 0 3 3 0.5
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Equalities are written
//! before inequalities, so reading a dump back may reorder constraints.

use std::fmt::Write as _;

use crate::program::{ConicProgram, ConstraintKind, LinearExpr, SymSparse};
use crate::ConicError;

fn write_expr(out: &mut String, e: &LinearExpr) {
    for (b, m) in &e.psd {
        let mut m = m.clone();
        m.compress();
        for (i, j, v) in m.entries {
            let _ = writeln!(out, "{b} {i} {j} {v:e}");
        }
    }
    for &(k, v) in &e.lp {
        let _ = writeln!(out, "x {k} {v:e}");
    }
}

pub fn write_sparse_text(p: &ConicProgram) -> String {
    let mut out = String::from("conic-program 1\n");
    for (b, blk) in p.blocks.iter().enumerate() {
        let kind = if blk.complex_structure { "structured" } else { "plain" };
        let _ = writeln!(out, "block {b} {} {kind}", blk.dim);
    }
    let _ = writeln!(out, "scalars {}", p.n_scalar);
    out.push_str("*objective\n");
    write_expr(&mut out, &p.objective);
    out.push_str("*equalities\n");
    for c in p.constraints.iter().filter(|c| c.kind == ConstraintKind::Eq) {
        let _ = writeln!(out, "= {:e} {}", c.rhs, c.label);
        write_expr(&mut out, &c.expr);
    }
    out.push_str("*inequalities\n");
    for c in p.constraints.iter().filter(|c| c.kind != ConstraintKind::Eq) {
        let sense = if c.kind == ConstraintKind::Le { "<=" } else { ">=" };
        let _ = writeln!(out, "{sense} {:e} {}", c.rhs, c.label);
        write_expr(&mut out, &c.expr);
    }
    out
}

#[derive(PartialEq)]
enum Section {
    Header,
    Objective,
    Equalities,
    Inequalities,
}

pub fn read_sparse_text(text: &str) -> Result<ConicProgram, ConicError> {
    let mut p = ConicProgram::new();
    let mut section = Section::Header;
    let mut current: Option<usize> = None;
    let err = |line: usize, msg: &str| ConicError::Parse {
        line,
        msg: msg.to_string(),
    };
    let num = |line: usize, s: &str| -> Result<f64, ConicError> {
        s.parse::<f64>().map_err(|_| err(line, &format!("bad number '{s}'")))
    };
    let idx = |line: usize, s: &str| -> Result<usize, ConicError> {
        s.parse::<usize>().map_err(|_| err(line, &format!("bad index '{s}'")))
    };

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "*objective" => {
                section = Section::Objective;
                continue;
            }
            "*equalities" => {
                section = Section::Equalities;
                current = None;
                continue;
            }
            "*inequalities" => {
                section = Section::Inequalities;
                current = None;
                continue;
            }
            _ => {}
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if section == Section::Header {
            match tok[0] {
                "conic-program" => {}
                "block" if tok.len() == 4 => {
                    let b = idx(line_no, tok[1])?;
                    if b != p.blocks.len() {
                        return Err(err(line_no, "blocks must be listed in order"));
                    }
                    let structured = match tok[3] {
                        "structured" => true,
                        "plain" => false,
                        other => return Err(err(line_no, &format!("unknown block kind '{other}'"))),
                    };
                    p.add_block(idx(line_no, tok[2])?, structured);
                }
                "scalars" if tok.len() == 2 => p.n_scalar = idx(line_no, tok[1])?,
                _ => return Err(err(line_no, "unexpected header line")),
            }
            continue;
        }

        let sense = match tok[0] {
            "=" => Some(ConstraintKind::Eq),
            "<=" => Some(ConstraintKind::Le),
            ">=" => Some(ConstraintKind::Ge),
            _ => None,
        };
        if let Some(kind) = sense {
            let ok = match section {
                Section::Equalities => kind == ConstraintKind::Eq,
                Section::Inequalities => kind != ConstraintKind::Eq,
                _ => false,
            };
            if !ok || tok.len() < 2 {
                return Err(err(line_no, "constraint header in wrong section"));
            }
            let rhs = num(line_no, tok[1])?;
            let label = tok[2..].join(" ");
            current = Some(p.add_constraint(LinearExpr::new(), kind, rhs, label));
            continue;
        }

        let expr = match section {
            Section::Objective => &mut p.objective,
            _ => {
                let c = current.ok_or_else(|| err(line_no, "coefficient before constraint header"))?;
                &mut p.constraints[c].expr
            }
        };
        if tok[0] == "x" {
            if tok.len() != 3 {
                return Err(err(line_no, "scalar line needs 'x var value'"));
            }
            expr.add_lp(idx(line_no, tok[1])?, num(line_no, tok[2])?);
        } else {
            if tok.len() != 4 {
                return Err(err(line_no, "matrix line needs 'block row col value'"));
            }
            let b = idx(line_no, tok[0])?;
            let dim = p.blocks.get(b).map(|blk| blk.dim).ok_or_else(|| err(line_no, "unknown block"))?;
            let mut m = SymSparse::new(dim);
            m.push(idx(line_no, tok[1])?, idx(line_no, tok[2])?, num(line_no, tok[3])?);
            expr.add_psd(b, m);
        }
    }
    p.compress();
    p.validate()?;
    Ok(p)
}
