//! Plain-text sparse triplet dump of a [`ConicProgram`].
//!
//! ```text
//! # conic program
//! n 3
//! offset 0.5
//! C 0 0 1.0
//! A 0 1 2 0.5
//! b 0 1.0
//! G 0 0 0 -1.0
//! h 0 0.0
//! ```
//!
//! Indices are 0-based and matrix entries are upper-triangle (`i <= j`);
//! each stored value appears at both `(i, j)` and `(j, i)`. `A r ...` and
//! `b r` describe equality row `r`, `G r ...` and `h r` inequality row `r`.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;

use super::{ConicProgram, SymSparse};
use crate::error::{Error, Result};

pub fn write_triplets(p: &ConicProgram) -> String {
    let mut out = String::from("# conic program\n");
    let _ = writeln!(out, "n {}", p.n);
    let _ = writeln!(out, "offset {:e}", p.offset);
    for &(i, j, v) in p.cost.entries() {
        let _ = writeln!(out, "C {i} {j} {v:e}");
    }
    for (tag, rhs_tag, rows) in [("A", "b", &p.equalities), ("G", "h", &p.inequalities)] {
        for (r, (a, b)) in rows.iter().enumerate() {
            for &(i, j, v) in a.entries() {
                let _ = writeln!(out, "{tag} {r} {i} {j} {v:e}");
            }
            let _ = writeln!(out, "{rhs_tag} {r} {b:e}");
        }
    }
    out
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, "missing field"))?;
    tok.parse().map_err(|_| parse_err(line, format!("cannot parse `{tok}`")))
}

fn row(rows: &mut Vec<(SymSparse, f64)>, r: usize) -> &mut (SymSparse, f64) {
    if rows.len() <= r {
        rows.resize(r + 1, (SymSparse::new(), 0.0));
    }
    &mut rows[r]
}

pub fn read_triplets(text: &str) -> Result<ConicProgram> {
    let mut p = ConicProgram::default();
    let mut have_n = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tok = trimmed.split_whitespace();
        let kind = tok.next().unwrap_or_default();
        match kind {
            "n" => {
                p.n = field(tok.next(), line)?;
                have_n = true;
            }
            "offset" => p.offset = field(tok.next(), line)?,
            "C" => {
                let (i, j, v) = (field(tok.next(), line)?, field(tok.next(), line)?, field(tok.next(), line)?);
                p.cost.add(i, j, v);
            }
            "A" | "G" => {
                let r: usize = field(tok.next(), line)?;
                let (i, j, v) = (field(tok.next(), line)?, field(tok.next(), line)?, field(tok.next(), line)?);
                let rows = if kind == "A" { &mut p.equalities } else { &mut p.inequalities };
                row(rows, r).0.add(i, j, v);
            }
            "b" | "h" => {
                let r: usize = field(tok.next(), line)?;
                let v: f64 = field(tok.next(), line)?;
                let rows = if kind == "b" { &mut p.equalities } else { &mut p.inequalities };
                row(rows, r).1 = v;
            }
            other => return Err(parse_err(line, format!("unknown record `{other}`"))),
        }
        if tok.next().is_some() {
            return Err(parse_err(line, "trailing fields"));
        }
    }
    if !have_n {
        return Err(Error::Parse("missing `n` record".into()));
    }
    Ok(p)
}
