//! Line-oriented text form of an [`SdpProblem`], mainly for debugging.
//!
//! ```text
//! sdp 1
//! block 2 gram
//! scalar free t
//! scalar nonneg s
//! min b0:0:0:1.0 s1:2.5
//! eq 1.0 b0:0:0:1.0 b0:1:1:1.0
//! eq -0.5 b0:1:0:1.0 s0:-1.0
//! ```
//!
//! The first line is the version header. `block <dim> <name>` and
//! `scalar <free|nonneg|nonpos> <name>` declare variables in index order
//! (the name is the rest of the line). An optional `min` line gives the
//! objective and each `eq <rhs>` line one equality. Terms are
//! `b<block>:<row>:<col>:<coef>` for a block entry (row >= col, entry
//! semantics) and `s<scalar>:<coef>` for a scalar. Numbers are written with
//! Rust's shortest round-trip formatting, so `load(dump(p)) == p` exactly.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;

use super::{Equality, LinearExpr, Result, SdpError, SdpProblem, Sign, Var};

pub fn dump(prob: &SdpProblem) -> String {
    let mut out = String::from("sdp 1\n");
    for b in &prob.blocks {
        let _ = writeln!(out, "block {} {}", b.dim, b.name);
    }
    for s in &prob.scalars {
        let sign = match s.sign {
            Sign::Free => "free",
            Sign::NonNeg => "nonneg",
            Sign::NonPos => "nonpos",
        };
        let _ = writeln!(out, "scalar {sign} {}", s.name);
    }
    if let Some(obj) = &prob.objective {
        out.push_str("min");
        write_terms(&mut out, obj);
        out.push('\n');
    }
    for eq in &prob.equalities {
        let _ = write!(out, "eq {:?}", eq.rhs);
        write_terms(&mut out, &eq.expr);
        out.push('\n');
    }
    out
}

fn write_terms(out: &mut String, expr: &LinearExpr) {
    for (v, c) in expr.terms() {
        let _ = match v {
            Var::Entry { block, row, col } => write!(out, " b{block}:{row}:{col}:{c:?}"),
            Var::Scalar(s) => write!(out, " s{s}:{c:?}"),
        };
    }
}

pub fn load(text: &str) -> Result<SdpProblem> {
    let mut prob = SdpProblem::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| SdpError::Parse { line: line_no, message };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (keyword, rest) = line.split_once(' ').unwrap_or((line, ""));
        if !saw_header {
            if keyword != "sdp" || rest.trim() != "1" {
                return Err(err("expected header 'sdp 1'".into()));
            }
            saw_header = true;
            continue;
        }
        match keyword {
            "block" => {
                let (dim, name) = rest.split_once(' ').ok_or_else(|| err("expected 'block <dim> <name>'".into()))?;
                let dim: usize = dim.parse().map_err(|_| err(format!("bad block dimension '{dim}'")))?;
                prob.add_block(name, dim);
            }
            "scalar" => {
                let (sign, name) = rest.split_once(' ').ok_or_else(|| err("expected 'scalar <sign> <name>'".into()))?;
                let sign = match sign {
                    "free" => Sign::Free,
                    "nonneg" => Sign::NonNeg,
                    "nonpos" => Sign::NonPos,
                    other => return Err(err(format!("unknown scalar sign '{other}'"))),
                };
                prob.add_scalar(name, sign);
            }
            "min" => {
                if prob.objective.is_some() {
                    return Err(err("duplicate objective".into()));
                }
                prob.objective = Some(parse_terms(rest.split_whitespace()).map_err(err)?);
            }
            "eq" => {
                let mut tokens = rest.split_whitespace();
                let rhs = tokens.next().ok_or_else(|| err("missing right-hand side".into()))?;
                let rhs: f64 = rhs.parse().map_err(|_| err(format!("bad right-hand side '{rhs}'")))?;
                let expr = parse_terms(tokens).map_err(err)?;
                prob.equalities.push(Equality { expr, rhs });
            }
            other => return Err(err(format!("unknown keyword '{other}'"))),
        }
    }
    if !saw_header {
        return Err(SdpError::Parse { line: 1, message: "empty document".into() });
    }
    prob.validate()?;
    Ok(prob)
}

fn parse_terms<'a>(tokens: impl Iterator<Item = &'a str>) -> std::result::Result<LinearExpr, String> {
    let mut expr = LinearExpr::new();
    for tok in tokens {
        let parts: Vec<&str> = tok.split(':').collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad index in term '{tok}'"));
        let (var, coeff) = match (parts.as_slice(), tok.chars().next()) {
            ([b, i, j, c], Some('b')) => (Var::Entry { block: num(&b[1..])?, row: num(i)?, col: num(j)? }, *c),
            ([s, c], Some('s')) => (Var::Scalar(num(&s[1..])?), *c),
            _ => return Err(format!("malformed term '{tok}'")),
        };
        let coeff: f64 = coeff.parse().map_err(|_| format!("bad coefficient in term '{tok}'"))?;
        if let Var::Entry { row, col, .. } = var {
            if col > row {
                return Err(format!("term '{tok}' must list row >= col"));
            }
        }
        // direct insert keeps exact values even for repeated terms
        if expr.terms.insert(var, coeff).is_some() {
            return Err(format!("duplicate variable in term '{tok}'"));
        }
    }
    Ok(expr)
}
