//! DIMACS CNF reading and writing.
//!
//! Clauses are written verbatim, so repeated and complementary literals
//! survive a round trip.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::formula::{Clause, CnfFormula, Literal, Provenance};

pub fn write<W: Write>(f: &CnfFormula, mut out: W) -> Result<()> {
    writeln!(out, "p cnf {} {}", f.num_vars(), f.num_clauses())?;
    for c in f.clauses() {
        for l in c.literals() {
            write!(out, "{} ", l.to_dimacs())?;
        }
        writeln!(out, "0")?;
    }
    Ok(())
}

pub fn to_string(f: &CnfFormula) -> String {
    let mut buf = Vec::new();
    write(f, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Parses DIMACS CNF. Comment lines (`c ...`) and `%` trailers are skipped;
/// clauses may span lines.
pub fn read<R: BufRead>(input: R) -> Result<CnfFormula> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut current: Vec<Literal> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('c') {
            continue;
        }
        if trimmed.starts_with('%') {
            break;
        }
        if trimmed.starts_with('p') {
            if header.is_some() {
                return Err(Error::Dimacs { line: lineno, msg: "duplicate header".into() });
            }
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            if parts.len() != 4 || parts[1] != "cnf" {
                return Err(Error::Dimacs { line: lineno, msg: format!("bad header {trimmed:?}") });
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Dimacs { line: lineno, msg: format!("bad count {s:?}") })
            };
            header = Some((parse(parts[2])?, parse(parts[3])?));
            continue;
        }
        let (n, _) = header.ok_or(Error::Dimacs { line: lineno, msg: "clause before header".into() })?;
        for tok in trimmed.split_whitespace() {
            let v: i64 = tok
                .parse()
                .map_err(|_| Error::Dimacs { line: lineno, msg: format!("bad literal {tok:?}") })?;
            if v == 0 {
                clauses.push(Clause::new(std::mem::take(&mut current)));
                continue;
            }
            if v.unsigned_abs() as usize > n {
                return Err(Error::Dimacs {
                    line: lineno,
                    msg: format!("literal {v} exceeds declared n = {n}"),
                });
            }
            current.push(Literal::from_dimacs(v).expect("nonzero"));
        }
    }
    let (n, m) = header.ok_or(Error::Dimacs { line: 0, msg: "missing header".into() })?;
    if !current.is_empty() {
        clauses.push(Clause::new(current));
    }
    if clauses.len() != m {
        return Err(Error::Dimacs {
            line: 0,
            msg: format!("header declares {m} clauses, found {}", clauses.len()),
        });
    }
    Ok(CnfFormula::new(n, clauses).with_provenance(Provenance::Parsed))
}

pub fn from_str(s: &str) -> Result<CnfFormula> {
    read(s.as_bytes())
}
