//! k-CNF formulas, the random models they are drawn from, and simplification
//! under partial assignments.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};

/// A signed occurrence of a variable. Variables are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    var: u32,
    positive: bool,
}

impl Literal {
    pub fn new(var: u32, positive: bool) -> Self {
        assert!(var >= 1, "variables are numbered from 1");
        Literal { var, positive }
    }

    pub fn pos(var: u32) -> Self {
        Self::new(var, true)
    }

    pub fn neg(var: u32) -> Self {
        Self::new(var, false)
    }

    /// Parses a nonzero DIMACS literal.
    pub fn from_dimacs(lit: i64) -> Option<Self> {
        if lit == 0 || lit.unsigned_abs() > u32::MAX as u64 {
            return None;
        }
        Some(Literal::new(lit.unsigned_abs() as u32, lit > 0))
    }

    pub fn to_dimacs(self) -> i64 {
        if self.positive {
            self.var as i64
        } else {
            -(self.var as i64)
        }
    }

    pub fn var(self) -> u32 {
        self.var
    }

    pub fn is_positive(self) -> bool {
        self.positive
    }

    /// `sign(x, a)` as ±1.
    pub fn sign(self) -> i8 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    /// Value of the literal when its variable takes `value` ∈ {−1, 0, +1}.
    pub fn eval(self, value: i8) -> i8 {
        self.sign() * value
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "x{}", self.var)
        } else {
            write!(f, "¬x{}", self.var)
        }
    }
}

/// An ordered disjunction of literals. Repeated and complementary literals are
/// kept as they are.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    lits: Vec<Literal>,
}

impl Clause {
    pub fn new(lits: Vec<Literal>) -> Self {
        Clause { lits }
    }

    pub fn from_dimacs(lits: &[i64]) -> Self {
        Clause::new(
            lits.iter()
                .map(|&l| Literal::from_dimacs(l).expect("nonzero literal"))
                .collect(),
        )
    }

    pub fn literals(&self) -> &[Literal] {
        &self.lits
    }

    pub fn len(&self) -> usize {
        self.lits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lits.is_empty()
    }

    /// Distinct variables of the clause, sorted.
    pub fn variables(&self) -> Vec<u32> {
        let mut vs: Vec<u32> = self.lits.iter().map(|l| l.var()).collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    pub fn is_tautology(&self) -> bool {
        self.lits
            .iter()
            .any(|l| self.lits.iter().any(|m| m.var() == l.var() && m.sign() != l.sign()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// `m` independent clauses, each of `k` independent uniform literals.
    UniformTuple,
    /// Each of the `(2n)^k` ordered tuples included with probability `m/(2n)^k`.
    Binomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomModel {
    pub kind: ModelKind,
    pub k: usize,
    pub m: usize,
}

impl RandomModel {
    pub fn uniform(k: usize, m: usize) -> Self {
        RandomModel { kind: ModelKind::UniformTuple, k, m }
    }

    pub fn binomial(k: usize, m: usize) -> Self {
        RandomModel { kind: ModelKind::Binomial, k, m }
    }

    /// Clause count for density `r`, `m = ⌈rn⌉`.
    pub fn clauses_for_density(r: f64, n: usize) -> usize {
        (r * n as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Generated { model: RandomModel, n: usize, seed: u64 },
    Decimated,
    Parsed,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnfFormula {
    n: usize,
    clauses: Vec<Clause>,
    provenance: Provenance,
}

/// Above this many tuples the binomial model is sampled as a Poisson number of
/// distinct uniform tuples instead of by per-tuple coin flips.
const EXHAUSTIVE_BINOMIAL_TUPLES: u64 = 1 << 16;

impl CnfFormula {
    /// Builds a formula; panics if a literal mentions a variable above `n`.
    pub fn new(n: usize, clauses: Vec<Clause>) -> Self {
        Self::try_new(n, clauses).expect("literal variable exceeds n")
    }

    pub fn try_new(n: usize, clauses: Vec<Clause>) -> Result<Self> {
        for c in &clauses {
            if let Some(l) = c.literals().iter().find(|l| l.var() as usize > n) {
                return Err(Error::InvalidAssignment(format!(
                    "literal {} mentions a variable above n = {n}",
                    l.to_dimacs()
                )));
            }
        }
        Ok(CnfFormula { n, clauses, provenance: Provenance::Manual })
    }

    pub fn from_dimacs_clauses(n: usize, clauses: &[&[i64]]) -> Self {
        Self::new(n, clauses.iter().map(|c| Clause::from_dimacs(c)).collect())
    }

    pub fn empty(n: usize) -> Self {
        Self::new(n, Vec::new())
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Draws a formula from `model` on `n` variables; deterministic in `seed`.
    pub fn generate(model: RandomModel, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidModel("n must be at least 1".into()));
        }
        if model.k < 2 {
            return Err(Error::InvalidModel(format!("k = {} < 2", model.k)));
        }
        if n > u32::MAX as usize / 2 {
            return Err(Error::InvalidModel(format!("n = {n} overflows literal indices")));
        }
        if model.m.checked_mul(model.k).is_none() {
            return Err(Error::InvalidModel("k·m overflows".into()));
        }
        let mut rng = rng_for(seed, Stream::Generation, 0);
        let draw_clause = |rng: &mut rand_chacha::ChaCha8Rng| {
            Clause::new(
                (0..model.k)
                    .map(|_| Literal::new(rng.random_range(1..=n as u32), rng.random::<bool>()))
                    .collect(),
            )
        };
        let clauses = match model.kind {
            ModelKind::UniformTuple => (0..model.m).map(|_| draw_clause(&mut rng)).collect(),
            ModelKind::Binomial => {
                let tuples = (2 * n as u64).checked_pow(model.k as u32);
                match tuples {
                    Some(total) if total <= EXHAUSTIVE_BINOMIAL_TUPLES => {
                        let p = model.m as f64 / total as f64;
                        if p > 1.0 {
                            return Err(Error::InvalidModel(format!(
                                "inclusion probability m/(2n)^k = {p} exceeds 1"
                            )));
                        }
                        let mut out = Vec::new();
                        for code in 0..total {
                            if rng.random::<f64>() < p {
                                out.push(decode_tuple(code, n, model.k));
                            }
                        }
                        out
                    }
                    _ => {
                        let count = if model.m == 0 {
                            0
                        } else {
                            let pois = Poisson::new(model.m as f64)
                                .map_err(|e| Error::InvalidModel(e.to_string()))?;
                            pois.sample(&mut rng) as usize
                        };
                        match tuples {
                            Some(total) => {
                                if count as u64 > total / 2 {
                                    return Err(Error::InvalidModel(format!(
                                        "{count} clauses requested from only {total} tuples"
                                    )));
                                }
                                let mut seen = HashSet::with_capacity(count);
                                let mut out = Vec::with_capacity(count);
                                while out.len() < count {
                                    let c = draw_clause(&mut rng);
                                    if seen.insert(c.clone()) {
                                        out.push(c);
                                    }
                                }
                                out
                            }
                            None => (0..count).map(|_| draw_clause(&mut rng)).collect(),
                        }
                    }
                }
            }
        };
        Ok(CnfFormula { n, clauses, provenance: Provenance::Generated { model, n, seed } })
    }

    /// A formula on `n` variables whose factor graph is a forest: each clause
    /// joins one earlier variable to one or two fresh ones, and with
    /// probability 0.3 a unit clause is added.
    pub fn random_forest(n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > u32::MAX as usize / 2 {
            return Err(Error::InvalidModel(format!("n = {n} is out of range")));
        }
        let mut rng = rng_for(seed, Stream::Generation, 1);
        let n32 = n as u32;
        let mut clauses = Vec::new();
        let mut next = 2u32;
        while next <= n32 {
            let anchor = rng.random_range(1..next);
            let fresh = rng.random_range(1..=2u32).min(n32 + 1 - next);
            let vars = std::iter::once(anchor).chain(next..next + fresh).collect::<Vec<_>>();
            next += fresh;
            clauses.push(Clause::new(vars.into_iter().map(|v| Literal::new(v, rng.random())).collect()));
        }
        if rng.random_bool(0.3) {
            let v = rng.random_range(1..=n32);
            clauses.push(Clause::new(vec![Literal::new(v, rng.random())]));
        }
        Ok(CnfFormula { n, clauses, provenance: Provenance::Manual })
    }

    /// True iff every clause has a literal made true by `sigma` (indexed from 0
    /// for variable 1, entries ±1).
    pub fn evaluate(&self, sigma: &[i8]) -> bool {
        assert_eq!(sigma.len(), self.n, "assignment must cover all variables");
        self.clauses
            .iter()
            .all(|c| c.literals().iter().any(|l| l.eval(sigma[l.var() as usize - 1]) == 1))
    }

    /// Simplifies under `pa`: drops satisfied clauses, strips falsified
    /// literals, then drops clauses left empty.
    pub fn decimate(&self, pa: &PartialAssignment) -> Decimation {
        assert!(pa.num_vars() >= self.n, "assignment is over fewer variables than the formula");
        let mut clauses = Vec::with_capacity(self.clauses.len());
        let mut origins = Vec::with_capacity(self.clauses.len());
        let mut removed_empty = 0;
        'clauses: for (ci, c) in self.clauses.iter().enumerate() {
            let mut kept = Vec::with_capacity(c.len());
            for (pos, l) in c.literals().iter().enumerate() {
                match pa.get(l.var()) {
                    Some(v) if l.eval(v) == 1 => continue 'clauses,
                    Some(_) => {}
                    None => kept.push(pos),
                }
            }
            if kept.is_empty() {
                removed_empty += 1;
                continue;
            }
            clauses.push(Clause::new(kept.iter().map(|&p| c.literals()[p]).collect()));
            origins.push(ClauseOrigin { source: ci, kept });
        }
        Decimation {
            formula: CnfFormula { n: self.n, clauses, provenance: Provenance::Decimated },
            removed_empty,
            origins,
        }
    }

    /// Like [`decimate`](Self::decimate) but reports a contradiction instead of
    /// silently dropping empty clauses.
    pub fn decimate_strict(&self, pa: &PartialAssignment) -> Result<CnfFormula> {
        let d = self.decimate(pa);
        if d.removed_empty > 0 {
            Err(Error::Contradiction(d.removed_empty))
        } else {
            Ok(d.formula)
        }
    }

    /// Occurrence count of each variable: number of clauses containing it
    /// (index 0 unused).
    pub fn clause_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n + 1];
        for c in &self.clauses {
            for v in c.variables() {
                deg[v as usize] += 1;
            }
        }
        deg
    }

    /// Marks redundant clauses: those sharing at least two distinct variables
    /// with another clause, or repeating a variable within themselves.
    pub fn redundant_clauses(&self) -> Vec<bool> {
        let mut first: HashMap<(u32, u32), usize> = HashMap::new();
        let mut redundant = vec![false; self.clauses.len()];
        for (ci, c) in self.clauses.iter().enumerate() {
            let vars = c.variables();
            if vars.len() < c.len() {
                redundant[ci] = true;
            }
            for (i, &u) in vars.iter().enumerate() {
                for &v in &vars[i + 1..] {
                    match first.get(&(u, v)) {
                        Some(&other) => {
                            redundant[ci] = true;
                            redundant[other] = true;
                        }
                        None => {
                            first.insert((u, v), ci);
                        }
                    }
                }
            }
        }
        redundant
    }

    pub fn tameness(&self) -> Tameness {
        let ln_n = (self.n.max(1) as f64).ln();
        let redundant_count = self.redundant_clauses().iter().filter(|&&r| r).count();
        let heavy_var_count = self.clause_degrees().iter().skip(1).filter(|&&d| d as f64 > ln_n).count();
        Tameness {
            tame: redundant_count as f64 <= ln_n && heavy_var_count as f64 <= ln_n,
            redundant_count,
            heavy_var_count,
        }
    }

    /// Exact number of satisfying assignments by exhaustive enumeration.
    pub fn count_satisfying_bruteforce(&self, cap: usize) -> Result<u64> {
        if self.n > cap || self.n > 40 {
            return Err(Error::CapExceeded { n: self.n, cap: cap.min(40) });
        }
        let masks: Vec<(u64, u64)> = self
            .clauses
            .iter()
            .map(|c| {
                c.literals().iter().fold((0u64, 0u64), |(p, q), l| {
                    let bit = 1u64 << (l.var() - 1);
                    if l.is_positive() {
                        (p | bit, q)
                    } else {
                        (p, q | bit)
                    }
                })
            })
            .collect();
        let count_range = |lo: u64, hi: u64| -> u64 {
            (lo..hi)
                .filter(|&a| masks.iter().all(|&(p, q)| (a & p) | (!a & q) != 0))
                .count() as u64
        };
        let total = 1u64 << self.n;
        if self.n <= 16 {
            return Ok(count_range(0, total));
        }
        let chunk = 1u64 << 14;
        Ok((0..total / chunk)
            .into_par_iter()
            .map(|i| count_range(i * chunk, (i + 1) * chunk))
            .sum())
    }
}

fn decode_tuple(mut code: u64, n: usize, k: usize) -> Clause {
    let base = 2 * n as u64;
    let mut lits = Vec::with_capacity(k);
    for _ in 0..k {
        let l = code % base;
        code /= base;
        lits.push(Literal::new((l / 2) as u32 + 1, l.is_multiple_of(2)));
    }
    Clause::new(lits)
}

/// Where a clause of a decimated formula came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClauseOrigin {
    /// Index of the source clause.
    pub source: usize,
    /// Positions of the source clause that survived.
    pub kept: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Decimation {
    pub formula: CnfFormula,
    /// Clauses falsified by the assignment and removed.
    pub removed_empty: usize,
    pub origins: Vec<ClauseOrigin>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Tameness {
    pub tame: bool,
    pub redundant_count: usize,
    pub heavy_var_count: usize,
}

/// `2^n (1 − 2^{−k})^m`, with its base-2 logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SatCountExpectation {
    pub value: f64,
    pub log2: f64,
}

pub fn expected_sat_count(k: usize, n: usize, m: usize) -> SatCountExpectation {
    let log2 = n as f64 + m as f64 * (-(2f64.powi(-(k as i32)))).ln_1p() / std::f64::consts::LN_2;
    SatCountExpectation { value: log2.exp2(), log2 }
}

/// A partial assignment of ±1 values, remembering the order of assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialAssignment {
    values: Vec<i8>,
    order: Vec<u32>,
}

impl PartialAssignment {
    pub fn new(n: usize) -> Self {
        PartialAssignment { values: vec![0; n + 1], order: Vec::new() }
    }

    pub fn from_pairs(n: usize, pairs: &[(u32, i8)]) -> Result<Self> {
        let mut pa = Self::new(n);
        for &(v, s) in pairs {
            pa.assign(v, s)?;
        }
        Ok(pa)
    }

    pub fn assign(&mut self, var: u32, value: i8) -> Result<()> {
        let i = var as usize;
        if var == 0 || i >= self.values.len() {
            return Err(Error::InvalidAssignment(format!("variable {var} out of range")));
        }
        if value != 1 && value != -1 {
            return Err(Error::InvalidAssignment(format!("value {value} is not ±1")));
        }
        if self.values[i] != 0 {
            return Err(Error::InvalidAssignment(format!("variable {var} assigned twice")));
        }
        self.values[i] = value;
        self.order.push(var);
        Ok(())
    }

    pub fn get(&self, var: u32) -> Option<i8> {
        match self.values.get(var as usize) {
            Some(&v) if v != 0 => Some(v),
            _ => None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.values.len() - 1
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Union of two assignments over disjoint variable sets.
    pub fn union(&self, other: &PartialAssignment) -> Result<Self> {
        let mut out = self.clone();
        for &v in other.order() {
            out.assign(v, other.get(v).expect("ordered variables are assigned"))?;
        }
        Ok(out)
    }
}
