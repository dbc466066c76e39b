//! Neighbourhood classes of a decimated formula and audits of the
//! quasirandomness properties Q0–Q5, including the signed operator Λ and its
//! cut norm.
//!
//! Q2–Q5 quantify over all small variable sets `T`. They are checked exactly
//! when the number of sets fits the evaluation budget, and otherwise audited
//! on a family of adversarial candidates. A sampled audit can only miss a
//! violation, never invent one.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bias::{tau, BiasSchedule, TypicalModel};
use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::seed::{rng_for, Stream};
use crate::stats::ln_choose;

/// Parameters of the audit at decimation time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Regime {
    pub k: usize,
    pub n: usize,
    pub theta: f64,
    pub delta: f64,
    pub rho: f64,
    pub c: f64,
}

impl Regime {
    pub fn from_schedule(s: &BiasSchedule, t: usize) -> Self {
        Regime { k: s.k, n: s.n, theta: s.theta(t), delta: s.delta(t), rho: s.rho, c: s.c }
    }

    pub fn theta_k(&self) -> f64 {
        self.theta * self.k as f64
    }

    pub fn theta_n(&self) -> f64 {
        self.theta * self.n as f64
    }

    /// `k₁ = √c·θk`.
    pub fn k1(&self) -> f64 {
        self.c.sqrt() * self.theta_k()
    }

    /// `0.1θk ≤ len ≤ 10θk`.
    pub fn in_window(&self, len: usize) -> bool {
        let l = len as f64;
        0.1 * self.theta_k() <= l && l <= 10.0 * self.theta_k()
    }

    pub fn typical(&self) -> TypicalModel {
        TypicalModel { k: self.k, rho: self.rho, theta: self.theta, n: self.n }
    }
}

/// A variable set with per-clause membership counts.
#[derive(Clone, Debug)]
pub struct TSet {
    member: Vec<bool>,
    size: usize,
    clause_count: Vec<usize>,
}

impl TSet {
    pub fn new(g: &FactorGraph, vars: impl IntoIterator<Item = u32>) -> Self {
        let mut member = vec![false; g.num_vars() + 1];
        let mut size = 0;
        for v in vars {
            if !member[v as usize] {
                member[v as usize] = true;
                size += 1;
            }
        }
        let clause_count = (0..g.num_clauses())
            .map(|c| g.clause_neighbors(c).filter(|&(v, _)| member[v as usize]).count())
            .collect();
        TSet { member, size, clause_count }
    }

    pub fn empty(g: &FactorGraph) -> Self {
        Self::new(g, std::iter::empty())
    }

    pub fn contains(&self, x: u32) -> bool {
        self.member[x as usize]
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn members(&self) -> Vec<u32> {
        (1..self.member.len() as u32).filter(|&v| self.member[v as usize]).collect()
    }

    /// `|N(b) ∩ T|`, counting repeated occurrences.
    pub fn in_clause(&self, b: usize) -> usize {
        self.clause_count[b]
    }

    /// `|N(b) ∩ T ∖ {x}|` for the clause of edge `e` and its variable `x`.
    pub fn others_in(&self, g: &FactorGraph, e: usize) -> usize {
        let x = g.edge_var(e);
        let b = g.edge_clause(e);
        if self.contains(x) {
            self.clause_count[b] - multiplicity(g, e)
        } else {
            self.clause_count[b]
        }
    }

    /// `|N(b) ∖ T|`.
    pub fn outside(&self, g: &FactorGraph, b: usize) -> usize {
        g.clause_len(b) - self.clause_count[b]
    }
}

/// Occurrences of edge `e`'s variable in its clause.
pub fn multiplicity(g: &FactorGraph, e: usize) -> usize {
    let x = g.edge_var(e);
    g.clause_edges(g.edge_clause(e)).filter(|&o| g.edge_var(o) == x).count()
}

/// The neighbourhood classes of `(x, T, ζ)`, one edge per clause occurrence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborhoodClasses {
    /// Clauses of `N(x, ζ)` with length in the window.
    pub window: Vec<usize>,
    pub le1: Vec<usize>,
    pub zero: Vec<usize>,
    pub one: Vec<usize>,
    /// Clauses of `N(x, ζ)` with `|N(b)∖T| ≥ k₁` and exactly one other `T`-member.
    pub n1: Vec<usize>,
    /// Clauses of `N(x, ζ)` with `|N(b)∖T| ≥ k₁` and more than one other `T`-member.
    pub gt1: Vec<usize>,
}

pub fn classify(g: &FactorGraph, x: u32, t: &TSet, zeta: i8, r: &Regime) -> NeighborhoodClasses {
    let mut out = NeighborhoodClasses::default();
    let k1 = r.k1();
    for &e in g.var_edges_signed(x, zeta) {
        let b = g.edge_clause(e);
        let others = t.others_in(g, e);
        if r.in_window(g.clause_len(b)) {
            out.window.push(e);
            if others <= 1 {
                out.le1.push(e);
                if others == 0 {
                    out.zero.push(e);
                } else {
                    out.one.push(e);
                }
            }
        }
        if t.outside(g, b) as f64 >= k1 {
            if others == 1 {
                out.n1.push(e);
            } else if others > 1 {
                out.gt1.push(e);
            }
        }
    }
    out
}

/// `Σ 2^{−|N(b)|}` over the clauses of the listed edges.
pub fn weight(g: &FactorGraph, edges: &[usize]) -> f64 {
    edges.iter().map(|&e| 0.5f64.powi(g.clause_len(g.edge_clause(e)) as i32)).sum()
}

/// `Σ (2/τ)^{1−|N(b)|}` over the clauses of the listed edges.
pub fn tau_weight(g: &FactorGraph, edges: &[usize], tau: f64) -> f64 {
    edges
        .iter()
        .map(|&e| (tau / 2.0).powi(g.clause_len(g.edge_clause(e)) as i32 - 1))
        .sum()
}

/// `Σ_{b∈N_{>1}} 2^{|N(b)∩T∖x| − |N(b)|}`.
pub fn crowded_weight(g: &FactorGraph, t: &TSet, edges: &[usize]) -> f64 {
    edges
        .iter()
        .map(|&e| 2f64.powi(t.others_in(g, e) as i32 - g.clause_len(g.edge_clause(e)) as i32))
        .sum()
}

/// Sparse square operator over a list of variables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignedOperator {
    /// Variable of each row/column.
    pub vars: Vec<u32>,
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl SignedOperator {
    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries.get(&(row, col)).copied().unwrap_or(0.0)
    }

    /// Entry for the variable pair `(x, y)`.
    pub fn entry(&self, x: u32, y: u32) -> f64 {
        let i = self.vars.iter().position(|&v| v == x);
        let j = self.vars.iter().position(|&v| v == y);
        match (i, j) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.dim()]; self.dim()];
        for (&(i, j), &v) in &self.entries {
            m[i][j] = v;
        }
        m
    }

    pub fn from_dense(m: &[Vec<f64>]) -> Self {
        let mut entries = BTreeMap::new();
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    entries.insert((i, j), v);
                }
            }
        }
        SignedOperator { vars: (1..=m.len() as u32).collect(), entries }
    }

    /// Coordinate list, one `row_var col_var value` per line.
    pub fn to_coo_text(&self) -> String {
        self.entries
            .iter()
            .map(|(&(i, j), v)| format!("{} {} {:e}\n", self.vars[i], self.vars[j], v))
            .collect()
    }

    pub fn abs_sum(&self) -> f64 {
        self.entries.values().map(|v| v.abs()).sum()
    }
}

/// `Λ(T, p, ζ)`: row `x`, column `y` collects `(2/τ(p))^{−|N(b)|}·sign(y,b)`
/// over `b ∈ 𝒩_{≤1}(x, T, ζ)` and occurrences of `y ≠ x` in `b`.
pub fn build_lambda(
    g: &FactorGraph,
    t: &TSet,
    p: f64,
    zeta: i8,
    r: &Regime,
    active: &[u32],
) -> Result<SignedOperator> {
    let tau = tau(p)?;
    let mut index = vec![usize::MAX; g.num_vars() + 1];
    for (i, &v) in active.iter().enumerate() {
        index[v as usize] = i;
    }
    let mut triples = Vec::new();
    for (row, &x) in active.iter().enumerate() {
        for e in classify(g, x, t, zeta, r).le1 {
            let b = g.edge_clause(e);
            let w = (tau / 2.0).powi(g.clause_len(b) as i32);
            for (y, s) in g.clause_neighbors(b) {
                let col = index[y as usize];
                if y == x || col == usize::MAX {
                    continue;
                }
                triples.push(((row, col), w * s as f64));
            }
        }
    }
    // A stable sort keeps the summation order of each entry fixed.
    triples.sort_by_key(|t| t.0);
    let mut merged: Vec<((usize, usize), f64)> = Vec::with_capacity(triples.len());
    for (key, v) in triples {
        match merged.last_mut() {
            Some((k, acc)) if *k == key => *acc += v,
            _ => merged.push((key, v)),
        }
    }
    let entries = merged.into_iter().filter(|(_, v)| *v != 0.0).collect();
    Ok(SignedOperator { vars: active.to_vec(), entries })
}

pub const EXACT_CUT_NORM_DIM: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CutNorm {
    pub lower: f64,
    pub upper: f64,
    pub exact: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutNormMode {
    Exact,
    Bound,
}

/// `max ‖Mζ‖₁` over sign vectors, walking them in Gray-code order with the
/// first coordinate fixed (ζ and −ζ give the same value).
pub fn cut_norm_exact(m: &SignedOperator) -> Result<f64> {
    let d = m.dim();
    if d > EXACT_CUT_NORM_DIM {
        return Err(Error::CapExceeded { n: d, cap: EXACT_CUT_NORM_DIM });
    }
    if d == 0 {
        return Ok(0.0);
    }
    let dense = m.to_dense();
    let mut cols = vec![vec![0.0; d]; d];
    for (i, row) in dense.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            cols[j][i] = v;
        }
    }
    let mut sign = vec![1.0; d];
    let mut v: Vec<f64> = (0..d).map(|i| dense[i].iter().sum()).collect();
    let mut best = v.iter().map(|x| x.abs()).sum::<f64>();
    for step in 1u64..(1u64 << (d - 1)) {
        let j = step.trailing_zeros() as usize + 1;
        let delta = -2.0 * sign[j];
        sign[j] = -sign[j];
        for (vi, cj) in v.iter_mut().zip(&cols[j]) {
            *vi += delta * cj;
        }
        let val = v.iter().map(|x| x.abs()).sum::<f64>();
        if val > best {
            best = val;
        }
    }
    Ok(best)
}

/// Largest `|⟨M·1_A, 1_B⟩|` over disjoint `A, B`.
pub fn max_disjoint_bilinear(m: &SignedOperator) -> Result<f64> {
    let d = m.dim();
    if d > EXACT_CUT_NORM_DIM {
        return Err(Error::CapExceeded { n: d, cap: EXACT_CUT_NORM_DIM });
    }
    let dense = m.to_dense();
    let mut best = 0.0f64;
    for a in 0u64..(1u64 << d) {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (i, row) in dense.iter().enumerate() {
            if a >> i & 1 == 1 {
                continue;
            }
            let c: f64 = (0..d).filter(|&j| a >> j & 1 == 1).map(|j| row[j]).sum();
            if c > 0.0 {
                pos += c;
            } else {
                neg -= c;
            }
        }
        best = best.max(pos).max(neg);
    }
    Ok(best)
}

/// Local-search lower bound on the cut norm from `restarts` random sign vectors.
pub fn cut_norm_lower_bound(m: &SignedOperator, restarts: usize, rng: &mut ChaCha8Rng) -> f64 {
    let d = m.dim();
    if d == 0 {
        return 0.0;
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    for (&(i, j), &v) in &m.entries {
        rows[i].push((j, v));
        cols[j].push((i, v));
    }
    let mut best = 0.0f64;
    for r in 0..restarts.max(1) {
        let mut sign: Vec<f64> = match r {
            0 => vec![1.0; d],
            _ => (0..d).map(|_| if rand::Rng::random::<bool>(rng) { 1.0 } else { -1.0 }).collect(),
        };
        let mut v: Vec<f64> = rows.iter().map(|row| row.iter().map(|&(j, x)| x * sign[j]).sum()).collect();
        let mut val: f64 = v.iter().map(|x| x.abs()).sum();
        loop {
            let mut improved = false;
            for j in 0..d {
                let gain: f64 = cols[j]
                    .iter()
                    .map(|&(i, x)| (v[i] - 2.0 * sign[j] * x).abs() - v[i].abs())
                    .sum();
                if gain > 1e-12 {
                    for &(i, x) in &cols[j] {
                        v[i] -= 2.0 * sign[j] * x;
                    }
                    sign[j] = -sign[j];
                    val += gain;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        best = best.max(val);
    }
    best
}

pub fn cut_norm(m: &SignedOperator, mode: CutNormMode, seed: u64) -> Result<CutNorm> {
    match mode {
        CutNormMode::Exact => {
            let v = cut_norm_exact(m)?;
            Ok(CutNorm { lower: v, upper: v, exact: true })
        }
        CutNormMode::Bound => {
            let mut rng = rng_for(seed, Stream::Sampling, 0);
            let lower = cut_norm_lower_bound(m, 16, &mut rng);
            Ok(CutNorm { lower, upper: m.abs_sum().max(lower), exact: false })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Property {
    Q0,
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
}

impl Property {
    pub const ALL: [Property; 6] = [Property::Q0, Property::Q1, Property::Q2, Property::Q3, Property::Q4, Property::Q5];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditMode {
    Exhaustive,
    Sampled,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeUsed {
    Direct,
    Exhaustive,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditBudget {
    pub mode: AuditMode,
    /// Largest number of `(T, p)` evaluations an exhaustive audit may use.
    pub max_evaluations: u128,
    /// Random sets drawn per size in sampled mode.
    pub random_sets: usize,
    pub seed: u64,
    /// Values of `p` for Q2 and Q5; a default log grid when empty.
    pub p_grid: Vec<f64>,
    /// Work allowance of a sampled audit in clause-edge visits. Greedy growth
    /// may use half of it; the candidate family is trimmed to the rest.
    pub sampled_work: u128,
}

impl Default for AuditBudget {
    fn default() -> Self {
        AuditBudget {
            mode: AuditMode::Auto,
            max_evaluations: 2_000_000,
            random_sets: 32,
            seed: 0,
            p_grid: Vec::new(),
            sampled_work: 2_000_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub t_set: Vec<u32>,
    pub p: Option<f64>,
    pub z: Option<f64>,
    pub zeta: Option<i8>,
    /// The offending count or value.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QOutcome {
    pub property: Property,
    pub holds: bool,
    pub mode: ModeUsed,
    pub sets_evaluated: u64,
    /// Bound the count or value must not exceed.
    pub limit: f64,
    /// Largest count or value seen.
    pub worst: f64,
    pub witness: Option<Witness>,
    /// Set for Q5 when neither cut-norm bound settles a candidate.
    pub inconclusive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuasirandomReport {
    pub regime: Regime,
    pub t: usize,
    pub within_horizon: bool,
    pub outcomes: Vec<QOutcome>,
}

impl QuasirandomReport {
    pub fn all_hold(&self) -> bool {
        self.outcomes.iter().all(|o| o.holds)
    }
}

/// Default `p` values: a log grid on `(0, 1]` plus the typical-value band ends.
pub fn default_p_grid(rho: f64) -> Vec<f64> {
    let mut ps: Vec<f64> = (0..=6).map(|i| 10f64.powi(-i)).collect();
    ps.extend([(-2.0 * rho).exp(), (-rho).exp(), (2.0 * (-rho).exp()).min(1.0)]);
    ps.retain(|p| *p > 0.0 && *p <= 1.0);
    ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ps.dedup();
    ps
}

/// Largest admissible `|T|` for each quantified property.
pub fn size_bound(p: Property, r: &Regime, active: usize) -> usize {
    let f = match p {
        Property::Q2 | Property::Q5 => 10.0 * r.delta,
        Property::Q3 => r.delta,
        Property::Q4 => 100.0 * r.delta,
        _ => 0.0,
    };
    ((f * r.theta_n() + 1e-9).floor().max(0.0) as usize).min(active)
}

/// Number of variables of `active` violating the Q2 conditions for `(T, p)`.
pub fn q2_count(g: &FactorGraph, t: &TSet, p: f64, r: &Regime, active: &[u32]) -> Result<(usize, f64)> {
    Ok(q2_counts(g, t, &[p], r, active)?[0])
}

/// [`q2_count`] for each of `ps`, classifying every variable once.
pub fn q2_counts(g: &FactorGraph, t: &TSet, ps: &[f64], r: &Regime, active: &[u32]) -> Result<Vec<(usize, f64)>> {
    let model = r.typical();
    let big_pi = ps.iter().map(|&p| model.big_pi(t.len() as f64, p)).collect::<Result<Vec<_>>>()?;
    let half_tau = ps.iter().map(|&p| Ok(tau(p)? / 2.0)).collect::<Result<Vec<_>>>()?;
    let s = (r.delta.powi(5)).max(t.len() as f64 / r.theta_n());
    let mut out = vec![(0, 0.0); ps.len()];
    let mut bad = vec![false; ps.len()];
    let mut lens = Vec::new();
    for &x in active {
        bad.iter_mut().for_each(|b| *b = false);
        for zeta in [1i8, -1] {
            let cl = classify(g, x, t, zeta, r);
            let w1 = weight(g, &cl.one);
            let wle = weight(g, &cl.le1);
            let flat = w1 > 1e4 * r.rho * r.theta_k() * s || wle > 1e4 * r.rho;
            lens.clear();
            lens.extend(cl.le1.iter().map(|&e| g.clause_len(g.edge_clause(e)) as i32 - 1));
            for i in 0..ps.len() {
                let tw: f64 = lens.iter().map(|&l| half_tau[i].powi(l)).sum();
                out[i].1 += w1;
                if flat || (big_pi[i] - tw).abs() > 2.0 * r.delta / 1000.0 {
                    bad[i] = true;
                }
            }
        }
        for i in 0..ps.len() {
            out[i].0 += bad[i] as usize;
        }
    }
    Ok(out)
}

/// Number of variables with a crowded-clause weight above `δ/(θk)`.
pub fn q3_count(g: &FactorGraph, t: &TSet, r: &Regime, active: &[u32]) -> (usize, f64) {
    let mut count = 0;
    let mut score = 0.0;
    for &x in active {
        let worst = [1i8, -1]
            .iter()
            .map(|&z| crowded_weight(g, t, &classify(g, x, t, z, r).gt1))
            .fold(0.0, f64::max);
        score += worst;
        count += (worst > r.delta / r.theta_k()) as usize;
    }
    (count, score)
}

/// Largest `Σ_{b: |N(b)∩T| ≥ z|N(b)|} |N(b)| − 1.01|T|/z − 10⁻⁴δθn` over
/// `z ∈ [0.01, 1]`, with the maximising `z`.
pub fn q4_excess(g: &FactorGraph, t: &TSet, r: &Regime) -> (f64, f64) {
    let mut ratios: Vec<(f64, usize)> = (0..g.num_clauses())
        .filter(|&b| g.clause_len(b) > 0)
        .map(|b| (t.in_clause(b) as f64 / g.clause_len(b) as f64, g.clause_len(b)))
        .collect();
    ratios.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let slack = 1e-4 * r.delta * r.theta_n();
    let mut zs: Vec<f64> = ratios.iter().map(|&(z, _)| z).filter(|&z| z >= 0.01).collect();
    zs.push(0.01);
    zs.dedup();
    let mut best = (f64::NEG_INFINITY, 1.0);
    for z in zs {
        let lhs: usize = ratios.iter().filter(|&&(q, _)| q >= z).map(|&(_, l)| l).sum();
        let excess = lhs as f64 - 1.01 * t.len() as f64 / z - slack;
        if excess > best.0 {
            best = (excess, z);
        }
    }
    best
}

/// Clauses and neighbourhoods seeding the candidate family are subsampled to
/// this many on large instances.
const FAMILY_SAMPLE: usize = 256;

fn candidate_family(
    g: &FactorGraph,
    active: &[u32],
    max_size: usize,
    random_sets: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<u32>> {
    let is_active: BTreeSet<u32> = active.iter().copied().collect();
    let mut family: BTreeSet<Vec<u32>> = BTreeSet::new();
    let mut add = |mut s: Vec<u32>| {
        s.retain(|v| is_active.contains(v));
        s.sort_unstable();
        s.dedup();
        if s.len() <= max_size {
            family.insert(s);
        }
    };
    add(Vec::new());
    let mut clauses: Vec<usize> = (0..g.num_clauses()).collect();
    if clauses.len() > FAMILY_SAMPLE {
        clauses = clauses.choose_multiple(rng, FAMILY_SAMPLE).copied().collect();
    }
    let clause_sets: Vec<Vec<u32>> = clauses
        .into_iter()
        .map(|b| {
            let mut vs: Vec<u32> = g.clause_neighbors(b).map(|(v, _)| v).collect();
            vs.sort_unstable();
            vs.dedup();
            vs
        })
        .collect();
    for vs in &clause_sets {
        add(vs.clone());
        for i in 0..vs.len() {
            let mut w = vs.clone();
            w.remove(i);
            add(w);
        }
    }
    let pair_limit = clause_sets.len().min(40);
    for i in 0..pair_limit {
        for j in i + 1..pair_limit {
            add(clause_sets[i].iter().chain(&clause_sets[j]).copied().collect());
        }
    }
    let centres: Vec<u32> = if active.len() > FAMILY_SAMPLE {
        active.choose_multiple(rng, FAMILY_SAMPLE).copied().collect()
    } else {
        active.to_vec()
    };
    for x in centres {
        let mut nb: Vec<u32> = g
            .var_edges(x)
            .iter()
            .flat_map(|&e| g.clause_neighbors(g.edge_clause(e)).map(|(v, _)| v))
            .filter(|&v| v != x)
            .collect();
        nb.sort_unstable();
        nb.dedup();
        nb.truncate(max_size);
        add(nb);
    }
    let mut sizes: Vec<usize> = vec![1, 2, 3, max_size / 2, max_size];
    sizes.retain(|&s| s >= 1 && s <= max_size.min(active.len()));
    sizes.dedup();
    for &s in &sizes {
        for _ in 0..random_sets {
            add(active.choose_multiple(rng, s).copied().collect());
        }
    }
    let mut all = active.to_vec();
    all.shuffle(rng);
    all.truncate(max_size);
    add(all);
    family.into_iter().collect()
}

fn for_each_subset(active: &[u32], max_size: usize, mut f: impl FnMut(&[u32]) -> bool) {
    let n = active.len();
    for size in 0..=max_size.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let set: Vec<u32> = idx.iter().map(|&i| active[i]).collect();
            if !f(&set) {
                return;
            }
            let mut i = size;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if idx[i] < n - size + i {
                    idx[i] += 1;
                    for j in i + 1..size {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if i == usize::MAX || size == 0 {
                break;
            }
        }
    }
}

fn subset_count(n: usize, max_size: usize) -> u128 {
    (0..=max_size.min(n))
        .map(|s| ln_choose(n as u64, s as u64).exp().round() as u128)
        .fold(0, u128::saturating_add)
}

/// Greedily grows sets that maximise `score`, starting from `starts`, with at
/// most `max_evals` calls to `score`.
fn greedy_sets(
    g: &FactorGraph,
    active: &[u32],
    max_size: usize,
    starts: &[Vec<u32>],
    max_evals: usize,
    mut score: impl FnMut(&[u32]) -> (f64, f64),
) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let limit_candidates = 64;
    let mut evals = 0;
    for start in starts {
        if evals >= max_evals {
            break;
        }
        let mut cur = start.clone();
        let mut cur_score = score(&cur);
        evals += 1;
        while cur.len() < max_size && evals < max_evals {
            let mut cands: Vec<u32> = cur
                .iter()
                .flat_map(|&x| g.var_edges(x).iter().flat_map(|&e| g.clause_neighbors(g.edge_clause(e)).map(|(v, _)| v)))
                .filter(|v| !cur.contains(v) && active.contains(v))
                .collect();
            if cands.is_empty() {
                cands = active.iter().copied().filter(|v| !cur.contains(v)).collect();
            }
            cands.sort_unstable();
            cands.dedup();
            cands.truncate(limit_candidates);
            let mut best: Option<(u32, (f64, f64))> = None;
            for v in cands {
                if evals >= max_evals {
                    break;
                }
                evals += 1;
                cur.push(v);
                let s = score(&cur);
                cur.pop();
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((v, s));
                }
            }
            match best {
                Some((v, s)) if s >= cur_score => {
                    cur.push(v);
                    cur_score = s;
                    out.push(cur.clone());
                }
                _ => break,
            }
        }
    }
    out
}

/// A sampled audit of sets costing `per_set_cost` edge visits each: how many
/// greedy evaluations it may spend and how many family sets it keeps.
struct SampledPlan {
    greedy_evals: usize,
    max_sets: usize,
}

impl SampledPlan {
    fn new(per_set_cost: u128, budget: &AuditBudget) -> Self {
        let half = budget.sampled_work / 2 / per_set_cost.max(1);
        SampledPlan { greedy_evals: half.min(4096) as usize, max_sets: half.clamp(2, 1 << 20) as usize }
    }

    /// Keeps `∅` and a seeded random selection of the other sets.
    fn trim(&self, family: &mut Vec<Vec<u32>>, rng: &mut ChaCha8Rng) {
        if family.len() <= self.max_sets {
            return;
        }
        let empty = family.iter().position(|s| s.is_empty());
        let first = empty.map(|i| family.swap_remove(i));
        family.shuffle(rng);
        family.truncate(self.max_sets - first.is_some() as usize);
        family.sort();
        if let Some(e) = first {
            family.insert(0, e);
        }
    }
}

/// Edge visits of one `(T, ·)` evaluation of each property.
fn set_cost(g: &FactorGraph, which: Property, ps: usize) -> u128 {
    let e = g.num_edges() as u128 + 1;
    let m = g.num_clauses() as u128 + 1;
    let kmax = (0..g.num_clauses()).map(|b| g.clause_len(b)).max().unwrap_or(1) as u128;
    match which {
        Property::Q2 => e * (3 + ps as u128),
        Property::Q3 => 3 * e,
        Property::Q4 => e + m * (128 - m.leading_zeros() as u128),
        Property::Q5 => 16 * ps as u128 * e * kmax,
        Property::Q0 | Property::Q1 => e,
    }
}

/// Sets to audit for a quantified property: all of them, or a candidate family.
fn audit_sets(
    g: &FactorGraph,
    active: &[u32],
    max_size: usize,
    per_set_cost: u128,
    budget: &AuditBudget,
    salt: u64,
) -> Result<(ModeUsed, Option<Vec<Vec<u32>>>)> {
    let needed = subset_count(active.len(), max_size).saturating_mul(per_set_cost.max(1));
    let exhaustive = match budget.mode {
        AuditMode::Exhaustive => {
            if needed > budget.max_evaluations {
                return Err(Error::BudgetExceeded { needed, budget: budget.max_evaluations });
            }
            true
        }
        AuditMode::Sampled => false,
        AuditMode::Auto => needed <= budget.max_evaluations,
    };
    if exhaustive {
        return Ok((ModeUsed::Exhaustive, None));
    }
    let mut rng = rng_for(budget.seed, Stream::Sampling, salt);
    Ok((ModeUsed::Sampled, Some(candidate_family(g, active, max_size, budget.random_sets, &mut rng))))
}

struct Tracker {
    limit: f64,
    worst: f64,
    witness: Option<Witness>,
    evaluated: u64,
}

impl Tracker {
    fn new(limit: f64) -> Self {
        Tracker { limit, worst: f64::NEG_INFINITY, witness: None, evaluated: 0 }
    }

    fn record(&mut self, value: f64, make: impl FnOnce() -> Witness) {
        self.evaluated += 1;
        if value > self.worst {
            self.worst = value;
        }
        if value > self.limit && self.witness.is_none() {
            self.witness = Some(make());
        }
    }

    fn finish(self, property: Property, mode: ModeUsed) -> QOutcome {
        QOutcome {
            property,
            holds: self.witness.is_none(),
            mode,
            sets_evaluated: self.evaluated,
            limit: self.limit,
            worst: if self.evaluated == 0 { 0.0 } else { self.worst },
            witness: self.witness,
            inconclusive: false,
        }
    }
}

/// Runs `eval` over every subset (exhaustive) or over the trimmed family and
/// then the sets grown greedily under `score` (sampled), stopping as soon as
/// `eval` returns false.
#[allow(clippy::too_many_arguments)]
type Score<'a> = &'a mut dyn FnMut(&[u32]) -> (f64, f64);

#[allow(clippy::too_many_arguments)]
fn search(
    g: &FactorGraph,
    which: Property,
    active: &[u32],
    max_size: usize,
    family: Option<Vec<Vec<u32>>>,
    ps: usize,
    budget: &AuditBudget,
    eval: &mut impl FnMut(&[u32]) -> bool,
    score: Option<Score<'_>>,
) {
    let Some(mut family) = family else {
        for_each_subset(active, max_size, |s| eval(s));
        return;
    };
    let plan = SampledPlan::new(set_cost(g, which, ps), budget);
    let starts: Vec<Vec<u32>> = family.iter().filter(|s| s.len() <= 1).take(8).cloned().collect();
    plan.trim(&mut family, &mut rng_for(budget.seed, Stream::Sampling, 100 + which as u64));
    for s in &family {
        if !eval(s) {
            return;
        }
    }
    if let Some(score) = score {
        for s in greedy_sets(g, active, max_size, &starts, plan.greedy_evals, score) {
            if !eval(&s) {
                return;
            }
        }
    }
}

/// Checks one property on the decimated formula `g` over the unassigned
/// variables `active`.
pub fn check_q(g: &FactorGraph, which: Property, r: &Regime, active: &[u32], budget: &AuditBudget) -> Result<QOutcome> {
    let theta_n = r.theta_n();
    match which {
        Property::Q0 => {
            let tame = g.to_formula().tameness();
            let ln_n = (g.num_vars().max(1) as f64).ln();
            let worst = tame.redundant_count.max(tame.heavy_var_count) as f64;
            Ok(QOutcome {
                property: which,
                holds: tame.tame,
                mode: ModeUsed::Direct,
                sets_evaluated: 0,
                limit: ln_n,
                worst,
                witness: None,
                inconclusive: false,
            })
        }
        Property::Q1 => {
            let outside = active
                .iter()
                .filter(|&&x| g.var_edges(x).iter().any(|&e| !r.in_window(g.clause_len(g.edge_clause(e)))))
                .count();
            let heavy = active
                .iter()
                .filter(|&&x| {
                    [1i8, -1].iter().any(|&z| {
                        r.theta_k().powi(3) * r.delta * weight(g, g.var_edges_signed(x, z)) > 1.0
                    })
                })
                .count();
            let first_ok = outside as f64 <= 10.0 * r.delta * theta_n;
            let second_ok = heavy as f64 <= 1e-4 * r.delta * theta_n;
            Ok(QOutcome {
                property: which,
                holds: first_ok && second_ok,
                mode: ModeUsed::Direct,
                sets_evaluated: 0,
                limit: 10.0 * r.delta * theta_n,
                worst: outside as f64,
                witness: (!second_ok).then(|| Witness {
                    t_set: Vec::new(),
                    p: None,
                    z: None,
                    zeta: None,
                    value: heavy as f64,
                }),
                inconclusive: false,
            })
        }
        Property::Q2 => {
            let ps = if budget.p_grid.is_empty() { default_p_grid(r.rho) } else { budget.p_grid.clone() };
            let max_size = size_bound(which, r, active.len());
            let (mode, family) = audit_sets(g, active, max_size, ps.len() as u128, budget, 2)?;
            let mut score = |s: &[u32]| {
                let t = TSet::new(g, s.iter().copied());
                q2_counts(g, &t, &ps, r, active)
                    .map(|v| {
                        v.into_iter()
                            .map(|(c, sc)| (c as f64, sc))
                            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b > a { b } else { a })
                    })
                    .unwrap_or((0.0, 0.0))
            };
            let mut tr = Tracker::new(1e-3 * r.delta * r.delta * theta_n);
            let mut err = None;
            let mut eval = |s: &[u32]| {
                let t = TSet::new(g, s.iter().copied());
                match q2_counts(g, &t, &ps, r, active) {
                    Ok(counts) => {
                        for (&p, (c, _)) in ps.iter().zip(counts) {
                            tr.record(c as f64, || Witness {
                                t_set: s.to_vec(),
                                p: Some(p),
                                z: None,
                                zeta: None,
                                value: c as f64,
                            });
                        }
                    }
                    Err(e) => {
                        err = Some(e);
                        return false;
                    }
                }
                tr.witness.is_none()
            };
            search(g, which, active, max_size, family, ps.len(), budget, &mut eval, Some(&mut score));
            if let Some(e) = err {
                return Err(e);
            }
            Ok(tr.finish(which, mode))
        }
        Property::Q3 => {
            let max_size = size_bound(which, r, active.len());
            let (mode, family) = audit_sets(g, active, max_size, 1, budget, 3)?;
            let mut score = |s: &[u32]| {
                let (c, sc) = q3_count(g, &TSet::new(g, s.iter().copied()), r, active);
                (c as f64, sc)
            };
            let mut tr = Tracker::new(1e-4 * r.delta * theta_n);
            let mut eval = |s: &[u32]| {
                let (c, _) = q3_count(g, &TSet::new(g, s.iter().copied()), r, active);
                tr.record(c as f64, || Witness { t_set: s.to_vec(), p: None, z: None, zeta: None, value: c as f64 });
                tr.witness.is_none()
            };
            search(g, which, active, max_size, family, 0, budget, &mut eval, Some(&mut score));
            Ok(tr.finish(which, mode))
        }
        Property::Q4 => {
            let max_size = size_bound(which, r, active.len());
            let (mode, family) = audit_sets(g, active, max_size, 1, budget, 4)?;
            let mut score = |s: &[u32]| (q4_excess(g, &TSet::new(g, s.iter().copied()), r).0, 0.0);
            let mut tr = Tracker::new(0.0);
            let mut eval = |s: &[u32]| {
                let (excess, z) = q4_excess(g, &TSet::new(g, s.iter().copied()), r);
                tr.record(excess, || Witness { t_set: s.to_vec(), p: None, z: Some(z), zeta: None, value: excess });
                tr.witness.is_none()
            };
            search(g, which, active, max_size, family, 0, budget, &mut eval, Some(&mut score));
            Ok(tr.finish(which, mode))
        }
        Property::Q5 => {
            let ps = if budget.p_grid.is_empty() { default_p_grid(r.rho) } else { budget.p_grid.clone() };
            let max_size = size_bound(which, r, active.len());
            let exact = active.len() <= EXACT_CUT_NORM_DIM;
            let per_set = (ps.len() as u128) * 2 * if exact { 1u128 << active.len().saturating_sub(1) } else { 1 };
            let (mode, family) = audit_sets(g, active, max_size, per_set, budget, 5)?;
            let mut tr = Tracker::new(r.delta.powi(4) * theta_n);
            let mut inconclusive = false;
            let mut err = None;
            let mut eval = |s: &[u32]| {
                let t = TSet::new(g, s.iter().copied());
                for &p in &ps {
                    for zeta in [1i8, -1] {
                        let op = match build_lambda(g, &t, p, zeta, r, active) {
                            Ok(op) => op,
                            Err(e) => {
                                err = Some(e);
                                return false;
                            }
                        };
                        let norm = if exact {
                            cut_norm(&op, CutNormMode::Exact, budget.seed)
                        } else {
                            cut_norm(&op, CutNormMode::Bound, budget.seed)
                        }
                        .expect("dimension checked");
                        if norm.lower <= tr.limit && norm.upper > tr.limit {
                            inconclusive = true;
                        }
                        tr.record(norm.lower, || Witness {
                            t_set: s.to_vec(),
                            p: Some(p),
                            z: None,
                            zeta: Some(zeta),
                            value: norm.lower,
                        });
                    }
                }
                tr.witness.is_none()
            };
            search(g, which, active, max_size, family, ps.len(), budget, &mut eval, None);
            if let Some(e) = err {
                return Err(e);
            }
            let mut out = tr.finish(which, mode);
            out.inconclusive = inconclusive && out.holds;
            Ok(out)
        }
    }
}

/// Audits Q0–Q5 at time `t`; `active` lists the unassigned variables.
pub fn quasirandom_report(
    g: &FactorGraph,
    schedule: &BiasSchedule,
    t: usize,
    active: &[u32],
    budget: &AuditBudget,
    which: &[Property],
) -> Result<QuasirandomReport> {
    let r = Regime::from_schedule(schedule, t);
    let outcomes = which.iter().map(|&q| check_q(g, q, &r, active, budget)).collect::<Result<Vec<_>>>()?;
    Ok(QuasirandomReport { regime: r, t, within_horizon: schedule.within_horizon(t), outcomes })
}
