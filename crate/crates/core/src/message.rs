//! The ψ functions, Survey Propagation and Belief Propagation rounds, and
//! marginal extraction.
//!
//! A [`MessageState`] holds, per edge `x→a`, the distribution
//! `(μ(−1), μ(0), μ(+1))` sent from variable to clause, and the scalar
//! `μ_{a→x}(0) = 1 − ∏_{y∈N(a)∖x} μ_{y→a}(−sign(y,a))` sent back. Rounds are
//! synchronous: every new variable message is computed from the previous
//! clause messages, then every clause message from the new variable messages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Result};
use crate::graph::FactorGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiTriple {
    pub psi0: f64,
    pub psi_plus: f64,
    pub psi_minus: f64,
}

impl PsiTriple {
    pub fn get(&self, zeta: i8) -> f64 {
        match zeta {
            0 => self.psi0,
            z if z > 0 => self.psi_plus,
            _ => self.psi_minus,
        }
    }

    /// As `(μ(−1), μ(0), μ(+1))`.
    pub fn as_message(&self) -> [f64; 3] {
        [self.psi_minus, self.psi0, self.psi_plus]
    }
}

/// `ψ(x, y)` without domain checks; callers guarantee `x, y ∈ [0, 1]`.
#[inline]
pub fn psi_unchecked(x: f64, y: f64) -> PsiTriple {
    if x == 0.0 && y == 0.0 {
        return PsiTriple { psi0: 0.0, psi_plus: 0.5, psi_minus: 0.5 };
    }
    let inv = 1.0 / (x + y - x * y);
    PsiTriple { psi0: x * y * inv, psi_plus: (1.0 - x) * y * inv, psi_minus: (1.0 - y) * x * inv }
}

pub fn psi_triple(x: f64, y: f64) -> Result<PsiTriple> {
    check_unit("x", x)?;
    check_unit("y", y)?;
    Ok(psi_unchecked(x, y))
}

/// `ψ_ζ(x, y)` for `ζ ∈ {−1, 0, +1}`.
pub fn psi(zeta: i8, x: f64, y: f64) -> Result<f64> {
    Ok(psi_triple(x, y)?.get(zeta))
}

/// Both sides of the two ψ perturbation inequalities at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiPerturbation {
    /// `ε₁ + ε₂ − |ψ₀(x) − ψ₀(p)|`.
    pub margin_zero: f64,
    /// `2(ε₁/p₁ + ε₂/p₂) − max_± |ψ_±(x) − ψ_±(p)|`, present when `ε_i ≤ p_i/2`.
    pub margin_signed: Option<f64>,
}

/// Evaluates the perturbation bounds with `ε_i = |x_i − p_i|`.
pub fn psi_perturbation_check(x1: f64, x2: f64, p1: f64, p2: f64) -> Result<PsiPerturbation> {
    for (what, v) in [("x1", x1), ("x2", x2), ("p1", p1), ("p2", p2)] {
        check_unit(what, v)?;
        if v == 0.0 {
            return Err(crate::Error::Domain { what, value: v });
        }
    }
    let (e1, e2) = ((x1 - p1).abs(), (x2 - p2).abs());
    let a = psi_unchecked(x1, x2);
    let b = psi_unchecked(p1, p2);
    let margin_zero = e1 + e2 - (a.psi0 - b.psi0).abs();
    let margin_signed = (e1 <= p1 / 2.0 && e2 <= p2 / 2.0).then(|| {
        let worst = (a.psi_plus - b.psi_plus).abs().max((a.psi_minus - b.psi_minus).abs());
        2.0 * (e1 / p1 + e2 / p2) - worst
    });
    Ok(PsiPerturbation { margin_zero, margin_signed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    Sp,
    Bp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationPolicy {
    pub omega: usize,
    pub residual_tol: f64,
}

impl IterationPolicy {
    /// `ω = ⌈4 ln max(n, 2)⌉`, tolerance `1e−9`.
    pub fn default_for(n: usize) -> Self {
        IterationPolicy {
            omega: (4.0 * (n.max(2) as f64).ln()).ceil() as usize,
            residual_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageState {
    /// Per edge, `(μ(−1), μ(0), μ(+1))`.
    pub var_to_clause: Vec<[f64; 3]>,
    /// Per edge, `μ_{a→x}(0)`.
    pub clause_to_var: Vec<f64>,
    pub round: usize,
}

impl MessageState {
    /// Largest absolute difference over all entries.
    pub fn distance(&self, other: &MessageState) -> f64 {
        let a = self
            .var_to_clause
            .iter()
            .zip(&other.var_to_clause)
            .flat_map(|(p, q)| (0..3).map(move |i| (p[i] - q[i]).abs()))
            .fold(0.0, f64::max);
        let b = self
            .clause_to_var
            .iter()
            .zip(&other.clause_to_var)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        a.max(b)
    }

    /// CSV rows `edge,clause,pos,var,mu_minus,mu_zero,mu_plus,clause_zero`.
    pub fn to_csv(&self, g: &FactorGraph) -> String {
        let mut s = String::from("edge,clause,pos,var,mu_minus,mu_zero,mu_plus,clause_zero\n");
        for (e, m) in self.var_to_clause.iter().enumerate() {
            let id = g.edge_id(e);
            s.push_str(&format!(
                "{e},{},{},{},{:e},{:e},{:e},{:e}\n",
                id.clause,
                id.pos,
                g.edge_var(e),
                m[0],
                m[1],
                m[2],
                self.clause_to_var[e]
            ));
        }
        s
    }
}

/// Value of `μ_{x→a}` at the literal value that falsifies the occurrence,
/// `μ(−sign(x,a))`.
#[inline]
fn falsifying_mass(m: &[f64; 3], sign: i8) -> f64 {
    if sign > 0 {
        m[0]
    } else {
        m[2]
    }
}

const PARALLEL_EDGES: usize = 1 << 14;

pub(crate) fn clause_messages(g: &FactorGraph, v2c: &[[f64; 3]]) -> Vec<f64> {
    let per_clause = |c: usize| -> Vec<f64> {
        let r = g.clause_edges(c);
        let len = r.len();
        let vals: Vec<f64> = r.clone().map(|e| falsifying_mass(&v2c[e], g.edge_sign(e))).collect();
        // Leave-one-out products by prefix and suffix products.
        let mut out = vec![1.0; len];
        let mut acc = 1.0;
        for i in 0..len {
            out[i] = acc;
            acc *= vals[i];
        }
        acc = 1.0;
        for i in (0..len).rev() {
            out[i] = 1.0 - out[i] * acc;
            acc *= vals[i];
        }
        out
    };
    if g.num_edges() >= PARALLEL_EDGES {
        (0..g.num_clauses()).into_par_iter().flat_map_iter(per_clause).collect()
    } else {
        (0..g.num_clauses()).flat_map(per_clause).collect()
    }
}

/// Log-space product of nonzero factors and the number of exact zeros.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct LogProduct {
    log: f64,
    zeros: usize,
}

impl LogProduct {
    pub(crate) fn of(values: impl Iterator<Item = f64>) -> Self {
        let mut p = LogProduct::default();
        for v in values {
            if v == 0.0 {
                p.zeros += 1;
            } else {
                p.log += v.ln();
            }
        }
        p
    }

    pub(crate) fn value(self) -> f64 {
        if self.zeros > 0 {
            0.0
        } else {
            self.log.exp()
        }
    }

    pub(crate) fn without(self, v: f64) -> f64 {
        if v == 0.0 {
            if self.zeros > 1 {
                0.0
            } else {
                self.log.exp()
            }
        } else if self.zeros > 0 {
            0.0
        } else {
            (self.log - v.ln()).exp()
        }
    }
}

/// `(π(+1), π(−1))` products over all edges of `x`.
fn var_products(g: &FactorGraph, c2v: &[f64], x: u32) -> (LogProduct, LogProduct) {
    (
        LogProduct::of(g.var_edges_signed(x, 1).iter().map(|&e| c2v[e])),
        LogProduct::of(g.var_edges_signed(x, -1).iter().map(|&e| c2v[e])),
    )
}

/// `π_{x→a}(±1)` for every edge, as `(π(+1), π(−1))`.
pub fn edge_products(g: &FactorGraph, c2v: &[f64]) -> Vec<(f64, f64)> {
    let mut out = vec![(1.0, 1.0); g.num_edges()];
    for x in 1..=g.num_vars() as u32 {
        let (plus, minus) = var_products(g, c2v, x);
        for &e in g.var_edges_signed(x, 1) {
            out[e] = (plus.without(c2v[e]), minus.value());
        }
        for &e in g.var_edges_signed(x, -1) {
            out[e] = (plus.value(), minus.without(c2v[e]));
        }
    }
    out
}

fn var_message(engine: Engine, pi_plus: f64, pi_minus: f64) -> [f64; 3] {
    match engine {
        Engine::Sp => psi_unchecked(pi_plus, pi_minus).as_message(),
        Engine::Bp => {
            let p = bp_probability(pi_plus, pi_minus);
            [1.0 - p, 0.0, p]
        }
    }
}

/// Probability of +1 from clause products: `π(−1)/(π(+1)+π(−1))`.
fn bp_probability(pi_plus: f64, pi_minus: f64) -> f64 {
    let z = pi_plus + pi_minus;
    if z == 0.0 {
        0.5
    } else {
        pi_minus / z
    }
}

/// The uniform starting state: every `μ_{x→a} = (½, 0, ½)`.
pub fn init_messages(g: &FactorGraph) -> MessageState {
    let v2c = vec![[0.5, 0.0, 0.5]; g.num_edges()];
    let c2v = clause_messages(g, &v2c);
    MessageState { var_to_clause: v2c, clause_to_var: c2v, round: 0 }
}

pub fn round(g: &FactorGraph, s: &MessageState, engine: Engine) -> MessageState {
    let v2c: Vec<[f64; 3]> = if g.num_edges() >= PARALLEL_EDGES {
        let prods: Vec<(LogProduct, LogProduct)> = (1..=g.num_vars() as u32)
            .into_par_iter()
            .map(|x| var_products(g, &s.clause_to_var, x))
            .collect();
        (0..g.num_edges())
            .into_par_iter()
            .map(|e| edge_message(g, &s.clause_to_var, &prods, e, engine))
            .collect()
    } else {
        let prods: Vec<(LogProduct, LogProduct)> = (1..=g.num_vars() as u32)
            .map(|x| var_products(g, &s.clause_to_var, x))
            .collect();
        (0..g.num_edges())
            .map(|e| edge_message(g, &s.clause_to_var, &prods, e, engine))
            .collect()
    };
    let c2v = clause_messages(g, &v2c);
    MessageState { var_to_clause: v2c, clause_to_var: c2v, round: s.round + 1 }
}

#[inline]
fn edge_message(
    g: &FactorGraph,
    c2v: &[f64],
    prods: &[(LogProduct, LogProduct)],
    e: usize,
    engine: Engine,
) -> [f64; 3] {
    let (plus, minus) = prods[g.edge_var(e) as usize - 1];
    let (pp, pm) = if g.edge_sign(e) > 0 {
        (plus.without(c2v[e]), minus.value())
    } else {
        (plus.value(), minus.without(c2v[e]))
    };
    var_message(engine, pp, pm)
}

pub fn sp_round(g: &FactorGraph, s: &MessageState) -> MessageState {
    round(g, s, Engine::Sp)
}

pub fn bp_round(g: &FactorGraph, s: &MessageState) -> MessageState {
    round(g, s, Engine::Bp)
}

#[derive(Clone, Debug)]
pub struct IterationOutcome {
    pub state: MessageState,
    /// Residual of each round performed.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

pub fn iterate(g: &FactorGraph, policy: IterationPolicy, engine: Engine) -> IterationOutcome {
    iterate_from(g, init_messages(g), policy, engine)
}

/// Runs rounds from `start` until `policy.omega` rounds in total or a residual
/// below the tolerance.
pub fn iterate_from(
    g: &FactorGraph,
    start: MessageState,
    policy: IterationPolicy,
    engine: Engine,
) -> IterationOutcome {
    let mut state = start;
    let mut residuals = Vec::new();
    let mut converged = false;
    while state.round < policy.omega {
        let next = round(g, &state, engine);
        let r = next.distance(&state);
        residuals.push(r);
        state = next;
        if r < policy.residual_tol {
            converged = true;
            break;
        }
    }
    IterationOutcome { state, residuals, converged }
}

/// States for rounds `0..=rounds`, without early stopping.
pub fn history(g: &FactorGraph, rounds: usize, engine: Engine) -> Vec<MessageState> {
    let mut out = Vec::with_capacity(rounds + 1);
    out.push(init_messages(g));
    for _ in 0..rounds {
        let next = round(g, out.last().unwrap(), engine);
        out.push(next);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalEntry {
    pub mu_minus: f64,
    pub mu_zero: f64,
    pub mu_plus: f64,
    /// `μ(+1) + ½μ(0)`.
    pub p_true: f64,
}

impl MarginalEntry {
    /// `μ(+1)/(μ(+1)+μ(−1))`, undefined when both vanish.
    pub fn ratio_form(&self) -> Option<f64> {
        let z = self.mu_plus + self.mu_minus;
        (z > 0.0).then(|| self.mu_plus / z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate {
    /// Entry `i` belongs to variable `i + 1`.
    pub entries: Vec<MarginalEntry>,
}

/// Marginal of `x` from the full products `π_x(±1)` over all its clauses.
pub fn marginal(g: &FactorGraph, s: &MessageState, x: u32, engine: Engine) -> MarginalEntry {
    let (plus, minus) = var_products(g, &s.clause_to_var, x);
    let (pp, pm) = (plus.value(), minus.value());
    match engine {
        Engine::Sp => {
            let t = psi_unchecked(pp, pm);
            MarginalEntry {
                mu_minus: t.psi_minus,
                mu_zero: t.psi0,
                mu_plus: t.psi_plus,
                p_true: t.psi_plus + 0.5 * t.psi0,
            }
        }
        Engine::Bp => {
            let p = bp_probability(pp, pm);
            MarginalEntry { mu_minus: 1.0 - p, mu_zero: 0.0, mu_plus: p, p_true: p }
        }
    }
}

pub fn sp_marginal(g: &FactorGraph, s: &MessageState, x: u32) -> MarginalEntry {
    marginal(g, s, x, Engine::Sp)
}

pub fn marginals(g: &FactorGraph, s: &MessageState, engine: Engine) -> MarginalEstimate {
    MarginalEstimate {
        entries: (1..=g.num_vars() as u32).map(|x| marginal(g, s, x, engine)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::CnfFormula;
    use proptest::prelude::*;

    fn g(n: usize, cs: &[&[i64]]) -> FactorGraph {
        FactorGraph::build(&CnfFormula::from_dimacs_clauses(n, cs))
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi_triple(0.0, 0.0).unwrap(), PsiTriple { psi0: 0.0, psi_plus: 0.5, psi_minus: 0.5 });
        let t = psi_triple(0.5, 0.5).unwrap();
        for v in [t.psi0, t.psi_plus, t.psi_minus] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = psi_triple(1.0, 0.0).unwrap();
        assert_eq!((t.psi_plus, t.psi_minus, t.psi0), (0.0, 1.0, 0.0));
        assert!(psi(0, 1.5, 0.2).is_err());
        assert!(psi(1, 0.2, -0.1).is_err());
    }

    #[test]
    fn perturbation_examples() {
        let same = psi_perturbation_check(0.3, 0.7, 0.3, 0.7).unwrap();
        assert_eq!(same.margin_zero, 0.0);
        assert_eq!(same.margin_signed, Some(0.0));
        let m = psi_perturbation_check(0.5, 0.5, 0.4, 0.6).unwrap();
        assert!(m.margin_zero >= 0.0);
        let d = (psi(0, 0.5, 0.5).unwrap() - psi(0, 0.4, 0.6).unwrap()).abs();
        assert!(d <= 0.2);
        assert!(psi_perturbation_check(0.0, 0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn init_clause_messages() {
        let s = init_messages(&g(5, &[&[1, 2, 3], &[4], &[-4, 5]]));
        assert_eq!(&s.clause_to_var[0..3], &[0.75, 0.75, 0.75]);
        assert_eq!(s.clause_to_var[3], 0.0);
        assert_eq!(&s.clause_to_var[4..6], &[0.5, 0.5]);
        assert_eq!(s.round, 0);
    }

    #[test]
    fn single_clause_collapses_to_zero() {
        let fg = g(3, &[&[1, 2, 3]]);
        let mut s = init_messages(&fg);
        for _ in 0..2 {
            s = sp_round(&fg, &s);
        }
        assert!(s.var_to_clause.iter().all(|m| *m == [0.0, 1.0, 0.0]));
        let m = sp_marginal(&fg, &s, 1);
        assert_eq!((m.mu_zero, m.p_true), (1.0, 0.5));
    }

    #[test]
    fn empty_graph_round() {
        let fg = g(3, &[]);
        let s = sp_round(&fg, &init_messages(&fg));
        assert_eq!(s.round, 1);
        assert!(s.var_to_clause.is_empty());
        let m = sp_marginal(&fg, &s, 2);
        assert_eq!((m.mu_zero, m.p_true), (1.0, 0.5));
        assert_eq!(marginal(&fg, &s, 2, Engine::Bp).p_true, 0.5);
    }

    #[test]
    fn unit_clause_forces_value() {
        let fg = g(1, &[&[1]]);
        let out = iterate(&fg, IterationPolicy { omega: 10, residual_tol: 1e-12 }, Engine::Sp);
        assert_eq!(out.state.clause_to_var[0], 0.0);
        let m = sp_marginal(&fg, &out.state, 1);
        assert_eq!((m.mu_plus, m.p_true), (1.0, 1.0));
    }

    #[test]
    fn bp_single_clause_marginal() {
        let fg = g(3, &[&[1, 2, 3]]);
        let out = iterate(&fg, IterationPolicy { omega: 10, residual_tol: 1e-14 }, Engine::Bp);
        for x in 1..=3 {
            assert!((marginal(&fg, &out.state, x, Engine::Bp).p_true - 4.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn omega_zero_returns_init() {
        let fg = g(3, &[&[1, -2, 3], &[2, 3]]);
        let out = iterate(&fg, IterationPolicy { omega: 0, residual_tol: 0.0 }, Engine::Sp);
        assert_eq!(out.state, init_messages(&fg));
        assert!(out.residuals.is_empty());
    }

    #[test]
    fn duplicate_occurrence_excludes_only_itself() {
        // x1 twice positively in one clause with x2: each x1 edge sees the
        // other x1 edge's clause message.
        let fg = g(2, &[&[1, 1, 2]]);
        let s = init_messages(&fg);
        let p = edge_products(&fg, &s.clause_to_var);
        for (e, want) in [(0, 0.75), (1, 0.75), (2, 1.0)] {
            assert!((p[e].0 - want).abs() < 1e-15 && p[e].1 == 1.0);
        }
    }

    #[test]
    fn default_policy() {
        assert_eq!(IterationPolicy::default_for(1).omega, 3);
        assert_eq!(IterationPolicy::default_for(1000).omega, 28);
    }

    #[test]
    fn csv_export() {
        let fg = g(2, &[&[1, -2]]);
        let csv = init_messages(&fg).to_csv(&fg);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("1,0,1,2,"));
    }

    proptest! {
        #[test]
        fn psi_normalised(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let t = psi_triple(x, y).unwrap();
            prop_assert!((t.psi0 + t.psi_plus + t.psi_minus - 1.0).abs() <= 1e-12);
            for v in [t.psi0, t.psi_plus, t.psi_minus] {
                prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
            }
        }

        #[test]
        fn psi_swap_symmetry(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let a = psi_triple(x, y).unwrap();
            let b = psi_triple(y, x).unwrap();
            prop_assert_eq!(a.psi0, b.psi0);
            prop_assert!((a.psi_plus - b.psi_minus).abs() < 1e-15);
        }

        #[test]
        fn perturbation_bounds_hold(
            p1 in 0.01f64..=1.0, p2 in 0.01f64..=1.0, u1 in -1.0f64..=1.0, u2 in -1.0f64..=1.0,
        ) {
            let x1 = (p1 + u1 * p1 / 2.0).clamp(1e-9, 1.0);
            let x2 = (p2 + u2 * p2 / 2.0).clamp(1e-9, 1.0);
            let m = psi_perturbation_check(x1, x2, p1, p2).unwrap();
            prop_assert!(m.margin_zero >= -1e-12);
            prop_assert!(m.margin_signed.unwrap() >= -1e-12);
        }
    }
}
