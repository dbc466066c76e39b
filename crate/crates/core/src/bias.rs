//! Bias schedule, edge biases, the typical-value recursion and the sets that
//! certify which variables may carry biased messages.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::Serialize;

use crate::error::{check_unit, Error, Result};
use crate::graph::FactorGraph;
use crate::message::{edge_products, psi_unchecked, sp_marginal, LogProduct, MessageState};
use crate::quasi::{classify, crowded_weight, tau_weight, weight, Regime, TSet};
use crate::stats::{binomial_below_two, binomial_pmf};

/// `δ_t = exp(−cθk)` with `θ = 1 − t/n`.
pub fn delta_at(k: usize, c: f64, n: usize, t: usize) -> f64 {
    let theta = if n == 0 { 1.0 } else { 1.0 - t as f64 / n as f64 };
    (-c * theta * k as f64).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiasSchedule {
    pub k: usize,
    pub r: f64,
    pub n: usize,
    pub c: f64,
    /// `ρ = kr/2^k`.
    pub rho: f64,
    /// `t̂ = (1 − ln ρ/(c²k))·n`.
    pub t_hat: f64,
}

impl BiasSchedule {
    pub fn new(k: usize, r: f64, n: usize, c: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain { what: "k", value: k as f64 });
        }
        if r.is_nan() || r <= 0.0 {
            return Err(Error::Domain { what: "r", value: r });
        }
        if n == 0 {
            return Err(Error::Domain { what: "n", value: 0.0 });
        }
        if c.is_nan() || c <= 0.0 {
            return Err(Error::Domain { what: "c", value: c });
        }
        let rho = k as f64 * r / 2f64.powi(k as i32);
        let t_hat = (1.0 - rho.ln() / (c * c * k as f64)) * n as f64;
        Ok(BiasSchedule { k, r, n, c, rho, t_hat })
    }

    pub fn theta(&self, t: usize) -> f64 {
        1.0 - t as f64 / self.n as f64
    }

    pub fn delta(&self, t: usize) -> f64 {
        delta_at(self.k, self.c, self.n, t)
    }

    /// `Δ_t = Σ_{s=1}^{t} δ_s`.
    pub fn cumulative(&self, t: usize) -> f64 {
        (1..=t).map(|s| self.delta(s)).sum()
    }

    /// `δ_t·n/(ck)`, the asymptotic size of `Δ_t`.
    pub fn comparator(&self, t: usize) -> f64 {
        self.delta(t) * self.n as f64 / (self.c * self.k as f64)
    }

    pub fn within_horizon(&self, t: usize) -> bool {
        t as f64 <= self.t_hat
    }

    pub fn k1(&self, t: usize) -> f64 {
        self.c.sqrt() * self.theta(t) * self.k as f64
    }

    pub fn typical(&self, t: usize) -> TypicalModel {
        TypicalModel { k: self.k, rho: self.rho, theta: self.theta(t), n: self.n }
    }
}

/// `τ(p) = 1 − ψ₀(p, p) = 1 − p/(2−p)`.
pub fn tau(p: f64) -> Result<f64> {
    check_unit("p", p)?;
    Ok(1.0 - p / (2.0 - p))
}

/// `μ_{j,≤1}(T)`: expected number of length-`j` clauses containing a given
/// variable and at most one other member of `T`.
pub fn mu_j_le1(t_size: f64, theta: f64, n: usize, k: usize, rho: f64, j: usize) -> Result<f64> {
    TypicalModel { k, rho, theta, n }.mu_j(t_size, j)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TypicalModel {
    pub k: usize,
    pub rho: f64,
    pub theta: f64,
    pub n: usize,
}

impl TypicalModel {
    pub fn theta_k(&self) -> f64 {
        self.theta * self.k as f64
    }

    /// `⌈0.1θk⌉ ..= min(⌊10θk⌋, k)`, starting at 1.
    pub fn j_window(&self) -> RangeInclusive<usize> {
        let lo = ((0.1 * self.theta_k()).ceil() as usize).max(1);
        let hi = ((10.0 * self.theta_k()).floor() as usize).min(self.k);
        lo..=hi
    }

    pub fn mu_j(&self, t_size: f64, j: usize) -> Result<f64> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Domain { what: "theta", value: self.theta });
        }
        let theta_n = self.theta * self.n as f64;
        if !(t_size >= 0.0 && t_size <= theta_n + 1e-9) {
            return Err(Error::Domain { what: "|T|", value: t_size });
        }
        if j == 0 || j > self.k {
            return Err(Error::Domain { what: "j", value: j as f64 });
        }
        let frac = if theta_n > 0.0 { (t_size / theta_n).min(1.0) } else { 0.0 };
        Ok(2f64.powi(j as i32)
            * self.rho
            * binomial_pmf(self.k as u64 - 1, self.theta, j as u64 - 1)
            * binomial_below_two(j as u64 - 1, frac))
    }

    /// `ln π(T, p)`; `−∞` when a factor vanishes.
    pub fn ln_pi(&self, t_size: f64, p: f64) -> Result<f64> {
        let half_tau = tau(p)? / 2.0;
        let mut acc = 0.0;
        for j in self.j_window() {
            let mu = self.mu_j(t_size, j)?;
            if mu == 0.0 {
                continue;
            }
            let q = half_tau.powi(j as i32 - 1);
            if q >= 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc += mu / 2.0 * (-q).ln_1p();
        }
        Ok(acc)
    }

    /// `π(T, p) = ∏_j (1 − (τ/2)^{j−1})^{μ_{j,≤1}/2}` over the window.
    pub fn pi(&self, t_size: f64, p: f64) -> Result<f64> {
        Ok(self.ln_pi(t_size, p)?.exp())
    }

    /// `Π(T, p) = Σ_j μ_{j,≤1}/2 · (τ/2)^{j−1}` over the window.
    pub fn big_pi(&self, t_size: f64, p: f64) -> Result<f64> {
        let half_tau = tau(p)? / 2.0;
        let mut acc = 0.0;
        for j in self.j_window() {
            acc += self.mu_j(t_size, j)? / 2.0 * half_tau.powi(j as i32 - 1);
        }
        Ok(acc)
    }

    /// `[exp(−2ρ), 2exp(−ρ)]`.
    pub fn band(&self) -> (f64, f64) {
        ((-2.0 * self.rho).exp(), 2.0 * (-self.rho).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypicalValueTrace {
    pub pi: Vec<f64>,
    pub big_pi: Vec<f64>,
    pub tau: Vec<f64>,
    /// `|Π[ℓ] + ln π[ℓ]|` for `ℓ ≥ 1` with `π[ℓ] > 0`.
    pub log_residual: Vec<Option<f64>>,
    /// Whether the band preconditions held for the step into `ℓ`.
    pub band_applicable: Vec<bool>,
    /// Levels where the band should hold but does not.
    pub band_violations: Vec<usize>,
}

/// Iterates `π[ℓ+1] = π(T[ℓ], π[ℓ])` from `π[0] = 0`. `t_sizes[ℓ]` is `|T[ℓ]|`;
/// missing entries repeat the last one, or 0 when empty.
pub fn typical_sequence(schedule: &BiasSchedule, t: usize, t_sizes: &[f64], levels: usize) -> Result<TypicalValueTrace> {
    let model = schedule.typical(t);
    let delta = schedule.delta(t);
    let theta_n = model.theta * schedule.n as f64;
    let (lo, hi) = model.band();
    let mut out = TypicalValueTrace {
        pi: vec![0.0],
        big_pi: vec![0.0],
        tau: vec![1.0],
        log_residual: vec![None],
        band_applicable: vec![false],
        band_violations: Vec::new(),
    };
    for ell in 0..levels {
        let size = t_sizes.get(ell).or(t_sizes.last()).copied().unwrap_or(0.0);
        let p = out.pi[ell];
        let pi = model.pi(size, p)?;
        let big_pi = model.big_pi(size, p)?;
        let applicable = size <= delta * theta_n && p <= hi;
        out.pi.push(pi);
        out.big_pi.push(big_pi);
        out.tau.push(tau(pi)?);
        out.log_residual.push((pi > 0.0).then(|| (big_pi + pi.ln()).abs()));
        out.band_applicable.push(applicable);
        if applicable && !(lo <= pi && pi <= hi) {
            out.band_violations.push(ell + 1);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeBiases {
    pub pi_ell: f64,
    pub tau_ell: f64,
    /// `Δ_{x→a} = μ(1) − ½(1 − μ(0))` per edge.
    pub delta: Vec<f64>,
    /// `E_{x→a} = ½(μ(0) − ψ₀(π, π))` per edge.
    pub e: Vec<f64>,
    /// Largest `|μ(−sign) − (τ/2 − (E + sign·Δ))|`.
    pub reconstruction_residual: f64,
    /// Largest `|μ(sign) − (τ/2 − (E + sign·Δ))|`.
    pub literal_residual: f64,
}

impl EdgeBiases {
    pub fn to_csv(&self, g: &FactorGraph) -> String {
        let mut s = String::from("edge,clause,pos,var,sign,delta,e\n");
        for e in 0..g.num_edges() {
            let id = g.edge_id(e);
            writeln!(s, "{e},{},{},{},{},{},{}", id.clause, id.pos, g.edge_var(e), g.edge_sign(e), self.delta[e], self.e[e])
                .unwrap();
        }
        s
    }
}

pub fn edge_biases(g: &FactorGraph, s: &MessageState, pi_ell: f64) -> EdgeBiases {
    let psi0 = psi_unchecked(pi_ell, pi_ell).psi0;
    let tau_ell = 1.0 - psi0;
    let mut out = EdgeBiases {
        pi_ell,
        tau_ell,
        delta: Vec::with_capacity(g.num_edges()),
        e: Vec::with_capacity(g.num_edges()),
        reconstruction_residual: 0.0,
        literal_residual: 0.0,
    };
    for (e, m) in s.var_to_clause.iter().enumerate() {
        let d = m[2] - 0.5 * (1.0 - m[1]);
        let ee = 0.5 * (m[1] - psi0);
        let sign = g.edge_sign(e);
        let rebuilt = tau_ell / 2.0 - (ee + sign as f64 * d);
        let (against, along) = if sign > 0 { (m[0], m[2]) } else { (m[2], m[0]) };
        out.reconstruction_residual = out.reconstruction_residual.max((against - rebuilt).abs());
        out.literal_residual = out.literal_residual.max((along - rebuilt).abs());
        out.delta.push(d);
        out.e.push(ee);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum BiasMode {
    /// `|μ_x(1) − ½(1 − μ_x(0))| > δ` on the SP marginal.
    Marginal,
    /// Edge thresholds against the typical value `π[ℓ]`.
    Edge { pi_ell: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasedReport {
    pub mode: BiasMode,
    pub delta: f64,
    /// The biased set (`B[ℓ]` in edge mode).
    pub biased: Vec<u32>,
    /// `B′[ℓ]` in edge mode, empty otherwise.
    pub weighted: Vec<u32>,
    /// `δ(n − t)`.
    pub threshold: f64,
    pub balanced: bool,
}

fn edge_sets(g: &FactorGraph, s: &MessageState, pi_ell: f64, delta: f64, active: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let eb = edge_biases(g, s, pi_ell);
    let mut biased = Vec::new();
    let mut weighted = Vec::new();
    for &x in active {
        let edges = g.var_edges(x);
        let max_d = edges.iter().map(|&e| eb.delta[e].abs()).fold(0.0, f64::max);
        let max_e = edges.iter().map(|&e| eb.e[e].abs()).fold(0.0, f64::max);
        if max_d > 0.1 * delta || max_e > 0.1 * delta * pi_ell {
            biased.push(x);
        }
        if max_e > 10.0 * pi_ell {
            weighted.push(x);
        }
    }
    (biased, weighted)
}

/// Biased variables among `active` (the unassigned variables of `g`) at time `t`.
pub fn biased_variables(
    g: &FactorGraph,
    s: &MessageState,
    schedule: &BiasSchedule,
    t: usize,
    active: &[u32],
    mode: BiasMode,
) -> Result<BiasedReport> {
    if t >= schedule.n {
        return Err(Error::Domain { what: "t", value: t as f64 });
    }
    let delta = schedule.delta(t);
    let (biased, weighted) = match mode {
        BiasMode::Marginal => (
            active
                .iter()
                .copied()
                .filter(|&x| {
                    let m = sp_marginal(g, s, x);
                    (m.mu_plus - 0.5 * (1.0 - m.mu_zero)).abs() > delta
                })
                .collect(),
            Vec::new(),
        ),
        BiasMode::Edge { pi_ell } => edge_sets(g, s, pi_ell, delta, active),
    };
    let threshold = delta * (schedule.n - t) as f64;
    Ok(BiasedReport { mode, delta, balanced: biased.len() as f64 <= threshold, biased, weighted, threshold })
}

/// Thresholds of the certificate sets, overridable for sensitivity runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CertificateConstants {
    /// T1: `|P_{≤1} − π| > t1·δπ`.
    pub t1: f64,
    /// T2a: `> t2a·δ`.
    pub t2a: f64,
    /// T2b: `> t2b·ρθkδ` and `> t2b·ρθkδ²`.
    pub t2b: f64,
    /// T2c: `> t2c·ρ`.
    pub t2c: f64,
    /// H2: `≤ ρ(θk)^5·δ`, scaled by this factor.
    pub h2: f64,
    /// H4: `≤ h4·δ`.
    pub h4: f64,
    /// T3d: more than this many clauses.
    pub t3d: usize,
    /// T3e: fewer than `t3e·|N(b)|` harmless occurrences.
    pub t3e: f64,
    /// T4: `|N(a)| ≥ t4·k₁`.
    pub t4: f64,
}

impl Default for CertificateConstants {
    fn default() -> Self {
        CertificateConstants { t1: 0.01, t2a: 2e-3, t2b: 1e4, t2c: 1e4, h2: 1.0, h4: 0.01, t3d: 100, t3e: 0.75, t4: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateLevel {
    pub ell: usize,
    pub pi: f64,
    pub big_pi: f64,
    pub tau: f64,
    pub t1: Vec<u32>,
    pub t2: Vec<u32>,
    pub t3: Vec<u32>,
    /// Clause indices.
    pub t4: Vec<usize>,
    pub harmless: Vec<u32>,
    pub t_set: Vec<u32>,
    pub t_prime: Vec<u32>,
    pub b: Vec<u32>,
    pub b_prime: Vec<u32>,
    pub b_in_t: bool,
    pub b_prime_in_t_prime: bool,
    /// `|T| < δθn`.
    pub t_small: bool,
    /// `|T′| < δ²θn`.
    pub t_prime_small: bool,
    /// Largest `|P_{≤1}·P_{>1} − π_{x→a}(ζ)|`.
    pub factorization_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateSets {
    pub t: usize,
    pub delta: f64,
    pub constants: CertificateConstants,
    pub levels: Vec<CertificateLevel>,
}

impl CertificateSets {
    pub fn inclusions_hold(&self) -> bool {
        self.levels.iter().all(|l| l.b_in_t && l.b_prime_in_t_prime)
    }

    pub fn sizes_hold(&self) -> bool {
        self.levels.iter().all(|l| l.t_small && l.t_prime_small)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("ell,pi,big_pi,tau,b,b_prime,t,t_prime,b_in_t,b_prime_in_t_prime,t_small,t_prime_small\n");
        for l in &self.levels {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                l.ell,
                l.pi,
                l.big_pi,
                l.tau,
                l.b.len(),
                l.b_prime.len(),
                l.t_set.len(),
                l.t_prime.len(),
                l.b_in_t,
                l.b_prime_in_t_prime,
                l.t_small,
                l.t_prime_small
            )
            .unwrap();
        }
        s
    }
}

fn subset(a: &[u32], b: &[u32]) -> bool {
    let b: BTreeSet<u32> = b.iter().copied().collect();
    a.iter().all(|x| b.contains(x))
}

/// Product of `c2v` over a sorted edge list, with single edges left out on demand.
struct EdgeProduct<'a> {
    edges: &'a [usize],
    product: LogProduct,
}

impl<'a> EdgeProduct<'a> {
    fn new(edges: &'a [usize], c2v: &[f64]) -> Self {
        EdgeProduct { edges, product: LogProduct::of(edges.iter().map(|&e| c2v[e])) }
    }

    fn without(&self, c2v: &[f64], skip: usize) -> f64 {
        if self.edges.binary_search(&skip).is_ok() {
            self.product.without(c2v[skip])
        } else {
            self.product.value()
        }
    }
}

/// Builds `T[ℓ]`, `T′[ℓ]`, `H[ℓ]` and `B[ℓ]`, `B′[ℓ]` for `ℓ = 0..history.len()`.
/// `history[ℓ]` is the SP state after `ℓ` rounds from the uniform start on the
/// decimated formula `g`, and `active` lists its unassigned variables.
pub fn certificate_sets(
    g: &FactorGraph,
    history: &[MessageState],
    schedule: &BiasSchedule,
    t: usize,
    active: &[u32],
    constants: CertificateConstants,
) -> Result<CertificateSets> {
    if history.is_empty() {
        return Err(Error::EmptyInput);
    }
    let r = Regime::from_schedule(schedule, t);
    let model = r.typical();
    let delta = r.delta;
    let theta_k = r.theta_k();
    let theta_n = r.theta_n();
    let k1 = r.k1();
    let redundant = g.to_formula().redundant_clauses();
    let in_active = {
        let mut v = vec![false; g.num_vars() + 1];
        for &x in active {
            v[x as usize] = true;
        }
        v
    };

    let level_checks = |ell: usize, pi: f64, t_set: &[u32], t_prime: &[u32]| {
        let (b, b_prime) = edge_sets(g, &history[ell], pi, delta, active);
        let b_in_t = subset(&b, t_set);
        let b_prime_in_t_prime = subset(&b_prime, t_prime);
        (b, b_prime, b_in_t, b_prime_in_t_prime)
    };

    let (b, b_prime, b_in_t, b_prime_in_t_prime) = level_checks(0, 0.0, &[], &[]);
    let mut levels = vec![CertificateLevel {
        ell: 0,
        pi: 0.0,
        big_pi: 0.0,
        tau: 1.0,
        t1: Vec::new(),
        t2: Vec::new(),
        t3: Vec::new(),
        t4: Vec::new(),
        harmless: Vec::new(),
        t_set: Vec::new(),
        t_prime: Vec::new(),
        b,
        b_prime,
        b_in_t,
        b_prime_in_t_prime,
        t_small: 0.0 < delta * theta_n,
        t_prime_small: 0.0 < delta * delta * theta_n,
        factorization_residual: 0.0,
    }];

    for ell in 0..history.len() - 1 {
        let prev = &levels[ell];
        let tset = TSet::new(g, prev.t_set.iter().copied());
        let tpset = TSet::new(g, prev.t_prime.iter().copied());
        let t3_prev: Vec<bool> = {
            let mut v = vec![false; g.num_vars() + 1];
            for &x in &prev.t3 {
                v[x as usize] = true;
            }
            v
        };
        let h_prev: Vec<bool> = {
            let mut v = vec![false; g.num_vars() + 1];
            for &x in &prev.harmless {
                v[x as usize] = true;
            }
            v
        };
        let t4_prev: BTreeSet<usize> = prev.t4.iter().copied().collect();
        let size = tset.len() as f64;
        let pi_next = model.pi(size, prev.pi)?;
        let big_pi_next = model.big_pi(size, prev.pi)?;
        let tau_ell = prev.tau;
        let tau_next = tau(pi_next)?;
        let c2v = &history[ell].clause_to_var;
        let products = edge_products(g, c2v);

        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        let mut t3 = Vec::new();
        let mut harmless = Vec::new();
        let mut fact_res = 0.0f64;
        for &x in active {
            let edges = g.var_edges(x);
            let cls = [classify(g, x, &tset, 1, &r), classify(g, x, &tset, -1, &r)];
            let cls_prime = [classify(g, x, &tpset, 1, &r), classify(g, x, &tpset, -1, &r)];

            let mut in_t1 = false;
            for (zi, zeta) in [1i8, -1].into_iter().enumerate() {
                let all = g.var_edges_signed(x, zeta);
                let rest: Vec<usize> = all.iter().copied().filter(|e| cls[zi].le1.binary_search(e).is_err()).collect();
                let le1 = EdgeProduct::new(&cls[zi].le1, c2v);
                let gt1 = EdgeProduct::new(&rest, c2v);
                for &a in edges {
                    let p_le1 = le1.without(c2v, a);
                    let p_gt1 = gt1.without(c2v, a);
                    let full = if zeta > 0 { products[a].0 } else { products[a].1 };
                    fact_res = fact_res.max((p_le1 * p_gt1 - full).abs());
                    if (p_le1 - pi_next).abs() > constants.t1 * delta * pi_next {
                        in_t1 = true;
                    }
                }
            }
            if in_t1 {
                t1.push(x);
            }

            let typical_gap = |zi: usize| (big_pi_next - tau_weight(g, &cls[zi].le1, tau_ell)).abs();
            let in_t2 = (0..2).any(|zi| {
                typical_gap(zi) > constants.t2a * delta
                    || weight(g, &cls[zi].one) > constants.t2b * r.rho * theta_k * delta
                    || weight(g, &cls_prime[zi].one) > constants.t2b * r.rho * theta_k * delta * delta
                    || weight(g, &cls[zi].le1) > constants.t2c * r.rho
            });
            if in_t2 {
                t2.push(x);
            }

            let total_weight = weight(g, edges);
            let all_in_window = edges.iter().all(|&e| r.in_window(g.clause_len(g.edge_clause(e))));
            let mut clauses: Vec<usize> = edges.iter().map(|&e| g.edge_clause(e)).collect();
            clauses.sort_unstable();
            clauses.dedup();
            let h1 = delta * theta_k.powi(3) * total_weight <= 1.0 && all_in_window;
            let h2 = (0..2).all(|zi| {
                weight(g, &cls[zi].one) <= constants.h2 * r.rho * theta_k.powi(5) * delta
                    && crowded_weight(g, &tset, &cls[zi].gt1) <= delta / theta_k
            });
            let h3 = clauses.iter().filter(|&&b| tset.outside(g, b) as f64 <= k1).count() <= 1;
            let h4 = (0..2).all(|zi| typical_gap(zi) <= constants.h4 * delta);
            if h1 && h2 && h3 && h4 {
                harmless.push(x);
            }

            let t3a = clauses.iter().any(|&b| redundant[b] || !r.in_window(g.clause_len(b)));
            let t3b = delta * theta_k.powi(3) * total_weight > 1.0;
            let t3c = (0..2).any(|zi| crowded_weight(g, &tset, &cls[zi].gt1) > delta / theta_k);
            let t3d = clauses
                .iter()
                .filter(|&&b| g.clause_neighbors(b).any(|(v, _)| t3_prev[v as usize]))
                .count()
                > constants.t3d;
            let t3e = clauses.iter().any(|&b| {
                let h = g.clause_neighbors(b).filter(|&(v, _)| h_prev[v as usize]).count();
                (h as f64) < constants.t3e * g.clause_len(b) as f64
            });
            if t3a || t3b || t3c || t3d || t3e {
                t3.push(x);
            }
        }

        let t4: Vec<usize> = (0..g.num_clauses())
            .filter(|&a| {
                g.clause_len(a) as f64 >= constants.t4 * k1 && tset.outside(g, a) as f64 <= k1 && !t4_prev.contains(&a)
            })
            .collect();
        let mut t_all: BTreeSet<u32> = t1.iter().chain(&t2).chain(&t3).copied().collect();
        for &a in &t4 {
            t_all.extend(g.clause_neighbors(a).map(|(v, _)| v).filter(|&v| in_active[v as usize]));
        }
        let t_set: Vec<u32> = t_all.into_iter().collect();
        let t_prime: Vec<u32> = t1.iter().chain(&t2).copied().collect::<BTreeSet<u32>>().into_iter().collect();
        let (b, b_prime, b_in_t, b_prime_in_t_prime) = level_checks(ell + 1, pi_next, &t_set, &t_prime);
        levels.push(CertificateLevel {
            ell: ell + 1,
            pi: pi_next,
            big_pi: big_pi_next,
            tau: tau_next,
            t_small: (t_set.len() as f64) < delta * theta_n,
            t_prime_small: (t_prime.len() as f64) < delta * delta * theta_n,
            t1,
            t2,
            t3,
            t4,
            harmless,
            t_set,
            t_prime,
            b,
            b_prime,
            b_in_t,
            b_prime_in_t_prime,
            factorization_residual: fact_res,
        });
    }
    Ok(CertificateSets { t, delta, constants, levels })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Linearization {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `σ + α + β`.
    pub l_term: f64,
    pub ln_p_le1: f64,
    /// `|L + ln P_{≤1}|`.
    pub residual: f64,
}

/// `σ`, `α`, `β` for the edge `e` (from `x` to `a`) and sign `ζ`, using the
/// state `s` of round `ℓ`, the typical value `π[ℓ]` and the set `T[ℓ]`.
pub fn linearization(
    g: &FactorGraph,
    s: &MessageState,
    regime: &Regime,
    pi_ell: f64,
    t_set: &TSet,
    e: usize,
    zeta: i8,
) -> Result<Linearization> {
    let eb = edge_biases(g, s, pi_ell);
    let tau_ell = eb.tau_ell;
    let x = g.edge_var(e);
    let admitted: Vec<usize> = classify(g, x, t_set, zeta, regime).le1.into_iter().filter(|&b| b != e).collect();
    let mut ln_p = 0.0;
    for &b in &admitted {
        let m = s.clause_to_var[b];
        if m <= 0.0 {
            return Err(Error::DegenerateProduct);
        }
        ln_p += m.ln();
    }
    let (mut sigma, mut alpha, mut beta) = (0.0, 0.0, 0.0);
    for &b in &admitted {
        let clause = g.edge_clause(b);
        let w = (tau_ell / 2.0).powi(g.clause_len(clause) as i32 - 1);
        sigma += w;
        for y in g.clause_edges(clause).filter(|&y| y != b) {
            alpha += w * g.edge_sign(y) as f64 * eb.delta[y];
            beta += w * eb.e[y];
        }
    }
    let l_term = sigma + alpha + beta;
    Ok(Linearization { sigma, alpha, beta, l_term, ln_p_le1: ln_p, residual: (l_term + ln_p).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{CnfFormula, RandomModel};
    use crate::message::{history, init_messages, psi_triple, Engine};
    use proptest::prelude::*;

    fn g(n: usize, cs: &[&[i64]]) -> FactorGraph {
        FactorGraph::build(&CnfFormula::from_dimacs_clauses(n, cs))
    }

    #[test]
    fn schedule_examples() {
        let s = BiasSchedule::new(10, 2f64.powi(10) * 10f64.ln() / 10.0, 1000, 0.1).unwrap();
        assert!((s.rho - 10f64.ln()).abs() < 1e-12);
        assert_eq!(s.theta(0), 1.0);
        assert!((s.delta(0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(s.t_hat <= 1000.0);
        assert!(BiasSchedule::new(1, 1.0, 10, 0.1).is_err());
        assert!(BiasSchedule::new(3, 0.0, 10, 0.1).is_err());
        assert!(BiasSchedule::new(3, 1.0, 10, -0.1).is_err());
        assert!(BiasSchedule::new(3, 1.0, 0, 0.1).is_err());
    }

    #[test]
    fn cumulative_tracks_comparator() {
        // Fixed θk window: k grows with n so that ck(1 − t/n) stays put.
        let mut last = f64::INFINITY;
        for &n in &[1_000usize, 10_000, 100_000] {
            let s = BiasSchedule::new(30, 1.0, n, 0.5).unwrap();
            let t = n - n / 10;
            let ratio = s.cumulative(t) / s.comparator(t);
            let err = (ratio - 1.0).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 0.01);
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau(0.0).unwrap(), 1.0);
        assert_eq!(tau(1.0).unwrap(), 0.0);
        assert!(tau(-0.1).is_err() && tau(1.1).is_err());
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let via_psi = 1.0 - psi_triple(p, p).unwrap().psi0;
            assert!((tau(p).unwrap() - via_psi).abs() < 1e-14);
        }
    }

    #[test]
    fn mu_examples() {
        let rho = 1.7;
        let m = TypicalModel { k: 6, rho, theta: 1.0, n: 100 };
        let total: f64 = (1..=6).map(|j| m.mu_j(0.0, j).unwrap()).sum();
        assert!((total - 64.0 * rho).abs() < 1e-9);
        assert!((m.mu_j(0.0, 6).unwrap() - 64.0 * rho).abs() < 1e-9);
        let v = mu_j_le1(0.0, 0.5, 100, 4, rho, 2).unwrap();
        assert!((v - 4.0 * rho * 3.0 / 8.0).abs() < 1e-12);
        assert!(mu_j_le1(0.0, 0.5, 100, 4, rho, 0).is_err());
        assert!(mu_j_le1(0.0, 0.5, 100, 4, rho, 5).is_err());
        assert!(mu_j_le1(60.0, 0.5, 100, 4, rho, 2).is_err());
    }

    #[test]
    fn trace_start() {
        let s = BiasSchedule::new(8, 40.0, 1000, 0.1).unwrap();
        let tr = typical_sequence(&s, 0, &[], 0).unwrap();
        assert_eq!((tr.pi.clone(), tr.tau.clone()), (vec![0.0], vec![1.0]));
        let tr = typical_sequence(&s, 0, &[0.0], 3).unwrap();
        assert_eq!(tr.pi[1], s.typical(0).pi(0.0, 0.0).unwrap());
        assert!(tr.pi.iter().chain(&tr.tau).all(|v| (0.0..=1.0).contains(v)));
        for (p, t) in tr.pi.iter().zip(&tr.tau) {
            assert!((t - (1.0 - psi_unchecked(*p, *p).psi0)).abs() < 1e-15);
        }
    }

    #[test]
    fn log_identity_where_defined() {
        let s = BiasSchedule::new(10, 2f64.powi(10) * 1.0 / 10.0, 10_000, 0.1).unwrap();
        let m = s.typical(0);
        for &p in &[0.01, 0.1, 0.3] {
            let pi = m.pi(0.0, p).unwrap();
            let big = m.big_pi(0.0, p).unwrap();
            assert!(big >= 0.0);
            assert!((big + pi.ln()).abs() < 0.05 * big.max(1.0));
        }
    }

    #[test]
    fn edge_bias_examples() {
        let fg = g(3, &[&[1, -2, 3]]);
        let s = init_messages(&fg);
        let eb = edge_biases(&fg, &s, 0.0);
        assert!(eb.delta.iter().chain(&eb.e).all(|v| *v == 0.0));
        let mut s2 = s.clone();
        s2.var_to_clause[0] = [0.0, 1.0, 0.0];
        let eb = edge_biases(&fg, &s2, 0.0);
        assert_eq!((eb.delta[0], eb.e[0]), (0.0, 0.5));
        assert!(eb.reconstruction_residual < 1e-15);
    }

    #[test]
    fn uniform_state_is_balanced() {
        let fg = g(4, &[&[1, 2, 3], &[-1, 2, -4]]);
        let mut s = init_messages(&fg);
        s.clause_to_var.iter_mut().for_each(|m| *m = 0.0);
        let sched = BiasSchedule::new(3, 1.0, 4, 0.1).unwrap();
        let r = biased_variables(&fg, &s, &sched, 0, &[1, 2, 3, 4], BiasMode::Marginal).unwrap();
        assert!(r.biased.is_empty() && r.balanced);
        let r = biased_variables(&fg, &init_messages(&fg), &sched, 0, &[1, 2, 3, 4], BiasMode::Edge { pi_ell: 0.0 }).unwrap();
        assert!(r.biased.is_empty() && r.weighted.is_empty() && r.balanced);
        assert!(biased_variables(&fg, &s, &sched, 4, &[], BiasMode::Marginal).is_err());
    }

    #[test]
    fn unit_clauses_all_biased() {
        let fg = g(3, &[&[1], &[2], &[3]]);
        let sched = BiasSchedule::new(3, 1.0, 3, 1.0).unwrap();
        let s = history(&fg, 2, Engine::Sp).pop().unwrap();
        let r = biased_variables(&fg, &s, &sched, 0, &[1, 2, 3], BiasMode::Marginal).unwrap();
        assert!(r.delta < 0.5);
        assert_eq!(r.biased, vec![1, 2, 3]);
        assert!(!r.balanced);
    }

    #[test]
    fn certificate_level_zero_empty() {
        let fg = g(5, &[]);
        let sched = BiasSchedule::new(3, 1.0, 5, 0.1).unwrap();
        let hist = history(&fg, 3, Engine::Sp);
        let c = certificate_sets(&fg, &hist, &sched, 0, &[1, 2, 3, 4, 5], CertificateConstants::default()).unwrap();
        let l0 = &c.levels[0];
        assert!(l0.t_set.is_empty() && l0.t_prime.is_empty() && l0.harmless.is_empty());
        assert_eq!(c.levels.len(), 4);
        assert!(c.levels.iter().all(|l| l.b.is_empty()));
        assert!(c.inclusions_hold());
    }

    #[test]
    fn factorization_matches_products() {
        let f = CnfFormula::generate(RandomModel::uniform(4, 40), 20, 3).unwrap();
        let fg = FactorGraph::build(&f);
        let sched = BiasSchedule::new(4, 2.0, 20, 0.1).unwrap();
        let hist = history(&fg, 4, Engine::Sp);
        let active: Vec<u32> = (1..=20).collect();
        let c = certificate_sets(&fg, &hist, &sched, 0, &active, CertificateConstants::default()).unwrap();
        for l in &c.levels {
            assert!(l.factorization_residual < 1e-12);
            assert!(subset(&l.t_prime, &l.t_set));
            assert!(subset(&l.b_prime, &l.b));
        }
        assert!(c.to_csv().starts_with("ell,pi,"));
    }

    #[test]
    fn linearization_uniform_start() {
        let fg = g(3, &[&[1, 2, 3], &[1, -2, 3]]);
        let s = init_messages(&fg);
        let r = Regime { k: 3, n: 3, theta: 1.0, delta: 0.5, rho: 1.0, c: 0.1 };
        let e = fg.var_edges_signed(1, 1)[0];
        let lin = linearization(&fg, &s, &r, 0.0, &TSet::empty(&fg), e, 1).unwrap();
        assert_eq!(lin.alpha, 0.0);
        assert_eq!(lin.beta, 0.0);
        assert_eq!(lin.sigma, 0.25);
        assert_eq!(lin.l_term, lin.sigma);
        assert!((lin.ln_p_le1 - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn linearization_degenerate() {
        // x2 sends all its mass to −1, so (x1 ∨ x2) forces x1: μ_{b→x1}(0) = 0.
        let fg = g(3, &[&[1, 2], &[1, 3], &[-2]]);
        let mut s = init_messages(&fg);
        let e12 = fg.clause_edges(0).start + 1;
        s.var_to_clause[e12] = [1.0, 0.0, 0.0];
        s.clause_to_var = crate::message::clause_messages(&fg, &s.var_to_clause);
        let r = Regime { k: 2, n: 3, theta: 1.0, delta: 0.5, rho: 1.0, c: 0.1 };
        let e = fg.clause_edges(1).start;
        assert!(matches!(linearization(&fg, &s, &r, 0.0, &TSet::empty(&fg), e, 1), Err(Error::DegenerateProduct)));
    }

    fn arb_message() -> impl Strategy<Value = [f64; 3]> {
        (1e-6f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b, c)| {
            let z = a + b + c;
            [a / z, b / z, c / z]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn reconstruction_identity(ms in prop::collection::vec(arb_message(), 6), pi in 0.0f64..=1.0) {
            let fg = g(4, &[&[1, -2, 3], &[-1, 4, 2]]);
            let mut s = init_messages(&fg);
            s.var_to_clause = ms;
            let eb = edge_biases(&fg, &s, pi);
            prop_assert!(eb.reconstruction_residual < 1e-12);
            prop_assert!(eb.delta.iter().all(|d| d.abs() <= 0.5 + 1e-12));
        }

        #[test]
        fn cumulative_nondecreasing(k in 2usize..12, n in 1usize..200, c in 0.01f64..1.0) {
            let s = BiasSchedule::new(k, 1.0, n, c).unwrap();
            let mut prev = 0.0;
            for t in 0..=n {
                let d = s.delta(t);
                prop_assert!(d > 0.0 && d <= 1.0);
                let cum = s.cumulative(t);
                prop_assert!(cum >= prev);
                prev = cum;
            }
        }

        #[test]
        fn weighted_within_biased(seed in 0u64..100, rounds in 0usize..5, pi in 0.0f64..0.5) {
            let f = CnfFormula::generate(RandomModel::uniform(3, 30), 12, seed).unwrap();
            let fg = FactorGraph::build(&f);
            let s = history(&fg, rounds, Engine::Sp).pop().unwrap();
            let sched = BiasSchedule::new(3, 2.5, 12, 0.1).unwrap();
            let active: Vec<u32> = (1..=12).collect();
            let r = biased_variables(&fg, &s, &sched, 0, &active, BiasMode::Edge { pi_ell: pi }).unwrap();
            prop_assert!(subset(&r.weighted, &r.biased));
        }
    }
}
