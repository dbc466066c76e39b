//! Covers: generalized assignments in `{−1, 0, +1}^n` in which every clause
//! has a true literal or two 0-valued literals, and every non-0 variable is
//! the only literal of some clause not falsified.
//!
//! Exhaustive enumeration gives exact cover marginals to compare with SP.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formula::CnfFormula;
use crate::graph::FactorGraph;
use crate::message::{iterate, marginals, Engine, IterationPolicy};

pub const DEFAULT_COVER_CAP: usize = 16;

/// Condition (1): a literal with `sign·σ = +1`, or at least two occurrences
/// whose variable is 0.
pub fn clause_covered(f: &CnfFormula, sigma: &[i8]) -> bool {
    f.clauses().iter().all(|c| {
        let mut zeros = 0;
        for l in c.literals() {
            let v = sigma[l.var() as usize - 1];
            if l.eval(v) == 1 {
                return true;
            }
            if v == 0 {
                zeros += 1;
            }
        }
        zeros >= 2
    })
}

/// Condition (2): each non-0 variable occupies some position of a clause
/// whose every other position evaluates to −1.
pub fn all_supported(f: &CnfFormula, sigma: &[i8]) -> bool {
    let mut supported: Vec<bool> = sigma.iter().map(|&v| v == 0).collect();
    for c in f.clauses() {
        let lits = c.literals();
        let falsified = lits.iter().filter(|l| l.eval(sigma[l.var() as usize - 1]) == -1).count();
        for l in lits {
            let own = (l.eval(sigma[l.var() as usize - 1]) == -1) as usize;
            if falsified - own == lits.len() - 1 {
                supported[l.var() as usize - 1] = true;
            }
        }
    }
    supported.into_iter().all(|s| s)
}

pub fn is_cover(f: &CnfFormula, sigma: &[i8]) -> bool {
    assert_eq!(sigma.len(), f.num_vars(), "assignment length must equal n");
    clause_covered(f, sigma) && all_supported(f, sigma)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverSet {
    pub covers: Vec<Vec<i8>>,
    /// Per variable, the share of covers with value `(−1, 0, +1)`. Empty when
    /// there are no covers.
    pub marginals: Vec<[f64; 3]>,
}

impl CoverSet {
    /// One cover per line, symbols `-`, `0`, `+`.
    pub fn to_text(&self) -> String {
        self.covers
            .iter()
            .map(|s| {
                let mut line: String = s
                    .iter()
                    .map(|&v| match v {
                        -1 => '-',
                        0 => '0',
                        _ => '+',
                    })
                    .collect();
                line.push('\n');
                line
            })
            .collect()
    }
}

fn decode_base3(mut code: u64, n: usize, out: &mut [i8]) {
    for slot in out.iter_mut().take(n) {
        *slot = (code % 3) as i8 - 1;
        code /= 3;
    }
}

/// All covers by scanning `{−1, 0, +1}^n`, in base-3 order.
pub fn enumerate_covers(f: &CnfFormula, cap: usize) -> Result<CoverSet> {
    let n = f.num_vars();
    if n > cap || n > 40 {
        return Err(Error::CapExceeded { n, cap });
    }
    let total = 3u64.pow(n as u32);
    let chunk = 3u64.pow(n.min(9) as u32);
    let covers: Vec<Vec<i8>> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut sigma = vec![0i8; n];
            let mut found = Vec::new();
            for code in b * chunk..((b + 1) * chunk).min(total) {
                decode_base3(code, n, &mut sigma);
                if is_cover(f, &sigma) {
                    found.push(sigma.clone());
                }
            }
            found
        })
        .collect();
    let marginals = if covers.is_empty() {
        Vec::new()
    } else {
        let mut m = vec![[0.0; 3]; n];
        for s in &covers {
            for (x, &v) in s.iter().enumerate() {
                m[x][(v + 1) as usize] += 1.0;
            }
        }
        let total = covers.len() as f64;
        m.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v /= total));
        m
    };
    Ok(CoverSet { covers, marginals })
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverComparison {
    pub cover_count: usize,
    /// Per variable, `max_ζ |μ_SP(ζ) − cover share(ζ)|`; empty without covers.
    pub deviations: Vec<f64>,
    pub max_deviation: Option<f64>,
    pub sp_marginals: Vec<[f64; 3]>,
    pub cover_marginals: Vec<[f64; 3]>,
    /// Last residual of the SP run (0 if no round was needed).
    pub residual: f64,
    pub converged: bool,
}

pub fn compare_sp_to_covers(f: &CnfFormula, policy: IterationPolicy, cap: usize) -> Result<CoverComparison> {
    let covers = enumerate_covers(f, cap)?;
    let g = FactorGraph::build(f);
    let out = iterate(&g, policy, Engine::Sp);
    let sp: Vec<[f64; 3]> = marginals(&g, &out.state, Engine::Sp)
        .entries
        .iter()
        .map(|e| [e.mu_minus, e.mu_zero, e.mu_plus])
        .collect();
    let deviations: Vec<f64> = covers
        .marginals
        .iter()
        .zip(&sp)
        .map(|(c, s)| (0..3).map(|i| (c[i] - s[i]).abs()).fold(0.0, f64::max))
        .collect();
    let max_deviation = (!covers.covers.is_empty()).then(|| deviations.iter().copied().fold(0.0, f64::max));
    Ok(CoverComparison {
        cover_count: covers.covers.len(),
        deviations,
        max_deviation,
        sp_marginals: sp,
        cover_marginals: covers.marginals,
        residual: out.residuals.last().copied().unwrap_or(0.0),
        converged: out.converged || out.residuals.is_empty(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{Clause, Literal};
    use proptest::prelude::*;

    fn f(n: usize, cs: &[&[i64]]) -> CnfFormula {
        CnfFormula::from_dimacs_clauses(n, cs)
    }

    /// Second implementation, written from the definition clause by clause
    /// and variable by variable.
    fn is_cover_reference(f: &CnfFormula, s: &[i8]) -> bool {
        let val = |l: &Literal| l.sign() * s[l.var() as usize - 1];
        for c in f.clauses() {
            let has_true = c.literals().iter().any(|l| val(l) == 1);
            let zero_lits = c.literals().iter().filter(|l| s[l.var() as usize - 1] == 0).count();
            if !has_true && zero_lits < 2 {
                return false;
            }
        }
        for x in 1..=f.num_vars() as u32 {
            if s[x as usize - 1] == 0 {
                continue;
            }
            let ok = f.clauses().iter().any(|c| {
                (0..c.len()).any(|p| {
                    c.literals()[p].var() == x
                        && (0..c.len()).filter(|&q| q != p).all(|q| val(&c.literals()[q]) == -1)
                })
            });
            if !ok {
                return false;
            }
        }
        true
    }

    #[test]
    fn single_clause_examples() {
        let phi = f(3, &[&[1, 2, 3]]);
        assert!(is_cover(&phi, &[0, 0, 0]));
        assert!(!is_cover(&phi, &[1, 0, 0]));
        assert!(is_cover(&phi, &[1, -1, -1]) == is_cover_reference(&phi, &[1, -1, -1]));
        let set = enumerate_covers(&phi, 16).unwrap();
        assert_eq!(set.covers, vec![vec![0, 0, 0]]);
        assert!(set.marginals.iter().all(|m| *m == [0.0, 1.0, 0.0]));
    }

    #[test]
    fn conditions_separately() {
        let phi = f(3, &[&[1, 2, 3]]);
        // Satisfied, but x1 has no clause where the others are all false.
        assert!(clause_covered(&phi, &[1, 1, -1]));
        assert!(!all_supported(&phi, &[1, 1, -1]));
        // Supported, but the clause has neither a true literal nor two zeros.
        let pair = f(2, &[&[1, 2]]);
        assert!(all_supported(&pair, &[-1, -1]));
        assert!(!clause_covered(&pair, &[-1, -1]));
        assert!(clause_covered(&phi, &[-1, 0, 0]));
    }

    #[test]
    fn empty_formula() {
        let e = CnfFormula::empty(2);
        assert!(is_cover(&e, &[0, 0]));
        assert!(!is_cover(&e, &[1, 0]));
        assert_eq!(enumerate_covers(&e, 16).unwrap().covers, vec![vec![0, 0]]);
    }

    #[test]
    fn contradiction_scan() {
        let set = enumerate_covers(&f(1, &[&[1], &[-1]]), 16).unwrap();
        // σ = +1 leaves (¬x1) false; σ = 0 gives one 0-literal per clause.
        assert!(set.covers.is_empty());
        assert!(set.marginals.is_empty());
    }

    #[test]
    fn duplicate_zero_literals_count_twice() {
        let phi = CnfFormula::new(1, vec![Clause::from_dimacs(&[1, 1])]);
        assert!(is_cover(&phi, &[0]));
    }

    #[test]
    fn cap_enforced() {
        assert!(matches!(enumerate_covers(&CnfFormula::empty(17), 16), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn sp_matches_curated_covers() {
        let pol = IterationPolicy { omega: 50, residual_tol: 1e-12 };
        let c = compare_sp_to_covers(&f(3, &[&[1, 2, 3]]), pol, 16).unwrap();
        assert!(c.max_deviation.unwrap() <= 1e-9);
        let c = compare_sp_to_covers(&CnfFormula::empty(3), pol, 16).unwrap();
        assert_eq!(c.max_deviation, Some(0.0));
        let c = compare_sp_to_covers(&f(1, &[&[1]]), pol, 16).unwrap();
        assert_eq!(c.cover_count, 1);
        assert_eq!(c.max_deviation, Some(0.0));
    }

    #[test]
    fn cover_text() {
        let set = CoverSet { covers: vec![vec![-1, 0, 1]], marginals: vec![] };
        assert_eq!(set.to_text(), "-0+\n");
    }

    fn arb_formula() -> impl Strategy<Value = (CnfFormula, Vec<i8>)> {
        (1usize..=5).prop_flat_map(|n| {
            let lit = (1..=n as i64, any::<bool>()).prop_map(|(v, s)| if s { v } else { -v });
            (
                prop::collection::vec(prop::collection::vec(lit, 1..=3), 0..=5),
                prop::collection::vec(-1i8..=1, n),
            )
                .prop_map(move |(cs, s)| {
                    let clauses = cs.iter().map(|c| Clause::from_dimacs(c)).collect();
                    (CnfFormula::new(n, clauses), s)
                })
        })
    }

    proptest! {
        #[test]
        fn agrees_with_reference((phi, s) in arb_formula()) {
            prop_assert_eq!(is_cover(&phi, &s), is_cover_reference(&phi, &s));
        }

        #[test]
        fn relabelling_invariant((phi, s) in arb_formula(), shift in 0usize..5) {
            let n = phi.num_vars();
            let perm = |v: u32| ((v as usize - 1 + shift) % n) as u32 + 1;
            let clauses = phi.clauses().iter().map(|c| {
                Clause::new(c.literals().iter().map(|l| Literal::new(perm(l.var()), l.is_positive())).collect())
            }).collect();
            let phi2 = CnfFormula::new(n, clauses);
            let mut s2 = vec![0i8; n];
            for v in 1..=n as u32 {
                s2[perm(v) as usize - 1] = s[v as usize - 1];
            }
            prop_assert_eq!(is_cover(&phi, &s), is_cover(&phi2, &s2));
        }

        #[test]
        fn enumeration_is_filter((phi, _s) in arb_formula()) {
            let set = enumerate_covers(&phi, 16).unwrap();
            let n = phi.num_vars();
            let mut expected = Vec::new();
            let mut sigma = vec![0i8; n];
            for code in 0..3u64.pow(n as u32) {
                decode_base3(code, n, &mut sigma);
                if is_cover_reference(&phi, &sigma) {
                    expected.push(sigma.clone());
                }
            }
            prop_assert_eq!(set.covers, expected);
        }
    }
}
