//! Guided decimation: assign variables one at a time, each drawn from the
//! marginal that SP (or BP, or a fair coin) reports on the current simplified
//! formula.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::delta_at;
use crate::error::{Error, Result};
use crate::formula::{ClauseOrigin, CnfFormula, PartialAssignment, RandomModel};
use crate::graph::FactorGraph;
use crate::message::{clause_messages, init_messages, iterate_from, marginal, marginals, Engine, IterationPolicy, MessageState};
use crate::seed::{derive_seed, rng_for, Stream};
use crate::stats::{wilson_interval, Z95};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Guide {
    Sp,
    Bp,
    CoinFlip,
}

impl Guide {
    fn engine(self) -> Option<Engine> {
        match self {
            Guide::Sp => Some(Engine::Sp),
            Guide::Bp => Some(Engine::Bp),
            Guide::CoinFlip => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    Natural,
    RandomPermutation,
}

/// Measures `(δ_t, t)`-balancedness of each decimated formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceProbe {
    pub k: usize,
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecimationPolicy {
    pub guide: Guide,
    pub order: Order,
    pub iteration: IterationPolicy,
    pub seed: u64,
    /// Start each step from the previous step's messages instead of the
    /// uniform state.
    pub warm_start: bool,
    pub balance: Option<BalanceProbe>,
}

impl DecimationPolicy {
    pub fn new(guide: Guide, order: Order, n: usize, seed: u64) -> Self {
        DecimationPolicy {
            guide,
            order,
            iteration: IterationPolicy::default_for(n),
            seed,
            warm_start: false,
            balance: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub var: u32,
    pub p_true: f64,
    pub value: i8,
    /// Clauses falsified (and removed) by this assignment.
    pub empty_created: usize,
    /// Clause count of the formula after this step.
    pub clauses: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub mean_len: f64,
    pub rounds: usize,
    pub converged: bool,
    /// Number of `(δ_t, t)`-biased unassigned variables before this step.
    pub biased: Option<usize>,
    pub balanced: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecimationTrace {
    pub n: usize,
    pub steps: Vec<Step>,
    /// Final value of variable `i + 1` at index `i`.
    pub assignment: Vec<i8>,
    pub satisfied: bool,
}

impl DecimationTrace {
    pub fn empty_clauses_total(&self) -> usize {
        self.steps.iter().map(|s| s.empty_created).sum()
    }
}

pub fn variable_order(n: usize, order: Order, seed: u64) -> Vec<u32> {
    let mut vars: Vec<u32> = (1..=n as u32).collect();
    if order == Order::RandomPermutation {
        vars.shuffle(&mut rng_for(seed, Stream::Permutation, 0));
    }
    vars
}

fn carry_messages(prev: &MessageState, origins: &[ClauseOrigin], old: &FactorGraph, new: &FactorGraph) -> MessageState {
    let mut v2c = Vec::with_capacity(new.num_edges());
    for o in origins {
        let start = old.clause_edges(o.source).start;
        v2c.extend(o.kept.iter().map(|&p| prev.var_to_clause[start + p]));
    }
    let c2v = clause_messages(new, &v2c);
    MessageState { var_to_clause: v2c, clause_to_var: c2v, round: 0 }
}

/// Runs one decimation, calling `observe(t, Φ_t, assigned so far)` before
/// each step.
pub fn run_decimation_observed<F>(f: &CnfFormula, policy: &DecimationPolicy, mut observe: F) -> DecimationTrace
where
    F: FnMut(usize, &CnfFormula, &PartialAssignment),
{
    let n = f.num_vars();
    let order = variable_order(n, policy.order, policy.seed);
    let mut draws = rng_for(policy.seed, Stream::Decimation, 0);
    let mut pa = PartialAssignment::new(n);
    let mut current = f.clone();
    let mut carried: Option<(MessageState, FactorGraph)> = None;
    let mut steps = Vec::with_capacity(n);
    for (t, &x) in order.iter().enumerate() {
        observe(t, &current, &pa);
        let g = FactorGraph::build(&current);
        let (p_true, rounds, converged, biased, balanced) = match policy.guide.engine() {
            None => (0.5, 0, true, None, None),
            Some(engine) => {
                let start = match (&carried, policy.warm_start) {
                    (Some((s, _)), true) if s.var_to_clause.len() == g.num_edges() => s.clone(),
                    _ => init_messages(&g),
                };
                let out = iterate_from(&g, start, policy.iteration, engine);
                let p = marginal(&g, &out.state, x, engine).p_true;
                let (biased, balanced) = match policy.balance {
                    Some(probe) if engine == Engine::Sp => {
                        let delta = delta_at(probe.k, probe.c, n, t);
                        let est = marginals(&g, &out.state, Engine::Sp);
                        let count = order[t..]
                            .iter()
                            .filter(|&&y| {
                                let m = est.entries[y as usize - 1];
                                (m.mu_plus - 0.5 * (1.0 - m.mu_zero)).abs() > delta
                            })
                            .count();
                        (Some(count), Some(count as f64 <= delta * (n - t) as f64))
                    }
                    _ => (None, None),
                };
                let rounds = out.state.round;
                if policy.warm_start {
                    carried = Some((out.state, g.clone()));
                }
                (p, rounds, out.converged, biased, balanced)
            }
        };
        let value = if draws.random::<f64>() < p_true { 1 } else { -1 };
        let mut single = PartialAssignment::new(n);
        single.assign(x, value).expect("fresh variable");
        pa.assign(x, value).expect("each variable is assigned once");
        let d = current.decimate(&single);
        if let Some((s, old_g)) = carried.take() {
            let new_g = FactorGraph::build(&d.formula);
            carried = Some((carry_messages(&s, &d.origins, &old_g, &new_g), new_g));
        }
        current = d.formula;
        let lens: Vec<usize> = current.clauses().iter().map(|c| c.len()).collect();
        steps.push(Step {
            t,
            var: x,
            p_true,
            value,
            empty_created: d.removed_empty,
            clauses: current.num_clauses(),
            min_len: lens.iter().copied().min().unwrap_or(0),
            max_len: lens.iter().copied().max().unwrap_or(0),
            mean_len: if lens.is_empty() { 0.0 } else { lens.iter().sum::<usize>() as f64 / lens.len() as f64 },
            rounds,
            converged,
            biased,
            balanced,
        });
    }
    let assignment: Vec<i8> = (1..=n as u32).map(|x| pa.get(x).unwrap_or(1)).collect();
    let satisfied = f.evaluate(&assignment);
    DecimationTrace { n, steps, assignment, satisfied }
}

pub fn run_decimation(f: &CnfFormula, policy: &DecimationPolicy) -> DecimationTrace {
    run_decimation_observed(f, policy, |_, _, _| {})
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SuccessEstimate {
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        let (lo, hi) = wilson_interval(successes, trials, Z95);
        SuccessEstimate {
            trials,
            successes,
            estimate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            lo,
            hi,
        }
    }

    /// True when the two 95% intervals intersect.
    pub fn overlaps(&self, other: &SuccessEstimate) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Seed of trial `i` under root seed `seed`.
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    derive_seed(seed, Stream::Trial, i)
}

/// Independent decimation runs on one formula.
pub fn estimate_success(f: &CnfFormula, policy: &DecimationPolicy, trials: u64) -> Result<SuccessEstimate> {
    if trials == 0 {
        return Err(Error::EmptyInput);
    }
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&i| run_decimation(f, &policy.with_seed(trial_seed(policy.seed, i))).satisfied)
        .count() as u64;
    Ok(SuccessEstimate::from_counts(successes, trials))
}

/// Decimation runs on fresh formulas: trial `i` draws its formula from the
/// generation stream and its coins from the trial stream.
pub fn random_formula_trials(
    model: RandomModel,
    n: usize,
    policy: &DecimationPolicy,
    trials: u64,
) -> Result<Vec<DecimationTrace>> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let f = CnfFormula::generate(model, n, derive_seed(policy.seed, Stream::Generation, i))?;
            Ok(run_decimation(&f, &policy.with_seed(trial_seed(policy.seed, i))))
        })
        .collect()
}

pub fn success_of(traces: &[DecimationTrace]) -> SuccessEstimate {
    SuccessEstimate::from_counts(traces.iter().filter(|t| t.satisfied).count() as u64, traces.len() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepBalance {
    pub t: usize,
    pub runs: usize,
    pub plus: usize,
    pub frequency: f64,
    pub deviation: f64,
    /// Binomial standard deviation of the frequency under a fair coin.
    pub sigma: f64,
    pub delta_t: f64,
    /// The same counts restricted to runs whose formula was balanced at `t`.
    pub balanced_runs: usize,
    pub balanced_plus: usize,
}

impl StepBalance {
    pub fn balanced_deviation(&self) -> Option<f64> {
        (self.balanced_runs > 0).then(|| (self.balanced_plus as f64 / self.balanced_runs as f64 - 0.5).abs())
    }
}

/// Per-step frequency of +1 draws across traces sharing `n`.
pub fn step_balance_stats(traces: &[DecimationTrace], k: usize, c: f64) -> Result<Vec<StepBalance>> {
    let first = traces.first().ok_or(Error::EmptyInput)?;
    let n = first.n;
    if traces.iter().any(|t| t.n != n) {
        return Err(Error::InvalidAssignment("traces have different n".into()));
    }
    Ok((0..n)
        .map(|t| {
            let runs = traces.len();
            let plus = traces.iter().filter(|tr| tr.steps[t].value == 1).count();
            let balanced: Vec<&Step> = traces
                .iter()
                .map(|tr| &tr.steps[t])
                .filter(|s| s.balanced == Some(true))
                .collect();
            let frequency = plus as f64 / runs as f64;
            StepBalance {
                t,
                runs,
                plus,
                frequency,
                deviation: (frequency - 0.5).abs(),
                sigma: 0.5 / (runs as f64).sqrt(),
                delta_t: delta_at(k, c, n, t),
                balanced_runs: balanced.len(),
                balanced_plus: balanced.iter().filter(|s| s.value == 1).count(),
            }
        })
        .collect())
}
