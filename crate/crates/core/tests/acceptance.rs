use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use spdec::bias::{
    certificate_sets, edge_biases, typical_sequence, BiasSchedule, CertificateConstants,
};
use spdec::cover::compare_sp_to_covers;
use spdec::decimation::{
    random_formula_trials, run_decimation_observed, step_balance_stats, success_of, BalanceProbe,
    DecimationPolicy, DecimationTrace, Guide, Order,
};
use spdec::formula::{CnfFormula, RandomModel};
use spdec::graph::FactorGraph;
use spdec::message::{self, history, init_messages, psi_triple, sp_marginal, Engine, IterationPolicy};
use spdec::quasi::{
    check_q, cut_norm_exact, max_disjoint_bilinear, AuditBudget, AuditMode, Property, Regime,
    SignedOperator,
};
use spdec::seed::{rng_for, Stream};

const ROOT: u64 = 20_251_018;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rng(i: u64) -> ChaCha8Rng {
    rng_for(ROOT, Stream::Sampling, i)
}

fn random_formula(k: usize, n: usize, r: f64, seed: u64) -> CnfFormula {
    let m = RandomModel::clauses_for_density(r, n);
    CnfFormula::generate(RandomModel::uniform(k, m), n, seed).unwrap()
}

fn psi_normalization() -> Verdict {
    let mut rng = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let x = 1.0 - rng.random::<f64>();
        let y = 1.0 - rng.random::<f64>();
        let t = psi_triple(x, y).unwrap();
        worst = worst.max((t.psi0 + t.psi_plus + t.psi_minus - 1.0).abs());
    }
    let origin = psi_triple(0.0, 0.0).unwrap();
    let exact = origin.psi0 == 0.0 && origin.psi_plus == 0.5 && origin.psi_minus == 0.5;
    verdict(worst <= 1e-12 && exact, format!("max |sum − 1| = {worst:.2e}, ψ(0,0) exact = {exact}"))
}

fn message_sanity() -> Verdict {
    let mut rng = rng(2);
    let mut worst_sum = 0.0f64;
    let mut in_range = true;
    let mut deterministic = true;
    for i in 0..100 {
        let n = rng.random_range(5..=200);
        let r = rng.random_range(1.0..5.0);
        let g = FactorGraph::build(&random_formula(3, n, r, 1000 + i));
        let omega = IterationPolicy::default_for(n).omega;
        let states = history(&g, omega, Engine::Sp);
        for s in &states {
            for m in &s.var_to_clause {
                in_range &= m.iter().all(|v| (0.0..=1.0).contains(v));
                worst_sum = worst_sum.max((m.iter().sum::<f64>() - 1.0).abs());
            }
            in_range &= s.clause_to_var.iter().all(|v| (0.0..=1.0).contains(v));
        }
        let last = &states[states.len() - 2];
        let a = message::sp_round(&g, last);
        let b = message::sp_round(&g, last);
        deterministic &= a.var_to_clause.iter().flatten().zip(b.var_to_clause.iter().flatten()).all(|(p, q)| p.to_bits() == q.to_bits())
            && a.clause_to_var.iter().zip(&b.clause_to_var).all(|(p, q)| p.to_bits() == q.to_bits());
    }
    verdict(
        in_range && worst_sum <= 1e-9 && deterministic,
        format!("in [0,1] = {in_range}, max |sum − 1| = {worst_sum:.2e}, bit-identical = {deterministic}"),
    )
}

fn random_tree(rng: &mut ChaCha8Rng) -> CnfFormula {
    CnfFormula::random_forest(rng.random_range(1..=12), rng.random()).unwrap()
}

/// Largest hop distance between nodes of the same component.
fn diameter(g: &FactorGraph) -> usize {
    let nv = g.num_vars();
    let nodes = nv + g.num_clauses();
    let neighbours = |u: usize| -> Vec<usize> {
        if u < nv {
            g.var_edges(u as u32 + 1).iter().map(|&e| nv + g.edge_clause(e)).collect()
        } else {
            g.clause_edges(u - nv).map(|e| g.edge_var(e) as usize - 1).collect()
        }
    };
    let mut best = 0;
    for s in 0..nodes {
        let mut dist = vec![usize::MAX; nodes];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in neighbours(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    q.push_back(v);
                }
            }
        }
    }
    best
}

fn tree_fixed_points() -> Verdict {
    let mut rng = rng(3);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = random_tree(&mut rng);
        let g = FactorGraph::build(&f);
        let omega = (2 * diameter(&g)).max(1);
        for engine in [Engine::Sp, Engine::Bp] {
            let out = message::iterate(&g, IterationPolicy { omega, residual_tol: 1e-10 }, engine);
            let last = out.residuals.last().copied().unwrap_or(0.0);
            worst = worst.max(last);
            if !(out.converged || g.num_edges() == 0) || last > 1e-10 {
                failures += 1;
            }
        }
    }
    verdict(failures == 0, format!("{failures} non-converged runs, worst final residual {worst:.2e}"))
}

fn cover_agreement() -> Verdict {
    let policy = IterationPolicy { omega: 50, residual_tol: 1e-12 };
    let single = compare_sp_to_covers(&CnfFormula::from_dimacs_clauses(3, &[&[1, 2, 3]]), policy, 16).unwrap();
    let single_ok = single.cover_count == 1
        && single.cover_marginals.iter().all(|m| m[1] == 1.0)
        && single.sp_marginals.iter().all(|m| (m[1] - 1.0).abs() <= 1e-9)
        && single.max_deviation.unwrap() <= 1e-9;
    let empty = compare_sp_to_covers(&CnfFormula::empty(4), policy, 16).unwrap();
    let empty_ok = empty.cover_count == 1 && empty.max_deviation.unwrap() <= 1e-9;
    let unit = CnfFormula::from_dimacs_clauses(3, &[&[1], &[-2], &[3]]);
    let g = FactorGraph::build(&unit);
    let s = message::iterate(&g, policy, Engine::Sp).state;
    let expected = [1.0, 0.0, 1.0];
    let unit_ok = (1..=3u32).all(|x| (sp_marginal(&g, &s, x).p_true - expected[x as usize - 1]).abs() <= 1e-9);

    let mut rng = rng(4);
    let mut report = String::from("instance,n,clauses,covers,max_deviation,converged\n");
    for i in 0..50 {
        let f = random_tree(&mut rng);
        let c = compare_sp_to_covers(&f, IterationPolicy::default_for(f.num_vars()), 16).unwrap();
        let dev = c.max_deviation.map_or("".into(), |d| format!("{d:.6e}"));
        writeln!(report, "{i},{},{},{},{dev},{}", f.num_vars(), f.num_clauses(), c.cover_count, c.converged).unwrap();
    }
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("cover_deviations.csv");
    let written = std::fs::write(&path, report).is_ok();
    verdict(
        single_ok && empty_ok && unit_ok && written,
        format!("single = {single_ok}, empty = {empty_ok}, unit = {unit_ok}, tree deviations in {}", path.display()),
    )
}

fn expected_solution_count() -> Verdict {
    let (k, n, m, samples) = (3, 12, 20, 10_000u64);
    let counts: Vec<f64> = (0..samples)
        .map(|i| {
            CnfFormula::generate(RandomModel::uniform(k, m), n, 50_000 + i)
                .unwrap()
                .count_satisfying_bruteforce(16)
                .unwrap() as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / samples as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
    let se = (var / samples as f64).sqrt();
    let expected = spdec::expected_sat_count(k, n, m).value;
    let z = (mean - expected) / se;
    verdict(z.abs() <= 4.0, format!("mean {mean:.3} vs {expected:.3}, {z:+.2} standard errors"))
}

fn typical_value_band() -> Verdict {
    let n = 1_000_000;
    let levels = 10;
    let mut points = 0;
    let mut band_bad = 0;
    let mut log_bad = 0;
    let mut log_undefined = 0;
    let mut empty_rho = Vec::new();
    for k in 7..=12usize {
        for &c in &[0.05, 0.1] {
            for rho in [(k as f64).ln(), 1.0, 0.5] {
                let r = rho * 2f64.powi(k as i32) / k as f64;
                let s = BiasSchedule::new(k, r, n, c).unwrap();
                let mut admitted = 0;
                for i in 1..=100 {
                    let theta = i as f64 / 100.0;
                    if theta * (k as f64) < rho.ln() / (c * c) {
                        continue;
                    }
                    admitted += 1;
                    let t = ((1.0 - theta) * n as f64).round() as usize;
                    let delta = s.delta(t);
                    let theta_n = s.theta(t) * n as f64;
                    let (lo, hi) = s.typical(t).band();
                    for frac in [0.0, delta / 2.0, delta] {
                        points += 1;
                        let tr = typical_sequence(&s, t, &[frac * theta_n], levels).unwrap();
                        band_bad += tr.pi[1..].iter().filter(|&&p| !(lo <= p && p <= hi)).count();
                        for res in &tr.log_residual[1..] {
                            match res {
                                Some(v) if *v <= delta.powi(4) => {}
                                Some(_) => log_bad += 1,
                                None => log_undefined += 1,
                            }
                        }
                    }
                }
                if admitted == 0 {
                    empty_rho.push(format!("k={k},c={c},rho=ln k"));
                }
            }
        }
    }
    verdict(
        band_bad == 0 && log_bad == 0 && log_undefined == 0,
        format!(
            "{points} grid points x {levels} levels: {band_bad} outside band, {log_bad} log-identity violations, \
             {log_undefined} with pi = 0; {} (k,c) pairs admit no theta at rho = ln k",
            empty_rho.len()
        ),
    )
}

fn bias_algebra() -> Verdict {
    let mut rng = rng(7);
    let g = FactorGraph::build(&random_formula(3, 8, 2.0, 77));
    let mut worst = 0.0f64;
    let mut worst_literal = 0.0f64;
    for _ in 0..100_000 {
        let mut s = init_messages(&g);
        for m in s.var_to_clause.iter_mut() {
            let a: [f64; 3] = [rng.random::<f64>() + 1e-9, rng.random(), rng.random()];
            let z: f64 = a.iter().sum();
            *m = [a[0] / z, a[1] / z, a[2] / z];
        }
        let pi = rng.random::<f64>();
        let eb = edge_biases(&g, &s, pi);
        worst = worst.max(eb.reconstruction_residual);
        worst_literal = worst_literal.max(eb.literal_residual);
    }
    let mut audited = 0;
    let mut nested = true;
    for i in 0..20 {
        let n = 12 + i;
        let f = random_formula(4, n, 6.0, 700 + i as u64);
        let g = FactorGraph::build(&f);
        let sched = BiasSchedule::new(4, 6.0, n, 0.1).unwrap();
        let active: Vec<u32> = (1..=n as u32).collect();
        let c = certificate_sets(&g, &history(&g, 6, Engine::Sp), &sched, 0, &active, CertificateConstants::default()).unwrap();
        for l in &c.levels {
            audited += 1;
            nested &= l.b_prime.iter().all(|x| l.b.contains(x)) && l.t_prime.iter().all(|x| l.t_set.contains(x));
        }
    }
    verdict(
        worst <= 1e-12 && nested,
        format!(
            "max residual of mu(-sign) form {worst:.2e} (mu(sign) form {worst_literal:.2e}); \
             B' in B and T' in T on {audited} levels = {nested}"
        ),
    )
}

fn quasirandom_equivalence() -> Verdict {
    let mut disagreements = Vec::new();
    let mut verdicts = Vec::new();
    for i in 0..20u64 {
        let n = 8 + (i % 5) as usize;
        let r = [1.0, 2.0, 3.0, 4.0][(i % 4) as usize];
        let c = if i % 2 == 0 { 0.1 } else { 1.0 };
        let f = random_formula(3, n, r, 900 + i);
        let g = FactorGraph::build(&f);
        let sched = BiasSchedule::new(3, r, n, c).unwrap();
        let regime = Regime::from_schedule(&sched, 0);
        let active: Vec<u32> = (1..=n as u32).collect();
        for q in [Property::Q2, Property::Q3, Property::Q4] {
            let ex = AuditBudget { mode: AuditMode::Exhaustive, max_evaluations: u128::MAX, seed: i, ..AuditBudget::default() };
            let sa = AuditBudget { mode: AuditMode::Sampled, seed: i, ..AuditBudget::default() };
            let a = check_q(&g, q, &regime, &active, &ex).unwrap();
            let b = check_q(&g, q, &regime, &active, &sa).unwrap();
            verdicts.push(a.holds);
            if a.holds != b.holds {
                disagreements.push(format!("#{i} {q:?}"));
            }
        }
    }
    let mut rng = rng(8);
    let mut fact_bad = 0;
    for _ in 0..100 {
        let d = rng.random_range(1..=12);
        let m: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 0.0 } else { rng.random_range(-1.0..1.0) }).collect())
            .collect();
        let op = SignedOperator::from_dense(&m);
        if cut_norm_exact(&op).unwrap() > 24.0 * max_disjoint_bilinear(&op).unwrap() + 1e-9 {
            fact_bad += 1;
        }
    }
    let holds = verdicts.iter().filter(|v| **v).count();
    verdict(
        disagreements.is_empty() && fact_bad == 0,
        format!(
            "{} verdicts ({holds} hold), disagreements: [{}]; factor-24 violations {fact_bad}/100",
            verdicts.len(),
            disagreements.join(", ")
        ),
    )
}

fn decimation_soundness() -> Verdict {
    let mut rng = rng(9);
    let mut mention = 0;
    let mut flag_mismatch = 0;
    let n_coin = 40;
    let mut coin_traces: Vec<DecimationTrace> = Vec::new();
    for i in 0..200u64 {
        let guide = match i % 5 {
            0 | 1 => Guide::CoinFlip,
            2 | 3 => Guide::Sp,
            _ => Guide::Bp,
        };
        let order = if rng.random_bool(0.5) { Order::Natural } else { Order::RandomPermutation };
        let n = if guide == Guide::CoinFlip { n_coin } else { rng.random_range(5..=60) };
        let r = rng.random_range(1.0..4.5);
        let f = random_formula(3, n, r, 2000 + i);
        let policy = DecimationPolicy::new(guide, order, n, 3000 + i);
        let trace = run_decimation_observed(&f, &policy, |_, phi, pa| {
            let touches = phi.clauses().iter().flat_map(|c| c.literals()).any(|l| pa.get(l.var()).is_some());
            mention += touches as usize;
        });
        if trace.satisfied != f.evaluate(&trace.assignment) {
            flag_mismatch += 1;
        }
        if guide == Guide::CoinFlip {
            coin_traces.push(trace);
        }
    }
    let stats = step_balance_stats(&coin_traces, 3, 0.1).unwrap();
    let worst_z = stats.iter().map(|s| s.deviation / s.sigma).fold(0.0, f64::max);
    let fair = stats.iter().all(|s| s.deviation <= 3.0 * s.sigma);
    verdict(
        mention == 0 && flag_mismatch == 0 && fair,
        format!(
            "assigned variables in later formulas: {mention}, satisfied-flag mismatches: {flag_mismatch}, \
             coin-flip steps: {} runs x {n_coin}, worst |freq − 1/2|/sigma = {worst_z:.2}",
            coin_traces.len()
        ),
    )
}

struct SweepData {
    sp: Vec<(f64, Vec<DecimationTrace>)>,
    coin: Vec<DecimationTrace>,
}

fn sweep() -> SweepData {
    let (k, n, trials) = (3, 300, 20);
    let mut sp = Vec::new();
    for (i, &r) in [2.0, 3.0, 3.8, 4.2].iter().enumerate() {
        let model = RandomModel::uniform(k, RandomModel::clauses_for_density(r, n));
        let mut policy = DecimationPolicy::new(Guide::Sp, Order::RandomPermutation, n, 10_000 + i as u64);
        policy.balance = Some(BalanceProbe { k, c: 0.1 });
        sp.push((r, random_formula_trials(model, n, &policy, trials).unwrap()));
    }
    let model = RandomModel::uniform(k, RandomModel::clauses_for_density(3.8, n));
    let policy = DecimationPolicy::new(Guide::CoinFlip, Order::RandomPermutation, n, 10_002);
    let coin = random_formula_trials(model, n, &policy, trials).unwrap();
    SweepData { sp, coin }
}

fn empirical_sweep(data: &SweepData) -> Verdict {
    let est: Vec<_> = data.sp.iter().map(|(r, t)| (*r, success_of(t))).collect();
    let low_ok = est[0].1.estimate >= 0.9;
    let monotone = est.windows(2).all(|w| w[1].1.estimate <= w[0].1.estimate || w[1].1.overlaps(&w[0].1));
    let coin = success_of(&data.coin);
    let sp38 = est.iter().find(|(r, _)| *r == 3.8).unwrap().1;
    let beats = sp38.estimate > coin.estimate;
    let curve: Vec<String> = est.iter().map(|(r, e)| format!("r={r}: {}/{}", e.successes, e.trials)).collect();
    verdict(
        low_ok && monotone && beats,
        format!("SP {}; coin flip at r=3.8: {}/{}", curve.join(", "), coin.successes, coin.trials),
    )
}

fn balancedness_linkage(data: &SweepData) -> Verdict {
    let mut checked = 0;
    let mut bad = 0;
    let mut worst_margin = f64::INFINITY;
    for (_, traces) in &data.sp {
        for s in step_balance_stats(traces, 3, 0.1).unwrap() {
            if let Some(dev) = s.balanced_deviation() {
                checked += 1;
                let bound = 2.0 * s.delta_t + 3.0 * 0.5 / (s.balanced_runs as f64).sqrt();
                worst_margin = worst_margin.min(bound - dev);
                if dev > bound {
                    bad += 1;
                }
            }
        }
    }
    verdict(
        bad == 0 && checked > 0,
        format!("{checked} balanced steps checked, {bad} above 2 delta_t + 3 sigma, smallest margin {worst_margin:.3}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, limit: Duration, run: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let pass = v.pass && took <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{id:>2}] {name}: {} ({:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    };
    report(1, "psi normalization", Duration::from_secs(1), &mut psi_normalization);
    report(2, "message sanity", Duration::from_secs(10), &mut message_sanity);
    report(3, "tree fixed points", Duration::from_secs(5), &mut tree_fixed_points);
    report(4, "cover agreement", Duration::from_secs(30), &mut cover_agreement);
    report(5, "expected solution count", Duration::from_secs(120), &mut expected_solution_count);
    report(6, "typical-value band", Duration::from_secs(60), &mut typical_value_band);
    report(7, "bias algebra", Duration::from_secs(30), &mut bias_algebra);
    report(8, "quasirandomness equivalence", Duration::from_secs(120), &mut quasirandom_equivalence);
    report(9, "decimation soundness", Duration::from_secs(60), &mut decimation_soundness);
    let start = Instant::now();
    let data = sweep();
    let sweep_time = start.elapsed();
    report(10, "empirical sweep", Duration::from_secs(600), &mut || {
        let mut v = empirical_sweep(&data);
        v.detail.push_str(&format!(", sweep {:.1}s", sweep_time.as_secs_f64()));
        v.pass &= sweep_time <= Duration::from_secs(600);
        v
    });
    report(11, "balancedness linkage", Duration::from_secs(600), &mut || balancedness_linkage(&data));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
