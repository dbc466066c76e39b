use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use spdec::bias::{
    biased_variables, certificate_sets, edge_biases, typical_sequence, BiasMode, BiasSchedule, CertificateConstants,
};
use spdec::cover::compare_sp_to_covers;
use spdec::decimation::{random_formula_trials, run_decimation, success_of, DecimationPolicy, DecimationTrace};
use spdec::message::{history, Engine};
use spdec::quasi::{quasirandom_report, AuditBudget, Property};
use spdec::seed::{derive_seed, Stream};
use spdec::{dimacs, CnfFormula, FactorGraph, PartialAssignment, RandomModel};

use crate::config::{EngineArg, ExperimentConfig};
use crate::record::{RunRecord, VERSION};

fn load_formula(cfg: &ExperimentConfig) -> Result<CnfFormula> {
    if let Some(path) = &cfg.input {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        return dimacs::read(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()));
    }
    let m = cfg.clauses(None)?;
    if cfg.n == 0 && m == 0 {
        return Ok(CnfFormula::empty(0));
    }
    Ok(CnfFormula::generate(cfg.random_model(m), cfg.n, cfg.seed)?)
}

fn open_out(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let m = cfg.clauses(None)?;
    let model = cfg.random_model(m);
    let f = CnfFormula::generate(model, cfg.n, cfg.seed)?;
    let out = cfg.out_or("formula.cnf");
    if out == Path::new("-") {
        bail!("generate writes a DIMACS file and its sidecar; give a path with --out");
    }
    let mut w = open_out(&out)?;
    dimacs::write(&f, &mut w)?;
    w.flush()?;
    let sidecar = json!({
        "version": VERSION,
        "config_hash": cfg.hash(),
        "config": cfg,
        "provenance": f.provenance(),
        "clauses": f.num_clauses(),
        "dimacs_sha256": crate::config::file_sha256(&out)?,
    });
    fs::write(sidecar_path(&out), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

fn policy(cfg: &ExperimentConfig, engine: EngineArg, n: usize) -> DecimationPolicy {
    let mut p = DecimationPolicy::new(engine.guide(), cfg.order.order(), n, cfg.seed);
    p.iteration = cfg.iteration(n);
    p
}

pub fn solve(cfg: &ExperimentConfig) -> Result<()> {
    let f = load_formula(cfg)?;
    let trace = run_decimation(&f, &policy(cfg, cfg.engine, f.num_vars()));
    let mut w = open_out(&cfg.out_or("-"))?;
    let header = json!({
        "kind": "config",
        "version": VERSION,
        "config_hash": cfg.hash(),
        "config": cfg,
        "n": f.num_vars(),
        "m": f.num_clauses(),
    });
    writeln!(w, "{header}")?;
    for step in &trace.steps {
        let mut v = serde_json::to_value(step)?;
        v["kind"] = json!("step");
        writeln!(w, "{v}")?;
    }
    let falsified = trace.empty_clauses_total();
    let result = json!({
        "kind": "result",
        "satisfied": trace.satisfied,
        "falsified_clauses": falsified,
        "assignment": trace.assignment,
    });
    writeln!(w, "{result}")?;
    w.flush()?;
    if cfg.strict && falsified > 0 {
        return Err(spdec::Error::Contradiction(falsified).into());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub n: usize,
    pub r: f64,
    pub engine: String,
    pub order: String,
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

fn read_point(path: &Path) -> Option<SweepRow> {
    let mut rdr = csv::Reader::from_path(path).ok()?;
    rdr.deserialize().next()?.ok()
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reuses `dir` only if it was started with the same configuration.
fn claim_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("config.txt");
    if path.exists() {
        let mut prev = ExperimentConfig::defaults(&cfg.command);
        prev.apply_text(&fs::read_to_string(&path)?).with_context(|| format!("in {}", path.display()))?;
        if prev.hash() != cfg.hash() {
            bail!(
                "{} holds results of another configuration (hash {}); choose a different --out",
                dir.display(),
                prev.hash()
            );
        }
    }
    write_file(dir, "config.txt", &cfg.to_text())
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let grid: Vec<f64> = if cfg.r_grid.is_empty() { cfg.r.into_iter().collect() } else { cfg.r_grid.clone() };
    if grid.is_empty() {
        bail!("sweep needs --r-grid (or --r)");
    }
    let dir = cfg.out_or("sweep");
    claim_dir(cfg, &dir)?;
    let points = dir.join("points");
    fs::create_dir_all(&points)?;
    let mut engines = vec![cfg.engine];
    if cfg.engine != EngineArg::Coin {
        engines.push(EngineArg::Coin);
    }
    let (mut computed, mut reused) = (0, 0);
    let mut rows = Vec::new();
    for (i, &r) in grid.iter().enumerate() {
        for &engine in &engines {
            let point = points.join(format!("{i:03}_{}.csv", engine.name()));
            if let Some(row) = read_point(&point).filter(|row| row.r == r) {
                reused += 1;
                rows.push(row);
                continue;
            }
            let m = RandomModel::clauses_for_density(r, cfg.n);
            let p = policy(cfg, engine, cfg.n);
            let traces: Vec<DecimationTrace> = if cfg.n == 0 {
                let empty = CnfFormula::empty(0);
                (0..cfg.trials).map(|_| run_decimation(&empty, &p)).collect()
            } else {
                random_formula_trials(cfg.random_model(m), cfg.n, &p, cfg.trials)?
            };
            let est = success_of(&traces);
            let row = SweepRow {
                k: cfg.k,
                n: cfg.n,
                r,
                engine: engine.name().to_string(),
                order: cfg.order.name().to_string(),
                trials: est.trials,
                successes: est.successes,
                estimate: est.estimate,
                lo: est.lo,
                hi: est.hi,
                seed: cfg.seed,
            };
            write_rows(&point, std::slice::from_ref(&row))?;
            computed += 1;
            rows.push(row);
        }
    }
    write_rows(&dir.join("sweep.csv"), &rows)?;
    let summary = json!({ "points_computed": computed, "points_reused": reused });
    RunRecord::new(cfg, started, &dir, &["sweep.csv", "config.txt"], summary)?.write(&dir.join("run.json"))
}

/// `Φ_t`: the formula with variables `1..=t` fixed to true, and its
/// unassigned variables.
fn decimated(cfg: &ExperimentConfig, f: &CnfFormula) -> Result<(CnfFormula, Vec<u32>)> {
    let n = f.num_vars();
    if cfg.t >= n {
        bail!("decimation time t = {} must be below n = {n}", cfg.t);
    }
    let pairs: Vec<(u32, i8)> = (1..=cfg.t as u32).map(|x| (x, 1)).collect();
    let pa = PartialAssignment::from_pairs(n, &pairs)?;
    let phi = if cfg.strict { f.decimate_strict(&pa)? } else { f.decimate(&pa).formula };
    Ok((phi, (cfg.t as u32 + 1..=n as u32).collect()))
}

fn schedule(cfg: &ExperimentConfig, f: &CnfFormula) -> Result<BiasSchedule> {
    let n = f.num_vars();
    let r = cfg.r.unwrap_or(f.num_clauses() as f64 / n.max(1) as f64);
    BiasSchedule::new(cfg.k, r, n, cfg.c).context("bias schedule (a clause-free formula needs --r)")
}

fn budget(cfg: &ExperimentConfig) -> AuditBudget {
    AuditBudget {
        mode: cfg.audit.mode(),
        max_evaluations: cfg.max_evals,
        seed: derive_seed(cfg.seed, Stream::Sampling, 0),
        ..AuditBudget::default()
    }
}

pub fn diagnose(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let f = load_formula(cfg)?;
    let s = schedule(cfg, &f)?;
    let (phi, active) = decimated(cfg, &f)?;
    let g = FactorGraph::build(&phi);
    let hist = history(&g, cfg.levels, Engine::Sp);
    let cert = certificate_sets(&g, &hist, &s, cfg.t, &active, CertificateConstants::default())?;
    let sizes: Vec<f64> = cert.levels.iter().map(|l| l.t_set.len() as f64).collect();
    let trace = typical_sequence(&s, cfg.t, &sizes, cfg.levels)?;
    let last = hist.last().expect("history holds the initial state");
    let pi_last = trace.pi[cfg.levels];
    let marginal = biased_variables(&g, last, &s, cfg.t, &active, BiasMode::Marginal)?;
    let edge = biased_variables(&g, last, &s, cfg.t, &active, BiasMode::Edge { pi_ell: pi_last })?;
    let q = quasirandom_report(&g, &s, cfg.t, &active, &budget(cfg), &Property::ALL)?;

    let dir = cfg.out_or("diagnose");
    claim_dir(cfg, &dir)?;
    let hash = cfg.hash();
    write_file(&dir, "biases.csv", &edge_biases(&g, last, pi_last).to_csv(&g))?;
    let mut pi_csv = String::from("ell,t_size,pi,big_pi,tau,log_residual,band_applicable\n");
    for ell in 0..=cfg.levels {
        let size = if ell == 0 { 0.0 } else { sizes.get(ell - 1).or(sizes.last()).copied().unwrap_or(0.0) };
        pi_csv += &format!(
            "{ell},{size},{},{},{},{},{}\n",
            trace.pi[ell],
            trace.big_pi[ell],
            trace.tau[ell],
            trace.log_residual[ell].map(|v| v.to_string()).unwrap_or_default(),
            trace.band_applicable[ell]
        );
    }
    write_file(&dir, "pi_trace.csv", &pi_csv)?;
    write_file(&dir, "certificates.csv", &cert.to_csv())?;
    let biased = json!({ "config_hash": hash, "schedule": s, "marginal": marginal, "edge": edge });
    write_file(&dir, "biased.json", &(serde_json::to_string_pretty(&biased)? + "\n"))?;
    let qjson = json!({ "config_hash": hash, "all_hold": q.all_hold(), "report": q });
    write_file(&dir, "quasirandom.json", &(serde_json::to_string_pretty(&qjson)? + "\n"))?;
    let summary = json!({
        "t": cfg.t,
        "delta": s.delta(cfg.t),
        "within_horizon": s.within_horizon(cfg.t),
        "inclusions_hold": cert.inclusions_hold(),
        "sizes_hold": cert.sizes_hold(),
        "marginal_biased": marginal.biased.len(),
        "balanced": marginal.balanced,
        "band_violations": trace.band_violations,
        "quasirandom_all_hold": q.all_hold(),
    });
    let files = ["biases.csv", "pi_trace.csv", "certificates.csv", "biased.json", "quasirandom.json", "config.txt"];
    RunRecord::new(cfg, started, &dir, &files, summary)?.write(&dir.join("manifest.json"))
}

pub fn covers(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let dir = cfg.out_or("covers");
    claim_dir(cfg, &dir)?;
    let (files, summary) = match cfg.trees {
        Some(count) => {
            let top = cfg.n.min(cfg.cap_bruteforce).max(1) as u64;
            let mut w = csv::Writer::from_path(dir.join("trees.csv"))?;
            w.write_record(["tree", "n", "clauses", "covers", "max_deviation", "residual", "converged"])?;
            let mut worst: Option<f64> = None;
            for i in 0..count as u64 {
                let n = 1 + (derive_seed(cfg.seed, Stream::Sampling, i) % top) as usize;
                let f = CnfFormula::random_forest(n, derive_seed(cfg.seed, Stream::Generation, i))?;
                let cmp = compare_sp_to_covers(&f, cfg.iteration(n), cfg.cap_bruteforce)?;
                if let Some(d) = cmp.max_deviation {
                    worst = Some(worst.map_or(d, |w| w.max(d)));
                }
                w.write_record([
                    i.to_string(),
                    n.to_string(),
                    f.num_clauses().to_string(),
                    cmp.cover_count.to_string(),
                    cmp.max_deviation.map(|d| d.to_string()).unwrap_or_default(),
                    cmp.residual.to_string(),
                    cmp.converged.to_string(),
                ])?;
            }
            w.flush()?;
            (vec!["trees.csv"], json!({ "trees": count, "max_deviation": worst }))
        }
        None => {
            let f = load_formula(cfg)?;
            let cmp = compare_sp_to_covers(&f, cfg.iteration(f.num_vars()), cfg.cap_bruteforce)?;
            let mut w = csv::Writer::from_path(dir.join("deviations.csv"))?;
            w.write_record(["var", "sp_minus", "sp_zero", "sp_plus", "cover_minus", "cover_zero", "cover_plus", "deviation"])?;
            for (i, sp) in cmp.sp_marginals.iter().enumerate() {
                let cover = cmp.cover_marginals.get(i);
                let field = |j: usize| cover.map(|c| c[j].to_string()).unwrap_or_default();
                w.write_record([
                    (i + 1).to_string(),
                    sp[0].to_string(),
                    sp[1].to_string(),
                    sp[2].to_string(),
                    field(0),
                    field(1),
                    field(2),
                    cmp.deviations.get(i).map(|d| d.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            let summary = json!({
                "cover_count": cmp.cover_count,
                "max_deviation": cmp.max_deviation,
                "residual": cmp.residual,
                "converged": cmp.converged,
            });
            (vec!["deviations.csv"], summary)
        }
    };
    let mut files = files;
    files.push("config.txt");
    RunRecord::new(cfg, started, &dir, &files, summary)?.write(&dir.join("run.json"))
}

pub fn quasirandom(cfg: &ExperimentConfig) -> Result<()> {
    let f = load_formula(cfg)?;
    let s = schedule(cfg, &f)?;
    let (phi, active) = decimated(cfg, &f)?;
    let g = FactorGraph::build(&phi);
    let q = quasirandom_report(&g, &s, cfg.t, &active, &budget(cfg), &Property::ALL)?;
    let out = json!({
        "version": VERSION,
        "config_hash": cfg.hash(),
        "config": cfg,
        "all_hold": q.all_hold(),
        "report": q,
    });
    let mut w = open_out(&cfg.out_or("-"))?;
    writeln!(w, "{}", serde_json::to_string_pretty(&out)?)?;
    w.flush()?;
    Ok(())
}
