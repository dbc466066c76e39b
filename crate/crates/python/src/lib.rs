//! Python bindings for `spdec`.
//!
//! Structured results (traces, reports, comparisons) cross the boundary as
//! JSON and arrive in Python as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use spdec::bias::BiasSchedule;
use spdec::cover::{compare_sp_to_covers, DEFAULT_COVER_CAP};
use spdec::decimation::{estimate_success, random_formula_trials, run_decimation, success_of, DecimationPolicy, Guide, Order};
use spdec::message::{iterate, marginals, psi_triple, Engine, IterationPolicy};
use spdec::quasi::{quasirandom_report, AuditBudget, AuditMode, Property};
use spdec::{dimacs, CnfFormula, FactorGraph, PartialAssignment, RandomModel};

fn err(e: spdec::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn guide(engine: &str) -> PyResult<Guide> {
    match engine {
        "sp" => Ok(Guide::Sp),
        "bp" => Ok(Guide::Bp),
        "coin" => Ok(Guide::CoinFlip),
        other => Err(PyValueError::new_err(format!("engine must be sp, bp or coin, not {other:?}"))),
    }
}

fn order(name: &str) -> PyResult<Order> {
    match name {
        "natural" => Ok(Order::Natural),
        "perm" => Ok(Order::RandomPermutation),
        other => Err(PyValueError::new_err(format!("order must be natural or perm, not {other:?}"))),
    }
}

fn policy(n: usize, omega: Option<usize>, tol: f64) -> IterationPolicy {
    let mut p = IterationPolicy::default_for(n);
    if let Some(w) = omega {
        p.omega = w;
    }
    p.residual_tol = tol;
    p
}

/// A CNF formula over variables `1..=n`.
#[pyclass(module = "spdec_py", name = "Formula", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFormula {
    inner: CnfFormula,
}

#[pymethods]
impl PyFormula {
    /// Builds a formula from DIMACS-style clauses such as `[[1, -2], [2, 3]]`.
    #[new]
    fn new(n: usize, clauses: Vec<Vec<i64>>) -> PyResult<Self> {
        let cs = clauses.iter().map(|c| spdec::Clause::from_dimacs(c)).collect();
        CnfFormula::try_new(n, cs).map(|inner| PyFormula { inner }).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (k, n, m, seed, binomial = false))]
    fn generate(k: usize, n: usize, m: usize, seed: u64, binomial: bool) -> PyResult<Self> {
        let model = if binomial { RandomModel::binomial(k, m) } else { RandomModel::uniform(k, m) };
        CnfFormula::generate(model, n, seed).map(|inner| PyFormula { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_dimacs(text: &str) -> PyResult<Self> {
        dimacs::from_str(text).map(|inner| PyFormula { inner }).map_err(err)
    }

    fn to_dimacs(&self) -> String {
        dimacs::to_string(&self.inner)
    }

    #[getter]
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }

    #[getter]
    fn num_clauses(&self) -> usize {
        self.inner.num_clauses()
    }

    #[getter]
    fn clauses(&self) -> Vec<Vec<i64>> {
        self.inner.clauses().iter().map(|c| c.literals().iter().map(|l| l.to_dimacs()).collect()).collect()
    }

    /// Whether `assignment` (values ±1, variable `i + 1` at index `i`) satisfies every clause.
    fn evaluate(&self, assignment: Vec<i8>) -> PyResult<bool> {
        if assignment.len() != self.inner.num_vars() || assignment.iter().any(|v| v.abs() != 1) {
            return Err(PyValueError::new_err("assignment must hold one ±1 value per variable"));
        }
        Ok(self.inner.evaluate(&assignment))
    }

    /// Simplifies under the partial assignment `{var: ±1}`.
    #[pyo3(signature = (assignment, strict = false))]
    fn decimate(&self, assignment: Vec<(u32, i8)>, strict: bool) -> PyResult<Self> {
        let pa = PartialAssignment::from_pairs(self.inner.num_vars(), &assignment).map_err(err)?;
        let inner = if strict { self.inner.decimate_strict(&pa).map_err(err)? } else { self.inner.decimate(&pa).formula };
        Ok(PyFormula { inner })
    }

    #[pyo3(signature = (cap = 24))]
    fn count_solutions(&self, py: Python<'_>, cap: usize) -> PyResult<u64> {
        py.detach(|| self.inner.count_satisfying_bruteforce(cap)).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Formula(n={}, m={})", self.inner.num_vars(), self.inner.num_clauses())
    }
}

/// `(ψ₀, ψ₊, ψ₋)` of the clause-message triple.
#[pyfunction]
fn psi(x: f64, y: f64) -> PyResult<(f64, f64, f64)> {
    let t = psi_triple(x, y).map_err(err)?;
    Ok((t.get(0), t.get(1), t.get(-1)))
}

/// Marginals `(μ(−1), μ(0), μ(+1))` per variable after iterating SP or BP.
#[pyfunction]
#[pyo3(signature = (formula, engine = "sp", omega = None, tol = 1e-9))]
fn marginals_of<'py>(
    py: Python<'py>,
    formula: &PyFormula,
    engine: &str,
    omega: Option<usize>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let engine = match guide(engine)? {
        Guide::Sp => Engine::Sp,
        Guide::Bp => Engine::Bp,
        Guide::CoinFlip => return Err(PyValueError::new_err("marginals need sp or bp")),
    };
    let f = &formula.inner;
    let (est, converged, rounds) = py.detach(|| {
        let g = FactorGraph::build(f);
        let out = iterate(&g, policy(f.num_vars(), omega, tol), engine);
        (marginals(&g, &out.state, engine), out.converged, out.state.round)
    });
    let rows: Vec<[f64; 3]> = est.entries.iter().map(|e| [e.mu_minus, e.mu_zero, e.mu_plus]).collect();
    to_py(py, &serde_json::json!({ "marginals": rows, "converged": converged, "rounds": rounds }))
}

/// One guided decimation run; returns its trace.
#[pyfunction]
#[pyo3(signature = (formula, engine = "sp", order = "natural", seed = 0, omega = None, tol = 1e-9))]
fn solve<'py>(
    py: Python<'py>,
    formula: &PyFormula,
    engine: &str,
    order: &str,
    seed: u64,
    omega: Option<usize>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let f = &formula.inner;
    let mut p = DecimationPolicy::new(guide(engine)?, self::order(order)?, f.num_vars(), seed);
    p.iteration = policy(f.num_vars(), omega, tol);
    let trace = py.detach(|| run_decimation(f, &p));
    to_py(py, &trace)
}

/// Success estimate with a 95% Wilson interval. With `formula` the trials
/// share it; otherwise each trial draws a fresh formula at density `r`.
#[pyfunction]
#[pyo3(signature = (k, n, r, trials, engine = "sp", seed = 0, formula = None))]
#[allow(clippy::too_many_arguments)]
fn success_rate<'py>(
    py: Python<'py>,
    k: usize,
    n: usize,
    r: f64,
    trials: u64,
    engine: &str,
    seed: u64,
    formula: Option<&PyFormula>,
) -> PyResult<Bound<'py, PyAny>> {
    let p = DecimationPolicy::new(guide(engine)?, Order::Natural, n, seed);
    let est = py
        .detach(|| match formula {
            Some(f) => estimate_success(&f.inner, &p, trials),
            None => {
                let model = RandomModel::uniform(k, RandomModel::clauses_for_density(r, n));
                random_formula_trials(model, n, &p, trials).map(|t| success_of(&t))
            }
        })
        .map_err(err)?;
    to_py(py, &est)
}

/// SP marginals against the cover marginals found by enumeration.
#[pyfunction]
#[pyo3(signature = (formula, cap = DEFAULT_COVER_CAP))]
fn compare_covers<'py>(py: Python<'py>, formula: &PyFormula, cap: usize) -> PyResult<Bound<'py, PyAny>> {
    let f = &formula.inner;
    let cmp = py.detach(|| compare_sp_to_covers(f, IterationPolicy::default_for(f.num_vars()), cap)).map_err(err)?;
    to_py(py, &cmp)
}

/// Q0–Q5 report for the formula with variables `1..=t` already assigned.
#[pyfunction]
#[pyo3(signature = (formula, k, r, c = 0.1, t = 0, audit = "auto", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn quasirandom<'py>(
    py: Python<'py>,
    formula: &PyFormula,
    k: usize,
    r: f64,
    c: f64,
    t: usize,
    audit: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = match audit {
        "auto" => AuditMode::Auto,
        "exhaustive" => AuditMode::Exhaustive,
        "sampled" => AuditMode::Sampled,
        other => return Err(PyValueError::new_err(format!("audit must be auto, exhaustive or sampled, not {other:?}"))),
    };
    let f = &formula.inner;
    let n = f.num_vars();
    if t >= n {
        return Err(PyValueError::new_err(format!("t = {t} must be below n = {n}")));
    }
    let schedule = BiasSchedule::new(k, r, n, c).map_err(err)?;
    let budget = AuditBudget { mode, seed, ..AuditBudget::default() };
    let report = py
        .detach(|| {
            let pairs: Vec<(u32, i8)> = (1..=t as u32).map(|x| (x, 1)).collect();
            let pa = PartialAssignment::from_pairs(n, &pairs)?;
            let g = FactorGraph::build(&f.decimate(&pa).formula);
            let active: Vec<u32> = (t as u32 + 1..=n as u32).collect();
            quasirandom_report(&g, &schedule, t, &active, &budget, &Property::ALL)
        })
        .map_err(err)?;
    to_py(py, &report)
}

/// `2^n (1 − 2^{−k})^m`.
#[pyfunction]
fn expected_solutions(k: usize, n: usize, m: usize) -> f64 {
    spdec::expected_sat_count(k, n, m).value
}

#[pymodule]
fn spdec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFormula>()?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(marginals_of, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(success_rate, m)?)?;
    m.add_function(wrap_pyfunction!(compare_covers, m)?)?;
    m.add_function(wrap_pyfunction!(quasirandom, m)?)?;
    m.add_function(wrap_pyfunction!(expected_solutions, m)?)?;
    Ok(())
}
