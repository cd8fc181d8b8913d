//! Python bindings for `phtn-core`.
//!
//! Plans are passed either as a list of action names or as one
//! space-separated string.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use phtn_core::em::EmConfig;
use phtn_core::eval::{self, OracleSpec};
use phtn_core::grammar::{self as g, Body, Plan, WeightedPlan, DEFAULT_MAX_DEPTH};
use phtn_core::io;
use phtn_core::parser::Parser;
use phtn_core::rescale::{self, Cluster, EnsembleConfig, ObservationRecord, Preference};
use phtn_core::structure::ShConfig;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_plan(obj: &Bound<'_, PyAny>) -> PyResult<Plan> {
    if let Ok(text) = obj.extract::<String>() {
        return Plan::parse(&text).map_err(err);
    }
    let actions: Vec<String> = obj.extract()?;
    Plan::new(actions).map_err(err)
}

fn from_plan(plan: &Plan) -> Vec<String> {
    plan.actions().to_vec()
}

fn sh_config(seed: u64, min_rec_len_factor: f64, min_rec_freq: f64) -> ShConfig {
    ShConfig { min_rec_len_factor, min_rec_freq, seed, ..ShConfig::default() }
}

/// A pHTN grammar in Chomsky normal form.
#[pyclass(name = "Grammar", module = "phtn", from_py_object)]
#[derive(Clone)]
struct PyGrammar {
    inner: g::Grammar,
}

#[pymethods]
impl PyGrammar {
    /// Parses grammar text.
    #[staticmethod]
    fn loads(text: &str) -> PyResult<Self> {
        Ok(PyGrammar { inner: io::read_grammar(text, "<string>").map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyGrammar { inner: io::read_grammar_file(path.as_ref()).map_err(err)? })
    }

    fn dumps(&self) -> String {
        io::write_grammar(&self.inner)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_file(path.as_ref(), &io::write_grammar(&self.inner)).map_err(err)
    }

    #[getter]
    fn tasks(&self) -> Vec<String> {
        self.inner.tasks.clone()
    }

    #[getter]
    fn primitives(&self) -> Vec<String> {
        self.inner.primitives.clone()
    }

    /// `(head, body, probability)` triples; `body` is a list of one action
    /// or two task names.
    #[getter]
    fn schemas(&self) -> Vec<(String, Vec<String>, f64)> {
        self.inner
            .schemas
            .iter()
            .map(|s| {
                let body = match &s.body {
                    Body::Primitive(a) => vec![a.clone()],
                    Body::Pair(x, y) => vec![x.clone(), y.clone()],
                };
                (s.head.clone(), body, s.prob)
            })
            .collect()
    }

    /// Human-readable invariant violations; empty for a valid grammar.
    fn validate(&self) -> Vec<String> {
        g::validate(&self.inner).iter().map(ToString::to_string).collect()
    }

    /// Log-probability of the Viterbi parse, or `None`.
    fn log_likelihood(&self, plan: &Bound<'_, PyAny>) -> PyResult<Option<f64>> {
        Ok(Parser::new(&self.inner).log_likelihood(&to_plan(plan)?))
    }

    /// `(tree_text, probability)` of the Viterbi parse, or `None`.
    fn parse(&self, plan: &Bound<'_, PyAny>) -> PyResult<Option<(String, f64)>> {
        Ok(Parser::new(&self.inner).parse(&to_plan(plan)?).map(|t| (t.to_text(), t.probability())))
    }

    /// `count` sampled plans; plan `i` uses a stream derived from `seed`.
    fn sample(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<String>>> {
        let plans = g::sample_plans(&self.inner, count, seed, DEFAULT_MAX_DEPTH).map_err(err)?;
        Ok(plans.iter().map(from_plan).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.schemas.len()
    }

    fn __eq__(&self, other: &PyGrammar) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Grammar(tasks={}, schemas={})", self.inner.tasks.len(), self.inner.schemas.len())
    }
}

/// One grammar per merged cluster; answers pairwise preference queries by
/// majority vote.
#[pyclass(name = "Ensemble", module = "phtn")]
struct PyEnsemble {
    inner: rescale::PreferenceEnsemble,
}

#[pymethods]
impl PyEnsemble {
    /// Learns from `(chosen, feasible)` records.
    #[staticmethod]
    #[pyo3(signature = (records, seed, epsilon = rescale::DEFAULT_EPSILON))]
    fn learn(records: Vec<(Bound<'_, PyAny>, Vec<Bound<'_, PyAny>>)>, seed: u64, epsilon: f64) -> PyResult<Self> {
        let records = records
            .iter()
            .map(|(c, f)| {
                let feasible = f.iter().map(to_plan).collect::<PyResult<Vec<_>>>()?;
                ObservationRecord::new(to_plan(c)?, feasible).map_err(err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let config = EnsembleConfig { epsilon, seed, ..EnsembleConfig::default() };
        let inner = rescale::PreferenceEnsemble::learn(&records, &config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(PyEnsemble { inner })
    }

    #[staticmethod]
    fn from_grammars(models: Vec<PyGrammar>) -> Self {
        PyEnsemble { inner: rescale::PreferenceEnsemble { models: models.into_iter().map(|m| m.inner).collect() } }
    }

    #[getter]
    fn models(&self) -> Vec<PyGrammar> {
        self.inner.models.iter().map(|m| PyGrammar { inner: m.clone() }).collect()
    }

    /// `"p"`, `"q"` or `"unknown"`.
    fn prefer(&self, p: &Bound<'_, PyAny>, q: &Bound<'_, PyAny>) -> PyResult<&'static str> {
        Ok(match self.inner.prefer(&to_plan(p)?, &to_plan(q)?) {
            Preference::First => "p",
            Preference::Second => "q",
            Preference::Unknown => "unknown",
        })
    }

    fn __len__(&self) -> usize {
        self.inner.models.len()
    }
}

/// Structure hypothesis followed by EM. Returns the grammar and the
/// log-likelihood after each EM iteration (the first entry is the start).
#[pyfunction]
#[pyo3(signature = (plans, seed, weights = None, em_tol = 1e-6, em_max_iters = 200, em_prune_eps = 1e-6, em_restarts = 1, min_rec_len_factor = 0.25, min_rec_freq = 0.1))]
#[allow(clippy::too_many_arguments)]
fn learn(
    plans: Vec<Bound<'_, PyAny>>,
    seed: u64,
    weights: Option<Vec<f64>>,
    em_tol: f64,
    em_max_iters: usize,
    em_prune_eps: f64,
    em_restarts: usize,
    min_rec_len_factor: f64,
    min_rec_freq: f64,
) -> PyResult<(PyGrammar, Vec<f64>)> {
    let weights = weights.unwrap_or_else(|| vec![1.0; plans.len()]);
    if weights.len() != plans.len() {
        return Err(PyValueError::new_err("weights and plans differ in length"));
    }
    let corpus = plans
        .iter()
        .zip(weights)
        .map(|(p, w)| WeightedPlan::new(to_plan(p)?, w).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let em = EmConfig { tol: em_tol, max_iters: em_max_iters, prune_eps: em_prune_eps, restarts: em_restarts, seed: 0 };
    let (grammar, report) = rescale::learn_weighted(&corpus, &sh_config(seed, min_rec_len_factor, min_rec_freq), &em, seed)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((PyGrammar { inner: grammar }, report.log_likelihoods))
}

/// A random oracle grammar with `n` tasks.
#[pyfunction]
#[pyo3(signature = (n, seed, recursive = false, recursive_fraction = 0.1))]
fn gen_oracle(n: usize, seed: u64, recursive: bool, recursive_fraction: f64) -> PyResult<PyGrammar> {
    let mut spec = OracleSpec::new(n, seed);
    if recursive {
        spec = spec.recursive(recursive_fraction);
    }
    Ok(PyGrammar { inner: eval::gen_oracle(&spec).map_err(err)? })
}

/// `(kl, overlap)` from `samples` draws of each grammar.
#[pyfunction]
fn estimate_kl(oracle: &PyGrammar, learned: &PyGrammar, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let est = eval::estimate_kl(&oracle.inner, &learned.inner, samples, seed).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((est.kl, est.overlap))
}

/// Merges weighted plan sets (`{plan_text: weight}`) until they are disjoint.
#[pyfunction]
fn merge_clusters(clusters: Vec<BTreeMap<String, f64>>) -> PyResult<Vec<BTreeMap<String, f64>>> {
    let clusters = clusters
        .into_iter()
        .map(|m| {
            let pairs = m.into_iter().map(|(p, w)| Plan::parse(&p).map(|p| (p, w)).map_err(err)).collect::<PyResult<Vec<_>>>()?;
            Ok(Cluster::from_pairs(pairs))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(rescale::merge_clusters(clusters)
        .into_iter()
        .map(|c| c.weights.into_iter().map(|(p, w)| (p.to_string(), w)).collect())
        .collect())
}

/// Recovers plan probabilities from pairwise odds `{(a, b): P(a) / P(b)}`.
#[pyfunction]
fn reconstruct_prior(odds: BTreeMap<(String, String), f64>) -> PyResult<BTreeMap<String, f64>> {
    let odds = odds
        .into_iter()
        .map(|((a, b), o)| Ok(((Plan::parse(&a).map_err(err)?, Plan::parse(&b).map_err(err)?), o)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let prior = rescale::reconstruct_prior(&odds).map_err(err)?;
    Ok(prior.into_iter().map(|(p, v)| (p.to_string(), v)).collect())
}

#[pymodule]
fn phtn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrammar>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(gen_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_kl, m)?)?;
    m.add_function(wrap_pyfunction!(merge_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_prior, m)?)?;
    m.add("FORMAT_VERSION", io::FORMAT_VERSION)?;
    Ok(())
}
