//! Python bindings: skew arithmetic, synthetic worlds, page skew, the
//! spend-model fit, report parsing and the pipeline runner.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use adskew::adlib::{parse_targeting_report as parse_report, Micros};
use adskew::analytics::{fit_scaled_sigmoid as fit, spend_skew as spend};
use adskew::audience::{build_uniform_audience, read_voter_records, LoadOptions};
use adskew::demographics::{Pair, Selector};
use adskew::domain::DomainNormalizer;
use adskew::pages::{compute_page_skew, rank_domain_prevalence, read_domain_bias, read_interest_pages};
use adskew::pipeline::{self, RunConfig};
use adskew::reach::{batch_estimate, BatchOptions, NoiseModel, SyntheticBackend};
use adskew::skew::{skew_table, SkewThresholds};
use adskew::synthworld::{generate_population, true_skew, write_voter_records, WorldConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn parse_pair(pair: &str) -> PyResult<Pair> {
    pair.parse().map_err(value_err)
}

/// Skew of an interest between audiences A and B from the four reach counts.
/// `None` when neither audience holds the interest.
#[pyfunction]
fn compute_skew(n_a_i: u64, n_a: u64, n_b_i: u64, n_b: u64) -> PyResult<Option<f64>> {
    adskew::skew::compute_skew(n_a_i, n_a, n_b_i, n_b).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (value, democratic_below = -0.073, republican_at_or_above = 0.063))]
fn classify_leaning(value: f64, democratic_below: f64, republican_at_or_above: f64) -> PyResult<&'static str> {
    let t = SkewThresholds::new(democratic_below, republican_at_or_above).map_err(value_err)?;
    Ok(t.classify_value(value).as_str())
}

/// Spend skew from Republican and Democratic spend in currency units.
#[pyfunction]
fn spend_skew(republican: f64, democratic: f64) -> PyResult<Option<f64>> {
    let r = Micros::from_units(republican).ok_or_else(|| value_err("republican spend out of range"))?;
    let d = Micros::from_units(democratic).ok_or_else(|| value_err("democratic spend out of range"))?;
    Ok(spend(r, d))
}

#[pyclass(module = "adskew_py")]
struct World {
    config: WorldConfig,
}

#[pymethods]
impl World {
    #[staticmethod]
    #[pyo3(signature = (seed = adskew::demo::DEMO_SEED))]
    fn demo(seed: u64) -> Self {
        World { config: adskew::demo::demo_world(seed) }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let config: WorldConfig = toml::from_str(text).map_err(value_err)?;
        config.validate().map_err(value_err)?;
        Ok(World { config })
    }

    #[getter]
    fn population_size(&self) -> usize {
        self.config.population_size
    }

    #[getter]
    fn interest_count(&self) -> usize {
        self.config.interests.len()
    }

    fn generate(&self) -> PyResult<Population> {
        let pop = generate_population(&self.config).map_err(value_err)?;
        Ok(Population { inner: Arc::new(pop) })
    }
}

#[pyclass(module = "adskew_py")]
struct Population {
    inner: Arc<adskew::synthworld::Population>,
}

#[pymethods]
impl Population {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn interest_ids(&self) -> Vec<String> {
        self.inner.interest_ids.clone()
    }

    /// Exact skew over every active member, with the counts behind it.
    fn true_skew<'py>(&self, py: Python<'py>, interest: &str, pair: &str) -> PyResult<Bound<'py, PyDict>> {
        let t = true_skew(&self.inner, interest, parse_pair(pair)?).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("value", t.value)?;
        d.set_item("a_with", t.a_with)?;
        d.set_item("a_total", t.a_total)?;
        d.set_item("b_with", t.b_with)?;
        d.set_item("b_total", t.b_total)?;
        Ok(d)
    }

    /// Samples the five audiences, estimates reach and returns one row per
    /// interest and pair. `figures = None` means exact counts.
    #[pyo3(signature = (audience_size, seed = 0, figures = Some(2), min_count = 50))]
    fn measure_skews<'py>(
        &self,
        py: Python<'py>,
        audience_size: usize,
        seed: u64,
        figures: Option<u32>,
        min_count: u64,
    ) -> PyResult<Bound<'py, PyList>> {
        let mut buf = Vec::new();
        write_voter_records(&self.inner, &mut buf).map_err(value_err)?;
        let (records, _) = read_voter_records(buf.as_slice(), &LoadOptions::default()).map_err(value_err)?;
        let audiences = Selector::STANDARD
            .iter()
            .enumerate()
            .map(|(i, s)| build_uniform_audience(&records, *s, audience_size, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let noise = match figures {
            Some(figures) => NoiseModel::SignificantFigures { figures },
            None => NoiseModel::Exact,
        };
        let backend = SyntheticBackend::new(self.inner.clone(), noise);
        let matrix = batch_estimate(&backend, &audiences, &self.inner.interest_ids, &BatchOptions::default())
            .map_err(value_err)?;
        let table = skew_table(&matrix, &Pair::ALL, &HashMap::new(), min_count).map_err(value_err)?;
        let out = PyList::empty(py);
        for row in &table.rows {
            let d = PyDict::new(py);
            d.set_item("interest_id", &row.interest_id)?;
            d.set_item("pair", row.score.pair.as_str())?;
            d.set_item("value", row.score.value)?;
            d.set_item("reliable", row.score.reliable)?;
            d.set_item("rendered", row.score.render())?;
            out.append(d)?;
        }
        Ok(out)
    }
}

/// Page skew per interest from JSON-lines interest pages and a `domain,score` table.
#[pyfunction]
#[pyo3(signature = (pages_jsonl, bias_csv, drop_top_k = 1))]
fn page_skews(pages_jsonl: &str, bias_csv: &str, drop_top_k: usize) -> PyResult<HashMap<String, Option<f64>>> {
    let n = DomainNormalizer::bundled();
    let (records, _) = read_interest_pages(pages_jsonl.as_bytes(), n).map_err(value_err)?;
    let (table, _) = read_domain_bias(bias_csv.as_bytes(), n).map_err(value_err)?;
    let prevalence = rank_domain_prevalence(&records).map_err(value_err)?;
    Ok(records
        .iter()
        .map(|r| (r.interest_id.clone(), compute_page_skew(r, &table, drop_top_k, &prevalence).value))
        .collect())
}

/// Least-squares fit of `y = 2 sigmoid(a + b x) - 1`.
#[pyfunction]
fn fit_scaled_sigmoid<'py>(py: Python<'py>, xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let f = fit(&xs, &ys).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("intercept", f.intercept)?;
    d.set_item("coefficient", f.coefficient)?;
    d.set_item("r_squared", f.r_squared)?;
    d.set_item("n_points", f.n_points)?;
    Ok(d)
}

/// Validates an ad-library targeting report and returns it as a dict.
#[pyfunction]
#[pyo3(signature = (payload, observed_on = None))]
fn parse_targeting_report<'py>(py: Python<'py>, payload: &[u8], observed_on: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let date = observed_on.map(|d| d.parse()).transpose().map_err(value_err)?;
    let snapshot = parse_report(payload, date).map_err(value_err)?;
    json_to_py(py, &snapshot.to_payload())
}

/// Runs one pipeline stage (or `all`). Failures raise RuntimeError with the
/// CLI exit code as the second argument.
#[pyfunction]
#[pyo3(signature = (config, stage = "all", out = None, seed = None))]
fn run_pipeline(config: PathBuf, stage: &str, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<()> {
    let fail = |e: pipeline::PipelineError| PyRuntimeError::new_err((e.message.clone(), e.exit_code()));
    let mut cfg = RunConfig::load(&config).map_err(fail)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.validate().map_err(fail)?;
    match stage {
        "world" => pipeline::run_world(&cfg).map(|_| ()),
        "audiences" => pipeline::run_audiences(&cfg).map(|_| ()),
        "estimate" => pipeline::run_estimate(&cfg).map(|_| ()),
        "skew" => pipeline::run_skew(&cfg).map(|_| ()),
        "pageskew" => pipeline::run_pageskew(&cfg),
        "ingest" => pipeline::run_ingest(&cfg).map(|_| ()),
        "analyze" => pipeline::run_analyze(&cfg).map(|_| ()),
        "report" => pipeline::run_report(&cfg).map(|_| ()),
        "all" => pipeline::run_all(&cfg),
        other => return Err(value_err(format!("unknown stage `{other}`"))),
    }
    .map_err(fail)
}

#[pyfunction]
#[pyo3(signature = (dir, seed = adskew::demo::DEMO_SEED))]
fn write_demo_fixtures(dir: PathBuf, seed: u64) -> PyResult<()> {
    adskew::demo::write_demo_fixtures(&dir, seed).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn adskew_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<World>()?;
    m.add_class::<Population>()?;
    m.add_function(wrap_pyfunction!(compute_skew, m)?)?;
    m.add_function(wrap_pyfunction!(classify_leaning, m)?)?;
    m.add_function(wrap_pyfunction!(spend_skew, m)?)?;
    m.add_function(wrap_pyfunction!(page_skews, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scaled_sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(parse_targeting_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_demo_fixtures, m)?)?;
    Ok(())
}
