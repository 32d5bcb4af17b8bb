//! Python bindings: partitions, model spaces, noise certificates, the
//! numerical bounds, model selection and the experiment runner.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::{Map, Value};

use penselect::bounds::{self, ChainingParams};
use penselect::harness::{self, ExperimentConfig};
use penselect::linspace;
use penselect::models::{self, ModelCollection};
use penselect::noise::{NoiseDoc, DEFAULT_GRID_POINTS};
use penselect::select::{self, PenaltyDoc, PenaltySpec};

create_exception!(pypenselect, PenselectError, PyException);

fn err(e: penselect::Error) -> PyErr {
    PenselectError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn py_to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PenselectError::new_err(e.to_string()))
}

#[pyclass(name = "Partition", frozen)]
struct PyPartition(models::Partition);

#[pymethods]
impl PyPartition {
    /// Partition of {1..n} from 1-based inclusive (lo, hi) blocks.
    #[new]
    fn new(n: usize, blocks: Vec<(usize, usize)>) -> PyResult<Self> {
        models::Partition::new(n, &blocks).map(Self).map_err(err)
    }

    #[staticmethod]
    fn trivial(n: usize) -> Self {
        Self(models::Partition::trivial(n))
    }

    #[staticmethod]
    fn regular(n: usize, k: usize) -> PyResult<Self> {
        models::Partition::regular(n, k).map(Self).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        self.0.blocks().collect()
    }

    fn min_block_size(&self) -> usize {
        self.0.min_block_size()
    }

    fn refine(&self, other: &PyPartition) -> PyResult<Self> {
        self.0.refine(&other.0).map(Self).map_err(err)
    }

    fn refines(&self, coarser: &PyPartition) -> bool {
        self.0.refines(&coarser.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &PyPartition) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Partition(n={}, blocks={:?})", self.0.n(), self.blocks())
    }
}

#[pyclass(name = "Subspace", frozen)]
struct PySubspace(linspace::Subspace);

#[pymethods]
impl PySubspace {
    /// Span of the given vectors (rank-deficient inputs are reduced).
    #[staticmethod]
    fn span(vectors: Vec<Vec<f64>>) -> PyResult<Self> {
        linspace::Subspace::span(&vectors).map(Self).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn lambda2(&self) -> f64 {
        self.0.lambda2()
    }

    #[getter]
    fn lambda_inf(&self) -> f64 {
        self.0.lambda_inf()
    }

    /// Orthonormal basis as a list of columns.
    fn basis(&self) -> Vec<Vec<f64>> {
        self.0.basis().columns().to_vec()
    }

    fn gram_deviation(&self) -> f64 {
        self.0.basis().gram_deviation()
    }

    fn project(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.project(&y).map_err(err)
    }

    fn residual_sq(&self, y: Vec<f64>) -> PyResult<f64> {
        self.0.residual_sq(&y).map_err(err)
    }

    fn projector_distance(&self, other: &PySubspace) -> PyResult<f64> {
        linspace::projector_distance(&self.0, &other.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Subspace(n={}, dim={})", self.0.n(), self.0.dim())
    }
}

#[pyfunction]
fn histogram_space(m: &PyPartition) -> PyResult<PySubspace> {
    models::histogram_space(&m.0).map(PySubspace).map_err(err)
}

#[pyfunction]
fn piecewise_poly_space(m: &PyPartition, d: usize) -> PyResult<PySubspace> {
    models::piecewise_poly_space(&m.0, d).map(PySubspace).map_err(err)
}

#[pyfunction]
fn trig_space(subset: Vec<usize>, n: usize, dbar: usize) -> PyResult<PySubspace> {
    models::trig_space(&subset, n, dbar).map(PySubspace).map_err(err)
}

#[pyfunction]
fn dyadic_partitions(n: usize, min_block: usize) -> PyResult<Vec<PyPartition>> {
    models::dyadic_partitions(n, min_block)
        .map(|v| v.into_iter().map(PyPartition).collect())
        .map_err(err)
}

#[pyclass(name = "NoiseSpec", frozen)]
struct PyNoiseSpec(penselect::noise::NoiseSpec);

#[pymethods]
impl PyNoiseSpec {
    /// `NoiseSpec("centered_poisson", {"mu": 2.0})`; `sigma`/`c` default to
    /// the family certificate and are verified when given.
    #[new]
    #[pyo3(signature = (family, params=None, sigma=None, c=None))]
    fn new(family: String, params: Option<&Bound<'_, PyDict>>, sigma: Option<f64>, c: Option<f64>) -> PyResult<Self> {
        let mut map = Map::new();
        if let Some(params) = params {
            for (k, v) in params.iter() {
                map.insert(k.extract::<String>()?, Value::from(v.extract::<f64>()?));
            }
        }
        let doc = NoiseDoc { family, params: map, sigma, c };
        penselect::noise::NoiseSpec::from_doc(&doc).map(Self).map_err(err)
    }

    #[staticmethod]
    fn gaussian(sd: f64) -> PyResult<Self> {
        penselect::noise::NoiseSpec::gaussian(sd).map(Self).map_err(err)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.0.family().name()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma()
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.0.variance()
    }

    fn log_laplace(&self, lam: f64) -> PyResult<f64> {
        self.0.log_laplace(lam).map_err(err)
    }

    /// `{"ok", "worst_margin", "worst_lambda"}` over a symmetric λ grid.
    #[pyo3(signature = (grid_points=DEFAULT_GRID_POINTS))]
    fn verify_subgamma<'py>(&self, py: Python<'py>, grid_points: usize) -> PyResult<Bound<'py, PyDict>> {
        let r = self.0.verify_subgamma(grid_points);
        let d = PyDict::new(py);
        d.set_item("ok", r.ok)?;
        d.set_item("worst_margin", r.worst_margin)?;
        d.set_item("worst_lambda", r.worst_lambda)?;
        Ok(d)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.0.sample(n, seed)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("noise serializes")
    }

    fn __repr__(&self) -> String {
        format!("NoiseSpec({})", self.to_json())
    }
}

#[pyclass(name = "ModelCollection", frozen)]
struct PyModelCollection(ModelCollection);

#[pymethods]
impl PyModelCollection {
    /// From a collection document: explicit (`"models"`) or generator form.
    #[staticmethod]
    fn from_doc(py: Python<'_>, n: usize, doc: &Bound<'_, PyAny>) -> PyResult<Self> {
        let value = py_to_json(py, doc)?;
        harness::build_collection(n, &value).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (n, min_block, d=None))]
    fn dyadic(n: usize, min_block: usize, d: Option<usize>) -> PyResult<Self> {
        let family = match d {
            Some(d) => models::Family::PiecewisePoly { d },
            None => models::Family::Histogram,
        };
        ModelCollection::dyadic(n, family, min_block).map(Self).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.0.family().name()
    }

    fn ids(&self) -> Vec<String> {
        self.0.models().iter().map(|m| m.id.clone()).collect()
    }

    fn dims(&self) -> Vec<usize> {
        (0..self.0.len()).map(|i| self.0.dim(i)).collect()
    }

    /// `{"sigma", "lambda_bar_inf", "lambda_bar_inf_exact", "lambda2_sn"}`.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.0.constants();
        let d = PyDict::new(py);
        d.set_item("sigma", c.sigma)?;
        d.set_item("lambda_bar_inf", c.lambda_bar_inf)?;
        d.set_item("lambda_bar_inf_exact", c.lambda_bar_inf_exact)?;
        d.set_item("lambda2_sn", c.lambda2_sn)?;
        Ok(d)
    }

    fn residuals(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.residuals(&y).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn penalty_spec(py: Python<'_>, penalty: Option<&Bound<'_, PyAny>>) -> PyResult<PenaltySpec> {
    match penalty {
        None => Ok(PenaltySpec::general(2.0)),
        Some(obj) => {
            let doc: PenaltyDoc = serde_json::from_value(py_to_json(py, obj)?)
                .map_err(|e| PenselectError::new_err(format!("penalty: {e}")))?;
            PenaltySpec::from_doc(&doc).map_err(err)
        }
    }
}

/// Selects a model for `y`; returns the selection as a dict. `penalty` is a
/// penalty document such as `{"mode": "general", "K": 2.0}` (the default).
#[pyfunction]
#[pyo3(signature = (y, collection, noise, penalty=None))]
fn select_model(
    py: Python<'_>,
    y: Vec<f64>,
    collection: &PyModelCollection,
    noise: &PyNoiseSpec,
    penalty: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let spec = penalty_spec(py, penalty)?;
    let r = py
        .detach(|| select::select_model(&y, &collection.0, &spec, &noise.0))
        .map_err(err)?;
    json_to_py(py, &serde_json::to_string(&r).expect("selection serializes"))
}

/// Penalty values `pen(m)` for every model, in collection order.
#[pyfunction]
#[pyo3(signature = (collection, noise, penalty=None))]
fn penalties(
    py: Python<'_>,
    collection: &PyModelCollection,
    noise: &PyNoiseSpec,
    penalty: Option<&Bound<'_, PyAny>>,
) -> PyResult<Vec<f64>> {
    let spec = penalty_spec(py, penalty)?;
    let p = select::Penalty::calibrate(&spec, &noise.0, &collection.0).map_err(err)?;
    Ok(p.values(&collection.0))
}

/// Runs one experiment from its JSON configuration and returns the report.
#[pyfunction]
#[pyo3(signature = (config, threads=None))]
fn run_experiment(py: Python<'_>, config: &str, threads: Option<usize>) -> PyResult<Py<PyAny>> {
    let cfg = ExperimentConfig::from_json(config).map_err(err)?;
    let report = py
        .detach(|| harness::run_experiment_with_threads(&cfg, threads))
        .map_err(err)?;
    json_to_py(py, &report.to_json())
}

/// JSON configurations of the built-in default suite.
#[pyfunction]
fn default_suite() -> Vec<String> {
    harness::default_suite().iter().map(|c| c.to_json()).collect()
}

#[pyfunction]
fn oracle_constant(k: f64) -> PyResult<f64> {
    bounds::oracle_constant(k).map_err(err)
}

/// Chaining series `H(v, b, D)`.
#[pyfunction]
fn chaining_h(v: f64, b: f64, dim: usize) -> f64 {
    bounds::chaining_h(&ChainingParams::new(v, b, dim))
}

#[pyfunction]
fn bernstein_threshold(v2: f64, c: f64, u: f64) -> f64 {
    bounds::bernstein_threshold(v2, c, u)
}

#[pyfunction]
fn chi2_threshold(sigma: f64, c: f64, u: f64, dim: f64, x: f64) -> f64 {
    bounds::chi2_threshold(sigma, c, u, dim, x)
}

#[pyfunction]
fn covering_bound(dim: usize, delta: f64) -> PyResult<f64> {
    bounds::covering_bound(dim, delta).map_err(err)
}

#[pyfunction]
fn truncated_moment_bound(a: f64, alpha: f64, beta: f64, x0: f64, p: u32) -> PyResult<f64> {
    bounds::truncated_moment_bound(a, alpha, beta, x0, p).map_err(err)
}

#[pymodule]
fn pypenselect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KAPPA", penselect::KAPPA)?;
    m.add("PenselectError", m.py().get_type::<PenselectError>())?;
    m.add_class::<PyPartition>()?;
    m.add_class::<PySubspace>()?;
    m.add_class::<PyNoiseSpec>()?;
    m.add_class::<PyModelCollection>()?;
    m.add_function(wrap_pyfunction!(histogram_space, m)?)?;
    m.add_function(wrap_pyfunction!(piecewise_poly_space, m)?)?;
    m.add_function(wrap_pyfunction!(trig_space, m)?)?;
    m.add_function(wrap_pyfunction!(dyadic_partitions, m)?)?;
    m.add_function(wrap_pyfunction!(select_model, m)?)?;
    m.add_function(wrap_pyfunction!(penalties, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(default_suite, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_constant, m)?)?;
    m.add_function(wrap_pyfunction!(chaining_h, m)?)?;
    m.add_function(wrap_pyfunction!(bernstein_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(covering_bound, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_moment_bound, m)?)?;
    Ok(())
}
