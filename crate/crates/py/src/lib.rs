//! Python module `slowwalk`: environments, walks, quenched laws and the
//! experiment runner.

use std::sync::Arc;

use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use slowwalk::experiment::{fit_exponent as fit_rows, read_csv, run_experiment as run_cfg, ExperimentConfig};
use slowwalk::observables::{heavy_range, heavy_split, martingale_streaming, martingales, threshold as k_of, PathStatsTable};
use slowwalk::quenched::{self, EdgeLaw};
use slowwalk::rw1d::{estimate_constants as constants, ConstantsSpec, Inequality, Walk1DLaw};
use slowwalk::seed::stream;
use slowwalk::{Error, NodeId, OffspringLaw, StepCapPolicy};

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A rooted tree with potentials. Random environments grow lazily as the
/// walk explores them.
#[pyclass(name = "Environment", module = "slowwalk")]
struct PyEnvironment {
    inner: slowwalk::Environment,
}

impl PyEnvironment {
    fn node(&self, id: u32) -> PyResult<NodeId> {
        let x = NodeId(id);
        if self.inner.contains(x) {
            Ok(x)
        } else {
            Err(PyIndexError::new_err(format!("no node {id}")))
        }
    }
}

#[pymethods]
impl PyEnvironment {
    /// Random environment from a binary Gaussian law; the critical law
    /// `N(2 ln 2, 2 ln 2)` when `mean` and `variance` are omitted.
    #[new]
    #[pyo3(signature = (seed=0, mean=None, variance=None))]
    fn new(seed: u64, mean: Option<f64>, variance: Option<f64>) -> PyResult<Self> {
        let law = match (mean, variance) {
            (None, None) => OffspringLaw::canonical(),
            (Some(m), Some(v)) => OffspringLaw::gaussian_binary(m, v).map_err(err)?,
            _ => return Err(PyValueError::new_err("give both mean and variance or neither")),
        };
        Ok(Self { inner: slowwalk::Environment::new(Arc::new(law), seed) })
    }

    /// Fixed path `rho = 0, 1, ..` with the given potentials.
    #[staticmethod]
    fn chain(potentials: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: slowwalk::Environment::chain(&potentials).map_err(err)? })
    }

    /// Fixed tree from `(parent, potential)` pairs in breadth-first order.
    #[staticmethod]
    fn from_parents(nodes: Vec<(Option<usize>, f64)>) -> PyResult<Self> {
        Ok(Self { inner: slowwalk::Environment::from_parents(&nodes).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Environment(nodes={}, seed={})", self.inner.len(), self.inner.seed())
    }

    fn potential(&self, id: u32) -> PyResult<f64> {
        Ok(self.inner.v(self.node(id)?))
    }

    fn depth(&self, id: u32) -> PyResult<u32> {
        Ok(self.inner.depth(self.node(id)?))
    }

    fn children(&mut self, id: u32) -> PyResult<Vec<u32>> {
        let x = self.node(id)?;
        self.inner.ensure_children(x).map_err(err)?;
        Ok(self.inner.children(x).iter().map(|c| c.0).collect())
    }

    /// Generation sizes after realizing every vertex up to `depth`.
    fn realize_to_depth(&mut self, depth: u32) -> PyResult<Vec<usize>> {
        Ok(self.inner.realize_to_depth(depth).map_err(err)?.sizes)
    }

    /// `(a, b, H)` of the edge into `id`.
    fn edge_law(&self, id: u32) -> PyResult<(f64, f64, f64)> {
        let x = self.node(id)?;
        let table = PathStatsTable::build(&self.inner);
        let law = quenched::edge_law(table.get(x));
        Ok((law.a, law.b, law.h))
    }

    /// Hitting probabilities from the linear solver, keyed by node id.
    fn absorption(&self, targets: Vec<u32>) -> PyResult<Vec<(u32, f64)>> {
        let ids: Vec<NodeId> = targets.into_iter().map(NodeId).collect();
        let out = quenched::absorption_solve(&self.inner, &ids).map_err(err)?;
        Ok(out.into_iter().map(|(k, v)| (k.0, v)).collect())
    }

    /// `(W_m, D_m)` for `m = 0..=depth`.
    fn martingales(&mut self, depth: u32) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = martingales(&mut self.inner, depth).map_err(err)?;
        Ok((s.w, s.d))
    }

    /// `(W_M, D_M, population)` computed without storing generation `M`.
    fn martingale_at(&self, horizon: u32) -> PyResult<(f64, f64, u64)> {
        let p = martingale_streaming(&self.inner, horizon).map_err(err)?;
        Ok((p.w, p.d, p.population))
    }

    /// Runs `n` excursions from the root.
    #[pyo3(signature = (n, seed=0))]
    fn walk(&mut self, n: u32, seed: u64) -> PyResult<PyWalk> {
        let w = slowwalk::run_n_excursions(&mut self.inner, n, &mut stream(seed, &[]), &StepCapPolicy::default())
            .map_err(err)?;
        Ok(PyWalk { inner: w })
    }
}

/// Edge local times and visit counts of a finished walk.
#[pyclass(name = "Walk", module = "slowwalk")]
struct PyWalk {
    inner: slowwalk::WalkRecord,
}

#[pymethods]
impl PyWalk {
    #[getter]
    fn excursions(&self) -> u32 {
        self.inner.excursions
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.total_steps
    }

    fn local_time(&self, id: u32) -> u64 {
        self.inner.local_time_of(NodeId(id))
    }

    fn visits(&self, id: u32) -> u32 {
        self.inner.visits_of(NodeId(id))
    }

    fn range(&self) -> usize {
        self.inner.range()
    }

    fn heavy_range(&self, k: u64) -> usize {
        heavy_range(&self.inner, k)
    }

    /// `(total, visited by one excursion, visited by several)`.
    fn heavy_split(&self, k: u64) -> (usize, usize, usize) {
        let s = heavy_split(&self.inner, k);
        (s.total, s.single, s.multi)
    }
}

/// `ceil(n^theta)`.
#[pyfunction]
fn threshold(n: u64, theta: f64) -> u64 {
    k_of(n, theta)
}

/// Probability that one of `n` excursions crosses the edge at least `k`
/// times and no other excursion reaches it.
#[pyfunction]
fn one_excursion_heavy_prob(n: u64, k: u64, a: f64, b: f64) -> PyResult<f64> {
    let law = EdgeLaw::new(a, b).map_err(err)?;
    Ok(quenched::one_excursion_heavy_prob(n, k, &law))
}

/// Law of a sum of `n` zero-inflated geometric variables as
/// `(probabilities, mass beyond the table)`.
#[pyfunction]
#[pyo3(signature = (n, a, b, cap=None))]
fn geo_sum_distribution(n: u64, a: f64, b: f64, cap: Option<usize>) -> PyResult<(Vec<f64>, f64)> {
    let d = quenched::geo_sum_distribution(n, a, b, cap).map_err(err)?;
    Ok((d.probs, d.tail))
}

/// Estimates `c_R`, `c_+` and checks their product for a Gaussian
/// (`sigma`) or uniform increment law.
#[pyfunction]
#[pyo3(signature = (law="gaussian", sigma=1.0, n=10_000, replicas=200_000, seed=1))]
fn estimate_constants<'py>(
    py: Python<'py>,
    law: &str,
    sigma: f64,
    n: usize,
    replicas: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let walk = match law {
        "gaussian" => Walk1DLaw::Gaussian { mean: 0.0, sigma },
        "uniform" => Walk1DLaw::uniform_with_sigma(sigma),
        other => return Err(PyValueError::new_err(format!("unknown increment law {other:?}"))),
    };
    let spec = ConstantsSpec { n_grid: vec![n], replicas, ..Default::default() };
    let r = py.detach(|| constants(&walk, &spec, seed)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("c_plus", r.c_plus.value)?;
    d.set_item("c_minus", r.c_minus.value)?;
    d.set_item("c_r", r.c_r.value)?;
    d.set_item("product", r.product.value)?;
    d.set_item("product_se", r.product.se)?;
    d.set_item("target", r.product_target)?;
    d.set_item("relative_error", r.product_rel_error)?;
    Ok(d)
}

/// Runs an experiment described by a TOML document and returns the CSV table.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config).map_err(err)?;
    let res = py.detach(|| run_cfg(&cfg)).map_err(err)?;
    Ok(res.csv_string())
}

/// `(slope, se)` of the heavy-range exponent fit on a CSV table.
#[pyfunction]
fn fit_exponent(csv: &str, theta: f64) -> PyResult<(f64, f64)> {
    let rows = read_csv(csv).map_err(err)?;
    let f = fit_rows(&rows, theta).map_err(err)?;
    Ok((f.slope, f.se))
}

/// Names of the cataloged inequalities.
#[pyfunction]
fn inequalities() -> Vec<&'static str> {
    Inequality::ALL.iter().map(|e| e.name()).collect()
}

#[pymodule]
#[pyo3(name = "slowwalk")]
fn slowwalk_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyWalk>()?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(one_excursion_heavy_prob, m)?)?;
    m.add_function(wrap_pyfunction!(geo_sum_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_constants, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(inequalities, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
