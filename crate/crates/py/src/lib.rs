//! Python bindings: bundles, trained rankers, and metric evaluation.

use std::path::PathBuf;

use causalrank::datagen::{generate_synthetic_base, GenConfig, SyntheticBaseConfig};
use causalrank::exp::run_comparison;
use causalrank::metrics::{lambda_weight as core_lambda_weight, metric_average, metric_estimate};
use causalrank::train::{popularity_ranker, random_ranker, train};
use causalrank::{CappingParams, DataBundle, Estimator, MFModel, Method, MetricKind, RankedList, RunConfig, TrainConfig};
use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: causalrank::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn metric(name: &str) -> PyResult<MetricKind> {
    name.parse().map_err(py_err)
}

fn rankings(orders: Vec<Vec<u32>>, n_items: usize) -> PyResult<RankedList> {
    RankedList::from_orders(n_items, orders).map_err(py_err)
}

fn orders_of(rl: &RankedList) -> Vec<Vec<u32>> {
    (0..rl.n_users()).map(|u| rl.order(u).to_vec()).collect()
}

/// A generated dataset: train, validation and test replicates over one population.
#[pyclass(name = "Bundle", module = "causalrank")]
struct PyBundle {
    inner: DataBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    #[pyo3(signature = (n_users=200, n_items=50, seed=0, beta=2.0, xi=0.0, n_train=1, n_validation=1, n_test=1))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n_users: usize,
        n_items: usize,
        seed: u64,
        beta: f64,
        xi: f64,
        n_train: usize,
        n_validation: usize,
        n_test: usize,
    ) -> PyResult<Self> {
        let base = generate_synthetic_base(&SyntheticBaseConfig { n_users, n_items, seed, ..Default::default() })
            .map_err(py_err)?;
        let cfg = GenConfig { beta, xi, n_train, n_validation, n_test, seed, ..Default::default() };
        let inner = DataBundle::generate(&base, &cfg, "synthetic").map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: DataBundle::read(&path).map_err(py_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(py_err)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    /// `(n_train, n_validation, n_test)`.
    #[getter]
    fn split(&self) -> (usize, usize, usize) {
        let s = self.inner.split();
        (s.n_train, s.n_validation, s.n_test)
    }

    /// Ground-truth metric of `orders` on test replicate `replicate`.
    #[pyo3(signature = (orders, metric_name, replicate=0))]
    fn true_metric(&self, orders: Vec<Vec<u32>>, metric_name: &str, replicate: usize) -> PyResult<f64> {
        let truth = self.inner.test_truth().get(replicate).ok_or_else(|| PyIndexError::new_err("replicate"))?;
        metric_average(&rankings(orders, self.n_items())?, truth, metric(metric_name)?).map_err(py_err)
    }

    /// Estimated metric of `orders` from the logged test replicate.
    /// `estimator` is `"naive"` or `"ips"`; `chi = 0` disables capping.
    #[pyo3(signature = (orders, metric_name, estimator="ips", chi=0.0, replicate=0))]
    fn estimate_metric(
        &self,
        orders: Vec<Vec<u32>>,
        metric_name: &str,
        estimator: &str,
        chi: f64,
        replicate: usize,
    ) -> PyResult<f64> {
        let observed = self.inner.test_observed().get(replicate).ok_or_else(|| PyIndexError::new_err("replicate"))?;
        let estimator = match estimator {
            "naive" => Estimator::Naive,
            "ips" => Estimator::Ips(CappingParams::symmetric(chi).map_err(py_err)?),
            other => return Err(PyValueError::new_err(format!("unknown estimator {other:?}"))),
        };
        metric_estimate(&rankings(orders, self.n_items())?, observed, metric(metric_name)?, estimator).map_err(py_err)
    }

    /// Per-user item orders from the popularity or random baseline.
    #[pyo3(signature = (method, seed=0))]
    fn baseline(&self, method: &str, seed: u64) -> PyResult<Vec<Vec<u32>>> {
        let (n_users, n_items) = (self.n_users(), self.n_items());
        let rl = match method.parse::<Method>().map_err(py_err)? {
            Method::Pop => popularity_ranker(self.inner.train_observed(), n_users, n_items),
            Method::Random => random_ranker(n_users, n_items, seed),
            other => return Err(PyValueError::new_err(format!("{other:?} is trained; use Model.fit"))),
        }
        .map_err(py_err)?;
        Ok(orders_of(&rl))
    }
}

/// Matrix-factorization ranker.
#[pyclass(name = "Model", module = "causalrank")]
struct PyModel {
    inner: MFModel,
}

#[pymethods]
impl PyModel {
    /// Fit on the bundle's training replicates.
    #[staticmethod]
    #[pyo3(signature = (bundle, method="DLCE", gamma=0.01, chi=0.0, eta=0.05, epochs=10, dim=20, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        bundle: &PyBundle,
        method: &str,
        gamma: f64,
        chi: f64,
        eta: f64,
        epochs: usize,
        dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = TrainConfig {
            method: method.parse().map_err(py_err)?,
            gamma,
            capping: CappingParams::symmetric(chi).map_err(py_err)?,
            eta,
            epochs,
            dim,
            seed,
            ..Default::default()
        };
        let b = &bundle.inner;
        let inner = train(b.train_observed(), &cfg, b.n_users(), b.n_items()).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: MFModel::load_checkpoint(&path).map_err(py_err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score(&self, user: usize, item: usize) -> PyResult<f64> {
        self.inner.score(user, item).map_err(py_err)
    }

    /// Items of every user sorted by descending score.
    fn rankings(&self) -> PyResult<Vec<Vec<u32>>> {
        Ok(orders_of(&self.inner.rank_all().map_err(py_err)?))
    }
}

/// Metric weight of position `rank` (1-based) in a list of `n_items`.
#[pyfunction]
fn lambda_weight(metric_name: &str, rank: usize, n_items: usize) -> PyResult<f64> {
    core_lambda_weight(metric(metric_name)?.weighting(), rank, n_items).map_err(py_err)
}

/// Run the tuned comparison described by a TOML run configuration and
/// return the report as JSON text.
#[pyfunction]
fn compare(config_toml: &str) -> PyResult<String> {
    let cfg = RunConfig::from_toml(config_toml).map_err(py_err)?;
    let report = run_comparison(&cfg.plan).map_err(py_err)?;
    serde_json::to_string_pretty(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "causalrank")]
fn causalrank_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBundle>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(lambda_weight, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
