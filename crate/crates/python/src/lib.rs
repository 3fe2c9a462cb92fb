//! Python bindings: pricing and assortment learners, the price oracle, the
//! projection and the simulation harness.
//!
//! Matrices cross the boundary as lists of rows; errors surface as `ValueError`.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand_chacha::ChaCha8Rng;

use mnl_online::env::{self, Stream};
use mnl_online::harness::{self, KeyValues};
use mnl_online::mnl::{ChoiceDesign, ContextMatrix, PricingParams, PurchaseOutcome};
use mnl_online::ofu::{OfuConfig, OfuMnl};
use mnl_online::ons::{OnsConfig, OnsPricer};
use mnl_online::price;
use mnl_online::projection::{self, HalfSpace};

fn py_err(e: mnl_online::Error) -> PyErr {
    // Include the cause chain: replication errors wrap the underlying failure.
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(&e);
    while let Some(s) = source {
        msg.push_str(&format!(": {s}"));
        source = s.source();
    }
    PyValueError::new_err(msg)
}

fn context(rows: &[Vec<f64>]) -> PyResult<ContextMatrix> {
    ContextMatrix::from_rows(rows).map_err(py_err)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn outcome(chosen: usize, items: usize) -> PyResult<PurchaseOutcome> {
    PurchaseOutcome::new(chosen, items).map_err(py_err)
}

/// Upper bound on posted prices, `(1 + K·max(W, 1))/L + 1/W`.
#[pyfunction]
pub fn p_max(w: f64, l: f64, k: usize) -> PyResult<f64> {
    price::p_max(w, l, k).map_err(py_err)
}

/// Revenue-maximizing prices for parameters `(θ, α)`; returns `(prices, B⁰)`.
#[pyfunction]
#[pyo3(signature = (theta, alpha, contexts, tol = 1e-12))]
pub fn optimal_prices(theta: Vec<f64>, alpha: Vec<f64>, contexts: Vec<Vec<f64>>, tol: f64) -> PyResult<(Vec<f64>, f64)> {
    let ctx = context(&contexts)?;
    let sens = ctx.scores(&DVector::from_vec(alpha)).map_err(py_err)?;
    let icpt = ctx.scores(&DVector::from_vec(theta)).map_err(py_err)?;
    let (prices, sol) = price::optimal_prices(sens.as_slice(), icpt.as_slice(), tol).map_err(py_err)?;
    Ok((prices, sol.b0))
}

/// Choice probabilities `[q_0, q_1, …, q_K]` at posted prices.
#[pyfunction]
pub fn pricing_probs(theta: Vec<f64>, alpha: Vec<f64>, contexts: Vec<Vec<f64>>, prices: Vec<f64>) -> PyResult<Vec<f64>> {
    let params = PricingParams::new(DVector::from_vec(theta), DVector::from_vec(alpha)).map_err(py_err)?;
    let design = ChoiceDesign::pricing(&context(&contexts)?, &prices).map_err(py_err)?;
    Ok(design.probs(&params.stacked()).map_err(py_err)?.as_slice().to_vec())
}

/// Choice probabilities `[q_0, q_{i_1}, …]` for the offered candidate indices.
#[pyfunction]
pub fn assortment_probs(theta: Vec<f64>, candidates: Vec<Vec<f64>>, assortment: Vec<usize>) -> PyResult<Vec<f64>> {
    let design = ChoiceDesign::assortment(&context(&candidates)?, &assortment).map_err(py_err)?;
    Ok(design.probs(&DVector::from_vec(theta)).map_err(py_err)?.as_slice().to_vec())
}

/// `argmin (z−y)ᵀH(z−y)` over `‖z‖ ≤ radius` and `a_iᵀz ≥ b_i`.
#[pyfunction]
#[pyo3(signature = (point, h, radius, normals = Vec::new(), offsets = Vec::new()))]
pub fn project_h_norm(
    point: Vec<f64>,
    h: Vec<Vec<f64>>,
    radius: f64,
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
) -> PyResult<Vec<f64>> {
    if normals.len() != offsets.len() {
        return Err(PyValueError::new_err("normals and offsets differ in length"));
    }
    let halfspaces: Vec<HalfSpace> = normals
        .into_iter()
        .zip(offsets)
        .map(|(a, b)| HalfSpace { normal: DVector::from_vec(a), offset: b })
        .collect();
    let proj = projection::project_h_norm(&DVector::from_vec(point), &matrix(&h)?, radius, &halfspaces).map_err(py_err)?;
    Ok(proj.point.as_slice().to_vec())
}

/// One simulated replication.
#[pyclass(name = "Trajectory", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrajectory {
    pub seed: u64,
    pub policy: String,
    pub instant_regret: Vec<f64>,
    pub cum_regret: Vec<f64>,
    pub est_error: Vec<f64>,
    pub kappa_diag: Vec<f64>,
}

#[pymethods]
impl PyTrajectory {
    fn __repr__(&self) -> String {
        format!(
            "Trajectory(policy={}, seed={}, T={}, final_regret={:.6})",
            self.policy,
            self.seed,
            self.cum_regret.len(),
            self.cum_regret.last().copied().unwrap_or(0.0)
        )
    }
}

/// Runs an experiment from `key = value` config text plus optional overrides.
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new()))]
pub fn run_experiment(py: Python<'_>, config: &str, overrides: Vec<(String, String)>) -> PyResult<Vec<PyTrajectory>> {
    let mut kv = KeyValues::parse(config).map_err(py_err)?;
    for (k, v) in overrides {
        kv.set(&k, v).map_err(py_err)?;
    }
    let cfg = kv.resolve(None).map_err(py_err)?;
    let trs = py.detach(|| harness::run(&cfg)).map_err(py_err)?;
    Ok(trs
        .into_iter()
        .map(|tr| PyTrajectory {
            seed: tr.seed,
            policy: tr.policy.to_string(),
            instant_regret: tr.records.iter().map(|r| r.instant_regret).collect(),
            cum_regret: tr.records.iter().map(|r| r.cum_regret).collect(),
            est_error: tr.records.iter().map(|r| r.est_error).collect(),
            kappa_diag: tr.records.iter().map(|r| r.kappa_diag).collect(),
        })
        .collect())
}

/// Online-Newton pricing with learned sensitivities and random price shocks.
#[pyclass(name = "OnsPricer")]
pub struct PyOnsPricer {
    inner: OnsPricer,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyOnsPricer {
    #[new]
    #[pyo3(signature = (d, w, l, k, shocks = true, seed = 0))]
    pub fn new(d: usize, w: f64, l: f64, k: usize, shocks: bool, seed: u64) -> PyResult<Self> {
        let mut cfg = OnsConfig::new(w, l, k);
        cfg.shocks = shocks;
        Ok(PyOnsPricer {
            inner: OnsPricer::new(cfg, d).map_err(py_err)?,
            rng: env::stream_rng(seed, Stream::Shocks),
        })
    }

    /// Known price sensitivity (no shocks); the parameter is `θ` alone.
    #[staticmethod]
    pub fn known_sensitivity(d: usize, w: f64, sensitivity: f64) -> PyResult<Self> {
        Ok(PyOnsPricer {
            inner: OnsPricer::new(OnsConfig::known_sensitivity(w, sensitivity), d).map_err(py_err)?,
            rng: env::stream_rng(0, Stream::Shocks),
        })
    }

    /// Posted prices for this period's product features.
    pub fn select_prices(&mut self, contexts: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let ctx = context(&contexts)?;
        Ok(self.inner.select_prices(&ctx, &mut self.rng).map_err(py_err)?.prices)
    }

    /// Records the purchase: `chosen = 0` for no purchase, `j` for product `j`.
    pub fn observe(&mut self, contexts: Vec<Vec<f64>>, prices: Vec<f64>, chosen: usize) -> PyResult<()> {
        let ctx = context(&contexts)?;
        let y = outcome(chosen, ctx.len())?;
        self.inner.observe(&ctx, &prices, y).map_err(py_err)
    }

    /// Current parameter estimate (stacked `(θ, α)`, or `θ` for known sensitivity).
    #[getter]
    pub fn gamma(&self) -> Vec<f64> {
        self.inner.gamma().as_slice().to_vec()
    }

    #[getter]
    pub fn t(&self) -> usize {
        self.inner.t()
    }

    #[getter]
    pub fn p_max(&self) -> f64 {
        self.inner.p_max()
    }
}

/// Optimistic MNL assortment selection.
#[pyclass(name = "OfuMnl")]
pub struct PyOfuMnl {
    inner: OfuMnl,
}

#[pymethods]
impl PyOfuMnl {
    #[new]
    #[pyo3(signature = (d, k, w, horizon, delta = None))]
    pub fn new(d: usize, k: usize, w: f64, horizon: usize, delta: Option<f64>) -> PyResult<Self> {
        let mut cfg = OfuConfig::new(k, w, horizon);
        if let Some(delta) = delta {
            cfg.delta = delta;
        }
        Ok(PyOfuMnl { inner: OfuMnl::new(cfg, d).map_err(py_err)? })
    }

    /// Indices of the `K` offered candidates.
    pub fn select(&mut self, candidates: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        self.inner.select(&context(&candidates)?).map_err(py_err)
    }

    /// `chosen = 0` for no purchase, `j` for the `j`-th offered item.
    pub fn observe(&mut self, candidates: Vec<Vec<f64>>, offered: Vec<usize>, chosen: usize) -> PyResult<()> {
        let y = outcome(chosen, offered.len())?;
        self.inner.observe(&context(&candidates)?, &offered, y).map_err(py_err)
    }

    #[getter]
    pub fn theta_hat(&self) -> Vec<f64> {
        self.inner.theta_hat().as_slice().to_vec()
    }

    #[getter]
    pub fn t(&self) -> usize {
        self.inner.history().len()
    }
}

#[pymodule]
fn mnl_online_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(p_max, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_prices, m)?)?;
    m.add_function(wrap_pyfunction!(pricing_probs, m)?)?;
    m.add_function(wrap_pyfunction!(assortment_probs, m)?)?;
    m.add_function(wrap_pyfunction!(project_h_norm, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyOnsPricer>()?;
    m.add_class::<PyOfuMnl>()?;
    Ok(())
}
