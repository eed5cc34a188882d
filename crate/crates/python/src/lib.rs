//! Python bindings for `regbid`.
//!
//! Reports (solutions, robustness checks, Monte-Carlo estimates) come back as
//! plain dicts with the same field names as the Rust structs.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use regbid::config::ProblemConfig;
use regbid::dist::DeviationDistribution;
use regbid::econ;
use regbid::feasible::{self, BatterySpec, RegulationContract};
use regbid::implicit::{self, EfficiencyPair, ImplicitContext};
use regbid::simulate;
use regbid::solve::{self, MarketPrices};

create_exception!(regbid_py, InfeasibleError, PyValueError);
create_exception!(regbid_py, AssumptionError, PyValueError);

fn to_py(e: regbid::Error) -> PyErr {
    use regbid::Error as E;
    match e {
        E::Infeasible(_) => InfeasibleError::new_err(e.to_string()),
        E::AssumptionViolated(_) | E::ConvexityViolated { .. } => {
            AssumptionError::new_err(e.to_string())
        }
        E::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into a Python dict.
fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Law of the normalized regulation signal on [-1, 1].
#[pyclass(
    name = "Distribution",
    module = "regbid_py",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyDistribution(DeviationDistribution);

#[pymethods]
impl PyDistribution {
    #[staticmethod]
    fn logistic(mad: f64) -> PyResult<Self> {
        DeviationDistribution::logistic(mad)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn two_point_lower(mad: f64) -> PyResult<Self> {
        DeviationDistribution::two_point_lower(mad)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn three_point_upper(mad: f64) -> PyResult<Self> {
        DeviationDistribution::three_point_upper(mad)
            .map(Self)
            .map_err(to_py)
    }

    /// Empirical law of `samples`, symmetrized by reflection.
    #[staticmethod]
    fn empirical(samples: Vec<f64>) -> PyResult<Self> {
        DeviationDistribution::empirical(&samples)
            .map(Self)
            .map_err(to_py)
    }

    /// Logistic law with the mean absolute value of `deviations`.
    #[staticmethod]
    fn fit(deviations: Vec<f64>) -> PyResult<Self> {
        regbid::ingest::fit_logistic(&deviations)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().as_str()
    }

    #[getter]
    fn mad(&self) -> f64 {
        self.0.mad()
    }

    #[getter]
    fn theta(&self) -> Option<f64> {
        self.0.theta()
    }

    fn cdf(&self, z: f64) -> f64 {
        self.0.cdf(z)
    }

    fn scdf(&self, z: f64) -> f64 {
        self.0.scdf(z)
    }

    fn sample(&self, seed: u64, n: usize) -> PyResult<Vec<f64>> {
        self.0.sample(seed, n).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Distribution(kind={:?}, mad={})",
            self.0.kind().as_str(),
            self.0.mad()
        )
    }
}

#[pyclass(name = "Battery", module = "regbid_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBattery(BatterySpec);

#[pymethods]
impl PyBattery {
    /// Energies in kWh, powers in kW. `soc_target` defaults to `soc0`.
    #[new]
    #[pyo3(signature = (cap, charge_cap, discharge_cap, soc0, eta_plus, eta_minus, soc_target=None))]
    fn new(
        cap: f64,
        charge_cap: f64,
        discharge_cap: f64,
        soc0: f64,
        eta_plus: f64,
        eta_minus: f64,
        soc_target: Option<f64>,
    ) -> PyResult<Self> {
        let b = BatterySpec {
            cap,
            charge_cap,
            discharge_cap,
            soc0,
            soc_target: soc_target.unwrap_or(soc0),
            eff: EfficiencyPair::new(eta_plus, eta_minus).map_err(to_py)?,
        };
        b.validate().map_err(to_py)?;
        Ok(Self(b))
    }

    #[getter]
    fn cap(&self) -> f64 {
        self.0.cap
    }

    #[getter]
    fn soc0(&self) -> f64 {
        self.0.soc0
    }

    #[getter]
    fn soc_target(&self) -> f64 {
        self.0.soc_target
    }

    #[getter]
    fn roundtrip(&self) -> f64 {
        self.0.eff.roundtrip()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.0)
    }
}

#[pyclass(name = "Contract", module = "regbid_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyContract(RegulationContract);

#[pymethods]
impl PyContract {
    #[new]
    fn new(horizon: f64, budget: f64) -> PyResult<Self> {
        RegulationContract::new(horizon, budget)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.horizon
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.0.budget
    }
}

/// Market and regulation prices, fixed or linear in the bid.
#[pyclass(name = "Prices", module = "regbid_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPrices(MarketPrices);

#[pymethods]
impl PyPrices {
    #[staticmethod]
    fn inelastic(cb: f64, cr: f64) -> PyResult<Self> {
        let p = MarketPrices::Inelastic { cb, cr };
        p.validate().map_err(to_py)?;
        Ok(Self(p))
    }

    #[staticmethod]
    fn elastic(cb0: f64, cbd: f64, ca0: f64, cad: f64) -> PyResult<Self> {
        let p = MarketPrices::Elastic { cb0, cbd, ca0, cad };
        p.validate().map_err(to_py)?;
        Ok(Self(p))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.0)
    }
}

/// The purchase g(xr) that keeps the expected terminal state-of-charge on target.
#[pyclass(
    name = "ImplicitFunction",
    module = "regbid_py",
    frozen,
    skip_from_py_object
)]
struct PyImplicit {
    ctx: ImplicitContext,
    bat: BatterySpec,
    con: RegulationContract,
}

#[pymethods]
impl PyImplicit {
    #[new]
    fn new(battery: &PyBattery, contract: &PyContract, dist: &PyDistribution) -> PyResult<Self> {
        let ydot = feasible::desired_rate(&battery.0, &contract.0);
        let ctx = ImplicitContext::new(battery.0.eff, dist.0.clone(), ydot).map_err(to_py)?;
        Ok(Self {
            ctx,
            bat: battery.0,
            con: contract.0,
        })
    }

    #[getter]
    fn m(&self) -> f64 {
        self.ctx.m()
    }

    fn __call__(&self, xr: f64) -> f64 {
        self.ctx.g(xr)
    }

    /// One-sided derivatives (left, right).
    fn derivative(&self, xr: f64) -> (f64, f64) {
        self.ctx.g_derivative(xr)
    }

    /// Sandwich from the extremal laws with the same MAD.
    fn bounds(&self, xr: f64) -> (f64, f64) {
        self.ctx.g_bounds(xr)
    }

    fn expected_charge_rate(&self, xb: f64, xr: f64) -> f64 {
        self.ctx.expected_charge_rate(xb, xr)
    }

    /// Envelopes (lower, upper) of the robust purchase at `xr`.
    fn envelopes(&self, xr: f64) -> (f64, f64) {
        feasible::envelopes(xr, &self.bat, &self.con)
    }

    fn max_feasible_bid<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let f = feasible::max_feasible_bid(&self.bat, &self.con, &self.ctx).map_err(to_py)?;
        to_dict(py, &f)
    }
}

#[pyfunction]
fn asymptotic_slope(eta_plus: f64, eta_minus: f64, dist: &PyDistribution) -> PyResult<f64> {
    let eff = EfficiencyPair::new(eta_plus, eta_minus).map_err(to_py)?;
    Ok(implicit::asymptotic_slope(eff, &dist.0))
}

#[pyfunction]
fn slope_bounds(eta_plus: f64, eta_minus: f64, mad: f64) -> PyResult<(f64, f64)> {
    let eff = EfficiencyPair::new(eta_plus, eta_minus).map_err(to_py)?;
    implicit::slope_bounds(eff, mad).map_err(to_py)
}

#[pyfunction(name = "solve")]
fn py_solve<'py>(
    py: Python<'py>,
    battery: &PyBattery,
    contract: &PyContract,
    prices: &PyPrices,
    dist: &PyDistribution,
) -> PyResult<Bound<'py, PyAny>> {
    let s = py
        .detach(|| solve::solve(&battery.0, &contract.0, &prices.0, &dist.0))
        .map_err(to_py)?;
    to_dict(py, &s)
}

/// Loads a JSON problem config and solves it.
#[pyfunction]
fn solve_config<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ProblemConfig::load(&path).map_err(to_py)?;
    let dist = cfg.distribution().map_err(to_py)?;
    let s = solve::solve(&cfg.battery(), &cfg.contract(), &cfg.prices(), &dist).map_err(to_py)?;
    to_dict(py, &s)
}

/// Drift-free closed-form bid at asymptotic slope `m`.
#[pyfunction]
fn analytic_bid(battery: &PyBattery, contract: &PyContract, m: f64) -> PyResult<f64> {
    solve::analytic_bid(&battery.0, &contract.0, m).map_err(to_py)
}

#[pyfunction]
fn energy_constrained_optimum<'py>(
    py: Python<'py>,
    battery: &PyBattery,
    contract: &PyContract,
    m: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let o = solve::energy_constrained_optimum(&battery.0, &contract.0, m).map_err(to_py)?;
    to_dict(py, &o)
}

#[pyfunction]
fn operating_profit(
    battery: &PyBattery,
    contract: &PyContract,
    prices: &PyPrices,
    m: f64,
) -> PyResult<f64> {
    econ::operating_profit(&battery.0, &contract.0, &prices.0, m).map_err(to_py)
}

#[pyfunction]
fn annuity(capex: f64, lifetime: f64, rate: f64) -> f64 {
    econ::annuity(capex, lifetime, rate)
}

#[pyfunction]
#[pyo3(signature = (xb, xr, battery, contract, dist, n_steps=8640, n_paths=10000, seed=0, capped=true))]
#[allow(clippy::too_many_arguments)]
fn expected_terminal_soc<'py>(
    py: Python<'py>,
    xb: f64,
    xr: f64,
    battery: &PyBattery,
    contract: &PyContract,
    dist: &PyDistribution,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    capped: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let e = py
        .detach(|| {
            simulate::mc_expected_terminal_soc(
                xb,
                xr,
                &battery.0,
                &contract.0,
                &dist.0,
                n_steps,
                n_paths,
                seed,
                capped,
            )
        })
        .map_err(to_py)?;
    to_dict(py, &e)
}

#[pyfunction]
#[pyo3(signature = (xb, xr, battery, contract, n_steps=8640, n_random=1000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn check_robust_feasibility<'py>(
    py: Python<'py>,
    xb: f64,
    xr: f64,
    battery: &PyBattery,
    contract: &PyContract,
    n_steps: usize,
    n_random: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = py
        .detach(|| {
            simulate::check_robust_feasibility(
                xb,
                xr,
                &battery.0,
                &contract.0,
                n_steps,
                n_random,
                seed,
            )
        })
        .map_err(to_py)?;
    to_dict(py, &r)
}

/// One capped trajectory of the regulation signal.
#[pyfunction]
#[pyo3(signature = (dist, contract, n_steps=8640, seed=0))]
fn sample_trajectory(
    dist: &PyDistribution,
    contract: &PyContract,
    n_steps: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    simulate::sample_trajectory(&dist.0, &contract.0, n_steps, seed)
        .map(|t| t.values)
        .map_err(to_py)
}

#[pymodule]
fn regbid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("AssumptionError", m.py().get_type::<AssumptionError>())?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyBattery>()?;
    m.add_class::<PyContract>()?;
    m.add_class::<PyPrices>()?;
    m.add_class::<PyImplicit>()?;
    m.add_function(wrap_pyfunction!(asymptotic_slope, m)?)?;
    m.add_function(wrap_pyfunction!(slope_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(py_solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_config, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_bid, m)?)?;
    m.add_function(wrap_pyfunction!(energy_constrained_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(operating_profit, m)?)?;
    m.add_function(wrap_pyfunction!(annuity, m)?)?;
    m.add_function(wrap_pyfunction!(expected_terminal_soc, m)?)?;
    m.add_function(wrap_pyfunction!(check_robust_feasibility, m)?)?;
    m.add_function(wrap_pyfunction!(sample_trajectory, m)?)?;
    Ok(())
}
