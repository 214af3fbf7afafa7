//! Python bindings: chain simulation, the shortest-path solvers, the
//! mean-field ODE, control policies and the argmax scan.

use epicontrol::control::{
    evaluate_ode, ideal_trajectory_controller, rate_constrained_controller, simulate_ode, ControlPolicy, CostFn,
    HorizonCostSpec, StateComponent, ThetaBox,
};
use epicontrol::ctmc::{self, InitialCondition, Preset, ProcessModel};
use epicontrol::experiments::{self, XStar};
use epicontrol::mdp::{self, MdpProblem, Policy, ValueFunction};
use epicontrol::meanfield::{self, FieldForm, VectorField};
use epicontrol::rates::{ActionCostSpec, ProfitProfile, ProfitSpec, RateSchedule};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};

create_exception!(epicontrol, NoProperPolicy, PyException);
create_exception!(epicontrol, SolverError, PyException);

fn py_err(e: epicontrol::Error) -> PyErr {
    use epicontrol::Error as E;
    match e {
        E::NoProperPolicy => PyErr::new::<NoProperPolicy, _>(e.to_string()),
        E::Domain(_) | E::Unsupported(_) | E::Parse(_) | E::Contract(_) => PyValueError::new_err(e.to_string()),
        _ => PyErr::new::<SolverError, _>(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for epicontrol::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A number is a constant rate; otherwise `("sinusoidal", base, amp, period, phase)`
/// or `("piecewise", [(t, v), ...])`.
fn schedule(obj: &Bound<'_, PyAny>) -> PyResult<RateSchedule> {
    if let Ok(v) = obj.extract::<f64>() {
        return RateSchedule::constant(v).py();
    }
    let t = obj.cast::<PyTuple>().map_err(|_| PyValueError::new_err("rate must be a number or a tuple"))?;
    let kind: String = t.get_item(0)?.extract()?;
    match (kind.as_str(), t.len()) {
        ("constant", 2) => RateSchedule::constant(t.get_item(1)?.extract()?).py(),
        ("sinusoidal", 5) => RateSchedule::sinusoidal(
            t.get_item(1)?.extract()?,
            t.get_item(2)?.extract()?,
            t.get_item(3)?.extract()?,
            t.get_item(4)?.extract()?,
        )
        .py(),
        ("piecewise", 2) => RateSchedule::piecewise_linear(t.get_item(1)?.extract()?).py(),
        _ => Err(PyValueError::new_err(format!("unrecognized rate schedule {kind:?}"))),
    }
}

fn quadratic_profit(peak: f64, curvature: f64, c: f64) -> PyResult<ProfitSpec> {
    ProfitSpec::new(ProfitProfile::Quadratic { peak, curvature, height: 0.0 }, c).py()
}

/// Birth-death chain on `{0, ..., n}`.
#[pyclass(name = "Process", frozen)]
struct PyProcess {
    inner: ProcessModel,
}

#[pymethods]
impl PyProcess {
    #[new]
    #[pyo3(signature = (n, lam, mu, initial, preset = "sis"))]
    fn new(n: usize, lam: &Bound<'_, PyAny>, mu: &Bound<'_, PyAny>, initial: usize, preset: &str) -> PyResult<Self> {
        let inner = ProcessModel::new(
            n,
            Preset::parse(preset).py()?,
            schedule(lam)?,
            schedule(mu)?,
            InitialCondition::State(initial),
        )
        .py()?;
        Ok(PyProcess { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    /// Event times and states of one sample path.
    fn simulate(&self, horizon: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let tr = ctmc::simulate(&self.inner, horizon, seed).py()?;
        Ok((tr.times, tr.states))
    }
}

/// Value function and policy from one of the solvers.
#[pyclass(name = "Solution", frozen, get_all)]
struct PySolution {
    /// `inf` where the target is unreachable.
    values: Vec<f64>,
    finite: Vec<bool>,
    actions: Vec<(f64, f64)>,
    iterations: usize,
    bellman_residual: f64,
}

#[pymethods]
impl PySolution {
    fn __repr__(&self) -> String {
        format!("Solution(values={:?}, iterations={})", self.values, self.iterations)
    }
}

/// Shortest-path control problem towards the most profitable state.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: MdpProblem,
}

impl PyProblem {
    fn wrap(&self, (v, p): (ValueFunction, Policy)) -> PySolution {
        PySolution {
            bellman_residual: mdp::bellman_residual(&self.inner, &v),
            values: v.values,
            finite: v.finite,
            actions: p.actions,
            iterations: v.iterations,
        }
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (n, preset = "paper", lambda_max = 1.0, mu_max = 1.0, peak = 0.5, curvature = 1.0,
                        c_lambda = 0.0, c_mu = 0.0, nu = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n: usize,
        preset: &str,
        lambda_max: f64,
        mu_max: f64,
        peak: f64,
        curvature: f64,
        c_lambda: f64,
        c_mu: f64,
        nu: Option<f64>,
    ) -> PyResult<Self> {
        let cost = if c_lambda == 0.0 && c_mu == 0.0 {
            ActionCostSpec::Zero
        } else {
            ActionCostSpec::linear(c_lambda, c_mu).py()?
        };
        let inner = MdpProblem::with_nu(
            n,
            Preset::parse(preset).py()?,
            lambda_max,
            mu_max,
            quadratic_profit(peak, curvature, 1.0)?,
            cost,
            nu,
        )
        .py()?;
        Ok(PyProblem { inner })
    }

    /// Target state.
    #[getter]
    fn star(&self) -> usize {
        self.inner.star()
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu()
    }

    fn closed_form(&self) -> PyResult<PySolution> {
        Ok(self.wrap(mdp::solve_closed_form(&self.inner).py()?))
    }

    #[pyo3(signature = (tol = 1e-10))]
    fn value_iteration(&self, tol: f64) -> PyResult<PySolution> {
        Ok(self.wrap(mdp::value_iteration(&self.inner, tol).py()?))
    }

    fn policy_iteration(&self) -> PyResult<PySolution> {
        Ok(self.wrap(mdp::policy_iteration(&self.inner).py()?))
    }

    #[pyo3(signature = (weights = None))]
    fn linear_program(&self, weights: Option<Vec<f64>>) -> PyResult<PySolution> {
        let (v, p, _) = mdp::solve_lp(&self.inner, weights.as_deref()).py()?;
        Ok(self.wrap((v, p)))
    }
}

fn pair_field(lam: &Bound<'_, PyAny>, mu: &Bound<'_, PyAny>, c: f64) -> PyResult<VectorField> {
    VectorField::new(schedule(lam)?, schedule(mu)?, c, FieldForm::Pair).py()
}

/// Integrates the mean-field pair from `(x0, c - x0)`; returns times, x and y.
#[pyfunction]
#[pyo3(signature = (lam, mu, x0, horizon, c = 1.0, tol = 1e-10))]
fn integrate(
    lam: &Bound<'_, PyAny>,
    mu: &Bound<'_, PyAny>,
    x0: f64,
    horizon: f64,
    c: f64,
    tol: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let field = pair_field(lam, mu, c)?;
    let traj = meanfield::integrate(&field, &[x0, c - x0], horizon, tol).py()?;
    let x = (0..traj.len()).map(|k| traj.state(k)[0]).collect();
    let y = (0..traj.len()).map(|k| traj.state(k)[1]).collect();
    Ok((traj.times, x, y))
}

/// Long-run regime of the mean-field ODE as a dict.
#[pyfunction]
#[pyo3(signature = (lam, mu, xi, audit_horizon = 100.0, c = 1.0))]
fn classify<'py>(
    py: Python<'py>,
    lam: &Bound<'py, PyAny>,
    mu: &Bound<'py, PyAny>,
    xi: f64,
    audit_horizon: f64,
    c: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = meanfield::classify(&pair_field(lam, mu, c)?, xi, audit_horizon).py()?;
    let d = PyDict::new(py);
    match r.case.number() {
        Some(k) => d.set_item("case", k)?,
        None => d.set_item("case", "mixed")?,
    }
    d.set_item("x2_star", r.x2_star)?;
    d.set_item("delta_measured", r.delta_measured)?;
    d.set_item("x1_star_range", (r.x1_star_min, r.x1_star_max))?;
    Ok(d)
}

/// Open-loop or feedback rate policy for the mean-field system.
#[pyclass(name = "Policy", frozen)]
struct PyPolicy {
    inner: ControlPolicy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn stationary(lam: f64, mu: f64) -> PyResult<Self> {
        let inner = ControlPolicy::Stationary { lambda: lam, mu };
        inner.validate().py()?;
        Ok(PyPolicy { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (x_star, kappa = 1.0, delta_hat = 1.0, c = 1.0))]
    fn ideal(x_star: f64, kappa: f64, delta_hat: f64, c: f64) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: ideal_trajectory_controller(x_star, kappa, delta_hat, c).py()?,
        })
    }

    /// Tracker with per-step rate changes bounded by `theta = (lambda_lo, lambda_hi, mu_lo, mu_hi)`.
    #[staticmethod]
    #[pyo3(signature = (peak, theta, start, curvature = 1.0, c = 1.0))]
    fn rate_constrained(
        peak: f64,
        theta: (f64, f64, f64, f64),
        start: (f64, f64),
        curvature: f64,
        c: f64,
    ) -> PyResult<Self> {
        let theta = ThetaBox::new(theta.0, theta.1, theta.2, theta.3).py()?;
        Ok(PyPolicy {
            inner: rate_constrained_controller(&quadratic_profit(peak, curvature, c)?, theta, start).py()?,
        })
    }

    /// Runs the policy from `x(0) = x0`; returns times and x.
    #[pyo3(signature = (x0, horizon, c = 1.0, tol = 1e-9))]
    fn simulate(&self, x0: f64, horizon: f64, c: f64, tol: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let field = VectorField::new(RateSchedule::constant(1.0).py()?, RateSchedule::constant(1.0).py()?, c, FieldForm::Pair)
            .py()?;
        let (traj, _) = simulate_ode(&self.inner, &field, &[x0, c - x0], horizon, tol).py()?;
        let x = (0..traj.len()).map(|k| traj.state(k)[0]).collect();
        Ok((traj.times, x))
    }

    /// `int_0^T weight (x - center)^2 dt` along the controlled path.
    #[pyo3(signature = (x0, horizon, center, weight = 1.0, c = 1.0, tol = 1e-9))]
    fn quadratic_cost(&self, x0: f64, horizon: f64, center: f64, weight: f64, c: f64, tol: f64) -> PyResult<f64> {
        let field = VectorField::new(RateSchedule::constant(1.0).py()?, RateSchedule::constant(1.0).py()?, c, FieldForm::Pair)
            .py()?;
        let spec = HorizonCostSpec::new(
            CostFn::Quadratic { center, weight },
            CostFn::Zero,
            horizon,
            StateComponent::Susceptible,
        )
        .py()?;
        Ok(evaluate_ode(&self.inner, &field, &[x0, c - x0], &spec, tol).py()?.cost)
    }
}

/// Rows `(n, i_star, ratio, abs_err)` for `n = 1..=n_max`; `x_star` is `golden`, `p/q` or a decimal.
#[pyfunction]
fn argmax_scan(x_star: &str, n_max: usize) -> PyResult<Vec<(usize, usize, f64, f64)>> {
    let ns: Vec<usize> = (1..=n_max).collect();
    let rows = experiments::argmax_rows(XStar::parse(x_star).py()?, &ns).py()?;
    Ok(rows.into_iter().map(|r| (r.n, r.i_star, r.ratio, r.abs_err)).collect())
}

#[pyfunction]
fn derive_seed(seed0: u64, cell: u64, rep: u64) -> u64 {
    experiments::derive_seed(seed0, cell, rep)
}

#[pymodule]
#[pyo3(name = "epicontrol")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProcess>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(argmax_scan, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add("NoProperPolicy", m.py().get_type::<NoProperPolicy>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
