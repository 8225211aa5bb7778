//! Python bindings for the scheduler. Matrices cross the boundary as nested
//! lists of floats, schedules as lists of bools.

use etlqg_core::covariance::{build_tables, schedule_cost};
use etlqg_core::lqg::{constant_cost, solve_riccati as riccati};
use etlqg_core::milp::{build_milp, export_lp as write_lp};
use etlqg_core::scheduler::{self, solve_ratio_bounds};
use etlqg_core::sim::{self, SimContext, SimOptions};
use etlqg_core::{Error, GramianTable, Policy, RiccatiSolution, Schedule, SolveResult};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    if e.is_user_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vector(v: Vec<f64>, n: usize, what: &str) -> PyResult<DVector<f64>> {
    if v.len() != n {
        return Err(PyValueError::new_err(format!("{what}: expected length {n}, got {}", v.len())));
    }
    Ok(DVector::from_vec(v))
}

fn policy(name: &str) -> PyResult<Policy> {
    match name {
        "mpc" => Ok(Policy::Mpc),
        "oneshot" => Ok(Policy::OneShot),
        other => Err(PyValueError::new_err(format!("policy: expected 'mpc' or 'oneshot', got '{other}'"))),
    }
}

#[pyclass(name = "Problem", frozen)]
#[derive(Clone)]
struct PyProblem(etlqg_core::Problem);

#[pymethods]
impl PyProblem {
    #[staticmethod]
    #[pyo3(signature = (sigma2 = 1.0))]
    fn boeing747(sigma2: f64) -> Self {
        PyProblem(etlqg_core::Problem::boeing747_with_sigma2(sigma2))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        etlqg_core::Problem::from_json(text).map(PyProblem).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn with_p(&self, p: f64) -> PyResult<Self> {
        self.0.with_p(p).map(PyProblem).map_err(py_err)
    }

    fn with_horizon(&self, horizon: usize) -> PyResult<Self> {
        self.0.with_horizon(horizon).map(PyProblem).map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon
    }

    #[getter]
    fn p(&self) -> f64 {
        self.0.p
    }

    /// Effective per-attempt charge.
    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda()
    }

    fn __repr__(&self) -> String {
        format!("Problem(n={}, m={}, T={}, p={}, lambda={})", self.0.n(), self.0.m(), self.0.horizon, self.0.p, self.0.lambda())
    }
}

#[pyclass(name = "Riccati", frozen)]
struct PyRiccati {
    sol: RiccatiSolution,
    constant: f64,
}

#[pymethods]
impl PyRiccati {
    #[getter]
    fn horizon(&self) -> usize {
        self.sol.horizon()
    }

    #[getter]
    fn constant_cost(&self) -> f64 {
        self.constant
    }

    /// One of `P`, `S`, `L`, `Gamma`, `W` at step `k`.
    fn matrix(&self, name: &str, k: usize) -> PyResult<Vec<Vec<f64>>> {
        let list = match name {
            "P" => &self.sol.p,
            "S" => &self.sol.s,
            "L" => &self.sol.l,
            "Gamma" => &self.sol.gamma,
            "W" => &self.sol.w,
            other => return Err(PyValueError::new_err(format!("unknown matrix '{other}'"))),
        };
        list.get(k)
            .map(rows)
            .ok_or_else(|| PyValueError::new_err(format!("k={k} out of range for {name}")))
    }
}

/// Window cost table for one receding-horizon step.
#[pyclass(name = "Window", frozen)]
struct PyWindow {
    table: GramianTable,
    p: f64,
}

impl PyWindow {
    fn schedule(&self, theta: Vec<bool>) -> PyResult<Schedule> {
        if theta.len() != self.table.len() {
            return Err(PyValueError::new_err(format!(
                "schedule: expected length {}, got {}",
                self.table.len(),
                theta.len()
            )));
        }
        Ok(Schedule::new(theta))
    }
}

fn result_dict<'py>(py: Python<'py>, r: &SolveResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("schedule", r.schedule.as_slice().to_vec())?;
    d.set_item("cost", r.cost)?;
    d.set_item("nodes", r.nodes_explored)?;
    Ok(d)
}

#[pymethods]
impl PyWindow {
    fn __len__(&self) -> usize {
        self.table.len()
    }

    #[getter]
    fn start(&self) -> usize {
        self.table.start()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.table.lambda()
    }

    fn g(&self, t: usize, tau: usize) -> PyResult<f64> {
        if tau > t || t >= self.table.len() {
            return Err(PyValueError::new_err("need tau <= t < len"));
        }
        Ok(self.table.g(t, tau))
    }

    /// Expected window cost of `theta`.
    fn cost(&self, theta: Vec<bool>) -> PyResult<f64> {
        Ok(schedule_cost(&self.table, &self.schedule(theta)?, self.p))
    }

    fn solve_bnb<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = py.allow_threads(|| scheduler::solve_bnb(&self.table, self.p, None));
        result_dict(py, &r)
    }

    fn solve_enumerate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = scheduler::solve_enumerate(&self.table, self.p).map_err(py_err)?;
        result_dict(py, &r)
    }

    /// Lossless and lossy optima plus the ratio bracket.
    fn ratio_bounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (_, _, rb) = solve_ratio_bounds(&self.table, self.p);
        let d = PyDict::new(py);
        d.set_item("lower", rb.lower)?;
        d.set_item("ratio", rb.ratio)?;
        d.set_item("upper", rb.upper)?;
        d.set_item("c_max", rb.c_max)?;
        Ok(d)
    }

    /// Linearized cost of `theta` evaluated through the integer program.
    fn milp_cost(&self, theta: Vec<bool>) -> PyResult<f64> {
        let model = build_milp(&self.table, self.p, self.table.lambda()).map_err(py_err)?;
        etlqg_core::milp::eval_assignment(&model, &self.schedule(theta)?).map_err(py_err)
    }

    /// CPLEX LP text of the window's integer program.
    fn export_lp(&self) -> PyResult<String> {
        let model = build_milp(&self.table, self.p, self.table.lambda()).map_err(py_err)?;
        Ok(write_lp(&model))
    }
}

#[pyfunction]
fn solve_riccati(problem: &PyProblem) -> PyResult<PyRiccati> {
    let sol = riccati(&problem.0).map_err(py_err)?;
    let constant = constant_cost(&problem.0, &sol);
    Ok(PyRiccati { sol, constant })
}

#[pyfunction]
fn window(problem: &PyProblem, riccati: &PyRiccati, k: usize, e_s: Vec<f64>) -> PyResult<PyWindow> {
    if k >= problem.0.horizon {
        return Err(PyValueError::new_err(format!("k: must be below T={}", problem.0.horizon)));
    }
    let e = vector(e_s, problem.0.n(), "e_s")?;
    Ok(PyWindow {
        table: build_tables(&problem.0, &riccati.sol, k, &e),
        p: problem.0.p,
    })
}

#[pyfunction]
fn certify<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    riccati: &PyRiccati,
    k: usize,
    e_s: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    if k >= problem.0.horizon {
        return Err(PyValueError::new_err(format!("k: must be below T={}", problem.0.horizon)));
    }
    let e = vector(e_s, problem.0.n(), "e_s")?;
    let c = scheduler::certify(&e, &riccati.sol.gamma[k], &riccati.sol.w[k], problem.0.p, problem.0.lambda());
    let d = PyDict::new(py);
    d.set_item("decision", c.decision.as_str())?;
    d.set_item("attempt_stat", c.attempt_stat)?;
    d.set_item("skip_stat", c.skip_stat)?;
    d.set_item("lambda", c.lambda)?;
    Ok(d)
}

#[pyfunction]
fn simulate_run<'py>(py: Python<'py>, problem: &PyProblem, policy_name: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let pol = policy(policy_name)?;
    let ctx = SimContext::from_problem(&problem.0).map_err(py_err)?;
    let rec = py.allow_threads(|| ctx.run(pol, seed, SimOptions::default()));
    let d = PyDict::new(py);
    d.set_item("theta", rec.theta.clone())?;
    d.set_item("delta", rec.delta.clone())?;
    d.set_item("x", rec.x.iter().map(|v| v.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())?;
    d.set_item("attempts", rec.attempts)?;
    d.set_item("successes", rec.successes)?;
    d.set_item("lqg_cost", rec.lqg_cost)?;
    d.set_item("comm_cost", rec.comm_cost)?;
    d.set_item("total", rec.total)?;
    d.set_item("trace_csv", sim::trace_csv(&rec))?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (problem, policy_name, n_seeds, seed0 = 1, jobs = 1))]
fn monte_carlo<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    policy_name: &str,
    n_seeds: usize,
    seed0: u64,
    jobs: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if n_seeds == 0 || jobs == 0 {
        return Err(PyValueError::new_err("n_seeds and jobs must be positive"));
    }
    let pol = policy(policy_name)?;
    let sol = riccati(&problem.0).map_err(py_err)?;
    let stats = py.allow_threads(|| sim::monte_carlo(&problem.0, &sol, pol, n_seeds, seed0, jobs));
    let d = PyDict::new(py);
    d.set_item("n_seeds", stats.n_seeds)?;
    d.set_item("mean_attempts", stats.attempts.mean)?;
    d.set_item("mean_successes", stats.successes.mean)?;
    d.set_item("mean_lqg", stats.lqg_cost.mean)?;
    d.set_item("mean_total", stats.total.mean)?;
    d.set_item("std_total", stats.total.std)?;
    d.set_item("attempt_freq", stats.attempt_freq.clone())?;
    Ok(d)
}

#[pymodule]
fn etlqg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyRiccati>()?;
    m.add_class::<PyWindow>()?;
    m.add_function(wrap_pyfunction!(solve_riccati, m)?)?;
    m.add_function(wrap_pyfunction!(window, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_run, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    Ok(())
}
