//! Python bindings. Matrices cross the boundary as lists of rows; reports
//! come back as plain dicts.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use quadland::geometry;
use quadland::init::{self as qinit, ScaleMode};
use quadland::landscape::{self, BarrierMode};
use quadland::model::moments_of;
use quadland::optimize::{self, GdConfig, StepPolicy};
use quadland::risk;
use quadland::{Activation, Discrepancy, Distribution, Moments, Network, Objective, StudentWeights, TeacherModel};

fn to_py_err(e: quadland::Error) -> PyErr {
    match e {
        quadland::Error::Contract(_) | quadland::Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for quadland::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_dist(tag: &str) -> PyResult<Distribution> {
    tag.parse().map_err(to_py_err)
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn student(rows: &[Vec<f64>]) -> PyResult<StudentWeights> {
    StudentWeights::new(matrix_from_rows(rows)?).or_py()
}

#[pyclass(name = "Teacher", module = "quadland")]
pub struct PyTeacher {
    inner: TeacherModel,
}

#[pymethods]
impl PyTeacher {
    #[new]
    #[pyo3(signature = (weights, alpha = 1.0, beta = 0.0, gamma = 0.0, output_weights = None))]
    fn new(weights: Vec<Vec<f64>>, alpha: f64, beta: f64, gamma: f64, output_weights: Option<Vec<f64>>) -> PyResult<Self> {
        let mut inner = TeacherModel::new(matrix_from_rows(&weights)?)
            .and_then(|t| t.with_activation(Activation::new(alpha, beta, gamma)?))
            .or_py()?;
        if let Some(a) = output_weights {
            inner = inner.with_output_weights(DVector::from_vec(a)).or_py()?;
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (m, d, seed, dist = "gaussian"))]
    fn sample(m: usize, d: usize, seed: u64, dist: &str) -> PyResult<Self> {
        Ok(Self {
            inner: qinit::sample_teacher(&parse_dist(dist)?, m, d, seed).or_py()?,
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.weights())
    }

    fn gram(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.gram())
    }

    fn sigma_min(&self) -> f64 {
        self.inner.sigma_min()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.forward(&x).or_py()
    }

    /// Equivalent teacher with the output weights folded into the rows.
    fn absorbed(&self) -> PyResult<Self> {
        Ok(Self {
            inner: quadland::model::absorb_output_weights(&self.inner).or_py()?,
        })
    }
}

#[pyclass(name = "Dataset", module = "quadland")]
pub struct PyDataset {
    inner: quadland::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (n, d, seed, dist = "gaussian"))]
    fn sample(n: usize, d: usize, seed: u64, dist: &str) -> PyResult<Self> {
        Ok(Self {
            inner: quadland::sample_dataset(&parse_dist(dist)?, n, d, seed).or_py()?,
        })
    }

    #[staticmethod]
    fn prime_vandermonde(d: usize, n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: geometry::prime_vandermonde_data(d, n).or_py()?,
        })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: quadland::io::read_dataset_csv(path).or_py()?,
        })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        quadland::io::write_dataset_csv(path, &self.inner).or_py()
    }

    fn labeled(&self, teacher: &PyTeacher) -> PyResult<Self> {
        Ok(Self {
            inner: quadland::label_dataset(&self.inner, &teacher.inner).or_py()?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.inputs())
    }

    #[getter]
    fn labels(&self) -> Option<Vec<f64>> {
        self.inner.labels().map(|y| y.iter().copied().collect())
    }
}

#[pyfunction]
fn moments<'py>(py: Python<'py>, dist: &str) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &moments_of(&parse_dist(dist)?))
}

/// Closed-form population risk of a symmetric discrepancy `A`.
#[pyfunction]
#[pyo3(signature = (a, mu2 = 1.0, mu4 = 3.0))]
fn population_risk<'py>(py: Python<'py>, a: Vec<Vec<f64>>, mu2: f64, mu4: f64) -> PyResult<Bound<'py, PyAny>> {
    let disc = Discrepancy::new(matrix_from_rows(&a)?).or_py()?;
    to_dict(py, &risk::population_risk(&disc, &Moments::new(mu2, mu4).or_py()?))
}

#[pyfunction]
#[pyo3(signature = (weights, teacher, dist = "gaussian"))]
fn population_risk_of<'py>(
    py: Python<'py>,
    weights: Vec<Vec<f64>>,
    teacher: &PyTeacher,
    dist: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let report = risk::population_risk_of(&student(&weights)?, &teacher.inner, &moments_of(&parse_dist(dist)?)).or_py()?;
    to_dict(py, &report)
}

#[pyfunction]
fn empirical_risk(weights: Vec<Vec<f64>>, dataset: &PyDataset) -> PyResult<f64> {
    risk::empirical_risk(&student(&weights)?, &dataset.inner).or_py()
}

#[pyfunction]
fn empirical_gradient(weights: Vec<Vec<f64>>, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_to_rows(&risk::empirical_gradient(&student(&weights)?, &dataset.inner).or_py()?))
}

/// Barrier value; `mode="empirical"` uses moments truncated at the
/// dataset's largest entry.
#[pyfunction]
#[pyo3(signature = (teacher, dist = "gaussian", mode = "population", dataset = None))]
fn energy_barrier(teacher: &PyTeacher, dist: &str, mode: &str, dataset: Option<&PyDataset>) -> PyResult<f64> {
    let law = parse_dist(dist)?;
    match (mode, dataset) {
        ("population", _) => landscape::energy_barrier(&teacher.inner, &moments_of(&law), BarrierMode::Population).or_py(),
        ("empirical", Some(ds)) => {
            let m = landscape::empirical_barrier_moments(&law, &ds.inner, None).or_py()?;
            landscape::energy_barrier(&teacher.inner, &m, BarrierMode::Empirical).or_py()
        }
        ("empirical", None) => Err(PyValueError::new_err("empirical barrier needs a dataset")),
        (other, _) => Err(PyValueError::new_err(format!("unknown barrier mode '{other}'"))),
    }
}

#[pyfunction]
fn worst_rank_deficient(teacher: &PyTeacher) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_to_rows(landscape::worst_rank_deficient(&teacher.inner).or_py()?.weights()))
}

#[pyfunction]
#[pyo3(signature = (teacher, trials, seed, dist = "gaussian"))]
fn rank_deficient_sweep<'py>(
    py: Python<'py>,
    teacher: &PyTeacher,
    trials: usize,
    seed: u64,
    dist: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let sweep = landscape::rank_deficient_sweep(&teacher.inner, &moments_of(&parse_dist(dist)?), trials, seed).or_py()?;
    to_dict(py, &sweep)
}

#[pyfunction]
#[pyo3(signature = (m, d, mode = "m"))]
fn identity_init(m: usize, d: usize, mode: &str) -> PyResult<Vec<Vec<f64>>> {
    let mode: ScaleMode = mode.parse().or_py()?;
    Ok(matrix_to_rows(qinit::identity_init(m, d, mode).or_py()?.weights()))
}

#[pyfunction]
fn wishart_spectrum_report<'py>(py: Python<'py>, teacher: &PyTeacher) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &qinit::wishart_spectrum_report(&teacher.inner).or_py()?)
}

/// Runs gradient descent on the empirical risk of `dataset`, or on the
/// population risk when no dataset is given.
#[pyfunction]
#[pyo3(signature = (init, teacher, dataset = None, dist = "gaussian", grad_tol = 1e-8, max_iters = 1_000_000, record_every = 100))]
#[allow(clippy::too_many_arguments)]
fn gradient_descent<'py>(
    py: Python<'py>,
    init: Vec<Vec<f64>>,
    teacher: &PyTeacher,
    dataset: Option<&PyDataset>,
    dist: &str,
    grad_tol: f64,
    max_iters: usize,
    record_every: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let law = parse_dist(dist)?;
    let objective = match dataset {
        Some(ds) => Objective::Empirical {
            dataset: &ds.inner,
            moments: landscape::empirical_barrier_moments(&law, &ds.inner, None).or_py()?,
        },
        None => Objective::Population {
            moments: moments_of(&law),
        },
    };
    let config = GdConfig {
        step_policy: StepPolicy::backtracking(),
        grad_tol,
        max_iters,
        record_every,
    };
    let init = student(&init)?;
    let traj = py
        .detach(|| optimize::gradient_descent(&init, &teacher.inner, &objective, &config))
        .or_py()?;
    let cert = landscape::certify_stationary_global(&traj.final_weights, &teacher.inner, &objective, grad_tol, 1e-6)
        .or_py()?;
    let out = PyDict::new(py);
    out.set_item("final_weights", matrix_to_rows(traj.final_weights.weights()))?;
    out.set_item("termination", to_dict(py, &traj.termination)?)?;
    out.set_item("iterations", traj.iterations)?;
    out.set_item("barrier", traj.barrier)?;
    out.set_item("min_sigma_min", traj.min_sigma_min)?;
    out.set_item("records", to_dict(py, &traj.records)?)?;
    out.set_item("certificate", to_dict(py, &cert)?)?;
    Ok(out.into_any())
}

#[pyfunction]
fn critical_sample_count(d: usize) -> usize {
    geometry::critical_sample_count(d)
}

#[pyfunction]
fn spans_symmetric<'py>(py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &geometry::spans_symmetric(&dataset.inner))
}

#[pyfunction]
fn prime_span_certificate<'py>(py: Python<'py>, d: usize, n: usize) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &geometry::prime_span_certificate(d, n).or_py()?)
}

#[pyfunction]
fn recover_gram_discrepancy<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    weights: Vec<Vec<f64>>,
    teacher: &PyTeacher,
) -> PyResult<Bound<'py, PyAny>> {
    let rec = geometry::recover_gram_discrepancy(&dataset.inner, &student(&weights)?, &teacher.inner).or_py()?;
    let out = PyDict::new(py);
    out.set_item("m_hat", matrix_to_rows(&rec.m_hat))?;
    out.set_item("residual_norm", rec.residual_norm)?;
    Ok(out.into_any())
}

#[pyfunction]
#[pyo3(signature = (teacher, dataset, target_rows, dist = "gaussian"))]
fn null_interpolator<'py>(
    py: Python<'py>,
    teacher: &PyTeacher,
    dataset: &PyDataset,
    target_rows: usize,
    dist: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let r = geometry::null_interpolator(&teacher.inner, &dataset.inner, target_rows, &moments_of(&parse_dist(dist)?), None)
        .or_py()?;
    let out = PyDict::new(py);
    out.set_item("student", matrix_to_rows(r.student.weights()))?;
    out.set_item("delta", r.delta)?;
    out.set_item("null_direction", matrix_to_rows(&r.null_direction))?;
    out.set_item("certificate", to_dict(py, &r.certificate)?)?;
    Ok(out.into_any())
}

#[pymodule]
#[pyo3(name = "quadland")]
fn quadland_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTeacher>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(population_risk, m)?)?;
    m.add_function(wrap_pyfunction!(population_risk_of, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_risk, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(energy_barrier, m)?)?;
    m.add_function(wrap_pyfunction!(worst_rank_deficient, m)?)?;
    m.add_function(wrap_pyfunction!(rank_deficient_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(identity_init, m)?)?;
    m.add_function(wrap_pyfunction!(wishart_spectrum_report, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_descent, m)?)?;
    m.add_function(wrap_pyfunction!(critical_sample_count, m)?)?;
    m.add_function(wrap_pyfunction!(spans_symmetric, m)?)?;
    m.add_function(wrap_pyfunction!(prime_span_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(recover_gram_discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(null_interpolator, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
