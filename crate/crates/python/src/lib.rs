//! Python bindings. Matrices cross the boundary as lists of rows and
//! variable indices are 0-based, as in the Rust API.

use std::path::PathBuf;

use mantour_core::data::{ingest_csv, standardize, CsvSchema};
use mantour_core::manual::radial_tour_path_with;
use mantour_core::session::SessionConfig;
use mantour_core::slicing::{expected_slice_count as expected_count, manual_slice_path};
use mantour_core::{
    gram_schmidt as gs, slice_distances as distances, ManualRequest, ProjectionMatrix, SliceSpec,
    TourError, UpdateMethod,
};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Rows = Vec<Vec<f64>>;

fn py_err(e: TourError) -> PyErr {
    match e {
        TourError::Io(msg) => PyOSError::new_err(msg),
        other => PyValueError::new_err(format!("{}: {other}", other.code())),
    }
}

fn method(name: &str) -> PyResult<UpdateMethod> {
    name.parse().map_err(py_err)
}

fn projection(rows: &[Vec<f64>]) -> PyResult<ProjectionMatrix> {
    ProjectionMatrix::from_rows(rows).map_err(py_err)
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, TourError> {
    let p = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != p) {
        return Err(TourError::DimensionMismatch {
            what: "row length",
            expected: p,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// Random p x d orthonormal matrix drawn from `seed`.
#[pyfunction]
#[pyo3(signature = (p, d, seed = 0))]
fn random_projection(p: usize, d: usize, seed: u64) -> PyResult<Rows> {
    ProjectionMatrix::random(p, d, &mut ChaCha8Rng::seed_from_u64(seed))
        .map(|a| a.rows())
        .map_err(py_err)
}

/// Orthonormal columns spanning the columns of `m`, in order.
#[pyfunction]
fn gram_schmidt(m: Rows) -> PyResult<Rows> {
    let m = from_rows(&m).map_err(py_err)?;
    gs(&m, None).map(|a| a.rows()).map_err(py_err)
}

/// One manual update moving row `var` of `a` toward `target`.
#[pyfunction]
#[pyo3(signature = (a, var, target, method = "exact_zeroed", seed = 0))]
fn manual_update(a: Rows, var: usize, target: Vec<f64>, method: &str, seed: u64) -> PyResult<Rows> {
    Updater::new(method, seed)?.apply(a, var, target)
}

/// Frames of a radial tour of variable `var`.
#[pyfunction]
#[pyo3(signature = (a, var, steps, method = "exact_zeroed", seed = 0))]
fn radial_tour(a: Rows, var: usize, steps: usize, method: &str, seed: u64) -> PyResult<Vec<Rows>> {
    let a = projection(&a)?;
    let mut updater = mantour_core::Updater::new(self::method(method)?, seed);
    let path = radial_tour_path_with(&a, var, steps, &mut updater).map_err(py_err)?;
    Ok(path.frames.iter().map(ProjectionMatrix::rows).collect())
}

/// Orthogonal distances from the slice plane and the in-slice mask.
#[pyfunction]
fn slice_distances(data: Rows, a: Rows, center: Vec<f64>, h: f64) -> PyResult<(Vec<f64>, Vec<bool>)> {
    let data = from_rows(&data).map_err(py_err)?;
    let spec = SliceSpec::new(center, h).map_err(py_err)?;
    let res = distances(&data, &projection(&a)?, &spec).map_err(py_err)?;
    Ok((res.distances, res.mask))
}

/// Expected number of uniform-ball points inside a central 2-d slice.
#[pyfunction]
fn expected_slice_count(h: f64, p: usize, r: f64, n: f64) -> PyResult<f64> {
    expected_count(h, p, r, n).map_err(py_err)
}

/// Slice centers of a sweep along `axis`: out to +extent, back, out to
/// -extent, back.
#[pyfunction]
fn slice_sweep(center: Vec<f64>, h: f64, axis: usize, extent: f64, steps: usize) -> PyResult<Vec<Vec<f64>>> {
    let spec = SliceSpec::new(center, h).map_err(py_err)?;
    let path = manual_slice_path(&spec, axis, extent, steps).map_err(py_err)?;
    Ok(path.iter().map(|s| s.center().to_vec()).collect())
}

/// Stateful update dispatcher; keeps the random stream and carried basis
/// between calls.
#[pyclass]
struct Updater {
    inner: mantour_core::Updater,
}

#[pymethods]
impl Updater {
    #[new]
    #[pyo3(signature = (method = "simple", seed = 0))]
    fn new(method: &str, seed: u64) -> PyResult<Self> {
        Ok(Updater {
            inner: mantour_core::Updater::new(self::method(method)?, seed),
        })
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method().as_str()
    }

    fn apply(&mut self, a: Rows, var: usize, target: Vec<f64>) -> PyResult<Rows> {
        let a = projection(&a)?;
        self.inner
            .apply(&a, &ManualRequest::new(var, target))
            .map(|b| b.rows())
            .map_err(py_err)
    }
}

/// A tour session driven by JSON protocol messages.
#[pyclass]
struct Session {
    inner: mantour_core::Session,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (data, standardize = false, seed = 0, method = "simple", d = 2, height = None))]
    fn new(data: PathBuf, standardize: bool, seed: u64, method: &str, d: usize, height: Option<f64>) -> PyResult<Self> {
        let mut ds = ingest_csv(&data, &CsvSchema::default()).map_err(py_err)?;
        if standardize {
            ds = self::standardize(&ds).map_err(py_err)?;
        }
        let config = SessionConfig {
            d,
            seed,
            method: self::method(method)?,
            thickness: height,
            ..SessionConfig::default()
        };
        Ok(Session {
            inner: mantour_core::Session::new(ds, config).map_err(py_err)?,
        })
    }

    /// Applies one JSON message and returns the JSON reply.
    fn handle(&mut self, line: &str) -> String {
        self.inner.handle_line(line).to_json()
    }

    /// The current frame as JSON.
    fn frame(&self) -> PyResult<String> {
        let frame = self.inner.frame().map_err(py_err)?;
        Ok(mantour_core::Reply::Frame(frame).to_json())
    }

    #[getter]
    fn projection(&self) -> Rows {
        self.inner.projection().rows()
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method().as_str()
    }

    #[getter]
    fn var_names(&self) -> Vec<String> {
        self.inner.dataset().var_names.clone()
    }
}

#[pymodule]
#[pyo3(name = "mantour")]
fn mantour_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(random_projection, m)?)?;
    m.add_function(wrap_pyfunction!(gram_schmidt, m)?)?;
    m.add_function(wrap_pyfunction!(manual_update, m)?)?;
    m.add_function(wrap_pyfunction!(radial_tour, m)?)?;
    m.add_function(wrap_pyfunction!(slice_distances, m)?)?;
    m.add_function(wrap_pyfunction!(expected_slice_count, m)?)?;
    m.add_function(wrap_pyfunction!(slice_sweep, m)?)?;
    m.add_class::<Updater>()?;
    m.add_class::<Session>()?;
    Ok(())
}
