//! Python bindings for the clock-model simulator and its analysis tools.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ktclock::analysis::{self, FitResult, Series};
use ktclock::clock_mc::{Sampler, SimulationParams, Start};
use ktclock::estimators::{measure, EdgeConvention};
use ktclock::lattice::{build_lattice, LatticeGeometry};
use ktclock::runner::{run_sweep as run_sweep_impl, SweepConfig, SweepOptions};

fn py_err(e: ktclock::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn series(x: Vec<f64>, y: Vec<f64>, err: Option<Vec<f64>>) -> PyResult<Series> {
    Series::new(x, y, err).map_err(py_err)
}

/// Periodic L x L lattice with directed edges.
#[pyclass(name = "Lattice", module = "pyktclock", frozen)]
struct PyLattice {
    inner: LatticeGeometry,
}

#[pymethods]
impl PyLattice {
    #[new]
    fn new(l: usize) -> PyResult<Self> {
        Ok(PyLattice {
            inner: build_lattice(l).map_err(py_err)?,
        })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn pair_class_count(&self) -> usize {
        self.inner.pair_class_count()
    }

    /// `(tail, head, "horizontal" | "vertical")`
    fn edge(&self, index: usize) -> PyResult<(usize, usize, String)> {
        self.inner.check_edge(index).map_err(py_err)?;
        let e = self.inner.edge(index);
        let o = match e.orientation {
            ktclock::Orientation::Horizontal => "horizontal",
            ktclock::Orientation::Vertical => "vertical",
        };
        Ok((e.tail, e.head, o.to_string()))
    }

    /// Right, up, left, down.
    fn neighbors(&self, vertex: usize) -> PyResult<[usize; 4]> {
        if vertex >= self.inner.vertex_count() {
            return Err(PyValueError::new_err(format!("vertex {vertex} out of range")));
        }
        Ok(*self.inner.neighbors(vertex))
    }

    fn __repr__(&self) -> String {
        format!("Lattice(L={})", self.inner.size())
    }
}

/// Result of a linear or shifted power-law fit.
#[pyclass(name = "Fit", module = "pyktclock", frozen)]
struct PyFit {
    inner: FitResult,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn model(&self) -> &'static str {
        match self.inner.model {
            analysis::FitModel::Linear => "linear",
            analysis::FitModel::ShiftedPowerLaw => "shifted-power-law",
        }
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn uncertainties(&self) -> Vec<f64> {
        self.inner.uncertainties.clone()
    }

    #[getter]
    fn rss(&self) -> f64 {
        self.inner.rss
    }

    #[getter]
    fn window(&self) -> (f64, f64) {
        self.inner.window
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Fit({}, {:?})", self.model(), self.inner.coefficients)
    }
}

/// Simulates one (d, L, T) point and returns its observable record.
#[pyfunction]
#[pyo3(signature = (d, l, temperature, *, thermalization_sweeps=2000, measurement_sweeps=20000,
    measurement_interval=10, pair_measurement_interval=10, sampler="metropolis+cluster",
    random_start=false, bins=32, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    d: usize,
    l: usize,
    temperature: f64,
    thermalization_sweeps: usize,
    measurement_sweeps: usize,
    measurement_interval: usize,
    pair_measurement_interval: usize,
    sampler: &str,
    random_start: bool,
    bins: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut p = SimulationParams::new(d, l, temperature);
    p.thermalization_sweeps = thermalization_sweeps;
    p.measurement_sweeps = measurement_sweeps;
    p.measurement_interval = measurement_interval;
    p.pair_measurement_interval = pair_measurement_interval;
    p.sampler = sampler.parse::<Sampler>().map_err(py_err)?;
    if random_start {
        p.start = Start::Random;
    }
    p.bins = bins;
    p.seed = seed;
    let record = py
        .detach(|| {
            let geom = build_lattice(l)?;
            let (acc, _) = measure(&geom, &p, EdgeConvention::default())?;
            acc.finish(temperature, seed)
        })
        .map_err(py_err)?;
    serialize(py, &record)
}

/// Exact averages by enumeration (small lattices only).
#[pyfunction]
fn enumerate_clock<'py>(py: Python<'py>, d: usize, l: usize, temperature: f64) -> PyResult<Bound<'py, PyAny>> {
    let t = py
        .detach(|| ktclock::quantum_oracle::enumerate_clock(d, l, temperature))
        .map_err(py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("d", t.d)?;
    dict.set_item("L", t.l)?;
    dict.set_item("T", t.temperature)?;
    dict.set_item("log_z", t.log_z)?;
    dict.set_item("GE", t.ge)?;
    dict.set_item("GEt", t.get)?;
    dict.set_item("Q", t.q)?;
    dict.set_item("Um", t.um)?;
    dict.set_item("E_mean", t.e_mean)?;
    dict.set_item("Cv", t.cv)?;
    Ok(dict.into_any())
}

/// Compares deformed-state marginals with enumeration; returns the report.
#[pyfunction]
fn verify_mapping<'py>(py: Python<'py>, d: usize, l: usize, beta: f64) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| ktclock::quantum_oracle::verify_mapping(d, l, beta))
        .map_err(py_err)?;
    serialize(py, &report)
}

#[pyfunction]
#[pyo3(signature = (x, y, err=None, window=None))]
fn fit_linear(x: Vec<f64>, y: Vec<f64>, err: Option<Vec<f64>>, window: Option<(f64, f64)>) -> PyResult<PyFit> {
    let inner = analysis::fit_linear(&series(x, y, err)?, window).map_err(py_err)?;
    Ok(PyFit { inner })
}

#[pyfunction]
#[pyo3(signature = (x, y, err=None, window=None))]
fn fit_powerlaw(x: Vec<f64>, y: Vec<f64>, err: Option<Vec<f64>>, window: Option<(f64, f64)>) -> PyResult<PyFit> {
    let inner = analysis::fit_powerlaw(&series(x, y, err)?, window).map_err(py_err)?;
    Ok(PyFit { inner })
}

/// `(x, uncertainty)` of the intersection inside `(lo, hi)`.
#[pyfunction]
fn intersect_fits(linear: &PyFit, power: &PyFit, bracket: (f64, f64)) -> PyResult<(f64, f64)> {
    let ix = analysis::intersect_fits(&linear.inner, &power.inner, bracket).map_err(py_err)?;
    Ok((ix.x, ix.uncertainty))
}

/// `(x_peak, uncertainty)`
#[pyfunction]
#[pyo3(signature = (x, y, err=None))]
fn find_peak(x: Vec<f64>, y: Vec<f64>, err: Option<Vec<f64>>) -> PyResult<(f64, f64)> {
    let p = analysis::find_peak(&series(x, y, err)?).map_err(py_err)?;
    Ok((p.x, p.uncertainty))
}

#[pyfunction]
#[pyo3(signature = (x, y, smoothing=1.0))]
fn derivative(x: Vec<f64>, y: Vec<f64>, smoothing: f64) -> PyResult<Vec<f64>> {
    Ok(analysis::derivative(&series(x, y, None)?, smoothing).map_err(py_err)?.y)
}

/// `curves` is a list of `(L, x, y)` with increasing L; returns `(T_c, spread)`.
#[pyfunction]
fn cumulant_crossing(curves: Vec<(usize, Vec<f64>, Vec<f64>)>) -> PyResult<(f64, f64)> {
    let s = curves
        .into_iter()
        .map(|(l, x, y)| Ok(series(x, y, None)?.with_meta(0, l, "Um")))
        .collect::<PyResult<Vec<_>>>()?;
    let c = analysis::cumulant_crossing(&s).map_err(py_err)?;
    Ok((c.t_c, c.spread))
}

/// Runs a sweep from a JSON config string; returns the records.
#[pyfunction]
#[pyo3(signature = (config_json, out, workers=None, resume=false))]
fn run_sweep<'py>(
    py: Python<'py>,
    config_json: &str,
    out: &str,
    workers: Option<usize>,
    resume: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = SweepConfig::from_json(config_json).map_err(py_err)?;
    let options = SweepOptions {
        out: out.into(),
        workers,
        resume,
        max_new_cells: None,
    };
    let summary = py.detach(|| run_sweep_impl(&config, &options)).map_err(py_err)?;
    serialize(py, &summary.records)
}

#[pymodule]
fn pyktclock(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLattice>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_clock, m)?)?;
    m.add_function(wrap_pyfunction!(verify_mapping, m)?)?;
    m.add_function(wrap_pyfunction!(fit_linear, m)?)?;
    m.add_function(wrap_pyfunction!(fit_powerlaw, m)?)?;
    m.add_function(wrap_pyfunction!(intersect_fits, m)?)?;
    m.add_function(wrap_pyfunction!(find_peak, m)?)?;
    m.add_function(wrap_pyfunction!(derivative, m)?)?;
    m.add_function(wrap_pyfunction!(cumulant_crossing, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
