use drivecov::coverage::{dispersion_of, k_epsilon_report, kwise_coverage};
use drivecov::orchestrator::{parse_bucket_spec, run_campaign, summarize_by_bucket, CampaignOptions, ScenarioConfig, TestReport};
use drivecov::param_space::ParameterSpace;
use drivecov::sampler::{halton_point, radical_inverse, read_points_csv, sample_mixed, SampleSet, Strategy, StrategyKind};
use drivecov::{opendrive, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Sim(_) | Error::Stream(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn strategy(name: &str) -> PyResult<StrategyKind> {
    name.parse().map_err(to_py)
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "ParameterSpace", module = "drivecov", frozen)]
struct PySpace {
    inner: ParameterSpace,
}

#[pymethods]
impl PySpace {
    /// Builds a space from a JSON list of interval/enum declarations.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySpace { inner: ParameterSpace::from_json(text).map_err(to_py)? })
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().into_iter().map(String::from).collect()
    }

    fn bit_width(&self) -> usize {
        self.inner.bit_width()
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }

    /// Draws `n` vectors; returns them as CSV text.
    #[pyo3(signature = (n, strategy = "halton", seed = 0))]
    fn sample_csv(&self, n: usize, strategy: &str, seed: u64) -> PyResult<String> {
        let set = self.draw(n, strategy, seed)?;
        let mut buf = Vec::new();
        set.write_csv(&mut buf).map_err(to_py)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }

    /// Unit-cube coordinates of `n` drawn vectors.
    #[pyo3(signature = (n, strategy = "halton", seed = 0))]
    fn sample_unit(&self, n: usize, strategy: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.draw(n, strategy, seed)?.unit_points().map_err(to_py)
    }

    /// k-wise and dispersion report of a points CSV, as JSON.
    #[pyo3(signature = (csv_text, k = 3))]
    fn coverage_json(&self, csv_text: &str, k: usize) -> PyResult<String> {
        let set = read_points_csv(&self.inner, csv_text.as_bytes()).map_err(to_py)?;
        json(&k_epsilon_report(&set, k).map_err(to_py)?)
    }

    fn __repr__(&self) -> String {
        format!("ParameterSpace({})", self.names().join(", "))
    }
}

impl PySpace {
    fn draw(&self, n: usize, kind: &str, seed: u64) -> PyResult<SampleSet> {
        let kind = strategy(kind)?;
        if kind.is_search() {
            return Err(PyValueError::new_err("search strategies need a scenario; use Scenario.run"));
        }
        sample_mixed(&self.inner, &Strategy::plain(kind, n), seed).map_err(to_py)
    }
}

#[pyclass(name = "Report", module = "drivecov", frozen)]
struct PyReport {
    inner: TestReport,
}

#[pymethods]
impl PyReport {
    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    #[getter]
    fn fail_pct(&self) -> f64 {
        self.inner.summary.fail_pct
    }

    #[getter]
    fn failed(&self) -> usize {
        self.inner.summary.failed
    }

    #[getter]
    fn collisions(&self) -> usize {
        self.inner.summary.collisions
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.summary.config_hash.clone()
    }

    #[getter]
    fn dispersion(&self) -> Option<f64> {
        self.inner.summary.coverage.as_ref().and_then(|c| c.dispersion.as_ref()).map(|d| d.value)
    }

    fn csv(&self) -> PyResult<String> {
        self.inner.csv_string().map_err(to_py)
    }

    fn summary_json(&self) -> PyResult<String> {
        json(&self.inner.summary)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Grouped counts for a bucket spec such as `fog:0.5;nlanes`, as JSON.
    fn buckets_json(&self, spec: &str) -> PyResult<String> {
        let rules = parse_bucket_spec(spec).map_err(to_py)?;
        json(&summarize_by_bucket(&self.inner.table(), &rules).map_err(to_py)?)
    }
}

#[pyclass(name = "Scenario", module = "drivecov", frozen)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyScenario { inner: ScenarioConfig::load(path.as_ref()).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyScenario { inner: ScenarioConfig::from_json(text).map_err(to_py)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn space(&self) -> PySpace {
        PySpace { inner: self.inner.params.clone() }
    }

    #[pyo3(signature = (iterations = None, seed = None, strategy = None, jobs = 1))]
    fn run(
        &self,
        py: Python<'_>,
        iterations: Option<usize>,
        seed: Option<u64>,
        strategy: Option<&str>,
        jobs: usize,
    ) -> PyResult<PyReport> {
        let opts = CampaignOptions {
            iterations,
            seed,
            strategy: strategy.map(self::strategy).transpose()?,
            jobs,
            export_opendrive: None,
        };
        let inner = py.detach(|| run_campaign(&self.inner, &opts)).map_err(to_py)?;
        Ok(PyReport { inner })
    }

    /// OpenDRIVE XML of the network instantiated at the `index`-th (1-based) sampled vector.
    fn opendrive(&self, index: usize) -> PyResult<String> {
        if index == 0 {
            return Err(PyValueError::new_err("index is 1-based"));
        }
        let kind = self.inner.test.strategy.base();
        let set = sample_mixed(&self.inner.params, &Strategy::plain(kind, index), self.inner.test.seed).map_err(to_py)?;
        let v = &set.samples[index - 1].vector;
        let net = self.inner.instantiate(v).map_err(to_py)?.network;
        opendrive::to_xml(&net, &format!("iteration_{index:04}")).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(name = "radical_inverse")]
fn py_radical_inverse(base: u64, index: u64) -> PyResult<f64> {
    radical_inverse(base, index).map_err(to_py)
}

#[pyfunction]
#[pyo3(name = "halton_point")]
fn py_halton_point(index: u64, bases: Vec<u64>) -> PyResult<Vec<f64>> {
    halton_point(index, &bases).map_err(to_py)
}

/// Dispersion of unit-cube points: exact up to 2 dimensions, estimated above.
#[pyfunction]
fn dispersion(points: Vec<Vec<f64>>) -> PyResult<f64> {
    let d = points.first().map_or(0, Vec::len);
    Ok(dispersion_of(&points, d).map_err(to_py)?.value)
}

/// Fraction of k-wise bit patterns covered by `bits`.
#[pyfunction]
fn kwise_fraction(bits: Vec<Vec<bool>>, k: usize) -> PyResult<f64> {
    let r = kwise_coverage(&bits, k).map_err(to_py)?;
    Ok(r.covered as f64 / r.total_combinations as f64)
}

#[pymodule]
#[pyo3(name = "drivecov")]
fn drivecov_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySpace>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(py_radical_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(py_halton_point, m)?)?;
    m.add_function(wrap_pyfunction!(dispersion, m)?)?;
    m.add_function(wrap_pyfunction!(kwise_fraction, m)?)?;
    Ok(())
}
