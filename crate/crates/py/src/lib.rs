//! Python bindings: `import ventus`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use ventus_core::container::ModelContainer;
use ventus_core::decomposition::{self, Decomposition, EemdConfig};
use ventus_core::econometrics::{self, RegressionSpec};
use ventus_core::gridcaster::{self, GridForecaster};
use ventus_core::hybrid_eval::{self, ForecastBundle};
use ventus_core::ingestion::{self, SyntheticScenario, TwoToneScenario};
use ventus_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Ensemble empirical mode decomposition. Returns the IMFs (fastest first)
/// followed by the residue.
#[pyfunction]
#[pyo3(signature = (x, ensemble_size=50, noise_amplitude=0.2, seed=0, max_imfs=None))]
fn eemd(
    py: Python<'_>,
    x: Vec<f64>,
    ensemble_size: usize,
    noise_amplitude: f64,
    seed: u64,
    max_imfs: Option<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = EemdConfig {
        ensemble_size,
        noise_amplitude,
        seed,
        max_imfs,
        ..EemdConfig::default()
    };
    let d = py
        .detach(|| decomposition::eemd(&x, &cfg))
        .map_err(py_err)?;
    Ok(d.components().map(<[f64]>::to_vec).collect())
}

/// Sum of components as returned by `eemd`.
#[pyfunction]
fn recompose(components: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let Some((residue, imfs)) = components.split_last() else {
        return Err(PyValueError::new_err("at least one component is required"));
    };
    if imfs.iter().any(|c| c.len() != residue.len()) {
        return Err(PyValueError::new_err("components differ in length"));
    }
    Ok(decomposition::recompose(&Decomposition {
        imfs: imfs.to_vec(),
        residue: residue.clone(),
        meta: EemdConfig::default(),
    }))
}

#[pyfunction]
fn rmse(predictions: Vec<f64>, truths: Vec<f64>) -> PyResult<f64> {
    hybrid_eval::rmse(&predictions, &truths).map_err(py_err)
}

/// `(intercept, slope)` of the least-squares line of `y` on `x`.
#[pyfunction]
fn simple_regression(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(PyValueError::new_err(
            "x and y must be non-empty and of equal length",
        ));
    }
    let (a, b, _) = gridcaster::simple_regression(&x, &y);
    Ok((a, b))
}

#[pyfunction]
#[pyo3(signature = (hours=1200, seed=0))]
fn two_tone_series(hours: usize, seed: u64) -> PyResult<Vec<f64>> {
    let s = TwoToneScenario {
        hours,
        ..TwoToneScenario::new(seed)
    };
    ingestion::two_tone_series(&s).map_err(py_err)
}

/// Aggregate-thermal fixed-effects fit of a generation CSV; returns
/// `{name: (coefficient, std_error, t_stat)}`.
#[pyfunction]
fn fit_fixed_effects<'py>(
    py: Python<'py>,
    generation_csv: PathBuf,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = py
        .detach(|| {
            let panel = ingestion::load_generation_csv(&generation_csv)?;
            econometrics::fit_fixed_effects(&panel, &RegressionSpec::default())
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    for (i, name) in fit.names.iter().enumerate() {
        out.set_item(
            name,
            (fit.coefficients[i], fit.standard_errors[i], fit.t_stats[i]),
        )?;
    }
    Ok(out)
}

/// Per-plant labels for every thermal plant in a generation CSV.
#[pyfunction]
fn classify_plants<'py>(py: Python<'py>, generation_csv: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let labels = py
        .detach(|| {
            let panel = ingestion::load_generation_csv(&generation_csv)?;
            let plants: Vec<String> = panel
                .plants(ventus_core::data::Technology::Thermal)
                .into_iter()
                .map(String::from)
                .collect();
            econometrics::classify_plants(&panel, &plants, &RegressionSpec::default())
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    for c in labels {
        out.set_item(c.plant_id, c.label.to_string())?;
    }
    Ok(out)
}

/// Writes a seeded synthetic scenario to `out` and returns the planted
/// plant labels.
#[pyfunction]
#[pyo3(signature = (out, seed=0, hours=1440))]
fn synth<'py>(
    py: Python<'py>,
    out: PathBuf,
    seed: u64,
    hours: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let labels = py
        .detach(|| -> ventus_core::Result<_> {
            let s = ingestion::generate_synthetic(&SyntheticScenario::new(seed, hours))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            ingestion::write_generation_csv(&s.panel, &out.join("generation.csv"))?;
            ingestion::write_grid_tensor(&s.grid, &out.join("grid.gt1"))?;
            ingestion::write_locations_csv(&s.locations, &out.join("locations.csv"))?;
            ingestion::write_station_csv(&s.stations, &out.join("stations.csv"))?;
            Ok(s.planted_labels)
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    for (k, v) in labels {
        d.set_item(k, v.to_string())?;
    }
    Ok(d)
}

/// Per-lead skill of a forecast bundle directory; returns
/// `(rows, crossover_lead)` with rows `(lead, rmse_model, rmse_baseline,
/// normalized_rmse, improvement)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn evaluate(bundle_dir: PathBuf) -> PyResult<(Vec<(usize, f64, f64, f64, f64)>, Option<usize>)> {
    let bundle = ForecastBundle::read(&bundle_dir).map_err(py_err)?;
    let r = hybrid_eval::skill_report(&bundle, &[(14, 38)]).map_err(py_err)?;
    let rows = r
        .leads
        .iter()
        .map(|l| {
            (
                l.lead_hours,
                l.rmse_model,
                l.rmse_baseline,
                l.normalized_rmse,
                l.improvement,
            )
        })
        .collect();
    Ok((rows, r.crossover_lead))
}

/// Runs the command-line tool in-process; returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("ventus".to_string()).chain(args).collect();
    py.detach(|| ventus_cli::run(argv))
}

/// Trained grid model loaded from a `grid.vtm` file.
#[pyclass(name = "GridForecaster", module = "ventus")]
struct PyGridForecaster {
    inner: GridForecaster,
}

#[pymethods]
impl PyGridForecaster {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = ModelContainer::read(&path).map_err(py_err)?;
        Ok(Self {
            inner: GridForecaster::from_container(&c).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_container().write(&path).map_err(py_err)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.inner.spec.variables.clone()
    }

    /// Forecast states `issue + 1 ..= issue + steps` of a GT1 file, as
    /// nested lists `[step][variable][lat][lon]`.
    fn forecast(
        &self,
        py: Python<'_>,
        grid: PathBuf,
        issue: usize,
        steps: usize,
    ) -> PyResult<Vec<Vec<Vec<Vec<f64>>>>> {
        let states = py
            .detach(|| {
                let seq = ingestion::load_grid_tensor(&grid)?;
                self.inner.forecast_from(&seq, issue, steps, None)
            })
            .map_err(py_err)?;
        Ok(states
            .iter()
            .map(|s| {
                s.outer_iter()
                    .map(|v| v.outer_iter().map(|row| row.to_vec()).collect())
                    .collect()
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "GridForecaster(variables={:?}, n_params={})",
            self.inner.spec.variables,
            self.inner.n_params()
        )
    }
}

#[pymodule]
fn ventus(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(eemd, m)?)?;
    m.add_function(wrap_pyfunction!(recompose, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(simple_regression, m)?)?;
    m.add_function(wrap_pyfunction!(two_tone_series, m)?)?;
    m.add_function(wrap_pyfunction!(fit_fixed_effects, m)?)?;
    m.add_function(wrap_pyfunction!(classify_plants, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<PyGridForecaster>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
