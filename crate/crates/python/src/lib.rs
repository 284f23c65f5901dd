//! Python bindings for the inpainting engine: numpy-facing wrappers over the
//! grid, spectral, schedule, diffusion, mixture-oracle, metric, and
//! experiment surfaces. Latents cross the boundary as float64 arrays of
//! shape (channels, height, width); band masks as uint8 arrays of shape
//! (height, width).

use ndarray::Array3;
use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::Path;

use ntn_core::diffusion::{self, PromptSpec};
use ntn_core::error::Error;
use ntn_core::experiment::{cmd_make_testbed, parse_draft, resolve, run_experiment};
use ntn_core::gmm::{gmm_posterior_mean, gmm_predict_noise, GmmModel};
use ntn_core::grid::LatentGrid;
use ntn_core::metrics;
use ntn_core::schedule::{make_schedule, NoiseSchedule};
use ntn_core::spectral::{self, SpectralGrid};

fn raise(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } | Error::Snapshot { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn grid_in(arr: &PyReadonlyArray3<'_, f64>) -> PyResult<LatentGrid> {
    LatentGrid::new(arr.as_array().to_owned()).map_err(raise)
}

fn grid_out(py: Python<'_>, grid: LatentGrid) -> Bound<'_, PyArray3<f64>> {
    grid.into_array().into_pyarray(py)
}

fn prompt_from(selector: Option<Vec<usize>>, reweight: Option<Vec<f64>>) -> PromptSpec {
    match selector {
        None => PromptSpec::null(),
        Some(selector) => PromptSpec::Conditioned { selector, reweight },
    }
}

/// Linear-beta noise schedule; `beta(t)` is 1-based, `alpha_bar(0)` is 1.
#[pyclass(frozen)]
struct Schedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl Schedule {
    #[new]
    #[pyo3(signature = (steps=100, beta_start=1e-4, beta_end=2e-2))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        Ok(Self { inner: make_schedule(steps, beta_start, beta_end).map_err(raise)? })
    }

    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn beta(&self, t: usize) -> PyResult<f64> {
        if t < 1 || t > self.inner.steps() {
            return Err(PyValueError::new_err(format!(
                "beta index {t} outside 1..={}",
                self.inner.steps()
            )));
        }
        Ok(self.inner.beta(t))
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        if t > self.inner.steps() {
            return Err(PyValueError::new_err(format!(
                "alpha_bar index {t} outside 0..={}",
                self.inner.steps()
            )));
        }
        Ok(self.inner.alpha_bar(t))
    }
}

/// Isotropic Gaussian-mixture latent model with the exact denoising oracle.
#[pyclass(frozen)]
struct Model {
    inner: GmmModel,
}

#[pymethods]
impl Model {
    #[new]
    fn new(means: Vec<PyReadonlyArray3<'_, f64>>, sigma: f64, weights: Vec<f64>) -> PyResult<Self> {
        let means: Vec<LatentGrid> =
            means.iter().map(grid_in).collect::<PyResult<_>>()?;
        Ok(Self { inner: GmmModel::new(means, sigma, weights).map_err(raise)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: GmmModel = serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("model json: {e}")))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner)
            .map_err(|e| PyValueError::new_err(format!("model json: {e}")))
    }

    fn component_count(&self) -> usize {
        self.inner.component_count()
    }

    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn dims(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn means<'py>(&self, py: Python<'py>) -> Vec<Bound<'py, PyArray3<f64>>> {
        self.inner.means().iter().map(|m| grid_out(py, m.clone())).collect()
    }

    /// E[z0 | z_t] under the (optionally selector-restricted) mixture.
    #[pyo3(signature = (z_t, t, schedule, selector=None, reweight=None))]
    fn posterior_mean<'py>(
        &self,
        py: Python<'py>,
        z_t: PyReadonlyArray3<'py, f64>,
        t: usize,
        schedule: PyRef<'_, Schedule>,
        selector: Option<Vec<usize>>,
        reweight: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let z = grid_in(&z_t)?;
        let prompt = prompt_from(selector, reweight);
        let out = gmm_posterior_mean(&z, t, &self.inner, &prompt, &schedule.inner).map_err(raise)?;
        Ok(grid_out(py, out))
    }

    /// The epsilon-parameterization of the same posterior estimate; t >= 1.
    #[pyo3(signature = (z_t, t, schedule, selector=None, reweight=None))]
    fn predict_noise<'py>(
        &self,
        py: Python<'py>,
        z_t: PyReadonlyArray3<'py, f64>,
        t: usize,
        schedule: PyRef<'_, Schedule>,
        selector: Option<Vec<usize>>,
        reweight: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let z = grid_in(&z_t)?;
        let prompt = prompt_from(selector, reweight);
        let out = gmm_predict_noise(&z, t, &self.inner, &prompt, &schedule.inner).map_err(raise)?;
        Ok(grid_out(py, out))
    }
}

/// Orthonormal 2-D DCT-II per channel.
#[pyfunction]
fn dct2<'py>(
    py: Python<'py>,
    grid: PyReadonlyArray3<'py, f64>,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let g = grid_in(&grid)?;
    Ok(spectral::dct2(&g).as_array().to_owned().into_pyarray(py))
}

/// Inverse of [`dct2`]; exact round trip up to floating-point error.
#[pyfunction]
fn idct2<'py>(
    py: Python<'py>,
    coefficients: PyReadonlyArray3<'py, f64>,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let spec = SpectralGrid::from_array(coefficients.as_array().to_owned()).map_err(raise)?;
    Ok(grid_out(py, spectral::idct2(&spec)))
}

/// Low-pass band membership: bit set iff diagonal index x + y <= threshold.
#[pyfunction]
fn low_pass_mask(
    py: Python<'_>,
    height: usize,
    width: usize,
    threshold: f64,
) -> PyResult<Bound<'_, PyArray2<u8>>> {
    let mask = spectral::low_pass_mask(height, width, threshold).map_err(raise)?;
    Ok(mask.bits().to_owned().into_pyarray(py))
}

/// Mid-pass band membership: bit set iff lower < x + y <= upper.
#[pyfunction]
fn mid_pass_mask(
    py: Python<'_>,
    height: usize,
    width: usize,
    lower: f64,
    upper: f64,
) -> PyResult<Bound<'_, PyArray2<u8>>> {
    let mask = spectral::mid_pass_mask(height, width, lower, upper).map_err(raise)?;
    Ok(mask.bits().to_owned().into_pyarray(py))
}

/// Replaces the recipient's low band (x + y <= threshold) with the donor's.
#[pyfunction]
fn substitute_low_band<'py>(
    py: Python<'py>,
    donor: PyReadonlyArray3<'py, f64>,
    recipient: PyReadonlyArray3<'py, f64>,
    threshold: f64,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let d = grid_in(&donor)?;
    let r = grid_in(&recipient)?;
    let mask = spectral::low_pass_mask(d.height(), d.width(), threshold).map_err(raise)?;
    Ok(grid_out(py, spectral::substitute_band(&d, &r, &mask).map_err(raise)?))
}

/// Replaces the recipient's mid band (lower < x + y <= upper) with the donor's.
#[pyfunction]
fn substitute_mid_band<'py>(
    py: Python<'py>,
    donor: PyReadonlyArray3<'py, f64>,
    recipient: PyReadonlyArray3<'py, f64>,
    lower: f64,
    upper: f64,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let d = grid_in(&donor)?;
    let r = grid_in(&recipient)?;
    let mask = spectral::mid_pass_mask(d.height(), d.width(), lower, upper).map_err(raise)?;
    Ok(grid_out(py, spectral::substitute_band(&d, &r, &mask).map_err(raise)?))
}

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps; t = 0 returns z0.
#[pyfunction]
fn forward_diffuse<'py>(
    py: Python<'py>,
    z0: PyReadonlyArray3<'py, f64>,
    t: usize,
    eps: PyReadonlyArray3<'py, f64>,
    schedule: PyRef<'_, Schedule>,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let z = grid_in(&z0)?;
    let e = grid_in(&eps)?;
    Ok(grid_out(py, diffusion::forward_diffuse(&z, t, &e, &schedule.inner).map_err(raise)?))
}

/// Deterministic reverse update from level t to t - 1; t >= 1.
#[pyfunction]
fn ddim_step<'py>(
    py: Python<'py>,
    z_t: PyReadonlyArray3<'py, f64>,
    t: usize,
    eps_hat: PyReadonlyArray3<'py, f64>,
    schedule: PyRef<'_, Schedule>,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let z = grid_in(&z_t)?;
    let e = grid_in(&eps_hat)?;
    Ok(grid_out(py, diffusion::ddim_step(&z, t, &e, &schedule.inner).map_err(raise)?))
}

#[pyfunction]
fn mse(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    metrics::mse(&grid_in(&a)?, &grid_in(&b)?, None).map_err(raise)
}

#[pyfunction]
#[pyo3(signature = (a, b, peak=8.0))]
fn psnr(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>, peak: f64) -> PyResult<f64> {
    metrics::psnr(&grid_in(&a)?, &grid_in(&b)?, peak, None).map_err(raise)
}

#[pyfunction]
#[pyo3(signature = (a, b, peak=8.0))]
fn ssim(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>, peak: f64) -> PyResult<f64> {
    metrics::ssim(&grid_in(&a)?, &grid_in(&b)?, peak, None).map_err(raise)
}

/// Resolves a draft config (same JSON the CLI accepts) and executes the run,
/// returning the output directory. `baseline=True` runs the blended-latent
/// baseline instead of the full pipeline.
#[pyfunction]
#[pyo3(signature = (config_json, baseline=false))]
fn run_experiment_json(config_json: &str, baseline: bool) -> PyResult<String> {
    let draft = parse_draft(config_json).map_err(raise)?;
    let resolved = resolve(draft).map_err(raise)?;
    let artifacts = run_experiment(&resolved, baseline).map_err(raise)?;
    Ok(artifacts.output_dir.display().to_string())
}

/// Writes the two reference mixture models under `dir`.
#[pyfunction]
fn make_testbeds(dir: &str) -> PyResult<()> {
    cmd_make_testbed(Path::new(dir)).map_err(raise)
}

/// Convenience constructor for a zero array of latent shape.
#[pyfunction]
fn zeros(py: Python<'_>, channels: usize, height: usize, width: usize) -> Bound<'_, PyArray3<f64>> {
    Array3::<f64>::zeros((channels, height, width)).into_pyarray(py)
}

#[pymodule]
fn ntn_diff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Schedule>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(dct2, m)?)?;
    m.add_function(wrap_pyfunction!(idct2, m)?)?;
    m.add_function(wrap_pyfunction!(low_pass_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mid_pass_mask, m)?)?;
    m.add_function(wrap_pyfunction!(substitute_low_band, m)?)?;
    m.add_function(wrap_pyfunction!(substitute_mid_band, m)?)?;
    m.add_function(wrap_pyfunction!(forward_diffuse, m)?)?;
    m.add_function(wrap_pyfunction!(ddim_step, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_json, m)?)?;
    m.add_function(wrap_pyfunction!(make_testbeds, m)?)?;
    m.add_function(wrap_pyfunction!(zeros, m)?)?;
    Ok(())
}
