//! Python bindings: an `Image` class plus the estimation, enhancement,
//! synthesis and metric entry points.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use uwrestore::backlight::{self, BackgroundLight, BlMethod};
use uwrestore::enhance::{enhance_pipeline, EnhanceParams, PipelineConfig, TmMethod};
use uwrestore::error::Error;
use uwrestore::evalkit;
use uwrestore::imgcore::{self, ImageBuf};
use uwrestore::metrics::QualityReport;
use uwrestore::transmission::{TmParams, TransmissionSet};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Decode { .. } | Error::Encode { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// RGB image with float channels in [0, 1].
#[pyclass(name = "Image", module = "pyuwrestore", frozen)]
pub struct PyImage {
    inner: ImageBuf,
}

#[pymethods]
impl PyImage {
    /// Builds an image from interleaved 8-bit RGB bytes.
    #[new]
    fn new(width: usize, height: usize, data: &[u8]) -> PyResult<Self> {
        ImageBuf::from_rgb8(width, height, data)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Image filled with one normalized RGB colour.
    #[staticmethod]
    fn constant(width: usize, height: usize, rgb: [f64; 3]) -> PyResult<Self> {
        ImageBuf::constant(width, height, rgb)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        imgcore::load_image(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        imgcore::save_image(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    /// Interleaved 8-bit RGB bytes, rounded half-up.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_rgb8())
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<[f64; 3]> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) is outside the image")));
        }
        Ok(self.inner.pixel_at(x, y))
    }

    fn resize(&self, width: usize, height: usize) -> PyResult<Self> {
        imgcore::resize_to_standard(&self.inner, width, height)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Estimated background light as normalized (r, g, b) and the seconds spent.
#[pyfunction]
#[pyo3(signature = (image, method = "statistical"))]
fn estimate_bl(image: &PyImage, method: &str) -> PyResult<([f64; 3], f64)> {
    let method: BlMethod = parse(method)?;
    let (bl, elapsed) = backlight::estimate_bl(&image.inner, method).map_err(to_py)?;
    Ok((bl.to_array(), elapsed.as_secs_f64()))
}

/// Runs the restoration pipeline and returns the enhanced image together
/// with the background light that was used.
#[allow(clippy::too_many_arguments)]
#[pyfunction]
#[pyo3(signature = (
    image,
    bl_method = "statistical",
    tm_method = "proposed",
    lambda_arsm = 0.7,
    lambda_v = 0.25,
    t_floor = 0.2,
    t_ceil = 0.9,
    color_correction = true,
    bl = None,
    t = None,
))]
fn enhance(
    image: &PyImage,
    bl_method: &str,
    tm_method: &str,
    lambda_arsm: f64,
    lambda_v: f64,
    t_floor: f64,
    t_ceil: f64,
    color_correction: bool,
    bl: Option<[f64; 3]>,
    t: Option<[f64; 3]>,
) -> PyResult<(PyImage, [f64; 3])> {
    let cfg = PipelineConfig {
        bl_method: parse(bl_method)?,
        tm_method: parse::<TmMethod>(tm_method)?,
        tm: TmParams {
            lambda_arsm,
            ..TmParams::default()
        },
        enhance: EnhanceParams {
            t_floor,
            t_ceil,
            lambda_v,
            color_correction,
        },
        bl_override: bl.map(BackgroundLight::from_array).transpose().map_err(to_py)?,
        t_override: t,
        ..PipelineConfig::default()
    };
    let res = enhance_pipeline(&image.inner, &cfg).map_err(to_py)?;
    Ok((PyImage { inner: res.enhanced }, res.bl.to_array()))
}

/// Forward formation model with a constant per-channel transmission.
#[pyfunction]
fn synth_haze(clear: &PyImage, bl: [f64; 3], t: [f64; 3]) -> PyResult<PyImage> {
    let bl = BackgroundLight::from_array(bl).map_err(to_py)?;
    let tms = TransmissionSet::constant(clear.inner.width(), clear.inner.height(), t).map_err(to_py)?;
    evalkit::synth_haze(&clear.inner, bl, &tms)
        .map(|inner| PyImage { inner })
        .map_err(to_py)
}

/// RMSE and SSIM against `reference`, entropy and UCIQE of `output`.
#[pyfunction]
fn metrics(reference: &PyImage, output: &PyImage) -> PyResult<HashMap<&'static str, f64>> {
    let q = QualityReport::compute(&reference.inner, &output.inner).map_err(to_py)?;
    Ok(HashMap::from([
        ("rmse", q.rmse),
        ("ssim", q.ssim),
        ("entropy", q.entropy),
        ("uciqe", q.uciqe),
    ]))
}

#[pymodule]
pub fn pyuwrestore(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_function(wrap_pyfunction!(estimate_bl, m)?)?;
    m.add_function(wrap_pyfunction!(enhance, m)?)?;
    m.add_function(wrap_pyfunction!(synth_haze, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add("BL_METHODS", BlMethod::ALL.map(BlMethod::name).to_vec())?;
    m.add("TM_METHODS", TmMethod::ALL.map(TmMethod::name).to_vec())?;
    Ok(())
}
