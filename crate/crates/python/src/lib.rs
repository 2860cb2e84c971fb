//! Python bindings. Arrays cross the boundary as flat lists of floats.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qrbsa_core::data::{self as qdata, Normal, OrientationVolume};
use qrbsa_core::loss::{rotational_distance, LossConfig};
use qrbsa_core::metrics::{evaluate_volume, MetricReport};
use qrbsa_core::net::{Network, NetworkConfig};
use qrbsa_core::quat::{self as cq, SymmetrySet};
use qrbsa_core::train::{super_resolve, Checkpoint, InferOptions, RunConfig, Trainer};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_err(e: qrbsa_core::Error) -> PyErr {
    match e {
        qrbsa_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn data_err(e: qdata::DataError) -> PyErr {
    core_err(e.into())
}

fn parse_normal(normal: &str) -> PyResult<Normal> {
    match normal {
        "x" => Ok(Normal::X),
        "y" => Ok(Normal::Y),
        "z" => Ok(Normal::Z),
        other => Err(value_err(format!("normal must be x, y or z, got {other:?}"))),
    }
}

/// Unit or non-unit quaternion `(q0, q1, q2, q3)`.
#[pyclass(name = "Quat", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyQuat(cq::Quat);

#[pymethods]
impl PyQuat {
    #[new]
    fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        PyQuat(cq::Quat::new(q0, q1, q2, q3))
    }

    #[staticmethod]
    fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        PyQuat(cq::Quat::from_axis_angle(axis, angle))
    }

    fn to_list(&self) -> [f64; 4] {
        self.0.to_array()
    }

    fn __mul__(&self, other: &PyQuat) -> Self {
        PyQuat(self.0.hamilton(other.0))
    }

    fn conjugate(&self) -> Self {
        PyQuat(self.0.conjugate())
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Unit norm with `q0 >= 0`.
    fn normalize(&self) -> PyResult<Self> {
        self.0.normalize_hemisphere().map(PyQuat).map_err(value_err)
    }

    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        self.0.rotate(v)
    }

    /// Hexagonal-symmetry misorientation to `other` in degrees.
    fn misorientation_deg(&self, other: &PyQuat) -> PyResult<f64> {
        cq::misorientation(self.0, other.0, &SymmetrySet::hexagonal())
            .map(f64::to_degrees)
            .map_err(value_err)
    }

    /// IPF colour (r, g, b in [0, 1]) for a sample direction.
    #[pyo3(signature = (sample_dir = [0.0, 0.0, 1.0]))]
    fn ipf_color(&self, sample_dir: [f64; 3]) -> [f64; 3] {
        let c = cq::ipf_color(self.0, sample_dir);
        [c.r, c.g, c.b]
    }

    fn __repr__(&self) -> String {
        let [a, b, c, d] = self.0.to_array();
        format!("Quat({a}, {b}, {c}, {d})")
    }
}

/// Orientation volume with dims (z, y, x).
#[pyclass(name = "Volume", skip_from_py_object)]
#[derive(Clone)]
struct PyVolume(OrientationVolume);

#[pymethods]
impl PyVolume {
    /// `data` holds z·y·x·4 values, z-major, components innermost.
    #[new]
    #[pyo3(signature = (dims, data, pitch = [1.0, 1.0, 1.0]))]
    fn new(dims: [usize; 3], data: Vec<f32>, pitch: [f64; 3]) -> PyResult<Self> {
        OrientationVolume::new(dims, pitch, data).map(PyVolume).map_err(data_err)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        qdata::read_volume(path).map(PyVolume).map_err(data_err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        qdata::write_volume(&self.0, path).map_err(data_err)
    }

    #[staticmethod]
    #[pyo3(signature = (dims, grains, seed = 0, noise_deg = 0.0))]
    fn synth_voronoi(dims: [usize; 3], grains: usize, seed: u64, noise_deg: f64) -> PyResult<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        qdata::synth_voronoi(dims, grains, &mut rng, noise_deg)
            .map(PyVolume)
            .map_err(data_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    #[getter]
    fn pitch(&self) -> [f64; 3] {
        self.0.pitch
    }

    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn get(&self, z: usize, y: usize, x: usize) -> PyResult<PyQuat> {
        let [nz, ny, nx] = self.0.dims();
        if z >= nz || y >= ny || x >= nx {
            return Err(value_err(format!("index ({z}, {y}, {x}) outside {:?}", self.0.dims())));
        }
        Ok(PyQuat(self.0.get(z, y, x)))
    }

    fn sparse_section(&self, stride: usize) -> PyResult<Self> {
        qdata::sparse_section(&self.0, stride).map(PyVolume).map_err(data_err)
    }

    fn nearest_plane_upsample(&self, scale: usize) -> PyResult<Self> {
        qdata::nearest_plane_upsample(&self.0, scale).map(PyVolume).map_err(data_err)
    }

    /// Number of planes along `normal` (x, y or z).
    fn plane_count(&self, normal: &str) -> PyResult<usize> {
        let [nz, ny, nx] = self.0.dims();
        Ok(match parse_normal(normal)? {
            Normal::X => nx,
            Normal::Y => ny,
            Normal::Z => nz,
        })
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?})", self.0.dims())
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("psnr_db", r.psnr_db)?;
    d.set_item("ssim", r.ssim)?;
    d.set_item("mean_misorientation_deg", r.mean_misorientation_deg)?;
    let planes = r
        .per_plane
        .iter()
        .map(|p| {
            let e = PyDict::new(py);
            e.set_item("z", p.z)?;
            e.set_item("psnr_db", p.psnr_db)?;
            e.set_item("ssim", p.ssim)?;
            e.set_item("mean_misorientation_deg", p.mean_misorientation_deg)?;
            Ok(e)
        })
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("per_plane", planes)?;
    Ok(d)
}

/// PSNR / SSIM of z-plane IPF maps and mean misorientation.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: &PyVolume, truth: &PyVolume) -> PyResult<Bound<'py, PyDict>> {
    let r = evaluate_volume(&pred.0, &truth.0, &SymmetrySet::hexagonal()).map_err(value_err)?;
    report_dict(py, &r)
}

/// `4 asin(d/2)` with the linear extension past `threshold`.
#[pyfunction]
#[pyo3(signature = (d, threshold = 1.9))]
fn rotational_distance_py(d: f64, threshold: f64) -> f64 {
    rotational_distance(d, threshold)
}

/// Symmetry-aware per-pixel loss between two quaternions.
#[pyfunction]
fn pixel_loss(p: &PyQuat, t: &PyQuat) -> f64 {
    qrbsa_core::loss::pixel_loss(p.0, t.0, &LossConfig::default()).0
}

/// QRBSA / QEDSR network in 32-bit precision.
#[pyclass(name = "Network")]
struct PyNetwork(Network<f32>);

#[pymethods]
impl PyNetwork {
    /// `config` is a NetworkConfig JSON object (missing keys default).
    #[new]
    #[pyo3(signature = (config = "{}", seed = 0))]
    fn new(config: &str, seed: u64) -> PyResult<Self> {
        let cfg: NetworkConfig = serde_json::from_str(config).map_err(value_err)?;
        Network::build(&cfg, seed).map(PyNetwork).map_err(value_err)
    }

    #[staticmethod]
    fn from_checkpoint(path: &str) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path).map_err(core_err)?;
        ckpt.network().map(PyNetwork).map_err(core_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    #[getter]
    fn scale(&self) -> usize {
        self.0.config.scale
    }

    fn config_json(&self) -> String {
        serde_json::to_string(&self.0.config).expect("config serialises")
    }

    /// Super-resolves a sparsely sectioned volume along z from x- or
    /// y-normal planes.
    #[pyo3(signature = (lr, normal = "x", copy_retained = false))]
    fn super_resolve(&self, py: Python<'_>, lr: &PyVolume, normal: &str, copy_retained: bool) -> PyResult<PyVolume> {
        let normal = parse_normal(normal)?;
        let opts = InferOptions {
            copy_retained,
            ..InferOptions::default()
        };
        py.detach(|| super_resolve(&self.0, &lr.0, normal, &opts))
            .map(PyVolume)
            .map_err(core_err)
    }
}

/// Runs a training job from a RunConfig JSON string; returns the log
/// records as dicts.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = RunConfig::from_json(config).map_err(core_err)?;
    let vol = qdata::read_volume(&cfg.data).map_err(data_err)?;
    let records = py
        .detach(|| -> qrbsa_core::Result<_> {
            if cfg.verify {
                Trainer::<f64>::new(cfg.clone(), &vol)?.fit(|_| {})
            } else {
                Trainer::<f32>::new(cfg.clone(), &vol)?.fit(|_| {})
            }
        })
        .map_err(core_err)?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("loss", r.loss)?;
            d.set_item("patch_size", r.patch_size)?;
            d.set_item("steps", r.steps)?;
            d.set_item("val_misorientation_deg", r.val_misorientation_deg)?;
            d.set_item("best", r.best)?;
            Ok(d)
        })
        .collect()
}

/// JSON of a named run configuration (`paper-defaults`, `desk`).
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    RunConfig::preset(name).map(|c| c.to_json()).map_err(core_err)
}

#[pymodule]
fn qrbsa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuat>()?;
    m.add_class::<PyVolume>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_loss, m)?)?;
    m.add("rotational_distance", wrap_pyfunction!(rotational_distance_py, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    Ok(())
}
