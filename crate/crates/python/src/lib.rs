//! Python bindings. Arrays cross the boundary as flat Python lists in
//! frame-major, row-major order; points are flattened `x, y, z` triples.

use pointmap4d::evaluation::{self, AteStatistic, DepthAlignment, PoseEvalConfig};
use pointmap4d::flow::{self, ConditionSample, LatentSample, LinearGaussianToy, LinearVelocityModel};
use pointmap4d::geometry::{Mat3, Vec3};
use pointmap4d::io::{self, CameraInfo};
use pointmap4d::recovery::{FocalConfig, RansacConfig, RecoveryConfig};
use pointmap4d::synth::{generate, CameraPath, SceneSpec};
use pointmap4d::{losses, pointmap};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn format_err(e: io::FormatError) -> PyErr {
    match e {
        io::FormatError::Io(inner) => PyIOError::new_err(inner.to_string()),
        other => value_err(other),
    }
}

#[pyclass(name = "Intrinsics", module = "pypointmap4d", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyIntrinsics(pointmap4d::Intrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(focal: f64, cx: f64, cy: f64) -> PyResult<Self> {
        pointmap4d::Intrinsics::new(focal, cx, cy).map(Self).map_err(value_err)
    }

    #[getter]
    fn focal(&self) -> f64 {
        self.0.focal
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }

    fn __repr__(&self) -> String {
        format!("Intrinsics(focal={}, cx={}, cy={})", self.0.focal, self.0.cx, self.0.cy)
    }
}

/// Camera-to-world rigid transform.
#[pyclass(name = "RigidPose", module = "pypointmap4d", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyRigidPose(pointmap4d::RigidPose);

#[pymethods]
impl PyRigidPose {
    /// `rotation` is three rows of three; it must be orthonormal.
    #[new]
    #[pyo3(signature = (rotation = None, translation = None))]
    fn new(rotation: Option<[[f64; 3]; 3]>, translation: Option<[f64; 3]>) -> PyResult<Self> {
        let r = rotation.map_or_else(Mat3::identity, |m| Mat3::from_fn(|i, j| m[i][j]));
        let t = translation.map_or_else(Vec3::zeros, Vec3::from);
        pointmap4d::RigidPose::new(r, t).map(Self).map_err(value_err)
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = self.0.rotation();
        std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        (*self.0.translation()).into()
    }

    fn compose(&self, other: &PyRigidPose) -> PyRigidPose {
        PyRigidPose(self.0.compose(&other.0))
    }

    fn inverse(&self) -> PyRigidPose {
        PyRigidPose(self.0.inverse())
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&Vec3::from(p)).into()
    }

    fn __repr__(&self) -> String {
        format!("RigidPose(translation={:?})", self.translation())
    }
}

#[pyclass(name = "Trajectory", module = "pypointmap4d", frozen, from_py_object)]
#[derive(Clone)]
struct PyTrajectory(pointmap4d::Trajectory);

#[pymethods]
impl PyTrajectory {
    /// Timestamps default to 0, 1, 2, ...
    #[new]
    #[pyo3(signature = (poses, timestamps = None))]
    fn new(poses: Vec<PyRigidPose>, timestamps: Option<Vec<f64>>) -> PyResult<Self> {
        let poses: Vec<_> = poses.into_iter().map(|p| p.0).collect();
        match timestamps {
            Some(ts) => pointmap4d::Trajectory::new(poses, ts).map(Self).map_err(value_err),
            None => Ok(Self(pointmap4d::Trajectory::from_poses(poses))),
        }
    }

    #[getter]
    fn poses(&self) -> Vec<PyRigidPose> {
        self.0.poses().iter().copied().map(PyRigidPose).collect()
    }

    #[getter]
    fn timestamps(&self) -> Vec<f64> {
        self.0.timestamps().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "DepthSequence", module = "pypointmap4d", frozen, from_py_object)]
#[derive(Clone)]
struct PyDepth(pointmap4d::DepthSequence);

#[pymethods]
impl PyDepth {
    #[new]
    fn new(frames: usize, height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> PyResult<Self> {
        pointmap4d::DepthSequence::new(frames, height, width, values, valid).map(Self).map_err(value_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.frames(), self.0.height(), self.0.width())
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn valid(&self) -> Vec<bool> {
        self.0.valid().to_vec()
    }

    fn get(&self, frame: usize, row: usize, col: usize) -> PyResult<Option<f64>> {
        let (f, h, w) = self.shape();
        if frame >= f || row >= h || col >= w {
            return Err(value_err("pixel out of range"));
        }
        Ok(self.0.get(frame, row, col))
    }

    fn valid_count(&self) -> usize {
        self.0.valid_count()
    }
}

#[pyclass(name = "PointmapSequence", module = "pypointmap4d", frozen, from_py_object)]
#[derive(Clone)]
struct PyPointmap(pointmap4d::PointmapSequence);

#[pymethods]
impl PyPointmap {
    /// `points` holds `3 * frames * height * width` floats.
    #[new]
    #[pyo3(signature = (frames, height, width, points, valid, norm_scale = 1.0, normalized = false))]
    fn new(
        frames: usize,
        height: usize,
        width: usize,
        points: Vec<f64>,
        valid: Vec<bool>,
        norm_scale: f64,
        normalized: bool,
    ) -> PyResult<Self> {
        if !points.len().is_multiple_of(3) {
            return Err(value_err("point list length is not a multiple of 3"));
        }
        let pts = points.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        pointmap4d::PointmapSequence::new(frames, height, width, pts, valid)
            .and_then(|p| p.with_normalization(norm_scale, normalized))
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.frames(), self.0.height(), self.0.width())
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.0.points().iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    #[getter]
    fn valid(&self) -> Vec<bool> {
        self.0.valid().to_vec()
    }

    #[getter]
    fn norm_scale(&self) -> f64 {
        self.0.norm_scale()
    }

    #[getter]
    fn normalized(&self) -> bool {
        self.0.is_normalized()
    }

    fn get(&self, frame: usize, row: usize, col: usize) -> PyResult<Option<[f64; 3]>> {
        let (f, h, w) = self.shape();
        if frame >= f || row >= h || col >= w {
            return Err(value_err("pixel out of range"));
        }
        Ok(self.0.get(frame, row, col).map(|p| (*p).into()))
    }

    fn valid_count(&self) -> usize {
        self.0.valid_count()
    }

    fn mean_distance(&self) -> Option<f64> {
        self.0.mean_distance()
    }
}

/// Output of `synth`.
#[pyclass(name = "Scene", module = "pypointmap4d", frozen)]
struct PyScene {
    #[pyo3(get)]
    depth: PyDepth,
    #[pyo3(get)]
    trajectory: PyTrajectory,
    #[pyo3(get)]
    intrinsics: PyIntrinsics,
    #[pyo3(get)]
    gt_pointmap: PyPointmap,
    #[pyo3(get)]
    observed: PyPointmap,
    #[pyo3(get)]
    dynamic_mask: Vec<bool>,
}

#[pyfunction]
#[pyo3(signature = (
    seed = 0, frames = 17, width = 512, height = 384, focal = 500.0, planes = 4, spheres = 2,
    path = "orbit", motion_scale = 1.0, outlier_fraction = 0.0, noise_sigma = 0.0
))]
#[allow(clippy::too_many_arguments)]
fn synth(
    py: Python<'_>,
    seed: u64,
    frames: usize,
    width: usize,
    height: usize,
    focal: f64,
    planes: usize,
    spheres: usize,
    path: &str,
    motion_scale: f64,
    outlier_fraction: f64,
    noise_sigma: f64,
) -> PyResult<PyScene> {
    let spec = SceneSpec {
        seed,
        n_frames: frames,
        width,
        height,
        focal,
        n_static_planes: planes,
        n_dynamic_spheres: spheres,
        camera_path: path.parse::<CameraPath>().map_err(value_err)?,
        motion_scale,
        outlier_fraction,
        depth_noise_sigma: noise_sigma,
    };
    let s = py.detach(|| generate(&spec)).map_err(value_err)?;
    Ok(PyScene {
        depth: PyDepth(s.depth),
        trajectory: PyTrajectory(s.trajectory),
        intrinsics: PyIntrinsics(s.intrinsics),
        gt_pointmap: PyPointmap(s.gt_pointmap),
        observed: PyPointmap(s.observed),
        dynamic_mask: s.dynamic_mask,
    })
}

/// World-frame pointmap; the trajectory is rebased when its first pose is
/// not the identity.
#[pyfunction]
#[pyo3(signature = (depth, trajectory, intrinsics, normalize = false))]
fn build_pointmap(
    py: Python<'_>,
    depth: &PyDepth,
    trajectory: &PyTrajectory,
    intrinsics: &PyIntrinsics,
    normalize: bool,
) -> PyResult<PyPointmap> {
    py.detach(|| {
        let traj = match trajectory.0.poses().first() {
            Some(p) if *p == pointmap4d::RigidPose::identity() => trajectory.0.clone(),
            _ => pointmap::rebase_to_first_frame(&trajectory.0)?,
        };
        let p = pointmap::build_pointmap(&depth.0, &traj, &intrinsics.0)?;
        if normalize {
            pointmap::normalize_pointmap(&p)
        } else {
            Ok(p)
        }
    })
    .map(PyPointmap)
    .map_err(value_err)
}

#[pyfunction]
fn normalize_pointmap(p: &PyPointmap) -> PyResult<PyPointmap> {
    pointmap::normalize_pointmap(&p.0).map(PyPointmap).map_err(value_err)
}

#[pyclass(name = "RecoveryResult", module = "pypointmap4d", frozen)]
struct PyRecovery(pointmap4d::recovery::RecoveryResult);

#[pymethods]
impl PyRecovery {
    #[getter]
    fn intrinsics(&self) -> PyIntrinsics {
        PyIntrinsics(self.0.intrinsics)
    }

    /// One entry per frame; `None` where the frame failed.
    #[getter]
    fn poses(&self) -> Vec<Option<PyRigidPose>> {
        self.0.poses.iter().map(|p| p.map(PyRigidPose)).collect()
    }

    #[getter]
    fn depth(&self) -> PyDepth {
        PyDepth(self.0.depth.clone())
    }

    #[getter]
    fn inlier_ratios(&self) -> Vec<f64> {
        self.0.per_frame_inlier_ratio.clone()
    }

    /// `(frame, message)` pairs.
    #[getter]
    fn failures(&self) -> Vec<(usize, String)> {
        self.0.failures.iter().map(|f| (f.frame, f.error.to_string())).collect()
    }

    #[pyo3(signature = (frame_interval = 1.0))]
    fn trajectory(&self, frame_interval: f64) -> PyTrajectory {
        PyTrajectory(self.0.solved_trajectory(frame_interval))
    }
}

#[pyfunction]
#[pyo3(signature = (
    pointmap, seed = 0, iterations = 512, threshold = 2.0, min_sample = 6,
    max_scoring_points = 5000, refine = true, focal_iters = 200
))]
#[allow(clippy::too_many_arguments)]
fn recover(
    py: Python<'_>,
    pointmap: &PyPointmap,
    seed: u64,
    iterations: usize,
    threshold: f64,
    min_sample: usize,
    max_scoring_points: usize,
    refine: bool,
    focal_iters: usize,
) -> PyResult<PyRecovery> {
    let cfg = RecoveryConfig {
        ransac: RansacConfig {
            iterations,
            inlier_threshold: threshold,
            min_sample,
            seed,
            refine,
            max_scoring_points,
            ..RansacConfig::default()
        },
        focal: FocalConfig {
            max_iters: focal_iters,
            ..FocalConfig::default()
        },
    };
    py.detach(|| pointmap4d::recovery::recover_all(&pointmap.0, &cfg))
        .map(PyRecovery)
        .map_err(value_err)
}

/// ATE, RPE translation and RPE rotation (degrees) after timestamp association.
#[pyfunction]
#[pyo3(signature = (pred, gt, delta = 1, ate = "rmse"))]
fn eval_pose<'py>(py: Python<'py>, pred: &PyTrajectory, gt: &PyTrajectory, delta: usize, ate: &str) -> PyResult<Bound<'py, PyDict>> {
    let ate_statistic = match ate {
        "rmse" => AteStatistic::Rmse,
        "mean" => AteStatistic::Mean,
        other => return Err(value_err(format!("unknown ATE statistic {other:?}"))),
    };
    let (p, g) = evaluation::associate(&pred.0, &gt.0);
    let m = evaluation::evaluate_poses(&p, &g, &PoseEvalConfig { delta, ate_statistic }).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("ate", m.ate_rmse)?;
    d.set_item("rpe_trans", m.rpe_trans)?;
    d.set_item("rpe_rot", m.rpe_rot)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, alignment = "sequence"))]
fn eval_depth<'py>(py: Python<'py>, pred: &PyDepth, gt: &PyDepth, alignment: &str) -> PyResult<Bound<'py, PyDict>> {
    let alignment = match alignment {
        "sequence" => DepthAlignment::PerSequence,
        "frame" => DepthAlignment::PerFrame,
        "none" => DepthAlignment::None,
        other => return Err(value_err(format!("unknown alignment {other:?}"))),
    };
    let m = evaluation::depth_metrics_with(&pred.0, &gt.0, alignment).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("abs_rel", m.abs_rel)?;
    d.set_item("delta_125", m.delta_125)?;
    d.set_item("scale", m.scale)?;
    d.set_item("shift", m.shift)?;
    d.set_item("valid_count", m.valid_count)?;
    Ok(d)
}

#[pyfunction]
fn huber(residual_norm: f64, beta: f64) -> f64 {
    losses::huber_elementwise(residual_norm, beta)
}

#[pyfunction]
fn gaussian_kl(mean: Vec<f64>, log_var: Vec<f64>) -> PyResult<f64> {
    losses::gaussian_kl(&mean, &log_var).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, mean = vec![], log_var = vec![], beta = 1.0, lambda_kl = 1e-6))]
fn vae_loss<'py>(
    py: Python<'py>,
    pred: &PyPointmap,
    gt: &PyPointmap,
    mean: Vec<f64>,
    log_var: Vec<f64>,
    beta: f64,
    lambda_kl: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let l = losses::vae_loss(&pred.0, &gt.0, &mean, &log_var, beta, lambda_kl).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("reconstruction", l.reconstruction)?;
    d.set_item("kl", l.kl)?;
    d.set_item("total", l.total)?;
    d.set_item("valid_count", l.valid_count)?;
    Ok(d)
}

/// Linear velocity field `v(h, c, t) = W·[h; c; t] + b`.
#[pyclass(name = "VelocityModel", module = "pypointmap4d", frozen)]
struct PyVelocityModel(LinearVelocityModel);

#[pymethods]
impl PyVelocityModel {
    #[new]
    #[pyo3(signature = (dim, cond_dim, weights = None, bias = None))]
    fn new(dim: usize, cond_dim: usize, weights: Option<Vec<f64>>, bias: Option<Vec<f64>>) -> PyResult<Self> {
        let zero = LinearVelocityModel::zeros(dim, cond_dim);
        let w = weights.unwrap_or_else(|| zero.weights().to_vec());
        let b = bias.unwrap_or_else(|| zero.bias().to_vec());
        LinearVelocityModel::from_parameters(dim, cond_dim, w, b).map(Self).map_err(value_err)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    #[getter]
    fn bias(&self) -> Vec<f64> {
        self.0.bias().to_vec()
    }

    /// Forward-Euler integration from `eps` at t=0 to t=1.
    #[pyo3(signature = (cond, eps, steps = 100))]
    fn sample(&self, cond: Vec<f64>, eps: Vec<f64>, steps: usize) -> PyResult<Vec<f64>> {
        if cond.len() != self.0.cond_dim() || eps.len() != self.0.dim() {
            return Err(value_err("condition or noise has the wrong length"));
        }
        Ok(flow::euler_sample(&self.0, &ConditionSample(cond), &LatentSample(eps), steps).0)
    }

    fn loss(&self, h: Vec<f64>, cond: Vec<f64>, eps: Vec<f64>, t: f64) -> PyResult<f64> {
        flow::fm_loss(&self.0, &LatentSample(h), &ConditionSample(cond), &LatentSample(eps), t).map_err(value_err)
    }
}

/// Conditionally Gaussian toy data `h = A·c + b + σ·n`.
#[pyclass(name = "GaussianToy", module = "pypointmap4d", frozen)]
struct PyToy(LinearGaussianToy);

#[pymethods]
impl PyToy {
    #[new]
    #[pyo3(signature = (dim = 8, cond_dim = 8, seed = 0))]
    fn new(dim: usize, cond_dim: usize, seed: u64) -> Self {
        Self(LinearGaussianToy::standard(dim, cond_dim, seed))
    }

    fn conditional_mean(&self, cond: Vec<f64>) -> PyResult<Vec<f64>> {
        if cond.len() != self.0.cond_dim {
            return Err(value_err("condition has the wrong length"));
        }
        Ok(self.0.conditional_mean(&ConditionSample(cond)).0)
    }

    /// Trains a zero-initialized model; returns it with the loss curve.
    #[pyo3(signature = (samples = 16384, steps = 3000, lr = 0.02, seed = 0))]
    fn train(&self, py: Python<'_>, samples: usize, steps: usize, lr: f64, seed: u64) -> PyResult<(PyVelocityModel, Vec<f64>)> {
        let toy = &self.0;
        let out = py
            .detach(|| {
                let data = toy.dataset(samples, seed);
                flow::train_toy(&LinearVelocityModel::zeros(toy.dim, toy.cond_dim), &data, steps, lr, seed.wrapping_add(1))
            })
            .map_err(value_err)?;
        Ok((PyVelocityModel(out.model), out.losses))
    }
}

#[pyfunction]
fn read_pointmap(path: std::path::PathBuf) -> PyResult<PyPointmap> {
    io::read_pointmap(path).map(PyPointmap).map_err(format_err)
}

#[pyfunction]
fn write_pointmap(path: std::path::PathBuf, p: &PyPointmap) -> PyResult<()> {
    io::write_pointmap(path, &p.0).map_err(format_err)
}

#[pyfunction]
fn read_depth(path: std::path::PathBuf) -> PyResult<PyDepth> {
    io::read_depth(path).map(PyDepth).map_err(format_err)
}

#[pyfunction]
fn write_depth(path: std::path::PathBuf, d: &PyDepth) -> PyResult<()> {
    io::write_depth(path, &d.0).map_err(format_err)
}

#[pyfunction]
fn read_trajectory(path: std::path::PathBuf) -> PyResult<PyTrajectory> {
    io::read_trajectory(path).map(PyTrajectory).map_err(format_err)
}

#[pyfunction]
fn write_trajectory(path: std::path::PathBuf, t: &PyTrajectory) -> PyResult<()> {
    io::write_trajectory(path, &t.0).map_err(format_err)
}

/// Returns `(intrinsics, width, height)`.
#[pyfunction]
fn read_intrinsics(path: std::path::PathBuf) -> PyResult<(PyIntrinsics, usize, usize)> {
    let c = io::read_intrinsics(path).map_err(format_err)?;
    Ok((PyIntrinsics(c.intrinsics), c.width, c.height))
}

#[pyfunction]
fn write_intrinsics(path: std::path::PathBuf, k: &PyIntrinsics, width: usize, height: usize) -> PyResult<()> {
    io::write_intrinsics(path, &CameraInfo { intrinsics: k.0, width, height }).map_err(format_err)
}

#[pymodule]
fn pypointmap4d(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyRigidPose>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyDepth>()?;
    m.add_class::<PyPointmap>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyRecovery>()?;
    m.add_class::<PyVelocityModel>()?;
    m.add_class::<PyToy>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(build_pointmap, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_pointmap, m)?)?;
    m.add_function(wrap_pyfunction!(recover, m)?)?;
    m.add_function(wrap_pyfunction!(eval_pose, m)?)?;
    m.add_function(wrap_pyfunction!(eval_depth, m)?)?;
    m.add_function(wrap_pyfunction!(huber, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(vae_loss, m)?)?;
    m.add_function(wrap_pyfunction!(read_pointmap, m)?)?;
    m.add_function(wrap_pyfunction!(write_pointmap, m)?)?;
    m.add_function(wrap_pyfunction!(read_depth, m)?)?;
    m.add_function(wrap_pyfunction!(write_depth, m)?)?;
    m.add_function(wrap_pyfunction!(read_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(write_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(read_intrinsics, m)?)?;
    m.add_function(wrap_pyfunction!(write_intrinsics, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
