//! Python bindings for the twinforge core.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use twinforge::eigengrasp as eg;
use twinforge::geometry::{self, Point3};
use twinforge::kinematics::{self, FitConfig};
use twinforge::mpc::ColoredNoise;
use twinforge::segmentation::{self, SegmentConfig};
use twinforge::{io, synthgen, tasks};

create_exception!(twinforge_py, TwinforgeError, PyException);

fn err<E: std::error::Error>(kind: &str) -> impl Fn(E) -> PyErr + '_ {
    move |e| TwinforgeError::new_err(format!("{kind}: {e}"))
}

fn points(raw: &[[f64; 3]]) -> Vec<Point3> {
    raw.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()
}

fn raw(points: &[Point3]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

#[pyclass(name = "PointCloud", from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: geometry::PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    fn new(points_xyz: Vec<[f64; 3]>) -> Self {
        PyPointCloud { inner: geometry::PointCloud::new(points(&points_xyz)) }
    }

    /// Reads an APC file.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyPointCloud { inner: io::read_apc(&path).map_err(err("IoError"))? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_apc(&path, &self.inner).map_err(err("IoError"))
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        raw(&self.inner.points)
    }

    #[getter]
    fn labels(&self) -> Option<Vec<u32>> {
        self.inner.labels.clone()
    }

    fn centroid(&self) -> [f64; 3] {
        let c = self.inner.centroid();
        [c.x, c.y, c.z]
    }

    /// Distance from each point to its nearest neighbour in `other`.
    fn chamfer_to(&self, other: &PyPointCloud) -> PyResult<Vec<f64>> {
        geometry::chamfer_directed(&self.inner, &other.inner).map_err(err("GeometryError"))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points)", self.inner.len())
    }
}

fn clouds(frames: &[PyPointCloud]) -> Vec<geometry::PointCloud> {
    frames.iter().map(|f| f.inner.clone()).collect()
}

/// A generated object with its observation frames.
#[pyclass(name = "Scene")]
struct PyScene {
    inner: synthgen::Scene,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    #[pyo3(signature = (category, seed = 0, noise = 0.0))]
    fn generate(category: &str, seed: u64, noise: f64) -> PyResult<Self> {
        let category: synthgen::Category = serde_json::from_value(serde_json::Value::String(category.into()))
            .map_err(|_| TwinforgeError::new_err(format!("SynthError: unknown category {category:?}")))?;
        let recipe = synthgen::SceneRecipe { seed, noise, ..synthgen::SceneRecipe::new(category) };
        Ok(PyScene { inner: synthgen::generate(&recipe).map_err(err("SynthError"))? })
    }

    #[getter]
    fn frames(&self) -> Vec<PyPointCloud> {
        self.inner.clouds().into_iter().map(|inner| PyPointCloud { inner }).collect()
    }

    #[getter]
    fn contacts(&self) -> Vec<[f64; 3]> {
        raw(&self.inner.contacts())
    }

    /// Ground-truth movable-part labels of the final frame.
    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir)?;
        synthgen::write_scene(&self.inner, &dir).map_err(err("SynthError"))
    }
}

#[pyclass(name = "JointEstimate")]
struct PyJointEstimate {
    inner: kinematics::JointEstimate,
}

#[pymethods]
impl PyJointEstimate {
    #[getter]
    fn part(&self) -> u32 {
        self.inner.part
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind {
            twinforge::model::JointKind::Prismatic => "prismatic",
            twinforge::model::JointKind::Revolute => "revolute",
        }
    }

    #[getter]
    fn axis(&self) -> [f64; 3] {
        let a = self.inner.axis;
        [a.x, a.y, a.z]
    }

    #[getter]
    fn origin(&self) -> Option<[f64; 3]> {
        self.inner.origin.map(|o| [o.x, o.y, o.z])
    }

    #[getter]
    fn displacements(&self) -> Vec<f64> {
        self.inner.displacements.clone()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    fn __repr__(&self) -> String {
        format!("JointEstimate(part={}, kind={:?}, axis={:?})", self.inner.part, self.kind(), self.axis())
    }
}

/// Labels movable parts; `contacts[k]` is the interaction leading to frame k+1.
#[pyfunction]
fn segment(frames: Vec<PyPointCloud>, contacts: Vec<[f64; 3]>) -> PyResult<Vec<u32>> {
    let labels = segmentation::segment_movable_parts(&clouds(&frames), None, &points(&contacts), &SegmentConfig::default())
        .map_err(err("SegmentationError"))?;
    Ok(labels.labels)
}

#[pyfunction]
fn fit_joints(frames: Vec<PyPointCloud>, labels: Vec<u32>) -> PyResult<Vec<PyJointEstimate>> {
    let joints = kinematics::fit_all_joints(&clouds(&frames), &labels, None, &FitConfig::default()).map_err(err("FitError"))?;
    Ok(joints.into_iter().map(|inner| PyJointEstimate { inner }).collect())
}

#[pyclass(name = "EigengraspBasis")]
struct PyEigengraspBasis {
    inner: eg::EigengraspBasis,
}

#[pymethods]
impl PyEigengraspBasis {
    /// PCA over posture rows, each clamped to `[lower, upper]`.
    #[staticmethod]
    fn fit(postures: Vec<Vec<f64>>, lower: Vec<f64>, upper: Vec<f64>, m: usize) -> PyResult<Self> {
        let d = lower.len();
        if postures.iter().any(|row| row.len() != d) {
            return Err(TwinforgeError::new_err("EigengraspError: posture rows must match the limit length"));
        }
        let matrix = twinforge::eigengrasp::DMatrix::from_row_iterator(postures.len(), d, postures.into_iter().flatten());
        let data = eg::GraspDataset::new("custom", lower, upper, matrix).map_err(err("EigengraspError"))?;
        Ok(PyEigengraspBasis { inner: eg::fit_pca(&data, m).map_err(err("EigengraspError"))? })
    }

    /// Basis of a built-in hand ("four_finger" or "five_finger").
    #[staticmethod]
    fn for_hand(hand: &str, m: usize) -> PyResult<Self> {
        let hand = match hand {
            "four_finger" => tasks::HandModel::FourFinger,
            "five_finger" => tasks::HandModel::FiveFinger,
            other => return Err(TwinforgeError::new_err(format!("EigengraspError: unknown hand {other:?}"))),
        };
        Ok(PyEigengraspBasis { inner: tasks::hand_basis(hand, m).map_err(err("TaskError"))? })
    }

    #[pyo3(signature = (coeffs, include_mean = true))]
    fn reconstruct(&self, coeffs: Vec<f64>, include_mean: bool) -> PyResult<Vec<f64>> {
        self.inner.reconstruct(&coeffs, include_mean).map_err(err("EigengraspError"))
    }

    fn project(&self, q: Vec<f64>) -> Vec<f64> {
        self.inner.project(&q)
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }
}

/// Zero-mean, unit-variance noise with power spectrum 1/f^beta.
#[pyfunction]
#[pyo3(signature = (beta, length, seed = 0))]
fn colored_noise(beta: f64, length: usize, seed: u64) -> Vec<f64> {
    ColoredNoise::new(beta, length).sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

#[pyfunction]
fn task_names() -> Vec<String> {
    tasks::standard_suite().into_iter().map(|t| t.name).collect()
}

/// Plans one built-in task and returns the trajectory as a dict.
#[pyfunction]
#[pyo3(signature = (name, seed = 0))]
fn run_task(py: Python<'_>, name: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let task = tasks::standard_suite()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| TwinforgeError::new_err(format!("TaskError: unknown task {name:?}")))?;
    let (trajectory, _) = py.detach(|| task.run(seed)).map_err(err("TaskError"))?;
    let text = serde_json::to_string(&trajectory).map_err(err("IoError"))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pymodule]
fn twinforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TwinforgeError", m.py().get_type::<TwinforgeError>())?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyJointEstimate>()?;
    m.add_class::<PyEigengraspBasis>()?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_joints, m)?)?;
    m.add_function(wrap_pyfunction!(colored_noise, m)?)?;
    m.add_function(wrap_pyfunction!(task_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_task, m)?)?;
    Ok(())
}
