//! Python bindings: geometry, the anchor codec, synthetic scenes, models
//! and checkpoints.

use grasp_core::anchors::{self, Anchor, Delta};
use grasp_core::data::{self, SynthConfig};
use grasp_core::geometry;
use grasp_core::model::{self, ModelConfig, ScoreMode};
use grasp_core::train::{self, parse_flat, Checkpoint, RunConfig, TrainOptions};
use grasp_core::{autodiff::Tensor, GraspError};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: GraspError) -> PyErr {
    match e {
        GraspError::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Oriented grasp rectangle `(x, y, w, h, theta)`, theta in degrees.
#[pyclass(name = "GraspRect", module = "grasp_detect", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
pub struct PyGraspRect(geometry::GraspRect);

#[pymethods]
impl PyGraspRect {
    #[new]
    fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> PyResult<Self> {
        geometry::GraspRect::new(x, y, w, h, theta).map(Self).map_err(err)
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }
    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }
    #[getter]
    fn w(&self) -> f64 {
        self.0.w
    }
    #[getter]
    fn h(&self) -> f64 {
        self.0.h
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    /// Corners in counter-clockwise order.
    fn polygon(&self) -> Vec<(f64, f64)> {
        self.0.polygon().vertices().iter().map(|p| (p.x, p.y)).collect()
    }

    #[allow(clippy::wrong_self_convention)]
    fn to_tuple(&self) -> (f64, f64, f64, f64, f64) {
        let g = self.0;
        (g.x, g.y, g.w, g.h, g.theta)
    }

    fn __repr__(&self) -> String {
        let g = self.0;
        format!(
            "GraspRect(x={}, y={}, w={}, h={}, theta={})",
            g.x, g.y, g.w, g.h, g.theta
        )
    }
}

#[pyfunction]
fn iou(a: PyGraspRect, b: PyGraspRect) -> f64 {
    geometry::oriented_iou(&a.0, &b.0)
}

#[pyfunction]
fn angle_diff(a: f64, b: f64) -> f64 {
    geometry::angle_diff(a, b)
}

#[pyfunction]
fn canonical_angle(theta: f64) -> f64 {
    geometry::canonical_angle(theta)
}

#[pyfunction]
#[pyo3(signature = (pred, gts, angle_thr = 30.0, iou_thr = 0.25))]
fn is_success(pred: PyGraspRect, gts: Vec<PyGraspRect>, angle_thr: f64, iou_thr: f64) -> bool {
    let gts: Vec<_> = gts.into_iter().map(|g| g.0).collect();
    geometry::is_success(&pred.0, &gts, angle_thr, iou_thr)
}

fn anchor_of(t: (f64, f64, f64, f64, f64)) -> Anchor {
    Anchor {
        ax: t.0,
        ay: t.1,
        aw: t.2,
        ah: t.3,
        atheta: t.4,
    }
}

/// Deltas `(dx, dy, dw, dh, dtheta)` of a grasp relative to an anchor tuple.
#[pyfunction]
fn encode(grasp: PyGraspRect, anchor: (f64, f64, f64, f64, f64), k: usize) -> (f64, f64, f64, f64, f64) {
    let d = anchors::encode(&grasp.0, &anchor_of(anchor), k);
    (d.dx, d.dy, d.dw, d.dh, d.dtheta)
}

#[pyfunction]
fn decode(delta: (f64, f64, f64, f64, f64), anchor: (f64, f64, f64, f64, f64), k: usize) -> PyGraspRect {
    let d = Delta {
        dx: delta.0,
        dy: delta.1,
        dw: delta.2,
        dh: delta.3,
        dtheta: delta.4,
    };
    PyGraspRect(anchors::decode(&d, &anchor_of(anchor), k))
}

/// Oriented anchors on a regular grid, indexed `(row * grid_w + col) * k + a`.
#[pyclass(name = "AnchorGrid", module = "grasp_detect", frozen)]
pub struct PyAnchorGrid(anchors::AnchorGrid);

#[pymethods]
impl PyAnchorGrid {
    #[new]
    fn new(image_size: usize, stride: usize, anchor_w: f64, anchor_h: f64, k: usize) -> PyResult<Self> {
        anchors::build_anchor_grid(image_size, stride, anchor_w, anchor_h, k)
            .map(Self)
            .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.grid_h, self.0.grid_w, self.0.k)
    }

    fn anchor(&self, index: usize) -> PyResult<(f64, f64, f64, f64, f64)> {
        let a = self
            .0
            .anchors()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("anchor index {index} out of range")))?;
        Ok((a.ax, a.ay, a.aw, a.ah, a.atheta))
    }

    /// Grid cell `(row, col)` containing a point, if any.
    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        self.0.cell_of(x, y)
    }
}

/// An RGB image in `[0, 1]` with its ground-truth grasps.
#[pyclass(name = "Scene", module = "grasp_detect", from_py_object)]
#[derive(Clone)]
pub struct PyScene(data::Scene);

#[pymethods]
impl PyScene {
    /// `pixels` is `[3][height][width]` flattened in row-major order.
    #[new]
    fn new(
        pixels: Vec<f64>,
        height: usize,
        width: usize,
        grasps: Vec<PyGraspRect>,
        object_id: String,
    ) -> PyResult<Self> {
        let image = Tensor::new(&[3, height, width], pixels).map_err(err)?;
        Ok(Self(data::Scene {
            image,
            grasps: grasps.into_iter().map(|g| g.0).collect(),
            object_id,
        }))
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (3, self.0.height(), self.0.width())
    }

    #[getter]
    fn pixels(&self) -> Vec<f64> {
        self.0.image.data().to_vec()
    }

    #[getter]
    fn grasps(&self) -> Vec<PyGraspRect> {
        self.0.grasps.iter().copied().map(PyGraspRect).collect()
    }

    #[getter]
    fn object_id(&self) -> String {
        self.0.object_id.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({}x{}, {} grasps, object {:?})",
            self.0.width(),
            self.0.height(),
            self.0.grasps.len(),
            self.0.object_id
        )
    }
}

fn synth_config(config: Option<&str>) -> PyResult<SynthConfig> {
    match config {
        Some(text) => parse_flat(text).map_err(err),
        None => Ok(SynthConfig::default()),
    }
}

/// Synthetic scenes; `config` is flat TOML text overriding the defaults.
#[pyfunction]
#[pyo3(signature = (count, seed = 0, config = None))]
fn generate_scenes(count: usize, seed: u64, config: Option<&str>) -> PyResult<Vec<PyScene>> {
    let cfg = synth_config(config)?;
    Ok(data::generate_dataset(&cfg, count, seed)
        .map_err(err)?
        .into_iter()
        .map(PyScene)
        .collect())
}

#[pyfunction]
#[pyo3(signature = (seed = 0, config = None))]
fn generate_scene(seed: u64, config: Option<&str>) -> PyResult<PyScene> {
    let cfg = synth_config(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data::generate_scene(&cfg, &mut rng).map(PyScene).map_err(err)
}

fn mode_of(mode: &str) -> PyResult<ScoreMode> {
    mode.parse().map_err(err)
}

/// Feature extractor, primary grasp predictor and scorer.
#[pyclass(name = "Model", module = "grasp_detect")]
pub struct PyModel {
    model: model::Model,
    run: RunConfig,
}

#[pymethods]
impl PyModel {
    /// Fresh model; `config` is flat key-value text over the desk preset.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let run = match config {
            Some(text) => RunConfig::from_str_desk(text).map_err(err)?,
            None => RunConfig::desk(),
        };
        let model = model::Model::new(run.model.clone()).map_err(err)?;
        Ok(Self { model, run })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path.as_ref()).map_err(err)?;
        let model = ck.to_model().map_err(err)?;
        Ok(Self { model, run: ck.config })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::from_model(&self.model, &self.run, 0)
            .save(path.as_ref())
            .map_err(err)
    }

    /// Trains from scratch on `scenes` and replaces this model.
    fn fit(&mut self, scenes: Vec<PyScene>) -> PyResult<()> {
        let scenes: Vec<_> = scenes.into_iter().map(|s| s.0).collect();
        let out = train::train(&scenes, &self.run, TrainOptions::default()).map_err(err)?;
        self.run.model = out.model.config.clone();
        self.model = out.model;
        Ok(())
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.model.config.image_size
    }

    #[getter]
    fn num_candidates(&self) -> usize {
        self.model.num_candidates()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model.params.num_values()
    }

    /// Every candidate as `(GraspRect, score)`, best first.
    #[pyo3(signature = (scene, mode = "scorer"))]
    fn predict(&self, scene: &PyScene, mode: &str) -> PyResult<Vec<(PyGraspRect, f64)>> {
        let s = train::fit_to_size(&scene.0, self.model.config.image_size);
        Ok(self
            .model
            .predict(&s.image, mode_of(mode)?)
            .map_err(err)?
            .into_iter()
            .map(|(g, p)| (PyGraspRect(g), p))
            .collect())
    }

    /// Top-1 accuracy under the given criterion.
    #[pyo3(signature = (scenes, mode = "scorer", angle_thr = 30.0, iou_thr = 0.25))]
    fn evaluate(&self, scenes: Vec<PyScene>, mode: &str, angle_thr: f64, iou_thr: f64) -> PyResult<f64> {
        let scenes: Vec<_> = scenes.into_iter().map(|s| s.0).collect();
        train::evaluate(&self.model, &scenes, mode_of(mode)?, angle_thr, iou_thr).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c: &ModelConfig = &self.model.config;
        format!(
            "Model(image_size={}, fe_channels={:?}, k={}, anchor={:.2}x{:.2})",
            c.image_size, c.fe_channels, c.k, c.anchor_w, c.anchor_h
        )
    }
}

#[pymodule]
pub fn grasp_detect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraspRect>()?;
    m.add_class::<PyAnchorGrid>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(angle_diff, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_angle, m)?)?;
    m.add_function(wrap_pyfunction!(is_success, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenes, m)?)?;
    Ok(())
}
