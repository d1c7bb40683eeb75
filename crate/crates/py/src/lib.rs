//! Python bindings. Images cross the boundary as nested lists (`H x W x 3`
//! for color, `H x W` for alpha and depth), which `numpy.asarray` accepts
//! directly.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyBytes, PyDict, PyList};

use mpcore::edit::{apply_op, crop_instance, render, replay, EditOp, Position, Transform2D};
use mpcore::io::{
    encode_color_png, export_scene, load_scene, quantize_crop, quantized_alpha_tolerance, read_color_dir,
    read_cutout_dir, write_dataset, write_synthetic_scene,
};
use mpcore::metrics::{self, EvalConfig};
use mpcore::sgmp::{default_tau, initial_plane_depths_with, plane_masks, refine_plane_depths_traced, Spacing};
use mpcore::synth::{procedural, scene_depth_map, AlphaMode, SynthConfig};
use mpcore::{validate_stack, AlphaMatte, DepthMap, Image, PlaneId, SceneStack};

create_exception!(mpstack, MpstackError, PyException);

fn py_err(e: mpcore::Error) -> PyErr {
    MpstackError::new_err(format!("{}: {e}", e.kind()))
}

fn value_err(message: impl Into<String>) -> PyErr {
    MpstackError::new_err(format!("invalid_value: {}", message.into()))
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| py_err(e.into()))?;
    json_to_py(py, &json)
}

fn rows<T: Copy>(width: usize, values: &[T]) -> Vec<Vec<T>> {
    values.chunks(width.max(1)).map(<[T]>::to_vec).collect()
}

fn flatten<T: Copy>(grid: &[Vec<T>]) -> PyResult<(usize, usize, Vec<T>)> {
    let height = grid.len();
    let width = grid.first().map_or(0, Vec::len);
    if height == 0 || width == 0 {
        return Err(value_err("grid must be non-empty"));
    }
    if grid.iter().any(|r| r.len() != width) {
        return Err(value_err("grid rows must all have the same length"));
    }
    Ok((width, height, grid.concat()))
}

fn matte(grid: &[Vec<f32>]) -> PyResult<AlphaMatte> {
    let (w, h, values) = flatten(grid)?;
    AlphaMatte::new(w, h, values).map_err(py_err)
}

fn mattes(grids: &[Vec<Vec<f32>>]) -> PyResult<Vec<AlphaMatte>> {
    grids.iter().map(|g| matte(g)).collect()
}

fn image(grid: &[Vec<[f32; 3]>]) -> PyResult<Image> {
    let (w, h, pixels) = flatten(grid)?;
    Image::new(w, h, pixels).map_err(py_err)
}

/// A layered scene: base layers, the edits applied so far, and the result.
/// Edits return new scenes; a scene never changes after construction.
#[pyclass(frozen, module = "mpstack")]
pub struct Scene {
    base: Arc<SceneStack>,
    log: Arc<Vec<EditOp>>,
    current: Arc<SceneStack>,
    seed: Option<u64>,
}

impl Scene {
    fn from_stack(stack: SceneStack, seed: Option<u64>) -> Self {
        let stack = Arc::new(stack);
        Scene {
            base: stack.clone(),
            log: Arc::new(Vec::new()),
            current: stack,
            seed,
        }
    }

    fn then(&self, py: Python<'_>, op: EditOp) -> PyResult<Scene> {
        let current = self.current.clone();
        let outcome = py.detach(|| apply_op(&current, &op)).map_err(py_err)?;
        let mut log = (*self.log).clone();
        log.push(op);
        Ok(Scene {
            base: self.base.clone(),
            log: Arc::new(log),
            current: Arc::new(outcome.stack),
            seed: self.seed,
        })
    }

    fn plane(&self, id: u32) -> PyResult<&mpcore::Plane> {
        self.current
            .plane(PlaneId(id))
            .ok_or_else(|| py_err(mpcore::Error::UnknownPlane(PlaneId(id))))
    }
}

fn transform(scale: f64, rotation: f64) -> Transform2D {
    Transform2D {
        scale,
        rotation_deg: rotation,
        ..Transform2D::identity()
    }
}

#[pymethods]
impl Scene {
    /// Loads a scene directory or manifest, replaying its edit log.
    #[staticmethod]
    fn load(py: Python<'_>, path: PathBuf) -> PyResult<Scene> {
        let loaded = py.detach(|| load_scene(path)).map_err(py_err)?;
        Ok(Scene {
            base: Arc::new(loaded.base),
            log: Arc::new(loaded.log),
            current: Arc::new(loaded.current),
            seed: loaded.manifest.seed,
        })
    }

    /// A synthetic scene built from procedural cutouts and backgrounds.
    #[staticmethod]
    #[pyo3(signature = (seed, width = 64, height = 48, hard_core = false, soft_edges = true, min_instances = 2, max_instances = 6))]
    #[allow(clippy::too_many_arguments)]
    fn procedural(
        py: Python<'_>,
        seed: u64,
        width: usize,
        height: usize,
        hard_core: bool,
        soft_edges: bool,
        min_instances: usize,
        max_instances: usize,
    ) -> PyResult<Scene> {
        let config = synth_config(hard_core, soft_edges, min_instances, max_instances)?;
        let scene = py
            .detach(|| procedural::scene(seed, width, height, &config))
            .map_err(py_err)?;
        Ok(Scene::from_stack(scene.stack, Some(seed)))
    }

    #[getter]
    fn width(&self) -> usize {
        self.current.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.current.height()
    }

    /// Front to back; the background is last.
    #[getter]
    fn plane_ids(&self) -> Vec<u32> {
        self.current.plane_ids().iter().map(|p| p.0).collect()
    }

    #[getter]
    fn instance_count(&self) -> usize {
        self.current.instance_count()
    }

    #[getter]
    fn log_len(&self) -> usize {
        self.log.len()
    }

    /// Mean depth of each plane, front to back; the background is `inf`.
    fn depths(&self) -> Vec<f64> {
        self.current.planes().iter().map(|p| p.mean_depth()).collect()
    }

    /// Per-pixel depth of the most visible plane.
    fn depth_map(&self) -> Vec<Vec<f32>> {
        let depth = scene_depth_map(&self.current);
        rows(depth.width(), depth.values())
    }

    fn render(&self, py: Python<'_>) -> Vec<Vec<[f32; 3]>> {
        let current = self.current.clone();
        let image = py.detach(|| render(&current));
        rows(image.width(), image.pixels())
    }

    fn render_png<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let current = self.current.clone();
        let bytes = py.detach(|| encode_color_png(&render(&current))).map_err(py_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn color(&self, plane: u32) -> PyResult<Vec<Vec<[f32; 3]>>> {
        let color = self.plane(plane)?.color();
        Ok(rows(color.width(), color.pixels()))
    }

    fn alpha(&self, plane: u32) -> PyResult<Vec<Vec<f32>>> {
        let alpha = self.plane(plane)?.alpha();
        Ok(rows(alpha.width(), alpha.values()))
    }

    fn remove(&self, py: Python<'_>, plane: u32) -> PyResult<Scene> {
        self.then(py, EditOp::Remove { plane: PlaneId(plane) })
    }

    /// Moves `p` directly behind `q`; `p` must currently be in front.
    fn reorder(&self, py: Python<'_>, p: u32, q: u32) -> PyResult<Scene> {
        self.then(
            py,
            EditOp::Reorder {
                p: PlaneId(p),
                q: PlaneId(q),
            },
        )
    }

    #[pyo3(signature = (plane, x, y, scale = 1.0, rotation = 0.0))]
    fn drag(&self, py: Python<'_>, plane: u32, x: f64, y: f64, scale: f64, rotation: f64) -> PyResult<Scene> {
        self.then(
            py,
            EditOp::DragWithin {
                plane: PlaneId(plane),
                position: Position { x, y },
                transform: transform(scale, rotation),
            },
        )
    }

    /// Pastes instance `plane` of `source` as a new front plane.
    #[pyo3(signature = (source, plane, x, y, scale = 1.0, rotation = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn paste(
        &self,
        py: Python<'_>,
        source: &Scene,
        plane: u32,
        x: f64,
        y: f64,
        scale: f64,
        rotation: f64,
    ) -> PyResult<Scene> {
        let picked = source.plane(plane)?;
        if picked.is_background() {
            return Err(py_err(mpcore::Error::InvalidTarget(PlaneId(plane))));
        }
        let crop = quantize_crop(&crop_instance(picked).map_err(py_err)?);
        self.then(
            py,
            EditOp::DragAcross {
                source: Arc::new(crop),
                position: Position { x, y },
                transform: transform(scale, rotation),
            },
        )
    }

    /// The scene with only the first `to` edits applied.
    fn undo(&self, py: Python<'_>, to: usize) -> PyResult<Scene> {
        if to > self.log.len() {
            return Err(value_err(format!(
                "cannot undo to {to}: the log has {} entries",
                self.log.len()
            )));
        }
        let (base, log) = (self.base.clone(), self.log.clone());
        let current = py.detach(|| replay(&base, &log[..to])).map_err(py_err)?;
        Ok(Scene {
            base: self.base.clone(),
            log: Arc::new(self.log[..to].to_vec()),
            current: Arc::new(current),
            seed: self.seed,
        })
    }

    /// Structural and alpha checks, with a tolerance that allows for
    /// 16-bit alpha storage.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = validate_stack(&self.current, quantized_alpha_tolerance(self.current.len()));
        let out = to_py(py, &report)?;
        out.set_item("passed", report.passed())?;
        Ok(out)
    }

    /// Writes base layers plus the edit log; loading replays the log.
    fn export(&self, py: Python<'_>, dir: PathBuf) -> PyResult<()> {
        let (base, log, current, seed) = (self.base.clone(), self.log.clone(), self.current.clone(), self.seed);
        py.detach(|| export_scene(&base, &log, Some(&current), seed, dir))
            .map(|_| ())
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({}x{}, {} instances, {} edits)",
            self.current.width(),
            self.current.height(),
            self.current.instance_count(),
            self.log.len()
        )
    }
}

fn synth_config(
    hard_core: bool,
    soft_edges: bool,
    min_instances: usize,
    max_instances: usize,
) -> PyResult<SynthConfig> {
    if min_instances == 0 || min_instances > max_instances {
        return Err(value_err("need 1 <= min_instances <= max_instances"));
    }
    Ok(SynthConfig {
        instances: (min_instances, max_instances),
        alpha_mode: if hard_core {
            AlphaMode::HardCore {
                keep_soft_edges: soft_edges,
            }
        } else {
            AlphaMode::Soft
        },
        ..SynthConfig::default()
    })
}

/// Writes a synthetic dataset (train/val/test at 3:1:1) and returns its index.
#[pyfunction]
#[pyo3(signature = (out, count, seed = 0, cutouts = None, backgrounds = None, width = 256, height = 256, hard_core = false, soft_edges = true))]
#[allow(clippy::too_many_arguments)]
fn synth_dataset<'py>(
    py: Python<'py>,
    out: PathBuf,
    count: usize,
    seed: u64,
    cutouts: Option<PathBuf>,
    backgrounds: Option<PathBuf>,
    width: usize,
    height: usize,
    hard_core: bool,
    soft_edges: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = synth_config(hard_core, soft_edges, 2, 6)?;
    let index = py
        .detach(|| {
            let cutouts = match cutouts {
                Some(dir) => read_cutout_dir(dir)?,
                None => procedural::cutouts(seed ^ 0x9e37_79b9, 16, (width / 2, height)),
            };
            let backgrounds = match backgrounds {
                Some(dir) => read_color_dir(dir)?,
                None => procedural::backgrounds(seed ^ 0x7f4a_7c15, 8, width, height),
            };
            write_dataset(&cutouts, &backgrounds, &config, seed, count, out)
        })
        .map_err(py_err)?;
    to_py(py, &index)
}

/// Writes a procedural scene in the synthetic layout (layers, composite,
/// swapped composite and depth map).
#[pyfunction]
#[pyo3(signature = (dir, seed, width = 64, height = 48, hard_core = false, soft_edges = true))]
fn write_procedural_scene(
    py: Python<'_>,
    dir: PathBuf,
    seed: u64,
    width: usize,
    height: usize,
    hard_core: bool,
    soft_edges: bool,
) -> PyResult<()> {
    let config = synth_config(hard_core, soft_edges, 2, 6)?;
    py.detach(|| write_synthetic_scene(&procedural::scene(seed, width, height, &config)?, dir))
        .map(|_| ())
        .map_err(py_err)
}

/// Splits a depth map into `planes` soft masks. Returns the initial and
/// refined plane depths, the objective trace, `tau` and the masks.
#[pyfunction]
#[pyo3(signature = (depth, planes = 10, tau = None, iters = 20, spacing = "quantile"))]
fn sgmp<'py>(
    py: Python<'py>,
    depth: Vec<Vec<f32>>,
    planes: usize,
    tau: Option<f64>,
    iters: usize,
    spacing: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let spacing = match spacing {
        "quantile" => Spacing::Quantile,
        "linear" => Spacing::Linear,
        other => {
            return Err(value_err(format!(
                "spacing must be \"quantile\" or \"linear\", got {other:?}"
            )))
        }
    };
    let (w, h, values) = flatten(&depth)?;
    let depth = DepthMap::new(w, h, values).map_err(py_err)?;
    let (depths, trace, tau, masks) = py
        .detach(|| {
            let initial = initial_plane_depths_with(&depth, planes, spacing)?;
            let (depths, trace) = refine_plane_depths_traced(&depth, &initial, iters)?;
            let tau = tau.unwrap_or_else(|| default_tau(&depth, planes));
            let masks = plane_masks(&depth, &depths, tau)?;
            Ok((depths, trace, tau, masks))
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("initial", depths.initial().to_vec())?;
    out.set_item("refined", depths.refined().to_vec())?;
    out.set_item("objective_trace", trace)?;
    out.set_item("tau", tau)?;
    let grids: Vec<Vec<Vec<f64>>> = (0..masks.count()).map(|k| rows(w, masks.mask(k))).collect();
    out.set_item("masks", grids)?;
    Ok(out)
}

/// Matches predicted to ground-truth mattes and scores one image.
#[pyfunction]
#[pyo3(signature = (preds, gts, iou_threshold = 0.5, name = "image"))]
fn evaluate<'py>(
    py: Python<'py>,
    preds: Vec<Vec<Vec<f32>>>,
    gts: Vec<Vec<Vec<f32>>>,
    iou_threshold: f32,
    name: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let config = EvalConfig {
        iou_threshold,
        ..EvalConfig::default()
    };
    let report = metrics::evaluate_image(name, &mattes(&preds)?, &mattes(&gts)?, &config).map_err(py_err)?;
    to_py(py, &report)
}

/// Scaled SAD (`/1000`).
#[pyfunction]
fn sad(pred: Vec<Vec<f32>>, gt: Vec<Vec<f32>>) -> PyResult<f64> {
    Ok(metrics::sad(&matte(&pred)?, &matte(&gt)?) * EvalConfig::default().scales.sad)
}

/// Scaled MSE (`x100`).
#[pyfunction]
fn mse(pred: Vec<Vec<f32>>, gt: Vec<Vec<f32>>) -> PyResult<f64> {
    Ok(metrics::mse(&matte(&pred)?, &matte(&gt)?) * EvalConfig::default().scales.mse)
}

/// Scaled MAD (`x1000`).
#[pyfunction]
fn mad(pred: Vec<Vec<f32>>, gt: Vec<Vec<f32>>) -> PyResult<f64> {
    Ok(metrics::mad(&matte(&pred)?, &matte(&gt)?) * EvalConfig::default().scales.mad)
}

#[pyfunction]
#[pyo3(signature = (a, b, threshold = 0.5))]
fn iou(a: Vec<Vec<f32>>, b: Vec<Vec<f32>>, threshold: f32) -> PyResult<f64> {
    Ok(metrics::iou(&matte(&a)?, &matte(&b)?, threshold))
}

/// Mean L1 and L2 in percent, and PSNR in dB, between two RGB images.
#[pyfunction]
fn editing_metrics<'py>(
    py: Python<'py>,
    pred: Vec<Vec<[f32; 3]>>,
    gt: Vec<Vec<[f32; 3]>>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = metrics::editing_metrics(&image(&pred)?, &image(&gt)?).map_err(py_err)?;
    to_py(py, &m)
}

#[pymodule]
pub fn mpstack(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MpstackError", m.py().get_type::<MpstackError>())?;
    m.add_class::<Scene>()?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_procedural_scene, m)?)?;
    m.add_function(wrap_pyfunction!(sgmp, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sad, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mad, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(editing_metrics, m)?)?;
    Ok(())
}
