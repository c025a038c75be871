//! Python bindings for the gramtrack template-memory tracker.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use gramtrack::bench::{self, synth};
use gramtrack::memory::{self as mem, GammaVariant};
use gramtrack::space;
use gramtrack::{Error, Frame};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Index { .. } => PyIndexError::new_err(e.to_string()),
        Error::Io(_) | Error::Ingestion { .. } | Error::Image(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for gramtrack::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Dense channels x height x width tensor.
#[pyclass(name = "FeatureTensor", module = "gramtrack", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFeatureTensor(gramtrack::FeatureTensor);

#[pymethods]
impl PyFeatureTensor {
    #[new]
    fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        gramtrack::FeatureTensor::new(channels, height, width, data).py().map(Self)
    }

    /// Flat 1 x 1 x n tensor.
    #[staticmethod]
    fn from_list(data: Vec<f64>) -> PyResult<Self> {
        gramtrack::FeatureTensor::from_vec(data).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        space::read_feature_file(path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        space::write_feature_file(&self.0, path).py()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    fn tolist(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn normalized(&self) -> PyResult<Self> {
        space::l2_normalize(&self.0).py().map(Self)
    }

    fn dot(&self, other: &Self) -> PyResult<f64> {
        space::inner_product(&self.0, &other.0).py()
    }

    fn masked(&self, alpha: f64) -> PyResult<Self> {
        let mask = space::tapered_cosine_window(self.0.height(), self.0.width(), alpha).py()?;
        space::apply_mask(&self.0, &mask).py().map(Self)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        let (c, h, w) = self.0.shape();
        format!("FeatureTensor(channels={c}, height={h}, width={w})")
    }
}

/// Similarity scores over search positions.
#[pyclass(name = "ActivationMap", module = "gramtrack", frozen)]
struct PyActivationMap(gramtrack::ActivationMap);

#[pymethods]
impl PyActivationMap {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    fn tolist(&self) -> Vec<Vec<f64>> {
        self.0.scores().chunks(self.0.width()).map(<[f64]>::to_vec).collect()
    }

    fn at(&self, row: usize, col: usize) -> PyResult<f64> {
        let (h, w) = self.0.dims();
        if row >= h || col >= w {
            return Err(PyIndexError::new_err(format!("({row}, {col}) outside {h}x{w}")));
        }
        Ok(self.0.at(row, col))
    }

    /// `(score, row, col)` of the first maximum.
    fn peak(&self) -> (f64, usize, usize) {
        let p = self.0.peak();
        (p.score, p.row, p.col)
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.0.dims();
        format!("ActivationMap({h}x{w}, peak={:.4})", self.0.peak().score)
    }
}

#[pyclass(name = "BoundingBox", module = "gramtrack", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyBoundingBox(gramtrack::BoundingBox);

#[pymethods]
impl PyBoundingBox {
    #[new]
    fn new(x: f64, y: f64, w: f64, h: f64) -> PyResult<Self> {
        gramtrack::BoundingBox::new(x, y, w, h).py().map(Self)
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

    fn center(&self) -> (f64, f64) {
        self.0.center()
    }

    fn iou(&self, other: &Self) -> f64 {
        gramtrack::iou(&self.0, &other.0)
    }

    fn astuple(&self) -> (f64, f64, f64, f64) {
        (self.0.x, self.0.y, self.0.w, self.0.h)
    }

    fn __repr__(&self) -> String {
        format!("BoundingBox(x={}, y={}, w={}, h={})", self.0.x, self.0.y, self.0.w, self.0.h)
    }
}

fn decision_name(d: gramtrack::Decision) -> (String, Option<usize>) {
    match d {
        gramtrack::Decision::RejectedBound => ("rejected_bound".into(), None),
        gramtrack::Decision::RejectedNoGain => ("rejected_no_gain".into(), None),
        gramtrack::Decision::Appended => ("appended".into(), None),
        gramtrack::Decision::Replaced(slot) => ("replaced".into(), Some(slot)),
    }
}

fn bound_config(mode: &str, ell: Option<f64>) -> PyResult<gramtrack::LowerBoundConfig> {
    let mode: gramtrack::BoundMode = mode.parse().py()?;
    match ell {
        Some(ell) => gramtrack::LowerBoundConfig::new(mode, ell).py(),
        None => Ok(gramtrack::LowerBoundConfig::with_default_ell(mode)),
    }
}

fn unit_box() -> gramtrack::BoundingBox {
    gramtrack::BoundingBox { x: 0.0, y: 0.0, w: 1.0, h: 1.0 }
}

/// Fixed-capacity long-term memory that keeps the Gram determinant of its
/// templates as large as possible. Slot 0 holds the base template.
#[pyclass(name = "LongTermMemory", module = "gramtrack")]
struct PyLongTermMemory {
    inner: gramtrack::LongTermMemory,
    next_id: u64,
}

#[pymethods]
impl PyLongTermMemory {
    #[new]
    fn new(base: &PyFeatureTensor, capacity: usize) -> PyResult<Self> {
        let t = gramtrack::Template::new(0, 0, base.0.clone(), unit_box());
        Ok(Self { inner: gramtrack::LongTermMemory::new(t, capacity).py()?, next_id: 1 })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = mem::load_snapshot(dir).py()?;
        let next_id = inner.slots().iter().map(|t| t.id).max().unwrap_or(0) + 1;
        Ok(Self { inner, next_id })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        mem::save_snapshot(&self.inner, dir).py().map(|_| ())
    }

    /// Offers a candidate. Returns `(decision, slot)` where `slot` is set
    /// only for replacements. `bound` is `None`, `"static"`, `"dynamic"` or
    /// `"ensemble"`.
    #[pyo3(signature = (feature, bound=None, ell=None, gamma=0.0))]
    fn consider(
        &mut self,
        feature: &PyFeatureTensor,
        bound: Option<&str>,
        ell: Option<f64>,
        gamma: f64,
    ) -> PyResult<(String, Option<usize>)> {
        let cfg = bound.map(|b| bound_config(b, ell)).transpose()?;
        let t = gramtrack::Template::new(self.next_id, 0, feature.0.clone(), unit_box());
        self.next_id += 1;
        let d = self.inner.consider(t, cfg.as_ref(), gamma).py()?;
        Ok(decision_name(d))
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    #[getter]
    fn normalized_det(&self) -> f64 {
        self.inner.current_det()
    }

    /// Normalized determinant once full, 0 before.
    #[getter]
    fn capacity_det(&self) -> f64 {
        self.inner.capacity_det()
    }

    fn gram(&self) -> Vec<Vec<f64>> {
        let g = self.inner.gram();
        (0..g.n()).map(|i| (0..g.n()).map(|j| g.get(i, j)).collect()).collect()
    }

    fn features(&self) -> Vec<PyFeatureTensor> {
        self.inner.features().into_iter().map(PyFeatureTensor).collect()
    }

    fn ids(&self) -> Vec<u64> {
        self.inner.slots().iter().map(|t| t.id).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// FIFO short-term memory with its diversity measure.
#[pyclass(name = "ShortTermMemory", module = "gramtrack")]
struct PyShortTermMemory {
    inner: gramtrack::ShortTermMemory,
    next_id: u64,
}

#[pymethods]
impl PyShortTermMemory {
    /// `variant` is `"as_written"` or `"pair_normalized"`.
    #[new]
    #[pyo3(signature = (capacity, variant="as_written"))]
    fn new(capacity: usize, variant: &str) -> PyResult<Self> {
        let variant = match variant {
            "as_written" => GammaVariant::AsWritten,
            "pair_normalized" => GammaVariant::PairNormalized,
            other => return Err(PyValueError::new_err(format!("unknown gamma variant `{other}`"))),
        };
        Ok(Self { inner: gramtrack::ShortTermMemory::new(capacity, variant).py()?, next_id: 0 })
    }

    fn push(&mut self, feature: &PyFeatureTensor) -> PyResult<()> {
        let t = gramtrack::Template::new(self.next_id, 0, feature.0.clone(), unit_box());
        self.next_id += 1;
        self.inner.push(t).py()
    }

    fn diversity(&self) -> f64 {
        self.inner.diversity()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn load_frame(index: usize, image: &Bound<'_, PyAny>) -> PyResult<Frame> {
    let path: PathBuf = image.extract()?;
    Frame::load(index, path).py()
}

/// Single-object tracker over image files.
#[pyclass(name = "Tracker", module = "gramtrack", unsendable)]
struct PyTracker {
    state: gramtrack::TrackState,
    encoder: gramtrack::Encoder,
}

#[pymethods]
impl PyTracker {
    /// `config` is a JSON object of tracker settings; omitted keys keep
    /// their defaults. `baseline=True` starts from the single-template
    /// configuration instead.
    #[new]
    #[pyo3(signature = (image, bbox, config=None, baseline=false, features_dir=None))]
    fn new(
        image: &Bound<'_, PyAny>,
        bbox: &PyBoundingBox,
        config: Option<&str>,
        baseline: bool,
        features_dir: Option<PathBuf>,
    ) -> PyResult<Self> {
        let cfg = tracker_config(config, baseline)?;
        let encoder = cfg.make_encoder(features_dir.as_deref()).py()?;
        let frame = load_frame(0, image)?;
        let state = gramtrack::track_init(&frame, bbox.0, cfg, &encoder).py()?;
        Ok(Self { state, encoder })
    }

    /// Tracks the next frame; returns a dict with the box and traces.
    fn step<'py>(&mut self, py: Python<'py>, image: &Bound<'py, PyAny>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let frame = load_frame(self.state.frame_index + 1, image)?;
        let p = gramtrack::step(&mut self.state, &frame, &self.encoder).py()?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("frame", p.frame_index)?;
        d.set_item("bbox", PyBoundingBox(p.bbox))?;
        d.set_item("score", p.score)?;
        d.set_item("source", p.source.as_str())?;
        d.set_item("stm_reinit", p.stm_reinit)?;
        d.set_item("det", p.det_after)?;
        d.set_item("gamma", p.gamma_after)?;
        d.set_item("decision", p.decision.map(|d| decision_name(d).0))?;
        Ok(d)
    }

    #[getter]
    fn bbox(&self) -> PyBoundingBox {
        PyBoundingBox(self.state.previous_box)
    }

    #[getter]
    fn frame_index(&self) -> usize {
        self.state.frame_index
    }

    fn memory_ids(&self) -> Vec<u64> {
        self.state.ltm.slots().iter().map(|t| t.id).collect()
    }

    fn normalized_det(&self) -> f64 {
        self.state.ltm.current_det()
    }

    fn save_memory(&self, dir: PathBuf) -> PyResult<()> {
        mem::save_snapshot(&self.state.ltm, dir).py().map(|_| ())
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.state.config).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

fn tracker_config(json: Option<&str>, baseline: bool) -> PyResult<gramtrack::TrackerConfig> {
    let start = if baseline { gramtrack::TrackerConfig::baseline() } else { gramtrack::TrackerConfig::default() };
    let Some(json) = json else {
        return Ok(start);
    };
    let overrides: serde_json::Value = serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut merged = serde_json::to_value(&start).map_err(|e| PyValueError::new_err(e.to_string()))?;
    merge(&mut merged, overrides);
    let cfg: gramtrack::TrackerConfig =
        serde_json::from_value(merged).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.validate().py()?;
    Ok(cfg)
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

#[pyfunction]
fn cross_correlate(kernel: &PyFeatureTensor, search: &PyFeatureTensor) -> PyResult<PyActivationMap> {
    space::cross_correlate(&kernel.0, &search.0).py().map(PyActivationMap)
}

#[pyfunction]
fn batch_cross_correlate(kernels: Vec<PyRef<'_, PyFeatureTensor>>, search: &PyFeatureTensor) -> PyResult<Vec<PyActivationMap>> {
    let ks: Vec<gramtrack::FeatureTensor> = kernels.iter().map(|k| k.0.clone()).collect();
    Ok(space::batch_cross_correlate(&ks, &search.0).py()?.into_iter().map(PyActivationMap).collect())
}

#[pyfunction]
fn tapered_cosine_window(height: usize, width: usize, alpha: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = space::tapered_cosine_window(height, width, alpha).py()?;
    Ok(m.values().chunks(width).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn gram_matrix(features: Vec<PyRef<'_, PyFeatureTensor>>) -> PyResult<Vec<Vec<f64>>> {
    let fs: Vec<gramtrack::FeatureTensor> = features.iter().map(|f| f.0.clone()).collect();
    let g = gramtrack::build_gram(&fs).py()?;
    Ok((0..g.n()).map(|i| (0..g.n()).map(|j| g.get(i, j)).collect()).collect())
}

fn square(rows: Vec<Vec<f64>>) -> PyResult<gramtrack::GramMatrix> {
    gramtrack::GramMatrix::from_rows(&rows).py()
}

/// Determinant of a square matrix given as nested lists.
#[pyfunction]
fn determinant(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(gramtrack::determinant(&square(matrix)?))
}

#[pyfunction]
fn normalized_determinant(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    gramtrack::normalized_determinant(&square(matrix)?).py()
}

/// Short-term diversity of a Gram matrix.
#[pyfunction]
#[pyo3(signature = (matrix, variant="as_written"))]
fn diversity(matrix: Vec<Vec<f64>>, variant: &str) -> PyResult<f64> {
    let variant = match variant {
        "as_written" => GammaVariant::AsWritten,
        "pair_normalized" => GammaVariant::PairNormalized,
        other => return Err(PyValueError::new_err(format!("unknown gamma variant `{other}`"))),
    };
    Ok(mem::diversity(&square(matrix)?, variant))
}

#[pyfunction]
fn success_auc(ious: Vec<f64>) -> PyResult<f64> {
    bench::success_auc(&ious).py()
}

#[pyfunction]
#[pyo3(signature = (center_errors, threshold=20.0))]
fn precision_at(center_errors: Vec<f64>, threshold: f64) -> PyResult<f64> {
    bench::precision_at(&center_errors, threshold).py()
}

/// Renders a built-in synthetic sequence (or `"suite"`) under `out_dir`
/// and returns the sequence directories.
#[pyfunction]
fn generate_preset(name: &str, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    let specs = match name {
        "suite" => synth::suite(),
        "all" => synth::presets(),
        _ => synth::presets().into_iter().filter(|s| s.name == name).collect(),
    };
    if specs.is_empty() {
        return Err(PyValueError::new_err(format!("unknown preset `{name}`")));
    }
    specs
        .iter()
        .map(|s| bench::generate_synthetic(s, &out_dir).py().map(|_| out_dir.join(&s.name)))
        .collect()
}

/// One-pass evaluation of the OTB-style sequence in `sequence_dir`.
#[pyfunction]
#[pyo3(signature = (sequence_dir, config=None, baseline=false))]
fn evaluate<'py>(
    py: Python<'py>,
    sequence_dir: PathBuf,
    config: Option<&str>,
    baseline: bool,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let cfg = tracker_config(config, baseline)?;
    let seq = bench::load_otb_sequence(&sequence_dir).py()?;
    let result = py.detach(|| bench::run_ope(&seq, &cfg)).py()?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("sequence", &result.sequence)?;
    d.set_item("auc", result.auc().py()?)?;
    d.set_item("precision", result.precision().py()?)?;
    d.set_item("ious", result.ious())?;
    d.set_item("boxes", result.frames.iter().map(|f| PyBoundingBox(f.bbox)).collect::<Vec<_>>())?;
    d.set_item("det_trace", result.det_trace())?;
    d.set_item("lt_updates", result.lt_updates().count())?;
    d.set_item("failures", result.failures())?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "gramtrack")]
fn gramtrack_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureTensor>()?;
    m.add_class::<PyActivationMap>()?;
    m.add_class::<PyBoundingBox>()?;
    m.add_class::<PyLongTermMemory>()?;
    m.add_class::<PyShortTermMemory>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(cross_correlate, m)?)?;
    m.add_function(wrap_pyfunction!(batch_cross_correlate, m)?)?;
    m.add_function(wrap_pyfunction!(tapered_cosine_window, m)?)?;
    m.add_function(wrap_pyfunction!(gram_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(determinant, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_determinant, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(success_auc, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at, m)?)?;
    m.add_function(wrap_pyfunction!(generate_preset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
