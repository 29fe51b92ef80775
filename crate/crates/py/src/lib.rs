//! Python bindings: the streaming pipeline plus the metric and fixture
//! helpers, for quick experiments and notebooks.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use ttr_core::backbone::{forward_dense, forward_ttr, new_stream, BackboneDesc, BackboneSpec};
use ttr_core::cache::StreamState;
use ttr_core::error::TtrError;
use ttr_core::io::synth::{generate_frames, SynthKind};
use ttr_core::io::weights::load_weights;
use ttr_core::metrics;
use ttr_core::patching::{cosine_similarity as cos_sim, Frame, PatchVector};

fn to_py_err(e: TtrError) -> PyErr {
    match &e {
        TtrError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn make_frame(rgb: &[u8], width: usize, height: usize) -> PyResult<Frame> {
    Frame::new(height, width, rgb.to_vec()).map_err(to_py_err)
}

/// A per-stream segmentation pipeline with temporal feature reuse.
#[pyclass]
struct Pipeline {
    spec: BackboneSpec,
    state: Option<StreamState>,
    tau: f64,
    block_size: usize,
}

#[pymethods]
impl Pipeline {
    /// Build a pipeline with the default backbone. Weights come from the
    /// TTRW file at `weights` when given, otherwise from `seed`.
    #[new]
    #[pyo3(signature = (classes=3, seed=0, tau=0.99, block_size=32, weights=None))]
    fn new(
        classes: usize,
        seed: u64,
        tau: f64,
        block_size: usize,
        weights: Option<&str>,
    ) -> PyResult<Self> {
        let desc = BackboneDesc::reference(classes);
        let spec = match weights {
            Some(path) => load_weights(std::path::Path::new(path), &desc).map_err(to_py_err)?,
            None => BackboneSpec::from_seed(&desc, seed).map_err(to_py_err)?,
        };
        Ok(Pipeline {
            spec,
            state: None,
            tau,
            block_size,
        })
    }

    /// Process the next frame of the stream. Returns (labels, stats): labels
    /// as one class byte per pixel, stats as a dict of the per-frame record.
    fn process<'py>(
        &mut self,
        py: Python<'py>,
        rgb: &[u8],
        width: usize,
        height: usize,
    ) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyDict>)> {
        let frame = make_frame(rgb, width, height)?;
        let state = match self.state.take() {
            Some(s) => s,
            None => new_stream(&self.spec, height, width, self.block_size).map_err(to_py_err)?,
        };
        let (output, next, stats) =
            forward_ttr(&frame, &self.spec, state, self.tau).map_err(to_py_err)?;
        self.state = Some(next);
        let labels = PyBytes::new(py, &output.labels);
        let dict = PyDict::new(py);
        dict.set_item("frame", stats.frame_index)?;
        dict.set_item("blocks_total", stats.blocks_total)?;
        dict.set_item("blocks_active", stats.blocks_active)?;
        dict.set_item("blocks_reused", stats.blocks_reused)?;
        dict.set_item("stage_macs", stats.stage_macs)?;
        dict.set_item("head_macs", stats.head_macs)?;
        dict.set_item("similarity_ops", stats.similarity_ops)?;
        dict.set_item("wall_micros", stats.wall_micros)?;
        Ok((labels, dict))
    }

    /// Dense reference labels for one frame, same weights, no reuse.
    fn process_dense<'py>(
        &self,
        py: Python<'py>,
        rgb: &[u8],
        width: usize,
        height: usize,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let frame = make_frame(rgb, width, height)?;
        let (output, _) = forward_dense(&frame, &self.spec, self.block_size).map_err(to_py_err)?;
        Ok(PyBytes::new(py, &output.labels))
    }

    /// Forget the stream state; the next frame starts a fresh stream.
    fn reset(&mut self) {
        self.state = None;
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.tau
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.block_size
    }

    #[getter]
    fn frame_index(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| s.frame_index)
    }
}

/// Cosine similarity of two flattened patch vectors, in [-1, 1].
#[pyfunction]
fn cosine_similarity(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    cos_sim(&PatchVector { values: a }, &PatchVector { values: b }).map_err(to_py_err)
}

/// Mean intersection-over-union between two label maps.
#[pyfunction]
fn miou(pred: &[u8], truth: &[u8], classes: usize) -> PyResult<f64> {
    let mut cm = metrics::ConfusionMatrix::new(classes);
    cm.accumulate(pred, truth).map_err(to_py_err)?;
    metrics::miou(&cm).map_err(to_py_err)
}

/// Fraction of matching pixels between two label maps.
#[pyfunction]
fn pixel_accuracy(pred: &[u8], truth: &[u8], classes: usize) -> PyResult<f64> {
    let mut cm = metrics::ConfusionMatrix::new(classes);
    cm.accumulate(pred, truth).map_err(to_py_err)?;
    metrics::pixel_accuracy(&cm).map_err(to_py_err)
}

/// Sample Pearson correlation of two series.
#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&xs, &ys).map_err(to_py_err)
}

/// Mean absolute inter-frame pixel difference in [0, 1].
#[pyfunction]
fn dynamism(frame: &[u8], prev: &[u8], width: usize, height: usize) -> PyResult<f64> {
    let a = make_frame(frame, width, height)?;
    let b = make_frame(prev, width, height)?;
    metrics::dynamism_proxy(&a, &b).map_err(to_py_err)
}

/// Generate a deterministic fixture sequence in memory. Returns one
/// interleaved-RGB bytes object per frame.
#[pyfunction]
#[pyo3(signature = (kind, frames, width, height, seed=0, block_size=32))]
fn synth_frames<'py>(
    py: Python<'py>,
    kind: &str,
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
    block_size: usize,
) -> PyResult<Vec<Bound<'py, PyBytes>>> {
    let kind = SynthKind::parse(kind, block_size).map_err(to_py_err)?;
    let all = generate_frames(kind, frames, height, width, block_size, seed).map_err(to_py_err)?;
    Ok(all.iter().map(|f| PyBytes::new(py, f.rgb())).collect())
}

#[pymodule]
fn ttr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(miou, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(dynamism, m)?)?;
    m.add_function(wrap_pyfunction!(synth_frames, m)?)?;
    Ok(())
}
