//! Python bindings. Streams and tables cross the boundary in their file
//! formats (NDJSON, CSV, JSON), images as raw bytes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use patchpipe::config::parse_config;
use patchpipe::crop::{crop_for_pose, CropRegion};
use patchpipe::embedding::{fit_pca, triplet_loss as core_triplet_loss, PcaModel};
use patchpipe::evaluation::evaluate_split;
use patchpipe::flowers::{detect_flowers as core_detect_flowers, parse_flowers, write_flowers};
use patchpipe::formats::{
    parse_dataset_index, parse_event_stream, parse_pose_stream, parse_tracks, read_embeddings, sort_events, write_dataset_index,
    write_event_stream, write_pose_stream, write_tracks,
};
use patchpipe::pipeline::{offline_events, run_pipeline, MemorySink, PipelineOptions};
use patchpipe::splits::{closed_split, filter_dataset, open_split, OPEN_ID_FRAC, OPEN_REF_FRAC, CLOSED_TRAIN_FRAC};
use patchpipe::synth::{generate_world, WorldConfig};
use patchpipe::tracking::run_tracker;
use patchpipe::visits::{detect_visits as core_detect_visits, evaluate_events as core_evaluate_events};
use patchpipe::{ImageBuffer, Point2, Pose};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn config_or_default(config_json: Option<&str>) -> PyResult<patchpipe::config::AssayConfig> {
    parse_config(config_json.unwrap_or("{}")).map_err(err)
}

fn image(width: usize, height: usize, channels: usize, data: &[u8]) -> PyResult<ImageBuffer> {
    ImageBuffer::from_raw(width, height, channels, data.to_vec()).map_err(err)
}

/// Reads a PPM/PGM file into `(width, height, channels, bytes)`.
#[pyfunction]
fn read_ppm<'py>(py: Python<'py>, path: &str) -> PyResult<(usize, usize, usize, Bound<'py, PyBytes>)> {
    let img = patchpipe::formats::read_ppm(path).map_err(err)?;
    Ok((img.width(), img.height(), img.channels(), PyBytes::new(py, img.data())))
}

/// Flowers found in a reference frame, as flower JSON.
#[pyfunction]
#[pyo3(signature = (width, height, channels, data, config_json=None))]
fn detect_flowers(width: usize, height: usize, channels: usize, data: &[u8], config_json: Option<&str>) -> PyResult<String> {
    let cfg = config_or_default(config_json)?;
    let flowers = core_detect_flowers(&image(width, height, channels, data)?, &cfg.flower).map_err(err)?;
    Ok(write_flowers(&flowers))
}

/// Pose NDJSON in, track NDJSON out.
#[pyfunction]
#[pyo3(signature = (poses_ndjson, config_json=None))]
fn track(poses_ndjson: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config_or_default(config_json)?;
    let frames = parse_pose_stream(poses_ndjson).map_err(err)?;
    let tracks = run_tracker(frames.iter(), cfg.track).map_err(err)?;
    Ok(write_tracks(&tracks))
}

/// Track NDJSON and flower JSON in, event NDJSON out.
#[pyfunction]
#[pyo3(signature = (tracks_ndjson, flowers_json, config_json=None))]
fn detect_visits(tracks_ndjson: &str, flowers_json: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config_or_default(config_json)?;
    let tracks = parse_tracks(tracks_ndjson).map_err(err)?;
    let flowers = parse_flowers(flowers_json).map_err(err)?;
    let mut events = core_detect_visits(&tracks, &flowers, &cfg.visit);
    sort_events(&mut events);
    Ok(write_event_stream(&events))
}

#[pyfunction]
#[pyo3(signature = (predicted_ndjson, annotated_ndjson, overlap_min=1))]
fn evaluate_events<'py>(py: Python<'py>, predicted_ndjson: &str, annotated_ndjson: &str, overlap_min: u64) -> PyResult<Bound<'py, PyDict>> {
    let p = parse_event_stream(predicted_ndjson).map_err(err)?;
    let a = parse_event_stream(annotated_ndjson).map_err(err)?;
    let m = core_evaluate_events(&p, &a, overlap_min);
    let d = PyDict::new(py);
    d.set_item("n_annotated", m.n_annotated)?;
    d.set_item("n_predicted", m.n_predicted)?;
    d.set_item("recall", m.recall)?;
    d.set_item("duplication_rate", m.duplication_rate)?;
    Ok(d)
}

/// Streams poses through the pipeline; returns `(events_ndjson, stats_csv)`.
#[pyfunction]
#[pyo3(signature = (poses_ndjson, flowers_json, queue_capacity=64, threads=None, config_json=None))]
fn run_stream(
    py: Python<'_>,
    poses_ndjson: &str,
    flowers_json: &str,
    queue_capacity: usize,
    threads: Option<usize>,
    config_json: Option<&str>,
) -> PyResult<(String, String)> {
    let cfg = config_or_default(config_json)?;
    let frames = parse_pose_stream(poses_ndjson).map_err(err)?;
    let flowers = parse_flowers(flowers_json).map_err(err)?;
    let opts = PipelineOptions { queue_capacity, threads, tracker: cfg.track, visit: cfg.visit, ..Default::default() };
    py.detach(|| {
        let mut sink = MemorySink::new();
        let view = sink.clone();
        let report = run_pipeline(frames.into_iter().map(Ok), &flowers, &mut sink, &opts).map_err(|e| err(e.error))?;
        Ok((view.text(), report.to_csv()))
    })
}

/// Batch tracking and visit detection in one call; event NDJSON out.
#[pyfunction]
#[pyo3(signature = (poses_ndjson, flowers_json, config_json=None))]
fn offline_visits(poses_ndjson: &str, flowers_json: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config_or_default(config_json)?;
    let frames = parse_pose_stream(poses_ndjson).map_err(err)?;
    let flowers = parse_flowers(flowers_json).map_err(err)?;
    Ok(write_event_stream(&offline_events(&frames, &flowers, cfg.track, &cfg.visit).map_err(err)?))
}

/// Mean semi-hard triplet loss of a batch.
#[pyfunction]
#[pyo3(signature = (embeddings, labels, margin=0.2))]
fn triplet_loss(embeddings: Vec<Vec<f64>>, labels: Vec<String>, margin: f64) -> PyResult<f64> {
    Ok(core_triplet_loss(&embeddings, &labels, margin).map_err(err)?.loss)
}

/// Cuts an aligned (or unaligned) crop around a pose given as
/// `{"head": (x, y), "neck": ..., "waist": ..., "abdomen": ...}`.
#[pyfunction]
#[pyo3(signature = (width, height, channels, data, keypoints, region="full", config_json=None))]
fn crop<'py>(
    py: Python<'py>,
    width: usize,
    height: usize,
    channels: usize,
    data: &[u8],
    keypoints: &Bound<'py, PyDict>,
    region: &str,
    config_json: Option<&str>,
) -> PyResult<(usize, usize, Bound<'py, PyBytes>)> {
    let cfg = config_or_default(config_json)?;
    let region: CropRegion = region.parse().map_err(err)?;
    let kp = |name: &str| -> PyResult<Option<Point2>> {
        Ok(keypoints.get_item(name)?.map(|v| v.extract::<(f64, f64)>()).transpose()?.map(|(x, y)| Point2::new(x, y)))
    };
    let pose = Pose { head: kp("head")?, neck: kp("neck")?, waist: kp("waist")?, abdomen: kp("abdomen")?, score: 1.0 };
    let out = crop_for_pose(&image(width, height, channels, data)?, &pose, &cfg.crop, region).map_err(err)?;
    Ok((out.width(), out.height(), PyBytes::new(py, out.data())))
}

/// Closed- or open-set CMC and kNN scores of an embeddings CSV over a
/// dataset index CSV.
#[pyfunction]
#[pyo3(signature = (index_csv, embeddings_csv, setting="closed", galleries=10000, seed=0))]
fn evaluate_embeddings<'py>(
    py: Python<'py>,
    index_csv: &str,
    embeddings_csv: &str,
    setting: &str,
    galleries: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let records = filter_dataset(&parse_dataset_index(index_csv).map_err(err)?);
    let table = read_embeddings(embeddings_csv).map_err(err)?;
    let split = match setting {
        "closed" => closed_split(&records, CLOSED_TRAIN_FRAC, seed),
        "open" => open_split(&records, OPEN_ID_FRAC, OPEN_REF_FRAC, seed),
        other => return Err(PyValueError::new_err(format!("unknown setting '{other}'"))),
    }
    .map_err(err)?;
    let (s, _) = evaluate_split(&split, &records, &table, galleries, 9, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("top1", s.top1)?;
    d.set_item("top3", s.top3)?;
    d.set_item("knn1", s.knn1)?;
    d.set_item("knn3", s.knn3)?;
    Ok(d)
}

#[pyclass(name = "PcaModel", frozen)]
struct PyPca {
    inner: PcaModel,
}

#[pymethods]
impl PyPca {
    #[new]
    #[pyo3(signature = (data, variance=0.95))]
    fn new(data: Vec<Vec<f64>>, variance: f64) -> PyResult<Self> {
        Ok(Self { inner: fit_pca(&data, variance).map_err(err)? })
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn explained_ratio(&self) -> Vec<f64> {
        self.inner.explained_ratio.clone()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.project(&x).map_err(err)
    }
}

/// A synthetic flower-patch world.
#[pyclass(name = "World", frozen)]
struct PyWorld {
    inner: patchpipe::synth::World,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (config_json="{}"))]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg: WorldConfig = serde_json::from_str(config_json).map_err(err)?;
        Ok(Self { inner: generate_world(&cfg).map_err(err)? })
    }

    #[getter]
    fn n_frames(&self) -> u64 {
        self.inner.n_frames
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.config.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.config.height
    }

    fn flowers_json(&self) -> String {
        write_flowers(&self.inner.flowers)
    }

    fn poses_ndjson(&self) -> String {
        write_pose_stream(&self.inner.pose_stream())
    }

    fn tracks_ndjson(&self) -> String {
        write_tracks(&self.inner.ground_truth_tracks())
    }

    fn visits_ndjson(&self) -> String {
        write_event_stream(&self.inner.ground_truth_visits())
    }

    fn index_csv(&self) -> PyResult<String> {
        write_dataset_index(&self.inner.dataset_index()).map_err(err)
    }

    /// RGB bytes of one frame.
    fn render_frame<'py>(&self, py: Python<'py>, frame: u64) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.render_frame(frame).data())
    }

    fn reference_frame<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.reference_frame().data())
    }
}

#[pymodule]
fn patchpipe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(read_ppm, m)?)?;
    m.add_function(wrap_pyfunction!(detect_flowers, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(detect_visits, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_events, m)?)?;
    m.add_function(wrap_pyfunction!(run_stream, m)?)?;
    m.add_function(wrap_pyfunction!(offline_visits, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(crop, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_embeddings, m)?)?;
    m.add_class::<PyPca>()?;
    m.add_class::<PyWorld>()?;
    Ok(())
}
