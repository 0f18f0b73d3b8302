//! Python bindings: point parsing, CoR documents, mask scoring, benchmark
//! synthesis, t-tests, trend fits and attention heatmaps.
//!
//! Structured results come back as plain dicts and lists.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use serde_json::json;

use trace_core::attention::{step_heatmaps as core_heatmaps, AttentionDump, Reduce};
use trace_core::cor::{self, AffordanceSubtype, CoRDocument, Point, PointSet, RangePolicy};
use trace_core::mask::{score_image, MaskImage, Rle};
use trace_core::scene::{self, Relation, SceneConfig};
use trace_core::stats::{self, Dispersion, SampleInput, SummarySample, Variant};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize + ?Sized>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn policy(name: &str) -> PyResult<RangePolicy> {
    match name {
        "clamp" => Ok(RangePolicy::Clamp),
        "reject" => Ok(RangePolicy::Reject),
        other => Err(PyValueError::new_err(format!("unknown range policy {other:?}"))),
    }
}

fn point_set(points: Vec<(f64, f64)>) -> PyResult<PointSet> {
    points
        .into_iter()
        .map(|(x, y)| Point::new(x, y).map_err(value_err))
        .collect::<PyResult<Vec<_>>>()
        .map(PointSet::new)
}

fn pairs(points: &PointSet) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.x, p.y)).collect()
}

/// Binary mask over image pixels.
#[pyclass(name = "Mask", frozen)]
struct PyMask(MaskImage);

#[pymethods]
impl PyMask {
    /// `inside` is row-major, `width * height` long.
    #[new]
    fn new(width: u32, height: u32, inside: Vec<bool>) -> PyResult<Self> {
        MaskImage::new(width, height, inside).map(PyMask).map_err(value_err)
    }

    #[staticmethod]
    fn from_rle(width: u32, height: u32, counts: Vec<u32>) -> PyResult<Self> {
        MaskImage::from_rle(&Rle { width, height, counts })
            .map(PyMask)
            .map_err(value_err)
    }

    #[staticmethod]
    fn load_png(path: PathBuf) -> PyResult<Self> {
        MaskImage::load_png(path).map(PyMask).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    fn contains(&self, x: f64, y: f64) -> PyResult<bool> {
        Ok(self.0.contains(Point::new(x, y).map_err(value_err)?))
    }

    fn area_fraction(&self) -> f64 {
        self.0.area_fraction()
    }

    /// Alternating run lengths starting with outside.
    fn to_rle(&self) -> Vec<u32> {
        self.0.to_rle().counts
    }

    /// Fraction of `points` inside the mask.
    fn score(&self, points: Vec<(f64, f64)>) -> PyResult<f64> {
        Ok(score_image("", &self.0, &point_set(points)?).accuracy)
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, inside={})", self.0.width(), self.0.height(), self.0.inside_count())
    }
}

type PointsAndDiagnostics<'py> = (Vec<(f64, f64)>, Bound<'py, PyAny>);

/// Final point list in `text` plus parse diagnostics.
#[pyfunction]
#[pyo3(signature = (text, range_policy = "clamp"))]
fn parse_points<'py>(py: Python<'py>, text: &str, range_policy: &str) -> PyResult<PointsAndDiagnostics<'py>> {
    let parsed = cor::parse_points(text, policy(range_policy)?).map_err(value_err)?;
    Ok((pairs(&parsed.points), to_py(py, &parsed.diagnostics)?))
}

fn document_dict<'py>(py: Python<'py>, doc: &CoRDocument) -> PyResult<Bound<'py, PyAny>> {
    let steps: Vec<_> = doc
        .steps
        .iter()
        .map(|s| {
            json!({
                "kind": s.kind,
                "ordinal": s.ordinal,
                "text": s.text,
                "start": s.span.start,
                "end": s.span.end,
            })
        })
        .collect();
    to_py(
        py,
        &json!({
            "steps": steps,
            "subtype": doc.subtype.as_ref().map(|s| s.label().to_string()),
            "points": pairs(&doc.points),
            "complete": doc.complete,
            "diagnostics": doc.diagnostics,
        }),
    )
}

/// Parses a chain-of-reasoning response. Never raises on malformed text;
/// problems are listed under `diagnostics`.
#[pyfunction]
#[pyo3(signature = (text, range_policy = "clamp"))]
fn parse_document<'py>(py: Python<'py>, text: &str, range_policy: &str) -> PyResult<Bound<'py, PyAny>> {
    document_dict(py, &cor::parse_document(text, policy(range_policy)?))
}

/// Canonical text for four step texts, a subtype and points.
#[pyfunction]
fn serialize_document(texts: [String; 4], subtype: &str, points: Vec<(f64, f64)>) -> PyResult<String> {
    let subtype = AffordanceSubtype::from_step_text(&format!("\"{subtype}\""))
        .ok_or_else(|| PyValueError::new_err("empty subtype"))?;
    let doc = CoRDocument::from_parts(texts, subtype, point_set(points)?).map_err(value_err)?;
    cor::serialize(&doc).map_err(value_err)
}

/// Generates a benchmark and returns its metadata. Writes manifests and
/// images when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (n_scenes, seed = 0, holdout = vec!["between".to_string()], out_dir = None))]
fn build_benchmark<'py>(
    py: Python<'py>,
    n_scenes: usize,
    seed: u64,
    holdout: Vec<String>,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let holdout = holdout
        .iter()
        .map(|s| s.parse::<Relation>().map_err(value_err))
        .collect::<PyResult<BTreeSet<_>>>()?;
    let bench = scene::build_benchmark(n_scenes, &holdout, seed, &SceneConfig::default()).map_err(value_err)?;
    if let Some(dir) = out_dir {
        scene::write_benchmark(&dir, &bench).map_err(|e| PyIOError::new_err(e.to_string()))?;
    }
    to_py(py, &bench.meta)
}

/// Welch test on raw samples.
#[pyfunction]
fn welch_t_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let r = stats::t_test(SampleInput::Raw(&a), SampleInput::Raw(&b), Variant::WelchFromRaw).map_err(value_err)?;
    to_py(py, &r)
}

/// Welch and pooled tests for two `(mean, dispersion, n)` summaries, with
/// the dispersion read both as a standard deviation and a standard error.
#[pyfunction]
fn compare_summaries<'py>(
    py: Python<'py>,
    label: &str,
    a: (f64, f64, usize),
    b: (f64, f64, usize),
) -> PyResult<Bound<'py, PyAny>> {
    let s = |(m, d, n): (f64, f64, usize)| SummarySample::new(m, d, n, Dispersion::StdDev);
    let r = stats::compare_summaries(label, s(a), s(b)).map_err(value_err)?;
    to_py(py, &r)
}

/// Least-squares line with a 95% confidence band.
#[pyfunction]
fn fit_trend<'py>(py: Python<'py>, points: Vec<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &stats::fit_trend(&points).map_err(value_err)?)
}

/// Per-step heatmaps from an attention dump that carries its text.
#[pyfunction]
#[pyo3(signature = (dump_path, reduce = "mean"))]
fn step_heatmaps<'py>(py: Python<'py>, dump_path: PathBuf, reduce: &str) -> PyResult<Bound<'py, PyAny>> {
    let reduce = match reduce {
        "mean" => Reduce::Mean,
        "max" => Reduce::Max,
        other => return Err(PyValueError::new_err(format!("unknown reduction {other:?}"))),
    };
    let dump = AttentionDump::load(&dump_path).map_err(value_err)?;
    let doc = cor::parse_document(&dump.text, RangePolicy::Clamp);
    to_py(py, &core_heatmaps(&dump, &doc, reduce).map_err(value_err)?)
}

#[pymodule]
fn trace_toolkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_function(wrap_pyfunction!(parse_points, m)?)?;
    m.add_function(wrap_pyfunction!(parse_document, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_document, m)?)?;
    m.add_function(wrap_pyfunction!(build_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(compare_summaries, m)?)?;
    m.add_function(wrap_pyfunction!(fit_trend, m)?)?;
    m.add_function(wrap_pyfunction!(step_heatmaps, m)?)?;
    Ok(())
}
