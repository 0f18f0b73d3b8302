//! Benchmark evaluation: prediction, response caching, scoring and reports.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{parse_points, Diagnostic, Point, PointSet, RangePolicy};
use crate::endpoint::{call_with_retry, Endpoint, EndpointError, GenerateRequest, RetryPolicy};
use crate::mask::{aggregate, score_image, EvalReport, MaskError, RunScores};
use crate::pool::ordered_collect;
use crate::scene::SceneRecord;
use crate::seed;
use crate::stats::AblationSeries;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no cached response for record {record_id} run {run_id}")]
    MissingCache { record_id: String, run_id: u32 },
    #[error("results do not share a benchmark and image set: {0}")]
    BenchmarkMismatch(String),
    #[error("at least one run is required")]
    NoRuns,
    #[error("cache line {line}: {source}")]
    CacheParse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Produces a raw response for one record in one run.
pub trait Predictor: Send + Sync {
    fn name(&self) -> String;
    fn predict(&self, record: &SceneRecord, run_id: u32, seed: u64) -> Result<String, EndpointError>;
}

/// Evaluation prompt for a record.
pub fn eval_prompt(record: &SceneRecord) -> String {
    format!(
        "{}\nAnswer with a list of (x, y) points in normalized image coordinates, \
         for example [(0.250, 0.600), (0.300, 0.620)].",
        record.instruction
    )
}

pub struct EndpointPredictor<E> {
    pub endpoint: E,
    pub model: String,
    pub temperature: f64,
    pub retry: RetryPolicy,
    pub attach_images: bool,
}

impl<E: Endpoint> Predictor for EndpointPredictor<E> {
    fn name(&self) -> String {
        self.model.clone()
    }

    fn predict(&self, record: &SceneRecord, _run_id: u32, seed: u64) -> Result<String, EndpointError> {
        let image = if self.attach_images {
            use base64::Engine as _;
            let mut buf = std::io::Cursor::new(Vec::new());
            record
                .render()
                .write_to(&mut buf, image::ImageFormat::Png)
                .map_err(|e| EndpointError::Protocol(e.to_string()))?;
            Some(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
        } else {
            None
        };
        let request = GenerateRequest {
            model: self.model.clone(),
            prompt: eval_prompt(record),
            image,
            temperature: self.temperature,
            seed,
        };
        call_with_retry(&self.endpoint, &request, &self.retry).map(|r| r.text)
    }
}

/// Answers with the record's ground-truth points.
pub struct GtEcho;

impl Predictor for GtEcho {
    fn name(&self) -> String {
        "gt-echo".into()
    }

    fn predict(&self, record: &SceneRecord, _: u32, _: u64) -> Result<String, EndpointError> {
        Ok(record.gt_points.to_canonical())
    }
}

fn uniform_points(n: usize, seed: u64) -> PointSet {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|_| Point {
            x: rng.gen::<f64>(),
            y: rng.gen::<f64>(),
        })
        .collect()
}

/// Points drawn uniformly over the unit square.
pub struct UniformRandom {
    pub points: usize,
}

impl Predictor for UniformRandom {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn predict(&self, _: &SceneRecord, _: u32, seed: u64) -> Result<String, EndpointError> {
        Ok(uniform_points(self.points, seed).to_canonical())
    }
}

/// Answers correctly with probability `skill`, otherwise uniformly at random.
pub struct Simulated {
    pub label: String,
    pub skill: f64,
    pub points: usize,
}

impl Predictor for Simulated {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn predict(&self, record: &SceneRecord, _: u32, seed: u64) -> Result<String, EndpointError> {
        let key = seed::derive(seed, seed::fnv1a(record.id.as_bytes()));
        if seed::unit(key) < self.skill {
            let k = self.points.min(record.gt_points.len()).max(1);
            Ok(PointSet::new(record.gt_points.points[..k].to_vec()).to_canonical())
        } else {
            Ok(uniform_points(self.points, key).to_canonical())
        }
    }
}

/// Fails every request.
pub struct AlwaysFail;

impl Predictor for AlwaysFail {
    fn name(&self) -> String {
        "fail".into()
    }

    fn predict(&self, _: &SceneRecord, _: u32, _: u64) -> Result<String, EndpointError> {
        Err(EndpointError::Unreachable("predictor always fails".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub record_id: String,
    pub run_id: u32,
    pub response_text: String,
    pub parsed: PointSet,
    pub parse_diagnostics: Vec<Diagnostic>,
    /// Set when the predictor failed; the response is then empty.
    #[serde(default)]
    pub failed: bool,
}

impl PredictionRecord {
    pub fn from_response(record_id: &str, run_id: u32, response_text: String, policy: RangePolicy) -> Self {
        let (parsed, parse_diagnostics) = match parse_points(&response_text, policy) {
            Ok(p) => (p.points, p.diagnostics),
            Err(e) => {
                tracing::warn!(record = record_id, run_id, error = %e, "unparseable prediction");
                (PointSet::unparsed(), vec![Diagnostic::NoPointList])
            }
        };
        PredictionRecord {
            record_id: record_id.to_string(),
            run_id,
            response_text,
            parsed,
            parse_diagnostics,
            failed: false,
        }
    }

    fn failure(record_id: &str, run_id: u32) -> Self {
        PredictionRecord {
            record_id: record_id.to_string(),
            run_id,
            response_text: String::new(),
            parsed: PointSet::unparsed(),
            parse_diagnostics: vec![Diagnostic::NoPointList],
            failed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub benchmark: String,
    pub runs: u32,
    /// Run `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    pub concurrency: usize,
    pub range_policy: RangePolicy,
    pub cache_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            benchmark: "main".into(),
            runs: 3,
            base_seed: 0,
            concurrency: 8,
            range_policy: RangePolicy::Clamp,
            cache_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub benchmark: String,
    pub model: String,
    pub report: EvalReport,
    pub per_image: Vec<RunScores>,
    pub failures: usize,
    pub n_records: usize,
}

impl BenchmarkResult {
    fn image_ids(&self) -> BTreeSet<&str> {
        self.per_image
            .iter()
            .flat_map(|r| r.scores.iter().map(|s| s.image_id.as_str()))
            .collect()
    }
}

/// Response cache keyed by record and run.
#[derive(Debug, Clone, Default)]
pub struct PredictionCache {
    entries: HashMap<(String, u32), PredictionRecord>,
}

impl PredictionCache {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let mut cache = PredictionCache::default();
        if !path.exists() {
            return Ok(cache);
        }
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PredictionRecord =
                serde_json::from_str(&line).map_err(|source| EvalError::CacheParse { line: i + 1, source })?;
            cache.insert(rec);
        }
        Ok(cache)
    }

    pub fn insert(&mut self, rec: PredictionRecord) {
        self.entries.insert((rec.record_id.clone(), rec.run_id), rec);
    }

    pub fn get(&self, record_id: &str, run_id: u32) -> Option<&PredictionRecord> {
        self.entries.get(&(record_id.to_string(), run_id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Scores predictions against record masks. Missing predictions score 0.
pub fn score_predictions(
    benchmark: &str,
    model: &str,
    records: &[SceneRecord],
    predictions: &[PredictionRecord],
    runs: u32,
) -> Result<BenchmarkResult, EvalError> {
    if runs == 0 {
        return Err(EvalError::NoRuns);
    }
    let by_key: HashMap<(&str, u32), &PredictionRecord> = predictions
        .iter()
        .map(|p| ((p.record_id.as_str(), p.run_id), p))
        .collect();
    let empty = PointSet::unparsed();
    let per_image: Vec<RunScores> = (0..runs)
        .map(|run| RunScores {
            run_id: format!("run{run}"),
            scores: records
                .iter()
                .map(|r| {
                    let points = by_key.get(&(r.id.as_str(), run)).map_or(&empty, |p| &p.parsed);
                    score_image(&r.id, &r.mask, points)
                })
                .collect(),
        })
        .collect();
    Ok(BenchmarkResult {
        benchmark: benchmark.to_string(),
        model: model.to_string(),
        report: aggregate(&per_image)?,
        per_image,
        failures: predictions.iter().filter(|p| p.failed).count(),
        n_records: records.len(),
    })
}

/// Queries (or replays from `cache`) one response per record per run, then
/// scores. Predictor failures count as empty predictions. Returns the result
/// and every prediction in run-major, record order.
pub fn run_eval<P: Predictor + ?Sized>(
    records: &[SceneRecord],
    predictor: &P,
    cfg: &EvalConfig,
    cache: &PredictionCache,
) -> Result<(BenchmarkResult, Vec<PredictionRecord>), EvalError> {
    if cfg.runs == 0 {
        return Err(EvalError::NoRuns);
    }
    let jobs: Vec<(u32, &SceneRecord)> = (0..cfg.runs).flat_map(|run| records.iter().map(move |r| (run, r))).collect();
    if cfg.cache_only {
        if let Some((run, r)) = jobs.iter().find(|(run, r)| cache.get(&r.id, *run).is_none()) {
            return Err(EvalError::MissingCache {
                record_id: r.id.clone(),
                run_id: *run,
            });
        }
    }
    let predictions = ordered_collect(jobs.into_iter(), cfg.concurrency, |_, (run, r)| {
        if let Some(hit) = cache.get(&r.id, run) {
            return hit.clone();
        }
        match predictor.predict(r, run, cfg.base_seed.wrapping_add(run as u64)) {
            Ok(text) => PredictionRecord::from_response(&r.id, run, text, cfg.range_policy),
            Err(e) => {
                tracing::warn!(record = %r.id, run, error = %e, "prediction failed");
                PredictionRecord::failure(&r.id, run)
            }
        }
    });
    let result = score_predictions(&cfg.benchmark, &predictor.name(), records, &predictions, cfg.runs)?;
    tracing::info!(
        benchmark = %cfg.benchmark,
        model = %result.model,
        mean = result.report.mean,
        failures = result.failures,
        "evaluation finished"
    );
    Ok((result, predictions))
}

/// `48.1% ± 0.1` style cell.
pub fn format_cell(mean: f64, spread: f64) -> String {
    format!("{:.1}% \u{b1} {:.1}", mean * 100.0, spread * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mean: f64,
    pub spread: f64,
    pub cell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub benchmark: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.chars().count()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {}\n", "model", self.benchmark);
        for r in &self.rows {
            out.push_str(&format!("{:<width$}  {}\n", r.model, r.cell));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["benchmark", "model", "mean", "spread", "cell"])?;
        for r in &self.rows {
            w.write_record([
                self.benchmark.as_str(),
                r.model.as_str(),
                &format!("{:.6}", r.mean),
                &format!("{:.6}", r.spread),
                r.cell.as_str(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }
}

/// One row per model, sorted by mean descending.
pub fn compare_models(results: &[BenchmarkResult]) -> Result<ComparisonTable, EvalError> {
    let first = results
        .first()
        .ok_or_else(|| EvalError::BenchmarkMismatch("no results".into()))?;
    let ids = first.image_ids();
    for r in &results[1..] {
        if r.benchmark != first.benchmark {
            return Err(EvalError::BenchmarkMismatch(format!("{} vs {}", first.benchmark, r.benchmark)));
        }
        if r.image_ids() != ids {
            return Err(EvalError::BenchmarkMismatch(format!("image sets of {} and {} differ", first.model, r.model)));
        }
    }
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            model: r.model.clone(),
            mean: r.report.mean,
            spread: r.report.spread,
            cell: format_cell(r.report.mean, r.report.spread),
        })
        .collect();
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.model.cmp(&b.model)));
    Ok(ComparisonTable {
        benchmark: first.benchmark.clone(),
        rows,
    })
}

pub fn result_text(r: &BenchmarkResult) -> String {
    let mut out = format!(
        "benchmark: {}\nmodel: {}\nrecords: {}\nruns: {}\naccuracy: {}\nfailures: {}\n",
        r.benchmark,
        r.model,
        r.n_records,
        r.report.per_run.len(),
        format_cell(r.report.mean, r.report.spread),
        r.failures
    );
    if r.report.single_run {
        out.push_str("note: single run, spread reported as 0\n");
    }
    for run in &r.report.per_run {
        out.push_str(&format!("  {}: {:.4}\n", run.run_id, run.mean));
    }
    out
}

pub fn per_image_csv(r: &BenchmarkResult) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "image_id", "n_points", "n_inside", "accuracy", "empty_prediction"])?;
    for run in &r.per_image {
        for s in &run.scores {
            w.write_record([
                run.run_id.as_str(),
                s.image_id.as_str(),
                &s.n_points.to_string(),
                &s.n_inside.to_string(),
                &format!("{:.6}", s.accuracy),
                &s.empty_prediction.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

/// Accuracy (percent) against training fraction, for trend fitting.
pub fn ablation_series(benchmark: &str, results: &[(f64, BenchmarkResult)]) -> AblationSeries {
    AblationSeries {
        benchmark: benchmark.to_string(),
        points: results.iter().map(|(f, r)| (*f, r.report.mean * 100.0)).collect(),
    }
}
