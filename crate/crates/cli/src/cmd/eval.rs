use std::path::{Path, PathBuf};

use trace_core::eval::{
    compare_models, per_image_csv, result_text, run_eval, write_predictions, BenchmarkResult, EvalConfig,
    PredictionCache,
};
use trace_core::scene::read_manifest;

use super::{create_dir, invalid, or_default, write, write_json};
use crate::config::options;
use crate::endpoints::{predictor, PredictorSpec};
use crate::error::CliError;

options! {
    /// Score a predictor on a benchmark manifest over several runs. Writes
    /// `result.json`, `report.txt`, `per_image.csv` and `predictions.jsonl`.
    /// With --compare, tabulates existing result files instead.
    pub struct EvalOptions {
        /// Run i uses seed + i [default: 0]
        pub seed: Option<u64>,
        /// Predictor: http(s) base URL or mock://gt-echo, mock://uniform, mock://fail, mock://simulated [default: mock://gt-echo]
        pub endpoint_url: Option<String>,
        /// Model name sent to the endpoint and reported in results
        pub model: Option<String>,
        /// Requests in flight [default: 8]
        pub concurrency: Option<usize>,
        /// Independent runs [default: 3]
        pub runs: Option<u32>,
        /// Sampling temperature [default: 0.0]
        pub temperature: Option<f64>,
        /// Benchmark manifest [default: bench/main.jsonl]
        pub manifest: Option<PathBuf>,
        /// Benchmark name in reports [default: manifest file stem]
        pub benchmark: Option<String>,
        /// Prediction cache to replay [default: <out>/predictions.jsonl]
        pub cache: Option<PathBuf>,
        /// Fail instead of querying when a response is not cached [default: false]
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        pub cache_only: Option<bool>,
        /// Send rendered images with requests [default: true]
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        pub attach_images: Option<bool>,
        /// result.json files to compare, comma separated
        #[arg(value_delimiter = ',')]
        pub compare: Option<Vec<PathBuf>>,
        /// Output directory [default: eval]
        pub out: Option<PathBuf>,
    }
}

pub fn load_result(path: &Path) -> Result<BenchmarkResult, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the result files shared by `eval` and `ablate`.
pub fn write_result(dir: &Path, result: &BenchmarkResult) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join("result.json"), result)?;
    write(&dir.join("report.txt"), result_text(result))?;
    write(&dir.join("per_image.csv"), per_image_csv(result)?)
}

fn compare(paths: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let results = paths.iter().map(|p| load_result(p)).collect::<Result<Vec<_>, _>>()?;
    let table = compare_models(&results)?;
    create_dir(out)?;
    write(&out.join("comparison.txt"), table.to_text())?;
    write(&out.join("comparison.csv"), table.to_csv()?)?;
    write_json(&out.join("comparison.json"), &table)?;
    tracing::info!(out = %out.display(), models = table.rows.len(), "comparison written");
    Ok(())
}

pub fn run(opts: EvalOptions) -> Result<(), CliError> {
    let out = or_default(opts.out, "eval");
    if let Some(paths) = opts.compare.filter(|p| !p.is_empty()) {
        return compare(&paths, &out);
    }
    let manifest = or_default(opts.manifest, "bench/main.jsonl");
    let defaults = EvalConfig::default();
    let cfg = EvalConfig {
        benchmark: opts.benchmark.unwrap_or_else(|| {
            manifest
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or(defaults.benchmark.clone())
        }),
        runs: opts.runs.unwrap_or(defaults.runs),
        base_seed: opts.seed.unwrap_or(0),
        concurrency: opts.concurrency.unwrap_or(defaults.concurrency),
        cache_only: opts.cache_only.unwrap_or(false),
        ..defaults
    };
    if cfg.concurrency == 0 {
        return Err(invalid("concurrency", "must be at least 1"));
    }
    if cfg.runs == 0 {
        return Err(invalid("runs", "must be at least 1"));
    }
    let predictor = predictor(&PredictorSpec {
        url: opts.endpoint_url.as_deref().unwrap_or("mock://gt-echo"),
        model: opts.model.as_deref(),
        temperature: opts.temperature.unwrap_or(0.0),
        attach_images: opts.attach_images.unwrap_or(true),
        share: 0.0,
    })?;
    let records = read_manifest(&manifest)?;
    let cache_path = opts.cache.unwrap_or_else(|| out.join("predictions.jsonl"));
    let cache = PredictionCache::load(&cache_path)?;
    let (result, predictions) = run_eval(&records, predictor.as_ref(), &cfg, &cache)?;
    write_result(&out, &result)?;
    write_predictions(&out.join("predictions.jsonl"), &predictions)?;
    tracing::info!(out = %out.display(), mean = result.report.mean, spread = result.report.spread, "evaluation written");
    Ok(())
}
