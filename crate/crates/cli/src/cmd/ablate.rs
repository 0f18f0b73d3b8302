use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use trace_core::dataset::{ablation_subsets, check_fractions, generate_all, standard_record, write_jsonl, GenerationConfig};
use trace_core::eval::{ablation_series, run_eval, BenchmarkResult, EvalConfig, PredictionCache};
use trace_core::scene::{build_benchmark, write_benchmark, SceneRecord};
use trace_core::seed;
use trace_core::stats::{ablation_report, AblationRow};

use super::eval::write_result;
use super::stats::write_trends;
use super::synth::{holdout_set, scene_config};
use super::{create, create_dir, fraction_tag, invalid, or_default, write_json};
use crate::config::options;
use crate::endpoints::{predictor, rationale_endpoint, PredictorSpec};
use crate::error::CliError;

options! {
    /// Train-fraction ablation on synthetic data: nested subsets, per-fraction
    /// evaluation and a trend report. Writes `subsets/`, `results/`,
    /// `report.json`, `ablation.csv`, `bands.csv` and `trend.png`.
    ///
    /// A fraction's model is `<model>@<fraction>` on an HTTP predictor. The
    /// simulated predictor instead gains `gain` skill per unit of reasoning
    /// share.
    pub struct AblateOptions {
        /// Seed for scenes, rationales, subsets and evaluation [default: 0]
        pub seed: Option<u64>,
        /// Training scenes; the evaluation benchmark has as many [default: 200]
        pub n: Option<usize>,
        /// Reasoning-data fractions, strictly increasing, starting at 0 [default: 0,0.25,0.5,0.75,1]
        #[arg(value_delimiter = ',')]
        pub fractions: Option<Vec<f64>>,
        /// Rationale endpoint: http(s) base URL or mock://echo [default: mock://echo]
        pub endpoint_url: Option<String>,
        /// Predictor evaluated per fraction [default: mock://simulated?skill=0.3&gain=0.4]
        pub eval_url: Option<String>,
        /// Model name for rationales and the base name of evaluated models [default: gemini-2.5-flash-lite-preview-06-17]
        pub model: Option<String>,
        /// Requests in flight [default: 8]
        pub concurrency: Option<usize>,
        /// Evaluation runs per fraction [default: 3]
        pub runs: Option<u32>,
        /// Relations held out into a second benchmark, or "none" [default: between]
        #[arg(value_delimiter = ',')]
        pub holdout: Option<Vec<String>>,
        /// Output directory [default: ablate]
        pub out: Option<PathBuf>,
    }
}

#[derive(Serialize)]
struct FractionRow {
    fraction: f64,
    n_reasoning: usize,
    n_standard: usize,
    /// Accuracy in percent per benchmark.
    accuracy: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Report {
    rows: Vec<FractionRow>,
    trends: Vec<AblationRow>,
    /// Every benchmark's trend slope is positive.
    positive_slope: bool,
}

pub fn run(opts: AblateOptions) -> Result<(), CliError> {
    let seed = opts.seed.unwrap_or(0);
    let n = opts.n.unwrap_or(200);
    let fractions = opts.fractions.unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    check_fractions(&fractions).map_err(|e| invalid("fractions", e.to_string()))?;
    if fractions.len() < 2 || fractions[0] != 0.0 {
        return Err(invalid("fractions", "need at least two fractions starting at 0"));
    }
    let defaults = GenerationConfig::default();
    let concurrency = opts.concurrency.unwrap_or(defaults.concurrency);
    if concurrency == 0 {
        return Err(invalid("concurrency", "must be at least 1"));
    }
    let runs = opts.runs.unwrap_or(3);
    if runs == 0 {
        return Err(invalid("runs", "must be at least 1"));
    }
    let model = opts.model.unwrap_or(defaults.model.clone());
    let eval_url = opts.eval_url.unwrap_or_else(|| "mock://simulated?skill=0.3&gain=0.4".into());
    let endpoint = rationale_endpoint(opts.endpoint_url.as_deref().unwrap_or("mock://echo"))?;
    let holdout = holdout_set(opts.holdout, "holdout")?;
    let scene_cfg = scene_config(None, None, None)?;
    let out = or_default(opts.out, "ablate");

    let train_dir = out.join("train_scenes");
    let train = build_benchmark(n, &holdout, seed::derive(seed, 1), &scene_cfg)?;
    write_benchmark(&train_dir, &train)?;
    let bench_dir = out.join("bench");
    let bench = build_benchmark(n, &holdout, seed::derive(seed, 2), &scene_cfg)?;
    write_benchmark(&bench_dir, &bench)?;

    let train_scenes: Vec<SceneRecord> = train.main.iter().map(|g| g.record.clone()).collect();
    let image_root = format!("{}/", train_dir.display());
    let gen_cfg = GenerationConfig {
        model: model.clone(),
        concurrency,
        seed,
        image_root: image_root.clone(),
        ..defaults
    };
    let generated = generate_all(&train_scenes, &endpoint, &gen_cfg)?;
    let standard: Vec<_> = train_scenes.iter().map(|r| standard_record(r, &image_root)).collect();
    let subsets = ablation_subsets(&generated.records, &standard, &fractions, seed)?;
    let subset_dir = out.join("subsets");
    create_dir(&subset_dir)?;
    for s in &subsets {
        write_jsonl(create(&subset_dir.join(format!("{}.jsonl", fraction_tag(s.fraction))))?, &s.records)?;
    }

    let benchmarks: Vec<(&str, Vec<SceneRecord>)> = [("main", &bench.main), ("holdout", &bench.holdout)]
        .into_iter()
        .filter(|(_, scenes)| !scenes.is_empty())
        .map(|(name, scenes)| (name, scenes.iter().map(|g| g.record.clone()).collect()))
        .collect();
    let mut per_benchmark: BTreeMap<&str, Vec<(f64, BenchmarkResult)>> = BTreeMap::new();
    let mut rows = Vec::new();
    for s in &subsets {
        let share = if generated.records.is_empty() {
            0.0
        } else {
            s.n_reasoning as f64 / generated.records.len() as f64
        };
        let label = format!("{model}@{}", s.fraction);
        let p = predictor(&PredictorSpec {
            url: &eval_url,
            model: Some(&label),
            temperature: 0.0,
            attach_images: true,
            share,
        })?;
        let mut accuracy = BTreeMap::new();
        for (name, records) in &benchmarks {
            let cfg = EvalConfig {
                benchmark: name.to_string(),
                runs,
                base_seed: seed::derive(seed, 3),
                concurrency,
                ..EvalConfig::default()
            };
            let (result, _) = run_eval(records, p.as_ref(), &cfg, &PredictionCache::default())?;
            write_result(&out.join("results").join(format!("{name}-{}", fraction_tag(s.fraction))), &result)?;
            accuracy.insert(name.to_string(), result.report.mean * 100.0);
            per_benchmark.entry(name).or_default().push((s.fraction, result));
        }
        rows.push(FractionRow {
            fraction: s.fraction,
            n_reasoning: s.n_reasoning,
            n_standard: s.n_standard,
            accuracy,
        });
    }

    let series: Vec<_> = per_benchmark
        .iter()
        .map(|(name, results)| ablation_series(name, results))
        .collect();
    let trends = ablation_report(&series)?;
    write_trends(&out, &trends, &series, 50, (640, 400))?;
    let report = Report {
        positive_slope: trends.iter().all(|t| t.positive_slope),
        rows,
        trends,
    };
    write_json(&out.join("report.json"), &report)?;
    write_jsonl(create(&out.join("rejects.jsonl"))?, &generated.rejects)?;
    let mut gen_stats = serde_json::to_value(&generated.stats)?;
    gen_stats.as_object_mut().expect("stats serialize to an object").remove("elapsed_ms");
    write_json(&out.join("generation_stats.json"), &gen_stats)?;
    tracing::info!(
        out = %out.display(),
        fractions = fractions.len(),
        positive_slope = report.positive_slope,
        "ablation written"
    );
    Ok(())
}
