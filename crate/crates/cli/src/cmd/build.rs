use std::io::Write;
use std::path::{Path, PathBuf};

use trace_core::dataset::{
    generate_rationales, mix_datasets, standard_record, write_jsonl, DatasetError, GenerationConfig, Outcome,
    TrainingRecord,
};
use trace_core::scene::{read_manifest, ManifestReader};

use super::{create, create_dir, invalid, or_default, write_json};
use crate::config::options;
use crate::endpoints::rationale_endpoint;
use crate::error::CliError;

options! {
    /// Generate reasoning records through an endpoint and mix them with
    /// standard records. Writes `reasoning.jsonl`, `standard.jsonl`,
    /// `train.jsonl`, `rejects.jsonl` and `stats.json`.
    pub struct BuildOptions {
        /// Seed for sampling, retries and mixing [default: 0]
        pub seed: Option<u64>,
        /// Rationale endpoint: http(s) base URL or mock://echo [default: mock://echo]
        pub endpoint_url: Option<String>,
        /// Model name sent to the endpoint [default: gemini-2.5-flash-lite-preview-06-17]
        pub model: Option<String>,
        /// Requests in flight [default: 8]
        pub concurrency: Option<usize>,
        /// Fresh generations after a rejected response [default: 3]
        pub max_retries: Option<u32>,
        /// Sampling temperature [default: 0.7]
        pub temperature: Option<f64>,
        /// Scene manifest to generate rationales for [default: bench/main.jsonl]
        pub manifest: Option<PathBuf>,
        /// Scene manifest for standard records [default: same as --manifest]
        pub standard_manifest: Option<PathBuf>,
        /// Share of reasoning records in train.jsonl, in (0, 1) [default: 0.5]
        pub ratio: Option<f64>,
        /// Size of train.jsonl [default: largest the sources allow]
        pub size: Option<usize>,
        /// Send rendered images with requests [default: true]
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        pub attach_images: Option<bool>,
        /// Output directory [default: data]
        pub out: Option<PathBuf>,
    }
}

fn image_root(manifest: &Path) -> String {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => format!("{}/", p.display()),
        _ => String::new(),
    }
}

/// Largest mix size whose reasoning and standard parts both fit.
fn max_size(ratio: f64, n_reasoning: usize, n_standard: usize) -> usize {
    (0..=n_reasoning + n_standard)
        .rev()
        .find(|&s| {
            let r = (ratio * s as f64).round() as usize;
            r <= n_reasoning && s - r <= n_standard
        })
        .unwrap_or(0)
}

pub fn run(opts: BuildOptions) -> Result<(), CliError> {
    let defaults = GenerationConfig::default();
    let manifest = or_default(opts.manifest, "bench/main.jsonl");
    let standard_manifest = opts.standard_manifest.unwrap_or_else(|| manifest.clone());
    let ratio = opts.ratio.unwrap_or(0.5);
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid("ratio", format!("{ratio} is not in (0, 1)")));
    }
    let concurrency = opts.concurrency.unwrap_or(defaults.concurrency);
    if concurrency == 0 {
        return Err(invalid("concurrency", "must be at least 1"));
    }
    let seed = opts.seed.unwrap_or(0);
    let cfg = GenerationConfig {
        model: opts.model.unwrap_or(defaults.model),
        temperature: opts.temperature.unwrap_or(defaults.temperature),
        concurrency,
        max_retries: opts.max_retries.unwrap_or(defaults.max_retries),
        seed,
        attach_images: opts.attach_images.unwrap_or(true),
        image_root: image_root(&manifest),
        ..defaults
    };
    let endpoint = rationale_endpoint(opts.endpoint_url.as_deref().unwrap_or("mock://echo"))?;
    let out = or_default(opts.out, "data");
    create_dir(&out)?;

    let mut reasoning_out = create(&out.join("reasoning.jsonl"))?;
    let mut rejects_out = create(&out.join("rejects.jsonl"))?;
    let mut reasoning: Vec<TrainingRecord> = Vec::new();
    let reader = ManifestReader::open(&manifest)?;
    let stats = generate_rationales(reader, &endpoint, &cfg, |outcome| {
        match outcome {
            Outcome::Accepted(r) => {
                serde_json::to_writer(&mut reasoning_out, &r)?;
                reasoning_out.write_all(b"\n")?;
                reasoning.push(r);
            }
            Outcome::Rejected(r) => {
                serde_json::to_writer(&mut rejects_out, &r)?;
                rejects_out.write_all(b"\n")?;
            }
        }
        Ok::<(), DatasetError>(())
    })?;
    reasoning_out.flush().map_err(|e| CliError::io(&out, e))?;
    rejects_out.flush().map_err(|e| CliError::io(&out, e))?;

    let standard: Vec<TrainingRecord> = read_manifest(&standard_manifest)?
        .iter()
        .map(|r| standard_record(r, &image_root(&standard_manifest)))
        .collect();
    write_jsonl(create(&out.join("standard.jsonl"))?, &standard)?;

    let size = opts.size.unwrap_or_else(|| max_size(ratio, reasoning.len(), standard.len()));
    let mixed = mix_datasets(&reasoning, &standard, ratio, size, seed)?;
    write_jsonl(create(&out.join("train.jsonl"))?, &mixed.records)?;

    let mut report = serde_json::to_value(&stats)?;
    report["n_reasoning"] = mixed.n_reasoning.into();
    report["n_standard"] = mixed.n_standard.into();
    report["train_size"] = mixed.records.len().into();
    report.as_object_mut().expect("stats serialize to an object").remove("elapsed_ms");
    write_json(&out.join("stats.json"), &report)?;
    tracing::info!(
        out = %out.display(),
        succeeded = stats.succeeded,
        rejected = stats.rejected_schema + stats.rejected_points,
        elapsed_ms = stats.elapsed_ms,
        train_size = mixed.records.len(),
        "training data written"
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_size_respects_both_sources() {
        assert_eq!(max_size(0.5, 10, 10), 20);
        assert_eq!(max_size(0.5, 3, 10), 6);
        assert_eq!(max_size(0.25, 10, 3), 4);
        assert_eq!(max_size(0.5, 0, 5), 0);
    }
}
