use std::collections::BTreeSet;
use std::path::PathBuf;

use trace_core::scene::{build_benchmark, write_benchmark, Relation, SceneConfig};

use super::{invalid, or_default};
use crate::config::options;
use crate::error::CliError;

options! {
    /// Render a synthetic benchmark: `main.jsonl`, `holdout.jsonl`,
    /// `meta.json` and `images/`.
    pub struct SynthOptions {
        /// Seed for scene generation [default: 0]
        pub seed: Option<u64>,
        /// Number of scenes [default: 100]
        pub n: Option<usize>,
        /// Output directory [default: bench]
        pub out: Option<PathBuf>,
        /// Relations held out into holdout.jsonl, comma separated, or "none" [default: between]
        #[arg(value_delimiter = ',')]
        pub holdout: Option<Vec<String>>,
        /// Image width in pixels [default: 128]
        pub width: Option<u32>,
        /// Image height in pixels [default: 96]
        pub height: Option<u32>,
        /// Ground-truth points per record [default: 10]
        pub points_per_record: Option<usize>,
    }
}

pub fn holdout_set(names: Option<Vec<String>>, key: &str) -> Result<BTreeSet<Relation>, CliError> {
    let names = names.unwrap_or_else(|| vec!["between".into()]);
    names
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty() && *s != "none")
        .map(|s| s.parse::<Relation>().map_err(|e| invalid(key, e.to_string())))
        .collect()
}

pub fn scene_config(width: Option<u32>, height: Option<u32>, points: Option<usize>) -> Result<SceneConfig, CliError> {
    let mut cfg = SceneConfig::default();
    cfg.width = width.unwrap_or(cfg.width);
    cfg.height = height.unwrap_or(cfg.height);
    cfg.points_per_record = points.unwrap_or(cfg.points_per_record);
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(opts: SynthOptions) -> Result<(), CliError> {
    let seed = opts.seed.unwrap_or(0);
    let n = opts.n.unwrap_or(100);
    let out = or_default(opts.out, "bench");
    let holdout = holdout_set(opts.holdout, "holdout")?;
    let cfg = scene_config(opts.width, opts.height, opts.points_per_record)?;
    let bench = build_benchmark(n, &holdout, seed, &cfg)?;
    write_benchmark(&out, &bench)?;
    tracing::info!(
        out = %out.display(),
        main = bench.meta.n_main,
        holdout = bench.meta.n_holdout,
        mean_area_fraction = bench.meta.mean_area_fraction,
        "benchmark written"
    );
    Ok(())
}
