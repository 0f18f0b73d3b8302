use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use trace_core::raster::{plot_trends, PlotSeries};
use trace_core::stats::{
    ablation_csv, ablation_report, band_csv, compare_summaries, comparisons_csv, AblationRow, AblationSeries,
    Dispersion, SummarySample,
};

use super::{create_dir, or_default, write, write_json};
use crate::config::options;
use crate::error::CliError;

options! {
    /// Significance tests on reported summaries and trend fits on ablation
    /// series.
    ///
    /// --comparisons reads a CSV with columns
    /// `label,mean_a,dispersion_a,n_a,mean_b,dispersion_b,n_b` and writes
    /// `comparisons.csv` and `comparisons.json`. --series reads a CSV with
    /// columns `benchmark,fraction,accuracy` and writes `ablation.csv`,
    /// `ablation.json`, `bands.csv` and `trend.png`.
    pub struct StatsOptions {
        /// Summary pairs to test
        pub comparisons: Option<PathBuf>,
        /// Accuracy by training fraction
        pub series: Option<PathBuf>,
        /// Band samples per benchmark in bands.csv [default: 50]
        pub band_samples: Option<usize>,
        /// Trend plot width in pixels [default: 640]
        pub plot_width: Option<u32>,
        /// Trend plot height in pixels [default: 400]
        pub plot_height: Option<u32>,
        /// Output directory [default: stats]
        pub out: Option<PathBuf>,
    }
}

#[derive(Debug, Deserialize)]
struct ComparisonInput {
    label: String,
    mean_a: f64,
    dispersion_a: f64,
    n_a: usize,
    mean_b: f64,
    dispersion_b: f64,
    n_b: usize,
}

#[derive(Debug, Deserialize)]
struct SeriesInput {
    benchmark: String,
    fraction: f64,
    accuracy: f64,
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::Usage(format!("{}: {other:?}", path.display())),
        })?;
    Ok(reader.deserialize().collect::<Result<Vec<T>, _>>()?)
}

/// Writes the ablation tables and the trend plot.
pub fn write_trends(out: &Path, rows: &[AblationRow], series: &[AblationSeries], samples: usize, size: (u32, u32)) -> Result<(), CliError> {
    write(&out.join("ablation.csv"), ablation_csv(rows)?)?;
    write_json(&out.join("ablation.json"), rows)?;
    write(&out.join("bands.csv"), band_csv(rows, samples)?)?;
    let plots: Vec<PlotSeries> = rows
        .iter()
        .zip(series)
        .map(|(r, s)| PlotSeries {
            points: &s.points,
            fit: &r.trend,
        })
        .collect();
    let path = out.join("trend.png");
    plot_trends(&plots, size.0, size.1).save_with_format(&path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn run(opts: StatsOptions) -> Result<(), CliError> {
    if opts.comparisons.is_none() && opts.series.is_none() {
        return Err(CliError::Config {
            message: "stats needs --comparisons, --series or both".into(),
            keys: vec!["comparisons".into(), "series".into()],
        });
    }
    let out = or_default(opts.out, "stats");
    create_dir(&out)?;
    if let Some(path) = &opts.comparisons {
        let rows = read_csv::<ComparisonInput>(path)?
            .into_iter()
            .map(|r| {
                compare_summaries(
                    &r.label,
                    SummarySample::new(r.mean_a, r.dispersion_a, r.n_a, Dispersion::StdDev),
                    SummarySample::new(r.mean_b, r.dispersion_b, r.n_b, Dispersion::StdDev),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        write(&out.join("comparisons.csv"), comparisons_csv(&rows)?)?;
        write_json(&out.join("comparisons.json"), &rows)?;
        tracing::info!(rows = rows.len(), "comparisons written");
    }
    if let Some(path) = &opts.series {
        let mut grouped: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in read_csv::<SeriesInput>(path)? {
            grouped.entry(r.benchmark).or_default().push((r.fraction, r.accuracy));
        }
        let series: Vec<AblationSeries> = grouped
            .into_iter()
            .map(|(benchmark, points)| AblationSeries { benchmark, points })
            .collect();
        let rows = ablation_report(&series)?;
        write_trends(
            &out,
            &rows,
            &series,
            opts.band_samples.unwrap_or(50),
            (opts.plot_width.unwrap_or(640), opts.plot_height.unwrap_or(400)),
        )?;
        for r in &rows {
            tracing::info!(benchmark = %r.benchmark, slope = r.trend.slope, relative_gain = r.relative_gain, "trend fitted");
        }
    }
    Ok(())
}
