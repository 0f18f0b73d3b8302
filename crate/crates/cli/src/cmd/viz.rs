use std::path::PathBuf;

use serde::Serialize;
use trace_core::attention::{render_overlay, segment_tokens, step_heatmaps, AttentionDump, OverlayStyle, Reduce};
use trace_core::cor::{parse_document, RangePolicy, StepKind};

use super::{create_dir, invalid, or_default, require, write_json};
use crate::config::options;
use crate::error::CliError;

options! {
    /// Render one attention overlay per reasoning step from an attention
    /// dump. Writes `step1.png` to `step4.png` and `heatmaps.json`.
    pub struct VizOptions {
        /// Attention dump file
        pub dump: Option<PathBuf>,
        /// Image to draw on [default: the dump's image_ref, relative to the dump]
        pub image: Option<PathBuf>,
        /// Generated text, when the dump does not carry it
        pub text: Option<PathBuf>,
        /// Token reduction per step: mean or max [default: mean]
        pub reduce: Option<String>,
        /// Heatmap opacity in [0, 1] [default: 0.45]
        pub alpha: Option<f64>,
        /// Radius of predicted point markers in pixels [default: 3]
        pub point_radius: Option<f64>,
        /// Output directory [default: viz]
        pub out: Option<PathBuf>,
    }
}

#[derive(Serialize)]
struct StepSummary {
    step: StepKind,
    ordinal: usize,
    tokens: usize,
    empty: bool,
    argmax_row: usize,
    argmax_col: usize,
    file: String,
}

#[derive(Serialize)]
struct VizReport {
    rows: usize,
    cols: usize,
    unassigned_tokens: usize,
    steps: Vec<StepSummary>,
}

pub fn run(opts: VizOptions) -> Result<(), CliError> {
    let dump_path = require(opts.dump, "dump")?;
    let reduce = match opts.reduce.as_deref().unwrap_or("mean") {
        "mean" => Reduce::Mean,
        "max" => Reduce::Max,
        other => return Err(invalid("reduce", format!("{other:?} is not mean or max"))),
    };
    let alpha = opts.alpha.unwrap_or(0.45);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha", format!("{alpha} is not in [0, 1]")));
    }
    let style = OverlayStyle {
        alpha,
        point_radius: opts.point_radius.unwrap_or(3.0),
        ..OverlayStyle::default()
    };
    let dump = AttentionDump::load(&dump_path)?;
    let base = dump_path.parent().map(PathBuf::from).unwrap_or_default();
    let text = match &opts.text {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        None => dump.text.clone(),
    };
    let image_path = opts.image.unwrap_or_else(|| base.join(&dump.image_ref));
    let image = image::open(&image_path)?.to_rgb8();
    let doc = parse_document(&text, RangePolicy::Clamp);
    let seg = segment_tokens(&dump, &doc)?;
    let heatmaps = step_heatmaps(&dump, &doc, reduce)?;
    let out = or_default(opts.out, "viz");
    create_dir(&out)?;
    let mut steps = Vec::new();
    for heat in &heatmaps {
        let kind = heat.kind.expect("step heatmaps carry their step");
        let file = format!("step{}.png", kind.ordinal());
        render_overlay(&image, heat, &doc.points, &style).save_with_format(out.join(&file), image::ImageFormat::Png)?;
        let arg = heat.argmax();
        steps.push(StepSummary {
            step: kind,
            ordinal: kind.ordinal(),
            tokens: seg.tokens(kind).len(),
            empty: heat.empty,
            argmax_row: arg / heat.cols,
            argmax_col: arg % heat.cols,
            file,
        });
    }
    write_json(
        &out.join("heatmaps.json"),
        &VizReport {
            rows: dump.rows,
            cols: dump.cols,
            unassigned_tokens: seg.unassigned.len(),
            steps,
        },
    )?;
    tracing::info!(out = %out.display(), unassigned = seg.unassigned.len(), "overlays written");
    Ok(())
}
