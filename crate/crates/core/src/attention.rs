//! Per-step attention heatmaps from exported token-by-patch attention.
//!
//! Dump layout: one JSON header line, a newline, then
//! `n_tokens × rows × cols` little-endian `f32` values in token-major,
//! row-major order.

use std::io::{BufRead, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{CoRDocument, PointSet, StepKind};
use crate::raster::{blend_heat, colormap, fill_circle, upsample_bilinear};

pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("token {token} ends at {end} but the text has {len} characters")]
    SpanMismatch { token: usize, end: usize, len: usize },
    #[error("no tokens in range")]
    EmptyRange,
    #[error("token index {0} out of bounds")]
    TokenIndex(usize),
    #[error("unsupported dump: {0}")]
    Unsupported(String),
    #[error("malformed dump: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub text: String,
    /// Character offsets into the generated text, end exclusive.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub version: u32,
    pub tokens: Vec<TokenSpan>,
    /// `[rows, cols]` of the patch lattice.
    pub grid: [usize; 2],
    pub image_ref: String,
    pub dtype: String,
    pub byte_order: String,
    /// Generated text the token offsets index into.
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub tokens: Vec<TokenSpan>,
    pub rows: usize,
    pub cols: usize,
    pub image_ref: String,
    pub text: String,
    /// Token-major weights, `tokens.len() × rows × cols`.
    pub weights: Vec<f32>,
}

impl AttentionDump {
    pub fn new(
        tokens: Vec<TokenSpan>,
        rows: usize,
        cols: usize,
        image_ref: String,
        text: String,
        weights: Vec<f32>,
    ) -> Result<Self, AttentionError> {
        let dump = AttentionDump {
            tokens,
            rows,
            cols,
            image_ref,
            text,
            weights,
        };
        dump.check()?;
        Ok(dump)
    }

    fn check(&self) -> Result<(), AttentionError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(AttentionError::Malformed("grid dimensions must be at least 1".into()));
        }
        let expected = self.tokens.len() * self.patches();
        if self.weights.len() != expected {
            return Err(AttentionError::Malformed(format!(
                "expected {expected} weights, found {}",
                self.weights.len()
            )));
        }
        if let Some(i) = self.weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AttentionError::Malformed(format!("weight {i} is negative or not finite")));
        }
        if let Some(i) = self.tokens.iter().position(|t| t.start > t.end) {
            return Err(AttentionError::Malformed(format!("token {i} has start after end")));
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn token_row(&self, token: usize) -> &[f32] {
        let n = self.patches();
        &self.weights[token * n..(token + 1) * n]
    }

    pub fn header(&self) -> DumpHeader {
        DumpHeader {
            version: DUMP_VERSION,
            tokens: self.tokens.clone(),
            grid: [self.rows, self.cols],
            image_ref: self.image_ref.clone(),
            dtype: "f32".into(),
            byte_order: "little".into(),
            text: self.text.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), AttentionError> {
        serde_json::to_writer(&mut w, &self.header())?;
        w.write_all(b"\n")?;
        let mut bytes = Vec::with_capacity(self.weights.len() * 4);
        for v in &self.weights {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self, AttentionError> {
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let header: DumpHeader = serde_json::from_slice(&line)?;
        if header.version != DUMP_VERSION {
            return Err(AttentionError::Unsupported(format!("version {}", header.version)));
        }
        if header.dtype != "f32" || header.byte_order != "little" {
            return Err(AttentionError::Unsupported(format!("{} {}", header.dtype, header.byte_order)));
        }
        let [rows, cols] = header.grid;
        let n = header.tokens.len() * rows * cols;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| AttentionError::Malformed(format!("payload shorter than {n} floats")))?;
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(AttentionError::Malformed("trailing bytes after payload".into()));
        }
        let weights = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        AttentionDump::new(header.tokens, rows, cols, header.image_ref, header.text, weights)
    }

    pub fn load(path: &Path) -> Result<Self, AttentionError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), AttentionError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Token indices assigned to each step, plus the unassigned ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub steps: Vec<(StepKind, Vec<usize>)>,
    pub unassigned: Vec<usize>,
}

impl Segmentation {
    pub fn tokens(&self, kind: StepKind) -> &[usize] {
        self.steps
            .iter()
            .find(|(k, _)| *k == kind)
            .map_or(&[], |(_, t)| t.as_slice())
    }
}

/// Assigns each token to the step whose character span contains the
/// token's midpoint.
pub fn segment_tokens(dump: &AttentionDump, doc: &CoRDocument) -> Result<Segmentation, AttentionError> {
    let len = doc.raw_text.chars().count();
    let mut seg = Segmentation {
        steps: StepKind::ALL.iter().map(|k| (*k, Vec::new())).collect(),
        unassigned: Vec::new(),
    };
    for (i, t) in dump.tokens.iter().enumerate() {
        if t.end > len {
            return Err(AttentionError::SpanMismatch { token: i, end: t.end, len });
        }
        let mid2 = t.start + t.end;
        let step = doc
            .steps
            .iter()
            .find(|s| 2 * s.span.start <= mid2 && mid2 < 2 * s.span.end);
        match step {
            Some(s) => seg.steps[s.kind.ordinal() - 1].1.push(i),
            None => seg.unassigned.push(i),
        }
    }
    Ok(seg)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepHeatmap {
    pub kind: Option<StepKind>,
    pub rows: usize,
    pub cols: usize,
    /// Per-patch aggregate before normalization.
    pub raw: Vec<f64>,
    /// Min-max normalized to [0, 1].
    pub values: Vec<f64>,
    /// Raw attention was identically zero.
    pub empty: bool,
}

impl StepHeatmap {
    /// Zero heatmap for a step without tokens.
    pub fn empty(kind: Option<StepKind>, rows: usize, cols: usize) -> Self {
        StepHeatmap {
            kind,
            rows,
            cols,
            raw: vec![0.0; rows * cols],
            values: vec![0.0; rows * cols],
            empty: true,
        }
    }

    pub fn upsample(&self, width: u32, height: u32) -> Vec<f64> {
        upsample_bilinear(&self.values, self.rows, self.cols, width, height)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Min-max normalization. All-zero input stays zero and is flagged; a
/// constant positive field maps to all ones.
pub fn normalize(values: &[f64]) -> (Vec<f64>, bool) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max <= 0.0 {
        return (vec![0.0; values.len()], true);
    }
    if max == min {
        return (vec![1.0; values.len()], false);
    }
    (values.iter().map(|v| (v - min) / (max - min)).collect(), false)
}

/// Reduces the given token rows per patch, then normalizes.
pub fn aggregate_step(
    dump: &AttentionDump,
    tokens: &[usize],
    reduce: Reduce,
    kind: Option<StepKind>,
) -> Result<StepHeatmap, AttentionError> {
    if tokens.is_empty() {
        return Err(AttentionError::EmptyRange);
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= dump.tokens.len()) {
        return Err(AttentionError::TokenIndex(bad));
    }
    let n = dump.patches();
    let mut raw = vec![0.0f64; n];
    for &t in tokens {
        for (acc, &w) in raw.iter_mut().zip(dump.token_row(t)) {
            match reduce {
                Reduce::Mean => *acc += w as f64,
                Reduce::Max => *acc = acc.max(w as f64),
            }
        }
    }
    if reduce == Reduce::Mean {
        raw.iter_mut().for_each(|v| *v /= tokens.len() as f64);
    }
    let (values, empty) = normalize(&raw);
    Ok(StepHeatmap {
        kind,
        rows: dump.rows,
        cols: dump.cols,
        raw,
        values,
        empty,
    })
}

/// One heatmap per reasoning step. Steps without tokens yield a flagged
/// zero map.
pub fn step_heatmaps(
    dump: &AttentionDump,
    doc: &CoRDocument,
    reduce: Reduce,
) -> Result<Vec<StepHeatmap>, AttentionError> {
    let seg = segment_tokens(dump, doc)?;
    seg.steps
        .iter()
        .map(|(kind, tokens)| {
            if tokens.is_empty() {
                Ok(StepHeatmap::empty(Some(*kind), dump.rows, dump.cols))
            } else {
                aggregate_step(dump, tokens, reduce, Some(*kind))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayStyle {
    pub alpha: f64,
    pub point_radius: f64,
    pub point_color: Rgb<u8>,
    pub outline_color: Rgb<u8>,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle {
            alpha: 0.45,
            point_radius: 3.0,
            point_color: Rgb([80, 220, 255]),
            outline_color: Rgb([255, 255, 255]),
        }
    }
}

/// Upsamples the heatmap to the image, blends it and marks the points.
pub fn render_overlay(image: &RgbImage, heat: &StepHeatmap, points: &PointSet, style: &OverlayStyle) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut out = blend_heat(image, &heat.upsample(w, h), style.alpha);
    for p in points.iter() {
        let cx = (p.x * w as f64).floor().clamp(0.0, (w - 1) as f64) + 0.5;
        let cy = (p.y * h as f64).floor().clamp(0.0, (h - 1) as f64) + 0.5;
        fill_circle(&mut out, cx, cy, style.point_radius + 1.0, style.outline_color);
        fill_circle(&mut out, cx, cy, style.point_radius, style.point_color);
    }
    out
}

/// Lowest colormap color, as blended over a zero heatmap.
pub fn base_color() -> Rgb<u8> {
    colormap(0.0)
}
