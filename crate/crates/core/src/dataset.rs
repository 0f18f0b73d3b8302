//! Training-data generation: rationale prompting, validation, mixing,
//! ablation subsets and preprocessing.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{
    parse_document, parse_points, serialize, AffordanceSubtype, CoRDocument, Point, PointSet, RangePolicy,
    StepKind,
};
use crate::endpoint::{call_with_retry, Endpoint, EndpointError, GenerateRequest, RetryPolicy};
use crate::mask::MaskImage;
use crate::pool::ordered_map;
use crate::scene::{Rect, Relation, SceneError, SceneRecord, SourceTag};
use crate::seed;

/// Mid-gray.
pub const DEFAULT_PAD: Rgb<u8> = Rgb([128, 128, 128]);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("endpoint failed for record {record_id}: {source}")]
    Endpoint { record_id: String, source: EndpointError },
    #[error("{source_name} source has {available} records, {needed} needed")]
    InsufficientRecords {
        source_name: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("training file line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Reasoning,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

/// One conversation in the instruction-tuning format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub image: String,
    pub conversations: Vec<Turn>,
    pub kind: RecordKind,
}

impl TrainingRecord {
    fn new(id: String, image: String, instruction: &str, answer: String, kind: RecordKind) -> Self {
        TrainingRecord {
            id,
            image,
            conversations: vec![
                Turn {
                    from: "human".into(),
                    value: format!("<image>\n{instruction}"),
                },
                Turn {
                    from: "gpt".into(),
                    value: answer,
                },
            ],
            kind,
        }
    }

    pub fn instruction(&self) -> &str {
        let v = &self.conversations[0].value;
        v.strip_prefix("<image>\n").unwrap_or(v)
    }

    pub fn answer(&self) -> &str {
        &self.conversations[self.conversations.len() - 1].value
    }

    /// Whitespace-token count over all turns.
    pub fn text_length(&self) -> usize {
        self.conversations.iter().map(|t| t.value.split_whitespace().count()).sum()
    }
}

fn join_image(root: &str, image: &str) -> String {
    if root.is_empty() {
        image.to_string()
    } else {
        format!("{}/{}", root.trim_end_matches('/'), image)
    }
}

/// Direct-answer record: the assistant turn is the ground-truth point list.
pub fn standard_record(record: &SceneRecord, image_root: &str) -> TrainingRecord {
    TrainingRecord::new(
        format!("std-{}", record.id),
        join_image(image_root, &record.image),
        &record.instruction,
        record.gt_points.to_canonical(),
        RecordKind::Standard,
    )
}

fn subtype_for(record: &SceneRecord) -> AffordanceSubtype {
    match record.source_tag {
        SourceTag::ObjectReference => AffordanceSubtype::ObjectReference,
        SourceTag::FreeSpaceReference => AffordanceSubtype::FreeSpaceReference,
    }
}

fn fmt_rect(r: &Rect, w: u32, h: u32) -> String {
    format!(
        "[{:.3}, {:.3}, {:.3}, {:.3}]",
        r.x0 as f64 / w as f64,
        r.y0 as f64 / h as f64,
        r.x1 as f64 / w as f64,
        r.y1 as f64 / h as f64
    )
}

const STEP_GUIDE: [&str; 4] = [
    "identify the reference objects in the scene",
    "determine the goal's subtype (e.g., Placement Affordance)",
    "define the specific target area",
    "explain how the final points were generated inside that area",
];

/// Prompt asking for a four-step rationale that justifies the ground truth.
pub fn compose_prompt(record: &SceneRecord) -> String {
    let (w, h) = (record.width, record.height);
    let mut p = String::from(
        "You are annotating a robot spatial-affordance dataset. Write a step-by-step rationale \
         that justifies the ground-truth points for the instruction below.\n\
         Use exactly four steps, one per line, with these headers:\n",
    );
    for (kind, guide) in StepKind::ALL.into_iter().zip(STEP_GUIDE) {
        p.push_str(&format!("Step {} \u{2014} {}: {guide}.\n", kind.ordinal(), kind.label()));
    }
    p.push_str("Finish with the ground-truth points as a list of (x, y) tuples on the last line.\n\n");
    p.push_str(&format!("Instruction: {}\n", record.instruction));
    let refs: Vec<String> = record
        .reference_ids
        .iter()
        .filter_map(|id| record.object(id))
        .map(|o| format!("{} {}", o.label, fmt_rect(&o.bbox, w, h)))
        .collect();
    p.push_str(&format!("Reference objects: {}\n", refs.join("; ")));
    let others: Vec<String> = record
        .objects
        .iter()
        .filter(|o| !record.reference_ids.contains(&o.id))
        .map(|o| format!("{} {}", o.label, fmt_rect(&o.bbox, w, h)))
        .collect();
    p.push_str(&format!("Other objects: {}\n", others.join("; ")));
    p.push_str(&format!("Relation: {}\n", record.relation.name()));
    p.push_str(&format!("Subtype hint: {}\n", subtype_for(record).label()));
    p.push_str(&format!("Ground-truth points: {}", record.gt_points.to_canonical()));
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub concurrency: usize,
    /// Fresh generations after a validation reject.
    pub max_retries: u32,
    pub retry: RetryPolicy,
    pub seed: u64,
    pub range_policy: RangePolicy,
    pub attach_images: bool,
    /// Prefix joined onto each record's image path in the output.
    pub image_root: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model: "gemini-2.5-flash-lite-preview-06-17".into(),
            temperature: 0.7,
            concurrency: 8,
            max_retries: 3,
            retry: RetryPolicy::default(),
            seed: 0,
            range_policy: RangePolicy::Clamp,
            attach_images: true,
            image_root: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    SchemaReject,
    PointReject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectEntry {
    pub record_id: String,
    pub reason: RejectReason,
    pub attempts: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Accepted(TrainingRecord),
    Rejected(RejectEntry),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub requested: usize,
    pub succeeded: usize,
    pub rejected_schema: usize,
    pub rejected_points: usize,
    /// Validation resamples plus transport retries.
    pub retried: usize,
    pub elapsed_ms: u64,
}

impl PipelineStats {
    pub fn balanced(&self) -> bool {
        self.requested == self.succeeded + self.rejected_schema + self.rejected_points
    }
}

/// Checks a response against the schema and the record's mask.
pub fn validate_response(
    text: &str,
    record: &SceneRecord,
    policy: RangePolicy,
) -> Result<CoRDocument, (RejectReason, String)> {
    let doc = parse_document(text, policy);
    if !doc.complete {
        let detail = serde_json::to_string(&doc.diagnostics).unwrap_or_default();
        return Err((RejectReason::SchemaReject, detail));
    }
    if let Some(i) = doc.points.iter().position(|p| !record.mask.contains(*p)) {
        return Err((RejectReason::PointReject, format!("point {i} outside mask")));
    }
    Ok(doc)
}

fn encode_png(image: &RgbImage) -> Result<String, image::ImageError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

struct Attempted {
    outcome: Outcome,
    retried: usize,
}

fn process_record<E: Endpoint + ?Sized>(
    record: &SceneRecord,
    endpoint: &E,
    cfg: &GenerationConfig,
) -> Result<Attempted, DatasetError> {
    let prompt = compose_prompt(record);
    let image = if cfg.attach_images {
        Some(encode_png(&record.render())?)
    } else {
        None
    };
    let record_seed = seed::derive(cfg.seed, seed::fnv1a(record.id.as_bytes()));
    let mut retried = 0;
    let mut last = (RejectReason::SchemaReject, String::new());
    for attempt in 0..=cfg.max_retries {
        let request = GenerateRequest {
            model: cfg.model.clone(),
            prompt: prompt.clone(),
            image: image.clone(),
            temperature: cfg.temperature,
            seed: seed::derive(record_seed, attempt as u64),
        };
        let reply = call_with_retry(endpoint, &request, &cfg.retry).map_err(|source| DatasetError::Endpoint {
            record_id: record.id.clone(),
            source,
        })?;
        retried += reply.retries as usize;
        match validate_response(&reply.text, record, cfg.range_policy) {
            Ok(doc) => {
                let answer = serialize(&doc).expect("validated document is complete");
                let out = TrainingRecord::new(
                    format!("cor-{}", record.id),
                    join_image(&cfg.image_root, &record.image),
                    &record.instruction,
                    answer,
                    RecordKind::Reasoning,
                );
                return Ok(Attempted {
                    outcome: Outcome::Accepted(out),
                    retried,
                });
            }
            Err(reject) => {
                tracing::debug!(record = %record.id, attempt, reason = ?reject.0, "rationale rejected");
                last = reject;
                if attempt < cfg.max_retries {
                    retried += 1;
                }
            }
        }
    }
    Ok(Attempted {
        outcome: Outcome::Rejected(RejectEntry {
            record_id: record.id.clone(),
            reason: last.0,
            attempts: cfg.max_retries + 1,
            detail: last.1,
        }),
        retried,
    })
}

/// Streams records through the endpoint with at most `cfg.concurrency`
/// requests in flight. Outcomes reach `sink` in input order. Transport
/// failures that survive the retry policy abort the run.
pub fn generate_rationales<I, E, S>(
    records: I,
    endpoint: &E,
    cfg: &GenerationConfig,
    mut sink: S,
) -> Result<PipelineStats, DatasetError>
where
    I: Iterator<Item = Result<SceneRecord, SceneError>> + Send,
    E: Endpoint + ?Sized,
    S: FnMut(Outcome) -> Result<(), DatasetError>,
{
    let start = Instant::now();
    let mut stats = PipelineStats::default();
    ordered_map(
        records,
        cfg.concurrency,
        |_, record| process_record(&record?, endpoint, cfg),
        |_, result: Result<Attempted, DatasetError>| {
            let done = result?;
            stats.requested += 1;
            stats.retried += done.retried;
            match &done.outcome {
                Outcome::Accepted(_) => stats.succeeded += 1,
                Outcome::Rejected(r) => match r.reason {
                    RejectReason::SchemaReject => stats.rejected_schema += 1,
                    RejectReason::PointReject => stats.rejected_points += 1,
                },
            }
            sink(done.outcome)
        },
    )?;
    stats.elapsed_ms = start.elapsed().as_millis() as u64;
    tracing::info!(
        requested = stats.requested,
        succeeded = stats.succeeded,
        rejected_schema = stats.rejected_schema,
        rejected_points = stats.rejected_points,
        "rationale generation finished"
    );
    Ok(stats)
}

#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub records: Vec<TrainingRecord>,
    pub rejects: Vec<RejectEntry>,
    pub stats: PipelineStats,
}

/// In-memory wrapper around [`generate_rationales`].
pub fn generate_all<E: Endpoint + ?Sized>(
    records: &[SceneRecord],
    endpoint: &E,
    cfg: &GenerationConfig,
) -> Result<Generated, DatasetError> {
    let mut out = Generated::default();
    out.stats = generate_rationales(records.iter().cloned().map(Ok), endpoint, cfg, |o| {
        match o {
            Outcome::Accepted(r) => out.records.push(r),
            Outcome::Rejected(r) => out.rejects.push(r),
        }
        Ok(())
    })?;
    Ok(out)
}

fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut seed::rng(seed));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixed {
    pub records: Vec<TrainingRecord>,
    pub n_reasoning: usize,
    pub n_standard: usize,
}

/// Draws `round(ratio·size)` reasoning records and the rest standard, then
/// interleaves them by seeded shuffle.
pub fn mix_datasets(
    reasoning: &[TrainingRecord],
    standard: &[TrainingRecord],
    ratio: f64,
    size: usize,
    seed: u64,
) -> Result<Mixed, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let n_reasoning = (ratio * size as f64).round() as usize;
    let n_standard = size - n_reasoning;
    for (source_name, needed, available) in [
        ("reasoning", n_reasoning, reasoning.len()),
        ("standard", n_standard, standard.len()),
    ] {
        if needed > available || available == 0 {
            return Err(DatasetError::InsufficientRecords {
                source_name,
                needed,
                available,
            });
        }
    }
    let mut records = shuffled(reasoning, seed::derive(seed, 1));
    records.truncate(n_reasoning);
    records.extend(shuffled(standard, seed::derive(seed, 2)).into_iter().take(n_standard));
    records.shuffle(&mut seed::rng(seed::derive(seed, 3)));
    Ok(Mixed {
        records,
        n_reasoning,
        n_standard,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSubset {
    pub fraction: f64,
    pub n_reasoning: usize,
    pub n_standard: usize,
    pub records: Vec<TrainingRecord>,
}

pub fn check_fractions(fractions: &[f64]) -> Result<(), DatasetError> {
    if fractions.is_empty() {
        return Err(DatasetError::InvalidFractions("empty list".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(DatasetError::InvalidFractions(format!("{f} outside [0, 1]")));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::InvalidFractions("not strictly increasing".into()));
    }
    Ok(())
}

/// Standard records plus the first `round(f·N)` reasoning records of one
/// seeded permutation, so larger fractions contain smaller ones.
pub fn ablation_subsets(
    reasoning: &[TrainingRecord],
    standard: &[TrainingRecord],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<AblationSubset>, DatasetError> {
    check_fractions(fractions)?;
    let order = shuffled(reasoning, seed::derive(seed, 1));
    Ok(fractions
        .iter()
        .enumerate()
        .map(|(k, &fraction)| {
            let n_reasoning = (fraction * reasoning.len() as f64).round() as usize;
            let mut records = standard.to_vec();
            records.extend_from_slice(&order[..n_reasoning]);
            records.shuffle(&mut seed::rng(seed::derive(seed, 100 + k as u64)));
            AblationSubset {
                fraction,
                n_reasoning,
                n_standard: standard.len(),
                records,
            }
        })
        .collect())
}

/// A square-padded image and the placement of the original inside it.
#[derive(Debug, Clone)]
pub struct Padded {
    pub image: RgbImage,
    pub offset_x: u32,
    pub offset_y: u32,
    pub orig_width: u32,
    pub orig_height: u32,
}

/// Nudges `v` so that `floor(v·size)` lands on pixel `target`.
fn fit_to_pixel(v: f64, target: u32, size: u32) -> f64 {
    let s = size as f64;
    let px = |v: f64| ((v * s).floor().max(0.0) as u64).min(size as u64 - 1) as u32;
    let mut v = v.clamp(0.0, 1.0);
    if px(v) != target {
        v = (target as f64 + 0.5) / s;
    }
    while px(v) < target {
        v = v.next_up();
    }
    while px(v) > target {
        v = v.next_down();
    }
    v
}

impl Padded {
    pub fn side(&self) -> u32 {
        self.image.width()
    }

    /// Remaps a normalized point so it names the same pixel after padding.
    pub fn map_point(&self, p: Point) -> Point {
        let s = self.side() as f64;
        let (w, h) = (self.orig_width, self.orig_height);
        let col = ((p.x * w as f64).floor() as i64).clamp(0, w as i64 - 1) as u32;
        let row = ((p.y * h as f64).floor() as i64).clamp(0, h as i64 - 1) as u32;
        let x = (p.x * w as f64 + self.offset_x as f64) / s;
        let y = (p.y * h as f64 + self.offset_y as f64) / s;
        Point {
            x: fit_to_pixel(x, col + self.offset_x, self.side()),
            y: fit_to_pixel(y, row + self.offset_y, self.side()),
        }
    }

    pub fn map_points(&self, points: &PointSet) -> PointSet {
        PointSet {
            points: points.iter().map(|p| self.map_point(*p)).collect(),
            unparsed: points.unparsed,
        }
    }

    /// Pads a mask of the original size with outside pixels.
    pub fn pad_mask(&self, mask: &MaskImage) -> MaskImage {
        let (ox, oy) = (self.offset_x, self.offset_y);
        let (w, h) = (mask.width(), mask.height());
        MaskImage::from_fn(self.side(), self.side(), |c, r| {
            c >= ox && r >= oy && c - ox < w && r - oy < h && mask.get(c - ox, r - oy)
        })
        .expect("non-empty side")
    }
}

/// Centers the image on a `max(W, H)` square filled with `pad`.
pub fn pad_to_square(image: &RgbImage, pad: Rgb<u8>) -> Padded {
    let (w, h) = image.dimensions();
    let side = w.max(h);
    let (ox, oy) = ((side - w) / 2, (side - h) / 2);
    let out = if side == w && side == h {
        image.clone()
    } else {
        let mut out = RgbImage::from_pixel(side, side, pad);
        image::imageops::replace(&mut out, image, ox as i64, oy as i64);
        out
    };
    Padded {
        image: out,
        offset_x: ox,
        offset_y: oy,
        orig_width: w,
        orig_height: h,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthItem {
    pub length: usize,
    pub has_image: bool,
}

impl From<&TrainingRecord> for LengthItem {
    fn from(r: &TrainingRecord) -> Self {
        LengthItem {
            length: r.text_length(),
            has_image: !r.image.is_empty(),
        }
    }
}

/// Batches of indices grouping items by modality and similar length.
/// Equal lengths are ordered by seeded shuffle, and batch order is shuffled.
pub fn group_by_length(items: &[LengthItem], batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let batch = batch.max(1);
    let mut rng = seed::rng(seed);
    let mut batches = Vec::new();
    for modality in [true, false] {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].has_image == modality).collect();
        idx.shuffle(&mut rng);
        idx.sort_by_key(|&i| items[i].length);
        batches.extend(idx.chunks(batch).map(|c| c.to_vec()));
    }
    batches.shuffle(&mut rng);
    batches
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<(), DatasetError> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training(path: &Path) -> Result<Vec<TrainingRecord>, DatasetError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

/// In-process rationale generator for offline runs and tests.
///
/// Reads the context lines of a [`compose_prompt`] prompt and answers with a
/// canonical rationale. Faults are drawn from a hash of the prompt and seed:
/// `malformed_rate` truncates the answer after step 2, `miss_rate` moves the
/// points onto an occupied or distant location, and `rate_limit_rate` makes
/// the first call for a request answer with a rate-limit signal.
#[derive(Debug, Default)]
pub struct RationaleMock {
    pub malformed_rate: f64,
    pub miss_rate: f64,
    pub rate_limit_rate: f64,
    pub latency: Duration,
    seen: Mutex<HashMap<u64, u32>>,
}

impl RationaleMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rates(malformed_rate: f64, miss_rate: f64) -> Self {
        RationaleMock {
            malformed_rate,
            miss_rate,
            ..Self::default()
        }
    }

    pub fn rate_limited(mut self, rate: f64) -> Self {
        self.rate_limit_rate = rate;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }
}

struct PromptContext<'a> {
    references: Vec<(&'a str, [f64; 4])>,
    relation: Option<Relation>,
    subtype: Option<&'a str>,
    points: PointSet,
}

fn parse_bbox(s: &str) -> Option<[f64; 4]> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    let v: Vec<f64> = inner.split(',').filter_map(|t| t.trim().parse().ok()).collect();
    (v.len() == 4).then(|| [v[0], v[1], v[2], v[3]])
}

fn read_prompt(prompt: &str) -> PromptContext<'_> {
    let mut ctx = PromptContext {
        references: Vec::new(),
        relation: None,
        subtype: None,
        points: PointSet::unparsed(),
    };
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("Reference objects: ") {
            for part in rest.split("; ") {
                if let Some(open) = part.find(" [") {
                    if let Some(b) = parse_bbox(&part[open + 1..]) {
                        ctx.references.push((&part[..open], b));
                    }
                }
            }
        } else if let Some(rest) = line.strip_prefix("Relation: ") {
            ctx.relation = rest.trim().parse().ok();
        } else if let Some(rest) = line.strip_prefix("Subtype hint: ") {
            ctx.subtype = Some(rest.trim());
        } else if let Some(rest) = line.strip_prefix("Ground-truth points: ") {
            if let Ok(p) = parse_points(rest, RangePolicy::Clamp) {
                ctx.points = p.points;
            }
        }
    }
    ctx
}

fn missed_points(ctx: &PromptContext<'_>, n: usize) -> PointSet {
    let Some((_, b)) = ctx.references.first() else {
        return PointSet::new(vec![Point { x: 0.0, y: 0.0 }; n.max(1)]);
    };
    let p = if ctx.relation == Some(Relation::OnTopOf) {
        // Image corner farthest from the reference.
        let cx = if b[0] + b[2] > 1.0 { 0.0 } else { 0.999 };
        let cy = if b[1] + b[3] > 1.0 { 0.0 } else { 0.999 };
        Point { x: cx, y: cy }
    } else {
        Point {
            x: (b[0] + b[2]) / 2.0,
            y: (b[1] + b[3]) / 2.0,
        }
    };
    PointSet::new(vec![p; n.max(1)])
}

impl Endpoint for RationaleMock {
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let key = seed::derive(seed::fnv1a(request.prompt.as_bytes()), request.seed);
        if self.rate_limit_rate > 0.0 {
            let mut seen = self.seen.lock().expect("mock state poisoned");
            let calls = seen.entry(key).or_insert(0);
            *calls += 1;
            if *calls == 1 && seed::unit(seed::derive(key, 3)) < self.rate_limit_rate {
                return Err(EndpointError::RateLimited {
                    retry_after: Some(Duration::ZERO),
                });
            }
        }
        let ctx = read_prompt(&request.prompt);
        if ctx.points.is_empty() {
            return Err(EndpointError::Rejected {
                status: 400,
                body: "prompt carries no ground-truth points".into(),
            });
        }
        let labels: Vec<&str> = ctx.references.iter().map(|r| r.0).collect();
        let subtype = ctx.subtype.unwrap_or("Placement Affordance");
        let relation = ctx.relation.map(|r| r.name().replace('_', " ")).unwrap_or_else(|| "near".into());
        let points = if seed::unit(seed::derive(key, 2)) < self.miss_rate {
            missed_points(&ctx, ctx.points.len())
        } else {
            ctx.points.clone()
        };
        let texts = [
            format!("The reference object is the {}.", labels.join(" and the ")),
            format!("The instruction names a free spot, so the goal's subtype is \"{subtype}\"."),
            format!("The target area is the unoccupied region {relation} the reference."),
            format!("The {} output points are spread over that target area.", points.len()),
        ];
        if seed::unit(seed::derive(key, 1)) < self.malformed_rate {
            return Ok(format!(
                "Step 1 \u{2014} Identify Reference Object: {}\nStep 2 \u{2014} Determine Goal's Subtype: {}",
                texts[0], texts[1]
            ));
        }
        let subtype = AffordanceSubtype::from_step_text(&format!("\"{subtype}\""))
            .unwrap_or(AffordanceSubtype::PlacementAffordance);
        let doc = CoRDocument::from_parts(texts, subtype, points)
            .map_err(|e| EndpointError::Protocol(e.to_string()))?;
        serialize(&doc).map_err(|e| EndpointError::Protocol(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::Instrumented;
    use crate::scene::{build_benchmark, SceneConfig};
    use std::collections::BTreeSet;

    fn scenes(n: usize, seed: u64) -> Vec<SceneRecord> {
        build_benchmark(n, &BTreeSet::new(), seed, &SceneConfig::default())
            .unwrap()
            .main
            .into_iter()
            .map(|g| g.record)
            .collect()
    }

    fn quick(concurrency: usize, max_retries: u32) -> GenerationConfig {
        GenerationConfig {
            concurrency,
            max_retries,
            retry: RetryPolicy::immediate(3),
            attach_images: false,
            seed: 11,
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn prompt_names_steps_and_references() {
        let recs = scenes(40, 3);
        for r in &recs {
            let p = compose_prompt(r);
            for kind in StepKind::ALL {
                assert!(p.contains(kind.label()));
            }
            assert!(p.contains(&r.instruction));
            for label in r.reference_labels() {
                assert!(p.contains(label));
            }
            assert_eq!(p, compose_prompt(r));
        }
        assert!(recs.iter().any(|r| r.relation == Relation::Between));
    }

    #[test]
    fn echo_mock_accepts_everything() {
        let recs = scenes(30, 5);
        let ep = Instrumented::new(RationaleMock::new());
        let out = generate_all(&recs, &ep, &quick(4, 3)).unwrap();
        assert_eq!(out.stats.succeeded, 30);
        assert_eq!(out.stats.rejected_schema + out.stats.rejected_points, 0);
        assert!(ep.max_in_flight() <= 4);
        for (rec, tr) in recs.iter().zip(&out.records) {
            assert_eq!(tr.id, format!("cor-{}", rec.id));
            let doc = parse_document(tr.answer(), RangePolicy::Reject);
            assert!(doc.complete);
            assert!(doc.points.iter().all(|p| rec.mask.contains(*p)));
        }
    }

    #[test]
    fn malformed_rate_without_retries() {
        let recs = scenes(400, 9);
        let out = generate_all(&recs, &RationaleMock::with_rates(0.2, 0.0), &quick(8, 0)).unwrap();
        let frac = out.stats.rejected_schema as f64 / out.stats.requested as f64;
        assert!((frac - 0.2).abs() < 0.06, "{frac}");
        assert!(out.stats.balanced());
        assert_eq!(out.rejects.len(), out.stats.rejected_schema);
    }

    #[test]
    fn misses_are_point_rejects_and_retries_recover() {
        let recs = scenes(100, 2);
        let mock = RationaleMock::with_rates(0.0, 1.0);
        let out = generate_all(&recs, &mock, &quick(4, 1)).unwrap();
        assert_eq!(out.stats.rejected_points, 100);
        assert!(out.rejects.iter().all(|r| r.attempts == 2));
        let out = generate_all(&recs, &RationaleMock::with_rates(0.3, 0.3), &quick(4, 3)).unwrap();
        assert!(out.stats.balanced());
        assert!(out.stats.succeeded > 80);
        assert!(out.stats.retried > 0);
    }

    #[test]
    fn rate_limits_are_absorbed() {
        let recs = scenes(20, 4);
        let mock = RationaleMock::new().rate_limited(1.0);
        let out = generate_all(&recs, &mock, &quick(3, 0)).unwrap();
        assert_eq!(out.stats.succeeded, 20);
        assert_eq!(out.stats.retried, 20);
    }

    #[test]
    fn exhausted_transport_is_fatal() {
        let recs = scenes(5, 4);
        let ep = crate::endpoint::FailingEndpoint(EndpointError::Unreachable("down".into()));
        let err = generate_all(&recs, &ep, &quick(2, 3)).unwrap_err();
        assert!(matches!(err, DatasetError::Endpoint { .. }));
    }

    fn fake(kind: RecordKind, n: usize) -> Vec<TrainingRecord> {
        (0..n)
            .map(|i| TrainingRecord::new(format!("{kind:?}{i}"), format!("{i}.png"), "x", "[(0.5, 0.5)]".into(), kind))
            .collect()
    }

    #[test]
    fn mixing_counts() {
        let (r, s) = (fake(RecordKind::Reasoning, 100), fake(RecordKind::Standard, 100));
        let m = mix_datasets(&r, &s, 0.5, 200, 1).unwrap();
        assert_eq!((m.n_reasoning, m.n_standard), (100, 100));
        assert_eq!(m.records.iter().filter(|x| x.kind == RecordKind::Reasoning).count(), 100);
        let m = mix_datasets(&r, &s, 0.25, 100, 1).unwrap();
        assert_eq!((m.n_reasoning, m.n_standard), (25, 75));
        assert_eq!(m, mix_datasets(&r, &s, 0.25, 100, 1).unwrap());
        assert!(matches!(
            mix_datasets(&r, &s, 0.25, 1000, 1),
            Err(DatasetError::InsufficientRecords { .. })
        ));
        assert!(mix_datasets(&r, &s, 1.0, 10, 1).is_err());
    }

    #[test]
    fn ablation_nesting() {
        let (r, s) = (fake(RecordKind::Reasoning, 40), fake(RecordKind::Standard, 10));
        let subs = ablation_subsets(&r, &s, &[0.0, 0.25, 0.5, 0.75, 1.0], 3).unwrap();
        assert!(subs[0].records.iter().all(|x| x.kind == RecordKind::Standard));
        let ids = |k: usize| -> BTreeSet<String> {
            subs[k]
                .records
                .iter()
                .filter(|x| x.kind == RecordKind::Reasoning)
                .map(|x| x.id.clone())
                .collect()
        };
        for k in 0..5 {
            assert_eq!(ids(k).len(), [0, 10, 20, 30, 40][k]);
            if k > 0 {
                assert!(ids(k - 1).is_subset(&ids(k)));
            }
        }
        assert!(ablation_subsets(&r, &s, &[0.5, 0.25], 3).is_err());
    }

    #[test]
    fn padding_geometry() {
        let img = RgbImage::from_pixel(200, 100, Rgb([1, 2, 3]));
        let p = pad_to_square(&img, DEFAULT_PAD);
        assert_eq!(p.side(), 200);
        assert_eq!(p.image.get_pixel(0, 49), &DEFAULT_PAD);
        assert_eq!(p.image.get_pixel(0, 50), &Rgb([1, 2, 3]));
        assert_eq!(p.image.get_pixel(199, 149), &Rgb([1, 2, 3]));
        assert_eq!(p.image.get_pixel(0, 150), &DEFAULT_PAD);
        let c = p.map_point(Point { x: 0.5, y: 0.5 });
        assert_eq!((c.x, c.y), (0.5, 0.5));
        let sq = RgbImage::from_pixel(100, 100, Rgb([9, 9, 9]));
        let q = pad_to_square(&sq, DEFAULT_PAD);
        assert_eq!(q.image, sq);
        assert_eq!(q.map_point(Point { x: 0.3, y: 0.7 }), Point { x: 0.3, y: 0.7 });
    }

    #[test]
    fn length_grouping_sorted_buckets() {
        let items: Vec<LengthItem> = (1..=16)
            .map(|length| LengthItem {
                length,
                has_image: true,
            })
            .collect();
        let batches = group_by_length(&items, 4, 8);
        let mut sets: Vec<Vec<usize>> = batches
            .iter()
            .map(|b| {
                let mut v: Vec<usize> = b.iter().map(|&i| items[i].length).collect();
                v.sort();
                v
            })
            .collect();
        sets.sort();
        assert_eq!(sets, vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8], vec![9, 10, 11, 12], vec![13, 14, 15, 16]]);
    }
}
