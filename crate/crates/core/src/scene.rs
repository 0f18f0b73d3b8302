//! Synthetic tabletop scenes: axis-aligned objects on a plain surface, one
//! relational instruction per scene and the free-space (or object-top) mask
//! that instruction refers to.
//!
//! Image-plane conventions: "in front of" is below the reference in image
//! coordinates and "behind" is above it.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{Point, PointSet};
use crate::mask::MaskImage;
use crate::seed;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("no free pixel satisfies {relation} after {attempts} attempts")]
    Unsatisfiable { relation: Relation, attempts: usize },
    #[error("mask has no inside pixels")]
    EmptyMask,
    #[error("point count must be at least 1")]
    ZeroPoints,
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    Between,
    NextTo,
    OnTopOf,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::InFrontOf,
        Relation::Behind,
        Relation::Between,
        Relation::NextTo,
        Relation::OnTopOf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::InFrontOf => "in_front_of",
            Relation::Behind => "behind",
            Relation::Between => "between",
            Relation::NextTo => "next_to",
            Relation::OnTopOf => "on_top_of",
        }
    }

    pub fn reference_count(self) -> usize {
        if self == Relation::Between {
            2
        } else {
            1
        }
    }

    pub fn source_tag(self) -> SourceTag {
        if self == Relation::OnTopOf {
            SourceTag::ObjectReference
        } else {
            SourceTag::FreeSpaceReference
        }
    }

    fn templates(self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &[
                "Find the free space to the left of the {a}.",
                "Pinpoint several spots in the vacant area that lies to the left of the {a}.",
                "Locate some points on the empty table left of the {a}.",
            ],
            Relation::RightOf => &[
                "Find the free space to the right of the {a}.",
                "Pinpoint several spots in the vacant area that lies to the right of the {a}.",
                "Locate some points on the empty table right of the {a}.",
            ],
            Relation::InFrontOf => &[
                "Find the free space in front of the {a}.",
                "Pinpoint several spots in the vacant area in front of the {a}.",
            ],
            Relation::Behind => &[
                "Find the free space behind the {a}.",
                "Pinpoint several spots in the vacant area behind the {a}.",
            ],
            Relation::Between => &[
                "Find the free space between the {a} and the {b}.",
                "Pinpoint several spots in the gap between the {a} and the {b}.",
            ],
            Relation::NextTo => &[
                "Find the free space next to the {a}.",
                "Pinpoint several spots right beside the {a}.",
            ],
            Relation::OnTopOf => &[
                "Point to several spots on top of the {a}.",
                "Find places on the {a} where something could be set down.",
            ],
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| SceneError::UnknownRelation(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    FreeSpaceReference,
    ObjectReference,
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn contains(&self, col: u32, row: u32) -> bool {
        col >= self.x0 && col < self.x1 && row >= self.y0 && row < self.y1
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    /// True if the rectangles, each grown by `gap` pixels, intersect.
    fn near(&self, other: &Rect, gap: u32) -> bool {
        self.x0 < other.x1 + gap
            && other.x0 < self.x1 + gap
            && self.y0 < other.y1 + gap
            && other.y0 < self.y1 + gap
    }

    /// Chebyshev distance from a pixel to the rectangle (0 inside).
    fn distance(&self, col: u32, row: u32) -> u32 {
        let dx = if col < self.x0 {
            self.x0 - col
        } else if col >= self.x1 {
            col + 1 - self.x1
        } else {
            0
        };
        let dy = if row < self.y0 {
            self.y0 - row
        } else if row >= self.y1 {
            row + 1 - self.y1
        } else {
            0
        };
        dx.max(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Disk,
    Block,
}

impl Shape {
    fn name(self) -> &'static str {
        match self {
            Shape::Box => "box",
            Shape::Disk => "disk",
            Shape::Block => "block",
        }
    }
}

const COLORS: [(&str, [u8; 3]); 7] = [
    ("red", [200, 40, 40]),
    ("green", [40, 160, 60]),
    ("blue", [40, 70, 200]),
    ("yellow", [230, 200, 40]),
    ("purple", [130, 50, 160]),
    ("orange", [240, 130, 30]),
    ("black", [30, 30, 30]),
];
const SHAPES: [Shape; 3] = [Shape::Box, Shape::Disk, Shape::Block];
const TABLE: [u8; 3] = [196, 178, 150];

/// A scene object. The occupied region is the whole bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub label: String,
    pub bbox: Rect,
    pub shape: Shape,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    /// Image path, relative to the manifest directory.
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub instruction: String,
    pub relation: Relation,
    pub reference_ids: Vec<String>,
    pub objects: Vec<SceneObject>,
    pub mask: MaskImage,
    pub gt_points: PointSet,
    pub source_tag: SourceTag,
    pub holdout: bool,
}

impl SceneRecord {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn reference_labels(&self) -> Vec<&str> {
        self.reference_ids
            .iter()
            .filter_map(|id| self.object(id).map(|o| o.label.as_str()))
            .collect()
    }

    /// Renders the scene raster from the record's objects.
    pub fn render(&self) -> RgbImage {
        render(self.width, self.height, &self.objects)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: u32,
    pub max_size: u32,
    /// Minimum gap between objects, in pixels.
    pub gap: u32,
    /// Reach of the `next_to` relation, in pixels.
    pub near_distance: u32,
    pub points_per_record: usize,
    pub max_attempts: usize,
    pub relation_weights: Vec<(Relation, f64)>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 96,
            min_objects: 2,
            max_objects: 5,
            min_size: 10,
            max_size: 30,
            gap: 3,
            near_distance: 8,
            points_per_record: 10,
            max_attempts: 32,
            relation_weights: Relation::ALL.iter().map(|&r| (r, 1.0)).collect(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("need 1 <= min_objects <= max_objects");
        }
        if self.max_objects > COLORS.len() * SHAPES.len() {
            return bad("too many objects for distinct labels");
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad("need 1 <= min_size <= max_size");
        }
        if self.max_size >= self.width.min(self.height) {
            return bad("max_size must be smaller than the image");
        }
        if self.points_per_record == 0 {
            return bad("points_per_record must be at least 1");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        let enabled: Vec<_> = self.relation_weights.iter().filter(|(_, w)| *w > 0.0).collect();
        if enabled.is_empty() || self.relation_weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return bad("relation weights must be finite, non-negative and not all zero");
        }
        if enabled.iter().any(|(r, _)| *r == Relation::Between) && self.min_objects < 2 {
            return bad("between needs at least 2 objects");
        }
        Ok(())
    }
}

/// Region satisfying `relation` with respect to `refs`, minus occupied pixels.
///
/// Directional relations extend from the reference's edge to the image border
/// within the reference's row (or column) band. `between` spans the gap of two
/// separated references. `on_top_of` is the reference's own footprint minus
/// any other object.
pub fn relation_mask(
    relation: Relation,
    refs: &[&SceneObject],
    objects: &[SceneObject],
    width: u32,
    height: u32,
    near_distance: u32,
) -> MaskImage {
    let a = refs[0].bbox;
    let region: Box<dyn Fn(u32, u32) -> bool> = match relation {
        Relation::LeftOf => Box::new(move |c, r| c < a.x0 && r >= a.y0 && r < a.y1),
        Relation::RightOf => Box::new(move |c, r| c >= a.x1 && r >= a.y0 && r < a.y1),
        Relation::Behind => Box::new(move |c, r| r < a.y0 && c >= a.x0 && c < a.x1),
        Relation::InFrontOf => Box::new(move |c, r| r >= a.y1 && c >= a.x0 && c < a.x1),
        Relation::NextTo => Box::new(move |c, r| {
            let d = a.distance(c, r);
            d > 0 && d <= near_distance
        }),
        Relation::OnTopOf => Box::new(move |c, r| a.contains(c, r)),
        Relation::Between => {
            let b = refs[1].bbox;
            let (l, rr) = if a.x0 <= b.x0 { (a, b) } else { (b, a) };
            let (t, bt) = if a.y0 <= b.y0 { (a, b) } else { (b, a) };
            if l.x1 <= rr.x0 {
                let (y0, y1) = (a.y0.min(b.y0), a.y1.max(b.y1));
                Box::new(move |c, r| c >= l.x1 && c < rr.x0 && r >= y0 && r < y1)
            } else if t.y1 <= bt.y0 {
                let (x0, x1) = (a.x0.min(b.x0), a.x1.max(b.x1));
                Box::new(move |c, r| r >= t.y1 && r < bt.y0 && c >= x0 && c < x1)
            } else {
                Box::new(|_, _| false)
            }
        }
    };
    let excluded: Vec<Rect> = objects
        .iter()
        .filter(|o| relation != Relation::OnTopOf || !refs.iter().any(|r| r.id == o.id))
        .map(|o| o.bbox)
        .collect();
    MaskImage::from_fn(width, height, |c, r| {
        region(c, r) && !excluded.iter().any(|b| b.contains(c, r))
    })
    .expect("config guarantees non-empty dimensions")
}

/// `k` inside pixels drawn uniformly with replacement, emitted as pixel centers.
pub fn sample_points(mask: &MaskImage, k: usize, seed: u64) -> Result<PointSet, SceneError> {
    if k == 0 {
        return Err(SceneError::ZeroPoints);
    }
    let pixels = mask.inside_pixels();
    if pixels.is_empty() {
        return Err(SceneError::EmptyMask);
    }
    let mut rng = seed::rng(seed);
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    Ok((0..k)
        .map(|_| {
            let (c, r) = pixels[rng.gen_range(0..pixels.len())];
            Point::new((c as f64 + 0.5) / w, (r as f64 + 0.5) / h).expect("pixel center in range")
        })
        .collect())
}

fn place_objects(rng: &mut impl Rng, config: &SceneConfig) -> Vec<SceneObject> {
    let n = rng.gen_range(config.min_objects..=config.max_objects);
    let mut labels: Vec<(usize, usize)> = (0..COLORS.len())
        .flat_map(|c| (0..SHAPES.len()).map(move |s| (c, s)))
        .collect();
    labels.shuffle(rng);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    let mut tries = 0;
    while objects.len() < n && tries < 200 * n {
        tries += 1;
        let w = rng.gen_range(config.min_size..=config.max_size);
        let h = rng.gen_range(config.min_size..=config.max_size);
        let x0 = rng.gen_range(0..=config.width - w);
        let y0 = rng.gen_range(0..=config.height - h);
        let bbox = Rect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        };
        if objects.iter().any(|o| o.bbox.near(&bbox, config.gap)) {
            continue;
        }
        let (ci, si) = labels[objects.len()];
        objects.push(SceneObject {
            id: format!("o{}", objects.len()),
            label: format!("{} {}", COLORS[ci].0, SHAPES[si].name()),
            bbox,
            shape: SHAPES[si],
            color: COLORS[ci].1,
        });
    }
    objects
}

fn pick_relation(rng: &mut impl Rng, weights: &[(Relation, f64)], n_objects: usize) -> Option<Relation> {
    let usable: Vec<(Relation, f64)> = weights
        .iter()
        .copied()
        .filter(|&(r, w)| w > 0.0 && r.reference_count() <= n_objects)
        .collect();
    let total: f64 = usable.iter().map(|(_, w)| w).sum();
    if usable.is_empty() || total <= 0.0 {
        return None;
    }
    let mut x = rng.gen::<f64>() * total;
    for &(r, w) in &usable {
        if x < w {
            return Some(r);
        }
        x -= w;
    }
    usable.last().map(|&(r, _)| r)
}

pub fn render(width: u32, height: u32, objects: &[SceneObject]) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb(TABLE));
    for o in objects {
        let b = o.bbox;
        let (cx, cy) = ((b.x0 + b.x1) as f64 / 2.0, (b.y0 + b.y1) as f64 / 2.0);
        let (rx, ry) = (b.width() as f64 / 2.0, b.height() as f64 / 2.0);
        let shade = o.color.map(|v| (v as f32 * 0.6) as u8);
        for row in b.y0..b.y1 {
            for col in b.x0..b.x1 {
                let edge = row == b.y0 || row + 1 == b.y1 || col == b.x0 || col + 1 == b.x1;
                let paint = match o.shape {
                    Shape::Box => Some(if edge { shade } else { o.color }),
                    Shape::Block => Some(o.color),
                    Shape::Disk => {
                        let dx = (col as f64 + 0.5 - cx) / rx;
                        let dy = (row as f64 + 0.5 - cy) / ry;
                        (dx * dx + dy * dy <= 1.0).then_some(o.color)
                    }
                };
                if let Some(c) = paint {
                    img.put_pixel(col, row, Rgb(c));
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub record: SceneRecord,
    pub image: RgbImage,
}

/// Deterministic scene for `(id, seed, config)`. Layouts whose relation region
/// is empty are redrawn up to `config.max_attempts` times.
pub fn generate_scene(
    id: &str,
    seed: u64,
    config: &SceneConfig,
    holdout: &BTreeSet<Relation>,
) -> Result<GeneratedScene, SceneError> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(seed, 0));
    let mut last_relation = Relation::LeftOf;
    for _ in 0..config.max_attempts {
        let objects = place_objects(&mut rng, config);
        let Some(relation) = pick_relation(&mut rng, &config.relation_weights, objects.len()) else {
            continue;
        };
        last_relation = relation;
        let mut order: Vec<usize> = (0..objects.len()).collect();
        order.shuffle(&mut rng);
        let refs: Vec<&SceneObject> = order[..relation.reference_count()]
            .iter()
            .map(|&i| &objects[i])
            .collect();
        let mask = relation_mask(
            relation,
            &refs,
            &objects,
            config.width,
            config.height,
            config.near_distance,
        );
        if mask.inside_count() == 0 {
            continue;
        }
        let templates = relation.templates();
        let template = templates[rng.gen_range(0..templates.len())];
        let mut instruction = template.replace("{a}", &refs[0].label);
        if let Some(b) = refs.get(1) {
            instruction = instruction.replace("{b}", &b.label);
        }
        let gt_points = sample_points(&mask, config.points_per_record, seed::derive(seed, 1))?;
        let reference_ids = refs.iter().map(|o| o.id.clone()).collect();
        let image = render(config.width, config.height, &objects);
        let record = SceneRecord {
            id: id.to_string(),
            image: format!("images/{id}.png"),
            width: config.width,
            height: config.height,
            instruction,
            relation,
            reference_ids,
            objects,
            mask,
            gt_points,
            source_tag: relation.source_tag(),
            holdout: holdout.contains(&relation),
        };
        return Ok(GeneratedScene { record, image });
    }
    Err(SceneError::Unsatisfiable {
        relation: last_relation,
        attempts: config.max_attempts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaFraction {
    pub id: String,
    pub inside: usize,
    pub total: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub seed: u64,
    pub n_scenes: usize,
    pub n_main: usize,
    pub n_holdout: usize,
    pub holdout_relations: Vec<Relation>,
    pub mean_area_fraction: f64,
    pub main_mean_area_fraction: f64,
    pub holdout_mean_area_fraction: f64,
    pub area_fractions: Vec<AreaFraction>,
    pub config: SceneConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub main: Vec<GeneratedScene>,
    pub holdout: Vec<GeneratedScene>,
    pub meta: ManifestMeta,
}

fn mean_fraction<'a>(scenes: impl Iterator<Item = &'a GeneratedScene>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in scenes {
        sum += s.record.mask.area_fraction();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Generates `n_scenes` scenes and splits them into main and held-out sets by
/// relation.
pub fn build_benchmark(
    n_scenes: usize,
    holdout: &BTreeSet<Relation>,
    seed: u64,
    config: &SceneConfig,
) -> Result<Benchmark, SceneError> {
    config.validate()?;
    let mut main = Vec::new();
    let mut held = Vec::new();
    for i in 0..n_scenes {
        let scene = generate_scene(&format!("scene{i:05}"), seed::derive(seed, i as u64), config, holdout)?;
        if scene.record.holdout {
            held.push(scene);
        } else {
            main.push(scene);
        }
    }
    let area_fractions = main
        .iter()
        .chain(&held)
        .map(|s| AreaFraction {
            id: s.record.id.clone(),
            inside: s.record.mask.inside_count(),
            total: s.record.mask.cells().len(),
            fraction: s.record.mask.area_fraction(),
        })
        .collect();
    let meta = ManifestMeta {
        seed,
        n_scenes,
        n_main: main.len(),
        n_holdout: held.len(),
        holdout_relations: holdout.iter().copied().collect(),
        mean_area_fraction: mean_fraction(main.iter().chain(&held)),
        main_mean_area_fraction: mean_fraction(main.iter()),
        holdout_mean_area_fraction: mean_fraction(held.iter()),
        area_fractions,
        config: config.clone(),
    };
    Ok(Benchmark {
        main,
        holdout: held,
        meta,
    })
}

/// Writes `main.jsonl`, `holdout.jsonl`, `meta.json` and `images/*.png`.
pub fn write_benchmark(dir: &Path, bench: &Benchmark) -> Result<(), SceneError> {
    fs::create_dir_all(dir.join("images"))?;
    for (name, scenes) in [("main.jsonl", &bench.main), ("holdout.jsonl", &bench.holdout)] {
        let mut out = BufWriter::new(File::create(dir.join(name))?);
        for s in scenes {
            serde_json::to_writer(&mut out, &s.record)?;
            out.write_all(b"\n")?;
            s.image
                .save_with_format(dir.join(&s.record.image), image::ImageFormat::Png)?;
        }
        out.flush()?;
    }
    let mut meta = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(&mut meta, &bench.meta)?;
    meta.write_all(b"\n")?;
    meta.flush()?;
    Ok(())
}

/// Streams records from a line-delimited manifest.
pub struct ManifestReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    base: PathBuf,
}

impl ManifestReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, SceneError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(ManifestReader {
            lines: BufReader::new(File::open(path)?).lines(),
            line: 0,
            base,
        })
    }
}

impl<R: BufRead> ManifestReader<R> {
    pub fn from_reader(reader: R, base: PathBuf) -> Self {
        ManifestReader {
            lines: reader.lines(),
            line: 0,
            base,
        }
    }

    /// Directory that relative image paths resolve against.
    pub fn base(&self) -> &Path {
        &self.base
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<SceneRecord, SceneError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&line).map_err(|source| SceneError::Manifest {
                    line: self.line,
                    source,
                }),
            );
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<SceneRecord>, SceneError> {
    ManifestReader::open(path)?.collect()
}

pub fn write_manifest(path: &Path, records: &[SceneRecord]) -> Result<(), SceneError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
