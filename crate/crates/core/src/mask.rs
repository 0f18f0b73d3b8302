//! Binary region masks and the points-in-mask accuracy metric.
//!
//! A point `(x, y)` in normalized coordinates lands on pixel
//! `(clamp(floor(x·W), 0, W−1), clamp(floor(y·H), 0, H−1))`, so `x = 1.0`
//! falls in the last column.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{Point, PointSet};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("RLE decodes to {got} cells, expected {expected}")]
    RleLength { got: u64, expected: u64 },
    #[error("raster has {got} cells, expected {expected}")]
    RasterLength { got: usize, expected: usize },
    #[error("runs {0:?} have image sets that differ from the first run")]
    RunMismatch(Vec<String>),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("run {0} has no scored images")]
    EmptyRun(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

/// Run-length encoding: alternating outside/inside counts, starting with
/// outside, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: u32,
    height: u32,
    inside: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: u32, height: u32, inside: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if inside.len() != expected {
            return Err(MaskError::RasterLength {
                got: inside.len(),
                expected,
            });
        }
        Ok(MaskImage {
            width,
            height,
            inside,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self, MaskError> {
        MaskImage::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        let mut inside = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                inside.push(f(col, row));
            }
        }
        MaskImage::new(width, height, inside)
    }

    /// Binarizes an 8-bit raster: values above 127 are inside.
    pub fn from_luma(width: u32, height: u32, values: &[u8]) -> Result<Self, MaskError> {
        MaskImage::new(width, height, values.iter().map(|&v| v > 127).collect())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, MaskError> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        MaskImage::from_luma(w, h, img.as_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), MaskError> {
        let buf: Vec<u8> = self.inside.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width, self.height, buf)
            .expect("buffer sized from dimensions")
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cells(&self) -> &[bool] {
        &self.inside
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.inside[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        let w = self.width as usize;
        self.inside[row as usize * w + col as usize] = value;
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.inside_count() as f64 / self.inside.len() as f64
    }

    /// Pixel a normalized point falls on.
    pub fn pixel_of(&self, p: Point) -> (u32, u32) {
        (axis_index(p.x, self.width), axis_index(p.y, self.height))
    }

    pub fn contains(&self, p: Point) -> bool {
        let (c, r) = self.pixel_of(p);
        self.get(c, r)
    }

    /// Inside pixels as (col, row), row-major.
    pub fn inside_pixels(&self) -> Vec<(u32, u32)> {
        let w = self.width as usize;
        self.inside
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i % w) as u32, (i / w) as u32))
            .collect()
    }

    pub fn to_rle(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.inside {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Rle {
            width: self.width,
            height: self.height,
            counts,
        }
    }

    pub fn from_rle(rle: &Rle) -> Result<Self, MaskError> {
        let expected = rle.width as u64 * rle.height as u64;
        let got: u64 = rle.counts.iter().map(|&c| c as u64).sum();
        if got != expected {
            return Err(MaskError::RleLength { got, expected });
        }
        let mut inside = Vec::with_capacity(expected as usize);
        for (i, &c) in rle.counts.iter().enumerate() {
            inside.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        MaskImage::new(rle.width, rle.height, inside)
    }

    /// Nearest-neighbour upscale by an integer factor.
    pub fn upscale(&self, k: u32) -> MaskImage {
        MaskImage::from_fn(self.width * k, self.height * k, |c, r| self.get(c / k, r / k))
            .expect("non-empty dimensions")
    }
}

impl Serialize for MaskImage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rle().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaskImage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rle = Rle::deserialize(d)?;
        MaskImage::from_rle(&rle).map_err(serde::de::Error::custom)
    }
}

fn axis_index(v: f64, n: u32) -> u32 {
    let i = (v * n as f64).floor();
    if i <= 0.0 {
        0
    } else if i >= (n - 1) as f64 {
        n - 1
    } else {
        i as u32
    }
}

/// True iff the pixel under `p` is inside the mask.
pub fn contains(mask: &MaskImage, p: Point) -> bool {
    mask.contains(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub n_points: usize,
    pub n_inside: usize,
    pub accuracy: f64,
    pub empty_prediction: bool,
}

/// Fraction of points inside the mask; empty predictions score zero.
pub fn score_image(image_id: &str, mask: &MaskImage, points: &PointSet) -> ImageScore {
    let n_points = points.len();
    let n_inside = points.iter().filter(|&&p| mask.contains(p)).count();
    let (accuracy, empty_prediction) = if n_points == 0 {
        (0.0, true)
    } else {
        (n_inside as f64 / n_points as f64, false)
    };
    ImageScore {
        image_id: image_id.to_string(),
        n_points,
        n_inside,
        accuracy,
        empty_prediction,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub run_id: String,
    pub scores: Vec<ImageScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMean {
    pub run_id: String,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_run: Vec<RunMean>,
    pub mean: f64,
    /// Sample standard deviation across runs; 0 when there is a single run.
    pub spread: f64,
    pub single_run: bool,
}

/// Mean over images within each run, then mean and sample standard deviation
/// over runs.
pub fn aggregate(runs: &[RunScores]) -> Result<EvalReport, MaskError> {
    let first = runs.first().ok_or(MaskError::NoRuns)?;
    let ids = |r: &RunScores| -> BTreeSet<String> {
        r.scores.iter().map(|s| s.image_id.clone()).collect()
    };
    let reference = ids(first);
    let mismatched: Vec<String> = runs
        .iter()
        .filter(|r| ids(r) != reference || r.scores.len() != first.scores.len())
        .map(|r| r.run_id.clone())
        .collect();
    if !mismatched.is_empty() {
        return Err(MaskError::RunMismatch(mismatched));
    }
    let mut per_run = Vec::with_capacity(runs.len());
    for r in runs {
        if r.scores.is_empty() {
            return Err(MaskError::EmptyRun(r.run_id.clone()));
        }
        let mean = r.scores.iter().map(|s| s.accuracy).sum::<f64>() / r.scores.len() as f64;
        per_run.push(RunMean {
            run_id: r.run_id.clone(),
            mean,
        });
    }
    let n = per_run.len() as f64;
    let mean = per_run.iter().map(|r| r.mean).sum::<f64>() / n;
    let single_run = per_run.len() == 1;
    let spread = if single_run {
        0.0
    } else {
        let ss: f64 = per_run.iter().map(|r| (r.mean - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Ok(EvalReport {
        per_run,
        mean,
        spread,
        single_run,
    })
}
