//! Image-quality metrics, per-split reports and comparison grids.
//!
//! All metrics work on linear [0,1] images and accumulate in `f64`.
//! SSIM uses 8×8 uniform windows at stride 1, population (1/N) moments and
//! stabilizers C1 = 0.01², C2 = 0.03²; the score is the mean over windows
//! and channels.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::gan::{self, Generator};
use crate::image::LinearImage;

/// Returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const GRID_GUTTER: usize = 4;
pub const GRID_MARGIN: usize = 4;
/// Height of the title band: an 8-pixel glyph row with 2 pixels of padding on each side.
pub const GRID_TITLE_BAND: usize = 12;
const GLYPH: usize = 8;

fn same_shape(a: &LinearImage, b: &LinearImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Mean absolute difference over all channels.
pub fn l1_error(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    Ok(sum / a.data().len().max(1) as f64)
}

pub fn mse(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len().max(1) as f64)
}

/// Peak signal-to-noise ratio for unit peak, capped at the identical-image sentinel.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_IDENTICAL_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_IDENTICAL_DB)
    }
}

pub fn psnr(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

/// Summed-area table with a zero first row and column.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += value(x, y);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn window(&self, x: usize, y: usize, k: usize) -> f64 {
        let s = self.stride;
        self.sums[(y + k) * s + x + k] - self.sums[y * s + x + k] - self.sums[(y + k) * s + x] + self.sums[y * s + x]
    }
}

pub fn ssim(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = a.dims();
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::validation(
            "image",
            format!("{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (xa, xb) = (a.data(), b.data());
    let mut total = 0.0;
    for c in 0..3 {
        let at = |d: &[f32], x: usize, y: usize| d[(y * w + x) * 3 + c] as f64;
        let sa = Integral::new(w, h, |x, y| at(xa, x, y));
        let sb = Integral::new(w, h, |x, y| at(xb, x, y));
        let saa = Integral::new(w, h, |x, y| at(xa, x, y).powi(2));
        let sbb = Integral::new(w, h, |x, y| at(xb, x, y).powi(2));
        let sab = Integral::new(w, h, |x, y| at(xa, x, y) * at(xb, x, y));
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let ma = sa.window(x, y, SSIM_WINDOW) / n;
                let mb = sb.window(x, y, SSIM_WINDOW) / n;
                let va = saa.window(x, y, SSIM_WINDOW) / n - ma * ma;
                let vb = sbb.window(x, y, SSIM_WINDOW) / n - mb * mb;
                let cov = sab.window(x, y, SSIM_WINDOW) / n - ma * mb;
                total += ssim_window(ma, mb, va, vb, cov);
            }
        }
    }
    let windows = (w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1) * 3;
    Ok(total / windows as f64)
}

fn ssim_window(ma: f64, mb: f64, va: f64, vb: f64, cov: f64) -> f64 {
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Model,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair_id: String,
    pub l1: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl PairMetrics {
    pub fn compute(pair_id: &str, prediction: &LinearImage, truth: &LinearImage) -> Result<Self> {
        Ok(Self {
            pair_id: pair_id.to_string(),
            l1: l1_error(prediction, truth)?,
            psnr_db: psnr(prediction, truth)?,
            ssim: ssim(prediction, truth)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    /// Population statistics; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 0 {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        Some(Self { mean, median, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub l1: Summary,
    pub psnr_db: Summary,
    pub ssim: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub baseline: Baseline,
    pub split: Split,
    pub pair_count: usize,
    pub aggregates: Option<Aggregates>,
    pub per_pair: Vec<PairMetrics>,
    pub failures: Vec<PairFailure>,
}

impl MetricReport {
    /// Sorts rows by pair id and summarizes them.
    pub fn new(baseline: Baseline, split: Split, mut per_pair: Vec<PairMetrics>, mut failures: Vec<PairFailure>) -> Self {
        per_pair.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        failures.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        let column = |f: fn(&PairMetrics) -> f64| per_pair.iter().map(f).collect::<Vec<_>>();
        let aggregates = match (
            Summary::of(&column(|p| p.l1)),
            Summary::of(&column(|p| p.psnr_db)),
            Summary::of(&column(|p| p.ssim)),
        ) {
            (Some(l1), Some(psnr_db), Some(ssim)) => Some(Aggregates { l1, psnr_db, ssim }),
            _ => None,
        };
        Self {
            baseline,
            split,
            pair_count: per_pair.len(),
            aggregates,
            per_pair,
            failures,
        }
    }

    pub fn mean_l1(&self) -> Option<f64> {
        self.aggregates.map(|a| a.l1.mean)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_json().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Scores the generator and the identity predictor on one split.
/// Per-pair failures are collected rather than aborting the run.
pub fn evaluate(generator: &Generator<f32>, dataset: &Dataset, split: Split) -> Result<(MetricReport, MetricReport)> {
    let entries: Vec<_> = dataset.manifest.entries_in(split).collect();
    if entries.is_empty() {
        return Err(Error::validation("split", format!("the {split} split has no pairs")));
    }
    type Scored = std::result::Result<(PairMetrics, PairMetrics), PairFailure>;
    let scored: Vec<Scored> = entries
        .par_iter()
        .map(|entry| {
            let fail = |e: Error| PairFailure {
                pair_id: entry.pair_id.clone(),
                error: e.to_string(),
            };
            let pair = dataset.load_entry(entry).map_err(fail)?;
            let prediction = gan::infer(generator, &pair.lit)
                .map(|p| p.resized(pair.albedo.width(), pair.albedo.height()))
                .map_err(fail)?;
            let model = PairMetrics::compute(&entry.pair_id, &prediction, &pair.albedo).map_err(fail)?;
            let identity = PairMetrics::compute(&entry.pair_id, &pair.lit, &pair.albedo).map_err(fail)?;
            Ok((model, identity))
        })
        .collect();
    let (mut model, mut identity, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    for s in scored {
        match s {
            Ok((m, i)) => {
                model.push(m);
                identity.push(i);
            }
            Err(f) => failures.push(f),
        }
    }
    Ok((
        MetricReport::new(Baseline::Model, split, model, failures.clone()),
        MetricReport::new(Baseline::Identity, split, identity, failures),
    ))
}

/// Pixel dimensions of a grid of `rows × cols` tiles of `w × h`.
pub fn grid_dims(rows: usize, cols: usize, w: usize, h: usize, titled: bool) -> (usize, usize) {
    let title = if titled { GRID_TITLE_BAND } else { 0 };
    (
        2 * GRID_MARGIN + cols * w + cols.saturating_sub(1) * GRID_GUTTER,
        2 * GRID_MARGIN + title + rows * h + rows.saturating_sub(1) * GRID_GUTTER,
    )
}

fn draw_text(canvas: &mut RgbImage, text: &str, x0: usize, y0: usize) {
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::legacy::BASIC_LEGACY.get(ch as usize).copied().unwrap_or([0; 8]);
        for (dy, bits) in glyph.iter().enumerate() {
            for dx in 0..GLYPH {
                if bits & (1 << dx) != 0 {
                    let (x, y) = ((x0 + i * GLYPH + dx) as u32, (y0 + dy) as u32);
                    if x < canvas.width() && y < canvas.height() {
                        canvas.put_pixel(x, y, Rgb([0, 0, 0]));
                    }
                }
            }
        }
    }
}

/// Tiles rows of equally sized images on a white canvas, with optional
/// column titles (one per column, truncated to the tile width).
pub fn render_grid(rows: &[Vec<&LinearImage>], column_titles: &[&str]) -> Result<RgbImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::validation("rows", "a grid needs at least one row with one image"))?;
    let (w, h) = first.dims();
    let cols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::validation("rows", format!("row {i} has {} images, expected {cols}", row.len())));
        }
        if let Some((j, img)) = row.iter().enumerate().find(|(_, img)| img.dims() != (w, h)) {
            return Err(Error::validation(
                "rows",
                format!("row {i} column {j} is {}x{}, expected {w}x{h}", img.width(), img.height()),
            ));
        }
    }
    let titled = !column_titles.is_empty();
    if titled && column_titles.len() != cols {
        return Err(Error::validation(
            "column_titles",
            format!("{} titles for {cols} columns", column_titles.len()),
        ));
    }

    let (gw, gh) = grid_dims(rows.len(), cols, w, h, titled);
    let mut canvas = RgbImage::from_pixel(gw as u32, gh as u32, Rgb([255, 255, 255]));
    let col_x = |j: usize| GRID_MARGIN + j * (w + GRID_GUTTER);
    if titled {
        let max_chars = w / GLYPH;
        for (j, title) in column_titles.iter().enumerate() {
            let text: String = title.chars().take(max_chars).collect();
            let offset = (w - text.chars().count() * GLYPH) / 2;
            draw_text(&mut canvas, &text, col_x(j) + offset, GRID_MARGIN + 2);
        }
    }
    let top = GRID_MARGIN + if titled { GRID_TITLE_BAND } else { 0 };
    for (i, row) in rows.iter().enumerate() {
        let y0 = top + i * (h + GRID_GUTTER);
        for (j, img) in row.iter().enumerate() {
            let tile = img.to_srgb8();
            image::imageops::replace(&mut canvas, &tile, col_x(j) as i64, y0 as i64);
        }
    }
    Ok(canvas)
}

pub fn export_grid(rows: &[Vec<&LinearImage>], out_path: &Path, column_titles: &[&str]) -> Result<()> {
    render_grid(rows, column_titles)?
        .save_with_format(out_path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: out_path.to_path_buf(),
            source,
        })
}
