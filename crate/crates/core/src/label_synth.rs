//! Procedural flat-color "brand label" albedo maps.
//!
//! A label is a solid background with a stack of flat primitives composited
//! on top: rectangles, ellipses, bar clusters standing in for text lines, and
//! border frames. Colors come from a per-label palette sampled uniformly in
//! HSV and converted to linear RGB. A one-pixel rim is never painted, so the
//! background stays visible on every label.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{srgb_to_linear, AlbedoImage, LinearImage};
use crate::seed;

pub const MIN_SIZE: usize = 32;
pub const MAX_SIZE: usize = 512;
pub const PALETTE_RANGE: (usize, usize) = (2, 8);
pub const ELEMENT_RANGE: (usize, usize) = (4, 40);

const SATURATION_RANGE: (f64, f64) = (0.1, 1.0);
const VALUE_RANGE: (f64, f64) = (0.15, 1.0);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub label_id: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub palette_size: usize,
    pub element_count: usize,
}

pub fn validate_size(field: &'static str, value: usize) -> Result<()> {
    if !value.is_power_of_two() || !(MIN_SIZE..=MAX_SIZE).contains(&value) {
        return Err(Error::validation(
            field,
            format!("{value} is not a power of two in [{MIN_SIZE}, {MAX_SIZE}]"),
        ));
    }
    Ok(())
}

impl LabelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.label_id.is_empty() {
            return Err(Error::validation("label_id", "must not be empty"));
        }
        validate_size("width", self.width)?;
        validate_size("height", self.height)?;
        if !(PALETTE_RANGE.0..=PALETTE_RANGE.1).contains(&self.palette_size) {
            return Err(Error::validation(
                "palette_size",
                format!("{} outside [{}, {}]", self.palette_size, PALETTE_RANGE.0, PALETTE_RANGE.1),
            ));
        }
        if !(ELEMENT_RANGE.0..=ELEMENT_RANGE.1).contains(&self.element_count) {
            return Err(Error::validation(
                "element_count",
                format!("{} outside [{}, {}]", self.element_count, ELEMENT_RANGE.0, ELEMENT_RANGE.1),
            ));
        }
        Ok(())
    }
}

/// Converts HSV (hue in degrees) to sRGB-encoded RGB in [0,1].
pub fn hsv_to_srgb(hue: f64, saturation: f64, value: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = value * saturation;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let m = value - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaletteColor {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

impl PaletteColor {
    fn sample(rng: &mut impl Rng) -> Self {
        Self {
            hue: rng.random_range(0.0..360.0),
            saturation: rng.random_range(SATURATION_RANGE.0..=SATURATION_RANGE.1),
            value: rng.random_range(VALUE_RANGE.0..=VALUE_RANGE.1),
        }
    }

    pub fn linear(&self) -> [f32; 3] {
        hsv_to_srgb(self.hue, self.saturation, self.value).map(|c| srgb_to_linear(c) as f32)
    }
}

/// Samples the label palette; index 0 is the background.
pub fn palette(spec: &LabelSpec) -> Vec<PaletteColor> {
    let mut rng = seed::rng(spec.seed);
    (0..spec.palette_size.max(1)).map(|_| PaletteColor::sample(&mut rng)).collect()
}

pub fn synth_label(spec: &LabelSpec) -> Result<AlbedoImage> {
    spec.validate()?;
    Ok(compose(spec))
}

/// Paints the label without validating the element and palette counts.
pub(crate) fn compose(spec: &LabelSpec) -> AlbedoImage {
    let mut rng = seed::rng(spec.seed);
    let colors: Vec<[f32; 3]> = (0..spec.palette_size.max(1))
        .map(|_| PaletteColor::sample(&mut rng).linear())
        .collect();
    let mut canvas = Canvas::new(spec.width, spec.height, colors[0]);
    for _ in 0..spec.element_count {
        let color = if colors.len() > 1 {
            colors[rng.random_range(1..colors.len())]
        } else {
            colors[0]
        };
        match rng.random_range(0..10u32) {
            0..=2 => canvas.random_rect(&mut rng, color),
            3..=5 => canvas.random_ellipse(&mut rng, color),
            6..=8 => canvas.random_bars(&mut rng, color),
            _ => canvas.random_frame(&mut rng, color),
        }
    }
    canvas.image
}

/// Paintable region is `[1, w-1) x [1, h-1)`.
struct Canvas {
    image: LinearImage,
    w: usize,
    h: usize,
}

impl Canvas {
    fn new(w: usize, h: usize, background: [f32; 3]) -> Self {
        Self {
            image: LinearImage::filled(w, h, background),
            w,
            h,
        }
    }

    fn inner(&self) -> (usize, usize) {
        (self.w - 2, self.h - 2)
    }

    /// Fills `[x0, x1) x [y0, y1)` clipped to the paintable region.
    fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, color: [f32; 3]) {
        let (x0, x1) = (x0.max(1), x1.min(self.w - 1));
        let (y0, y1) = (y0.max(1), y1.min(self.h - 1));
        for y in y0..y1 {
            for x in x0..x1 {
                self.image.set_pixel(x, y, color);
            }
        }
    }

    fn random_rect(&mut self, rng: &mut impl Rng, color: [f32; 3]) {
        let (iw, ih) = self.inner();
        let rw = rng.random_range(2..=(iw * 6 / 10).max(2));
        let rh = rng.random_range(2..=(ih * 6 / 10).max(2));
        let x0 = 1 + rng.random_range(0..=iw - rw);
        let y0 = 1 + rng.random_range(0..=ih - rh);
        self.fill_rect(x0, y0, x0 + rw, y0 + rh, color);
    }

    fn random_ellipse(&mut self, rng: &mut impl Rng, color: [f32; 3]) {
        let (iw, ih) = self.inner();
        let rx = rng.random_range(2..=(iw * 3 / 10).max(2));
        let ry = rng.random_range(2..=(ih * 3 / 10).max(2));
        // Centers sit on pixel centers so the center pixel is always covered.
        let cx = rng.random_range(1 + rx..=1 + iw - rx) as f64 + 0.5;
        let cy = rng.random_range(1 + ry..=1 + ih - ry) as f64 + 0.5;
        let (rxf, ryf) = (rx as f64, ry as f64);
        let x_lo = (cx - rxf).floor().max(1.0) as usize;
        let x_hi = ((cx + rxf).ceil() as usize).min(self.w - 1);
        let y_lo = (cy - ryf).floor().max(1.0) as usize;
        let y_hi = ((cy + ryf).ceil() as usize).min(self.h - 1);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let dx = (x as f64 + 0.5 - cx) / rxf;
                let dy = (y as f64 + 0.5 - cy) / ryf;
                if dx * dx + dy * dy <= 1.0 {
                    self.image.set_pixel(x, y, color);
                }
            }
        }
    }

    /// A block of 2–5 horizontal lines, each broken into word-like segments.
    fn random_bars(&mut self, rng: &mut impl Rng, color: [f32; 3]) {
        let (iw, ih) = self.inner();
        let scale = (self.w.min(self.h) / 32).max(1);
        let lines = rng.random_range(2..=5usize);
        let bar_h = rng.random_range(1..=scale + 1);
        let pitch = bar_h * 2;
        let block_h = lines * pitch - bar_h;
        let block_w = rng.random_range((iw / 4).max(4)..=(iw * 3 / 4).max(4));
        let x0 = 1 + rng.random_range(0..=iw.saturating_sub(block_w));
        let y0 = 1 + rng.random_range(0..=ih.saturating_sub(block_h));
        for line in 0..lines {
            let y = y0 + line * pitch;
            let line_w = rng.random_range(block_w / 2..=block_w).max(2);
            let mut x = x0;
            while x < x0 + line_w {
                let word = rng.random_range(2 * scale..=8 * scale);
                let end = (x + word).min(x0 + line_w);
                self.fill_rect(x, y, end, y + bar_h, color);
                x = end + rng.random_range(scale..=2 * scale);
            }
        }
    }

    fn random_frame(&mut self, rng: &mut impl Rng, color: [f32; 3]) {
        let (iw, ih) = self.inner();
        let inset = 1 + rng.random_range(0..=iw.min(ih) / 8);
        let thickness = rng.random_range(1..=(self.w.min(self.h) / 32).max(1));
        let (x0, y0) = (inset, inset);
        let (x1, y1) = (self.w - inset, self.h - inset);
        self.fill_rect(x0, y0, x1, y0 + thickness, color);
        self.fill_rect(x0, y1 - thickness, x1, y1, color);
        self.fill_rect(x0, y0, x0 + thickness, y1, color);
        self.fill_rect(x1 - thickness, y0, x1, y1, color);
    }
}

/// Zero-padded decimal id, at least four digits wide.
pub fn label_id(index: usize, count: usize) -> String {
    let digits = count.saturating_sub(1).max(1).to_string().len().max(4);
    format!("{index:0digits$}")
}

/// Per-label seed: `mix_tagged(master_seed, "label", index)`.
pub fn label_seed(master_seed: u64, index: usize) -> u64 {
    seed::mix_tagged(master_seed, "label", index as u64)
}

pub fn label_spec(master_seed: u64, index: usize, count: usize, width: usize, height: usize) -> LabelSpec {
    let seed = label_seed(master_seed, index);
    // Complexity draws use a stream separate from the one compose() consumes.
    let mut rng = seed::rng(seed::mix_tagged(seed, "complexity", 0));
    LabelSpec {
        label_id: label_id(index, count),
        seed,
        width,
        height,
        palette_size: rng.random_range(PALETTE_RANGE.0..=PALETTE_RANGE.1),
        element_count: rng.random_range(ELEMENT_RANGE.0..=ELEMENT_RANGE.1),
    }
}

pub fn sample_label_batch(
    master_seed: u64,
    count: usize,
    width: usize,
    height: usize,
) -> Result<Vec<(LabelSpec, AlbedoImage)>> {
    if count == 0 {
        return Err(Error::validation("count", "must be at least 1"));
    }
    validate_size("width", width)?;
    validate_size("height", height)?;
    (0..count)
        .map(|i| {
            let spec = label_spec(master_seed, i, count, width, height);
            let img = synth_label(&spec)?;
            Ok((spec, img))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn spec(seed: u64) -> LabelSpec {
        LabelSpec {
            label_id: "0007".into(),
            seed,
            width: 64,
            height: 64,
            palette_size: 4,
            element_count: 12,
        }
    }

    fn distinct_colors(img: &LinearImage) -> usize {
        img.pixels()
            .map(|p| p.map(f32::to_bits))
            .collect::<HashSet<_>>()
            .len()
    }

    #[test]
    fn deterministic_for_equal_specs() {
        let a = synth_label(&spec(7)).unwrap();
        let b = synth_label(&spec(7)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_elements_leaves_background() {
        let s = LabelSpec {
            element_count: 0,
            ..spec(11)
        };
        let img = compose(&s);
        let bg = palette(&s)[0].linear();
        assert!(img.pixels().all(|p| p == bg));
    }

    #[test]
    fn gamut_and_diversity_over_many_specs() {
        for seed in 0..200 {
            for palette_size in [2, 5, 8] {
                let s = LabelSpec {
                    palette_size,
                    element_count: 1 + (seed as usize % 40),
                    ..spec(seed)
                };
                let img = compose(&s);
                assert!(img.in_gamut());
                assert!(distinct_colors(&img) >= 2, "seed {seed}");
            }
        }
    }

    #[test]
    fn validation_names_the_field() {
        let cases: [(LabelSpec, &str); 5] = [
            (LabelSpec { width: 48, ..spec(0) }, "width"),
            (LabelSpec { height: 1024, ..spec(0) }, "height"),
            (LabelSpec { palette_size: 9, ..spec(0) }, "palette_size"),
            (LabelSpec { element_count: 3, ..spec(0) }, "element_count"),
            (LabelSpec { label_id: String::new(), ..spec(0) }, "label_id"),
        ];
        for (s, field) in cases {
            match synth_label(&s) {
                Err(Error::Validation { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected validation error on {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_srgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_srgb(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_srgb(240.0, 1.0, 1.0), [0.0, 0.0, 1.0]);
        assert_eq!(hsv_to_srgb(77.0, 0.0, 0.5), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn label_ids_are_zero_padded() {
        assert_eq!(label_id(3, 150), "0003");
        assert_eq!(label_id(12345, 20000), "12345");
        assert_eq!(label_id(7, 100_000), "00007");
    }

    #[test]
    fn batch_of_150_has_unique_ids() {
        let batch = sample_label_batch(0, 150, 32, 32).unwrap();
        let ids: HashSet<_> = batch.iter().map(|(s, _)| s.label_id.clone()).collect();
        assert_eq!(ids.len(), 150);
        assert!(batch.iter().enumerate().all(|(i, (s, _))| s.label_id == label_id(i, 150)));
    }

    #[test]
    fn master_seed_changes_images() {
        let a = sample_label_batch(0, 10, 32, 32).unwrap();
        let b = sample_label_batch(1, 10, 32, 32).unwrap();
        assert!(a.iter().zip(&b).any(|((_, x), (_, y))| x.data() != y.data()));
        let c = sample_label_batch(0, 1, 32, 32).unwrap();
        let d = sample_label_batch(0, 1, 32, 32).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn background_hues_are_spread() {
        let batch = sample_label_batch(42, 120, 32, 32).unwrap();
        let mut buckets = [0usize; 6];
        for (s, _) in &batch {
            let hue = palette(s)[0].hue;
            buckets[((hue / 60.0) as usize).min(5)] += 1;
        }
        let max = *buckets.iter().max().unwrap();
        assert!(max * 10 <= batch.len() * 4, "{buckets:?}");
    }

    #[test]
    fn batch_rejects_zero_count() {
        assert!(sample_label_batch(0, 0, 32, 32).is_err());
    }
}
