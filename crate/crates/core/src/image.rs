//! Linear-RGB float images and their 8-bit sRGB disk encoding.
//!
//! The transfer function is the IEC 61966-2-1 piecewise sRGB curve:
//! encode `c <= 0.0031308 ? 12.92 c : 1.055 c^(1/2.4) - 0.055`,
//! decode `s <= 0.04045 ? s / 12.92 : ((s + 0.055) / 1.055)^2.4`.

use std::path::Path;
use std::sync::OnceLock;

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

const SRGB_LINEAR_CUTOFF: f64 = 0.003_130_8;
const SRGB_ENCODED_CUTOFF: f64 = 0.040_45;
const SRGB_SLOPE: f64 = 12.92;
const SRGB_A: f64 = 0.055;
const SRGB_GAMMA: f64 = 2.4;

pub fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= SRGB_LINEAR_CUTOFF {
        SRGB_SLOPE * c
    } else {
        (1.0 + SRGB_A) * c.powf(1.0 / SRGB_GAMMA) - SRGB_A
    }
}

pub fn srgb_to_linear(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    if s <= SRGB_ENCODED_CUTOFF {
        s / SRGB_SLOPE
    } else {
        ((s + SRGB_A) / (1.0 + SRGB_A)).powf(SRGB_GAMMA)
    }
}

fn decode_lut() -> &'static [f32; 256] {
    static LUT: OnceLock<[f32; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [0.0f32; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            *v = srgb_to_linear(i as f64 / 255.0) as f32;
        }
        lut
    })
}

/// Quantizes a linear value to the nearest 8-bit sRGB code.
pub fn encode_u8(c: f32) -> u8 {
    (linear_to_srgb(c as f64) * 255.0).round() as u8
}

pub fn decode_u8(code: u8) -> f32 {
    decode_lut()[code as usize]
}

/// An H×W×3 linear-RGB image stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Ground-truth albedo; flat colors, no illumination.
pub type AlbedoImage = LinearImage;
/// An albedo observed under lighting; the translator's input.
pub type LitImage = LinearImage;

impl LinearImage {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} values cannot form a {width}x{height}x3 image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// True when every value is finite and within [0,1].
    pub fn in_gamut(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn to_srgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| encode_u8(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_srgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| decode_u8(b)).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_srgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Loads any supported image file, dropping alpha, decoding sRGB to linear.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_srgb8(&img.to_rgb8()))
    }

    /// Resamples with a bilinear (triangle) filter in linear space.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length matches dimensions");
        let out = image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        let mut img = Self {
            width,
            height,
            data: out.into_raw(),
        };
        img.clamp_unit();
        img
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
    }
}
