//! Raster image loading, seeded Gaussian degradation, box overlays, and
//! saving.
//!
//! All operations are pure transforms over [`RasterImage`]: degradation and
//! overlay rendering never change the image shape, and identical inputs
//! (including the noise seed) produce bit-identical outputs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelRect;
use crate::rand_util::NormalStream;

/// Channels per pixel; images are always 8-bit RGB internally.
pub const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ImageryError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to encode image: {0}")]
    Encode(image::ImageError),
    #[error("unsupported image format tag `{0}` (expected `png` or `jpeg`)")]
    UnsupportedFormat(String),
    #[error("pixel buffer length {len} does not match {width}x{height}x{channels}")]
    ShapeMismatch {
        len: usize,
        width: u32,
        height: u32,
        channels: usize,
    },
}

/// Decoded 8-bit RGB pixel grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    /// Wraps a row-major RGB buffer, checking the shape invariant.
    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageryError> {
        let expected = width as usize * height as usize * CHANNELS;
        if pixels.len() != expected {
            return Err(ImageryError::ShapeMismatch {
                len: pixels.len(),
                width,
                height,
                channels: CHANNELS,
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y) -> [r, g, b]` at every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| color)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set_pixel(&mut self, x: u32, y: u32, color: [u8; 3]) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * CHANNELS
    }
}

/// Additive Gaussian noise parameters. `seed` pins the sample stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub std_dev: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(mean: f64, std_dev: f64, seed: u64) -> Self {
        Self {
            mean,
            std_dev,
            seed,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.std_dev >= 0.0 && self.mean.is_finite() && self.std_dev.is_finite()
    }
}

/// Rectangle outline style for rendered detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub color: [u8; 3],
    pub thickness: u32,
}

impl Default for OverlayStyle {
    /// Red boxes, two pixels thick.
    fn default() -> Self {
        Self {
            color: [255, 0, 0],
            thickness: 2,
        }
    }
}

/// Output formats for [`save_image`]. PNG is lossless and round-trips
/// bit-exactly through [`load_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormatTag {
    Png,
    Jpeg,
}

impl FromStr for ImageFormatTag {
    type Err = ImageryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(Self::Png),
            "jpg" | "jpeg" => Ok(Self::Jpeg),
            other => Err(ImageryError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for ImageFormatTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Png => write!(f, "png"),
            Self::Jpeg => write!(f, "jpeg"),
        }
    }
}

/// Decodes a raster file to 3-channel 8-bit RGB (grayscale expanded, alpha
/// dropped).
pub fn load_image(path: &Path) -> Result<RasterImage, ImageryError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| ImageryError::Read {
        path: display.clone(),
        source,
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|source| ImageryError::Decode {
        path: display,
        source,
    })?;
    let rgb = decoded.to_rgb8();
    let (width, height) = rgb.dimensions();
    RasterImage::from_raw(width, height, rgb.into_raw())
}

/// Saves an image in the given format. The parent directory must exist.
pub fn save_image(
    img: &RasterImage,
    path: &Path,
    format: ImageFormatTag,
) -> Result<(), ImageryError> {
    let fmt = match format {
        ImageFormatTag::Png => image::ImageFormat::Png,
        ImageFormatTag::Jpeg => image::ImageFormat::Jpeg,
    };
    image::save_buffer_with_format(
        path,
        &img.pixels,
        img.width,
        img.height,
        image::ExtendedColorType::Rgb8,
        fmt,
    )
    .map_err(|source| ImageryError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Encodes the image as PNG in memory (the wire payload for VLM requests).
pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>, ImageryError> {
    use image::ImageEncoder;

    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(
            &img.pixels,
            img.width,
            img.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(ImageryError::Encode)?;
    Ok(buf)
}

/// Adds per-sample Gaussian noise: `out = clamp(round(in + n), 0, 255)` with
/// `n ~ Normal(mean, std_dev)` drawn independently for every channel sample
/// from a stream seeded by `spec.seed`. Same seed, same output bytes.
pub fn degrade_gaussian(img: &RasterImage, spec: &NoiseSpec) -> RasterImage {
    let mut noise = NormalStream::new(spec.seed);
    let pixels = img
        .pixels
        .iter()
        .map(|&v| {
            let n = spec.mean + spec.std_dev * noise.next().expect("stream is infinite");
            // Half-away-from-zero rounding, then clamp into u8 range.
            (v as f64 + n).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    RasterImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// The pre-clamp noise values [`degrade_gaussian`] would add for the first
/// `count` channel samples. Test hook for verifying the noise statistics.
pub fn noise_samples(spec: &NoiseSpec, count: usize) -> Vec<f64> {
    NormalStream::new(spec.seed)
        .take(count)
        .map(|z| spec.mean + spec.std_dev * z)
        .collect()
}

/// Draws each rectangle's outline onto a copy of the image.
///
/// Corner coordinates are inclusive (a `(10,10,20,20)` box paints an 11×11
/// outline) and the band grows inward by `style.thickness`. Portions outside
/// the image are clipped; pixels away from the bands are untouched.
pub fn render_overlays(img: &RasterImage, boxes: &[PixelRect], style: &OverlayStyle) -> RasterImage {
    let mut out = img.clone();
    let thickness = style.thickness.max(1) as i64;
    let (w, h) = (img.width as i64, img.height as i64);

    for rect in boxes {
        if rect.x_min > rect.x_max || rect.y_min > rect.y_max {
            continue;
        }
        let x_lo = rect.x_min.max(0);
        let x_hi = rect.x_max.min(w - 1);
        let y_lo = rect.y_min.max(0);
        let y_hi = rect.y_max.min(h - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let on_band = x - rect.x_min < thickness
                    || rect.x_max - x < thickness
                    || y - rect.y_min < thickness
                    || rect.y_max - y < thickness;
                if on_band {
                    out.set_pixel(x as u32, y as u32, style.color);
                }
            }
        }
    }
    out
}
