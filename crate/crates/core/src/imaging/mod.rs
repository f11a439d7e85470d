//! Image and timelapse loading, content hashing and raster utilities.
//!
//! Intensities are normalized to `[0, 1]` at load time by `1 / (2^bit_depth - 1)`;
//! the original bit depth is kept so the raw values (and therefore the content
//! hash) can be reproduced exactly.

mod components;
mod hash;
mod load;
mod raster;
mod threshold;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rect;

pub use components::{label_components, ComponentLabels};
pub use hash::{content_hash, sha256, Digest};
pub use load::{load_stack, load_stack_from_bytes, LayoutHint};
pub use raster::{fill_holes, rasterize_polygon, signed_area, trace_contour, BinaryMask};
pub use threshold::otsu_threshold;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("cannot read image {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("unsupported channel count {0} (expected 1, 3 or 4)")]
    UnsupportedChannels(usize),
    #[error("unsupported bit depth {0} (expected 8 or 16)")]
    UnsupportedBitDepth(u32),
    #[error("frame {index} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("image stack has no frames")]
    Empty,
    #[error("polygon needs at least 3 vertices, got {0}")]
    DegeneratePolygon(usize),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("downsampling rate must be >= 1")]
    InvalidRate,
    #[error("invalid ROI {0:?} for a {1}x{2} frame")]
    InvalidRoi(Rect, usize, usize),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

/// One image plane set: `height × width × channels`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    original_bit_depth: u8,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f32>,
        original_bit_depth: u8,
    ) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(ImagingError::UnsupportedChannels(channels));
        }
        if !matches!(original_bit_depth, 8 | 16) {
            return Err(ImagingError::UnsupportedBitDepth(original_bit_depth as u32));
        }
        if width == 0 || height == 0 {
            return Err(ImagingError::Empty);
        }
        if pixels.len() != width * height * channels {
            return Err(ImagingError::Decode(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                width * height * channels
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImagingError::Decode("pixel values outside [0, 1]".into()));
        }
        Ok(Self { height, width, channels, pixels, original_bit_depth })
    }

    /// Single-channel frame from luminance values.
    pub fn gray(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        Self::new(width, height, 1, pixels, 8)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn original_bit_depth(&self) -> u8 {
        self.original_bit_depth
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width as i64, self.height as i64)
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Luminance of one pixel (Rec. 709 weights for RGB/RGBA, alpha ignored).
    #[inline]
    pub fn luminance_at(&self, x: usize, y: usize) -> f32 {
        let base = (y * self.width + x) * self.channels;
        match self.channels {
            1 => self.pixels[base],
            _ => {
                0.2125 * self.pixels[base] + 0.7154 * self.pixels[base + 1] + 0.0721 * self.pixels[base + 2]
            }
        }
    }

    pub fn luminance(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.luminance_at(x, y).clamp(0.0, 1.0));
            }
        }
        out
    }

    /// Copy of the pixels inside `rect`, which must lie inside the frame.
    pub fn crop(&self, rect: &Rect) -> Result<Frame> {
        if !rect.within(self.width, self.height) {
            return Err(ImagingError::InvalidRoi(*rect, self.width, self.height));
        }
        let (w, h) = (rect.width() as usize, rect.height() as usize);
        let mut pixels = Vec::with_capacity(w * h * self.channels);
        for y in rect.y_min as usize..rect.y_max as usize {
            let start = (y * self.width + rect.x_min as usize) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + w * self.channels]);
        }
        Ok(Frame { height: h, width: w, channels: self.channels, pixels, original_bit_depth: self.original_bit_depth })
    }

    /// Raw integer sample values at the original bit depth.
    pub fn raw_samples(&self) -> impl Iterator<Item = u16> + '_ {
        let scale = ((1u32 << self.original_bit_depth) - 1) as f32;
        self.pixels.iter().map(move |v| (v * scale).round() as u16)
    }
}

/// An image or timelapse: one or more frames of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    frames: Vec<Frame>,
    pixel_scale: Option<f64>,
    source_path: String,
    content_hash: Digest,
}

impl ImageStack {
    pub fn new(frames: Vec<Frame>, pixel_scale: Option<f64>, source_path: impl Into<String>) -> Result<Self> {
        let first = frames.first().ok_or(ImagingError::Empty)?;
        let expected = first.shape();
        for (index, f) in frames.iter().enumerate() {
            if f.shape() != expected {
                return Err(ImagingError::ShapeMismatch { index, expected, got: f.shape() });
            }
        }
        let mut stack = Self { frames, pixel_scale, source_path: source_path.into(), content_hash: Digest::default() };
        stack.content_hash = content_hash(&stack);
        Ok(stack)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> Option<&Frame> {
        self.frames.get(index)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels
    }

    pub fn pixel_scale(&self) -> Option<f64> {
        self.pixel_scale
    }

    pub fn with_pixel_scale(mut self, scale: Option<f64>) -> Self {
        self.pixel_scale = scale;
        self
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn content_hash(&self) -> Digest {
        self.content_hash
    }
}

/// A co-registered auxiliary image (e.g. a fluorescence stain).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalChannel {
    pub name: String,
    pub stack: ImageStack,
}

impl SignalChannel {
    /// Attaches `stack` as a signal of `primary`; dimensions must match frame-for-frame.
    pub fn new(name: impl Into<String>, stack: ImageStack, primary: &ImageStack) -> Result<Self> {
        if stack.len() != primary.len() || stack.width() != primary.width() || stack.height() != primary.height() {
            return Err(ImagingError::ShapeMismatch {
                index: 0,
                expected: (primary.height(), primary.width(), primary.len()),
                got: (stack.height(), stack.width(), stack.len()),
            });
        }
        Ok(Self { name: name.into(), stack })
    }
}

/// Block-mean pooling with `rate × rate` blocks; edge blocks average the pixels
/// that exist. `rate == 1` returns a copy.
pub fn downsample_frame(frame: &Frame, rate: usize) -> Result<Frame> {
    if rate == 0 {
        return Err(ImagingError::InvalidRate);
    }
    if rate == 1 {
        return Ok(frame.clone());
    }
    let (w, h, c) = (frame.width, frame.height, frame.channels);
    let (ow, oh) = (w.div_ceil(rate), h.div_ceil(rate));
    let mut out = vec![0f32; ow * oh * c];
    for oy in 0..oh {
        let (y0, y1) = (oy * rate, ((oy + 1) * rate).min(h));
        for ox in 0..ow {
            let (x0, x1) = (ox * rate, ((ox + 1) * rate).min(w));
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for ch in 0..c {
                let mut sum = 0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += frame.value(x, y, ch) as f64;
                    }
                }
                out[(oy * ow + ox) * c + ch] = ((sum / n) as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Frame { height: oh, width: ow, channels: c, pixels: out, original_bit_depth: frame.original_bit_depth })
}

pub fn downsample(stack: &ImageStack, rate: usize) -> Result<ImageStack> {
    if rate == 0 {
        return Err(ImagingError::InvalidRate);
    }
    if rate == 1 {
        return Ok(stack.clone());
    }
    let frames = stack.frames.iter().map(|f| downsample_frame(f, rate)).collect::<Result<Vec<_>>>()?;
    ImageStack::new(frames, stack.pixel_scale.map(|s| s * rate as f64), stack.source_path.clone())
}

/// A half-open region of interest inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub rect: Rect,
}

impl Roi {
    pub fn new(rect: Rect, width: usize, height: usize) -> Result<Self> {
        if !rect.within(width, height) {
            return Err(ImagingError::InvalidRoi(rect, width, height));
        }
        Ok(Self { rect })
    }
}
