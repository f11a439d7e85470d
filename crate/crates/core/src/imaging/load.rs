use std::io::Cursor;
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::ColorType;

use super::{Frame, ImageStack, ImagingError, Result};

/// How multi-page files are interpreted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutHint {
    /// Every page becomes a frame.
    #[default]
    Timelapse,
    /// Only the first page is read.
    SingleFrame,
}

pub fn load_stack(path: impl AsRef<Path>, layout_hint: Option<LayoutHint>) -> Result<ImageStack> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImagingError::Io { path: path.display().to_string(), source })?;
    let mut stack = load_stack_from_bytes(&bytes, layout_hint)?;
    stack.source_path = path.display().to_string();
    Ok(stack)
}

/// Decodes PNG or (multi-page) TIFF bytes, sniffing the format from the magic.
pub fn load_stack_from_bytes(bytes: &[u8], layout_hint: Option<LayoutHint>) -> Result<ImageStack> {
    let hint = layout_hint.unwrap_or_default();
    let frames = if bytes.starts_with(b"\x89PNG") {
        vec![decode_png(bytes)?]
    } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
        decode_tiff(bytes, hint)?
    } else {
        return Err(ImagingError::Decode("unrecognized format (expected PNG or TIFF)".into()));
    };
    ImageStack::new(frames, None, "")
}

fn decode_png(bytes: &[u8]) -> Result<Frame> {
    use image::DynamicImage as D;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImagingError::Decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, depth, raw): (usize, u8, Vec<u16>) = match img {
        D::ImageLuma8(b) => (1, 8, b.into_raw().into_iter().map(u16::from).collect()),
        D::ImageRgb8(b) => (3, 8, b.into_raw().into_iter().map(u16::from).collect()),
        D::ImageRgba8(b) => (4, 8, b.into_raw().into_iter().map(u16::from).collect()),
        D::ImageLuma16(b) => (1, 16, b.into_raw()),
        D::ImageRgb16(b) => (3, 16, b.into_raw()),
        D::ImageRgba16(b) => (4, 16, b.into_raw()),
        D::ImageLumaA8(_) | D::ImageLumaA16(_) => return Err(ImagingError::UnsupportedChannels(2)),
        other => return Err(ImagingError::Decode(format!("unsupported PNG color type {:?}", other.color()))),
    };
    frame_from_raw(w, h, channels, depth, &raw)
}

fn decode_tiff(bytes: &[u8], hint: LayoutHint) -> Result<Vec<Frame>> {
    let err = |e: tiff::TiffError| ImagingError::Decode(e.to_string());
    let mut decoder = Decoder::new(Cursor::new(bytes)).map_err(err)?;
    let mut frames = Vec::new();
    loop {
        let (w, h) = decoder.dimensions().map_err(err)?;
        let (channels, depth) = match decoder.colortype().map_err(err)? {
            ColorType::Gray(d) => (1, d),
            ColorType::RGB(d) => (3, d),
            ColorType::RGBA(d) => (4, d),
            ColorType::GrayA(_) => return Err(ImagingError::UnsupportedChannels(2)),
            other => return Err(ImagingError::Decode(format!("unsupported TIFF color type {other:?}"))),
        };
        let raw: Vec<u16> = match decoder.read_image().map_err(err)? {
            DecodingResult::U8(v) => v.into_iter().map(u16::from).collect(),
            DecodingResult::U16(v) => v,
            _ => return Err(ImagingError::UnsupportedBitDepth(depth as u32)),
        };
        if !matches!(depth, 8 | 16) {
            return Err(ImagingError::UnsupportedBitDepth(depth as u32));
        }
        let frame = frame_from_raw(w as usize, h as usize, channels, depth, &raw)?;
        if let Some(first) = frames.first().map(Frame::shape) {
            if frame.shape() != first {
                return Err(ImagingError::ShapeMismatch { index: frames.len(), expected: first, got: frame.shape() });
            }
        }
        frames.push(frame);
        if hint == LayoutHint::SingleFrame || !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(err)?;
    }
    Ok(frames)
}

fn frame_from_raw(w: usize, h: usize, channels: usize, depth: u8, raw: &[u16]) -> Result<Frame> {
    let full = ((1u32 << depth) - 1) as f32;
    Frame::new(w, h, channels, raw.iter().map(|&v| v as f32 / full).collect(), depth)
}
