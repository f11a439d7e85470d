use super::{Session, StoreError};
use crate::detection::DetectionError;
use crate::geometry::Rect;

/// Label image of `frame`: each pixel holds the ID of the primary mask
/// covering it, 0 for background. Masks are painted in descending ID order,
/// so on overlap the lowest ID, painted last, wins.
pub fn label_image(session: &Session, frame: usize) -> Result<Vec<u64>, StoreError> {
    if frame >= session.image.frames {
        return Err(DetectionError::UnknownFrame(frame).into());
    }
    let (w, h) = (session.image.width, session.image.height);
    let bounds = Rect::new(0, 0, w as i64, h as i64);
    let mut masks: Vec<_> = session.primary_masks(frame).filter(|m| session.is_visible(m.detection_id)).collect();
    masks.sort_by(|a, b| b.detection_id.cmp(&a.detection_id));
    let mut out = vec![0u64; w * h];
    for m in masks {
        let Ok(r) = crate::imaging::rasterize_polygon(&m.vertices, &bounds) else { continue };
        for (x, y) in r.pixels() {
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                out[y as usize * w + x as usize] = m.detection_id.0;
            }
        }
    }
    Ok(out)
}

/// NPY v1.0 file of the frame's label image: `<u2`, or `<u4` when an ID
/// exceeds 65535.
pub fn export_npy(session: &Session, frame: usize) -> Result<Vec<u8>, StoreError> {
    let labels = label_image(session, frame)?;
    let max = labels.iter().copied().max().unwrap_or(0);
    if max > u32::MAX as u64 {
        return Err(StoreError::Invalid(format!("detection id {max} does not fit a u4 label image")));
    }
    let wide = max > u16::MAX as u64;
    let descr = if wide { "<u4" } else { "<u2" };
    let mut header = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': ({}, {}), }}",
        session.image.height, session.image.width
    );
    // magic(6) + version(2) + len(2) + header + '\n' is a multiple of 64
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + labels.len() * 4);
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in labels {
        if wide {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
    }
    Ok(out)
}
