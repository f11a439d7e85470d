//! Deterministic synthetic images and datasets for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::path::Path;

use crate::imaging::{Frame, ImageStack};
use crate::ml::Dataset;

pub const BACKGROUND: f32 = 0.1;
pub const FOREGROUND: f32 = 0.8;

/// Gray frame with filled disks (pixel centers within `r` of a center).
pub fn disk_frame(width: usize, height: usize, centers: &[(f64, f64)], r: f64) -> Frame {
    let mut px = vec![BACKGROUND; width * height];
    for y in 0..height {
        for x in 0..width {
            let (px_x, px_y) = (x as f64 + 0.5, y as f64 + 0.5);
            if centers.iter().any(|&(cx, cy)| (px_x - cx).powi(2) + (px_y - cy).powi(2) <= r * r) {
                px[y * width + x] = FOREGROUND;
            }
        }
    }
    Frame::gray(width, height, px).expect("valid shape")
}

/// Specification of the drifting-disk timelapse.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskTimelapse {
    pub width: usize,
    pub height: usize,
    pub radius: f64,
    pub starts: Vec<(f64, f64)>,
    /// Per-frame displacement of each disk.
    pub drift: Vec<(f64, f64)>,
    pub frames: usize,
}

impl Default for DiskTimelapse {
    fn default() -> Self {
        DiskTimelapse {
            width: 160,
            height: 160,
            radius: 15.0,
            starts: vec![(40.0, 40.0), (115.0, 45.0), (60.0, 115.0)],
            drift: vec![(3.0, 2.0), (-2.0, 3.0), (4.0, -1.0)],
            frames: 5,
        }
    }
}

impl DiskTimelapse {
    pub fn centers(&self, frame: usize) -> Vec<(f64, f64)> {
        self.starts
            .iter()
            .zip(&self.drift)
            .map(|(&(x, y), &(dx, dy))| (x + dx * frame as f64, y + dy * frame as f64))
            .collect()
    }

    pub fn stack(&self) -> ImageStack {
        let frames = (0..self.frames).map(|t| disk_frame(self.width, self.height, &self.centers(t), self.radius)).collect();
        ImageStack::new(frames, None, "synthetic:disks").expect("uniform frames")
    }
}

/// Writes a stack as a multi-page 16-bit TIFF (gray, RGB or RGBA).
pub fn write_tiff(stack: &ImageStack, path: impl AsRef<Path>) -> std::io::Result<()> {
    use tiff::encoder::{colortype, TiffEncoder};
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = TiffEncoder::new(file).map_err(std::io::Error::other)?;
    let (w, h) = (stack.width() as u32, stack.height() as u32);
    for frame in stack.frames() {
        let data: Vec<u16> = frame.pixels().iter().map(|v| (v * 65535.0).round() as u16).collect();
        let r = match frame.channels() {
            1 => enc.write_image::<colortype::Gray16>(w, h, &data),
            3 => enc.write_image::<colortype::RGB16>(w, h, &data),
            _ => enc.write_image::<colortype::RGBA16>(w, h, &data),
        };
        r.map_err(std::io::Error::other)?;
    }
    Ok(())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Two unit-variance 2-D Gaussian blobs with centers 10 sigma apart,
/// labels `a`/`b` alternating.
pub fn separable_blobs(n_per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = 10.0 / std::f64::consts::SQRT_2;
    let mut x = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let c = (i % 2) as f64;
        x.push(vec![c * offset + normal(&mut rng), c * offset + normal(&mut rng)]);
        labels.push(if i % 2 == 0 { "a".to_string() } else { "b".to_string() });
    }
    Dataset::classification(vec!["f0".into(), "f1".into()], x, labels).expect("consistent shapes")
}
