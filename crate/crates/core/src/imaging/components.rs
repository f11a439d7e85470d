/// 8-connected component labelling of a boolean raster.
#[derive(Debug, Clone)]
pub struct ComponentLabels {
    pub width: usize,
    pub height: usize,
    /// 0 = background, otherwise component index + 1, numbered in raster order
    /// of each component's first pixel.
    pub labels: Vec<u32>,
    /// Pixel count per component.
    pub sizes: Vec<usize>,
}

impl ComponentLabels {
    /// Index of the largest component; ties go to the first in raster order.
    pub fn largest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.map_or(true, |b| s > self.sizes[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn bbox(&self, component: usize) -> (usize, usize, usize, usize) {
        let label = component as u32 + 1;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.labels[y * self.width + x] == label {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0, y0, x1, y1)
    }
}

pub fn label_components(width: usize, height: usize, fg: &[bool]) -> ComponentLabels {
    let mut labels = vec![0u32; width * height];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..width * height {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = ((p % width) as isize, (p / width) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let q = ny as usize * width + nx as usize;
                    if fg[q] && labels[q] == 0 {
                        labels[q] = label;
                        stack.push(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    ComponentLabels { width, height, labels, sizes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pixels_are_connected() {
        let fg = [true, false, false, true];
        let c = label_components(2, 2, &fg);
        assert_eq!(c.sizes, vec![2]);
    }

    #[test]
    fn separate_blobs() {
        #[rustfmt::skip]
        let fg = [
            true, true, false, false, false,
            false, false, false, true, true,
            false, false, false, true, true,
        ];
        let c = label_components(5, 3, &fg);
        assert_eq!(c.sizes, vec![2, 4]);
        assert_eq!(c.largest(), Some(1));
        assert_eq!(c.bbox(1), (3, 1, 5, 3));
    }
}
