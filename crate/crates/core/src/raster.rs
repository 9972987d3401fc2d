//! Pixel-level helpers shared by the builtin backends.

use image::RgbImage;

use crate::geometry::BBox;

pub fn luminance(p: [u8; 3]) -> u8 {
    ((299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2])) / 1000) as u8
}

pub fn gray(img: &RgbImage) -> Vec<u8> {
    img.pixels().map(|p| luminance(p.0)).collect()
}

/// An 8-connected foreground component with first and second pixel moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub x0: u32,
    pub y0: u32,
    /// Inclusive.
    pub x1: u32,
    /// Inclusive.
    pub y1: u32,
    pub area: u64,
    sum_x: f64,
    sum_y: f64,
    sum_xx: f64,
    sum_yy: f64,
    sum_xy: f64,
}

impl Component {
    fn seed(x: u32, y: u32) -> Self {
        Self {
            x0: x,
            y0: y,
            x1: x,
            y1: y,
            area: 0,
            sum_x: 0.0,
            sum_y: 0.0,
            sum_xx: 0.0,
            sum_yy: 0.0,
            sum_xy: 0.0,
        }
    }

    fn add(&mut self, x: u32, y: u32) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x);
        self.y1 = self.y1.max(y);
        self.area += 1;
        let (fx, fy) = (f64::from(x), f64::from(y));
        self.sum_x += fx;
        self.sum_y += fy;
        self.sum_xx += fx * fx;
        self.sum_yy += fy * fy;
        self.sum_xy += fx * fy;
    }

    pub fn merge(&mut self, other: &Component) {
        self.x0 = self.x0.min(other.x0);
        self.y0 = self.y0.min(other.y0);
        self.x1 = self.x1.max(other.x1);
        self.y1 = self.y1.max(other.y1);
        self.area += other.area;
        self.sum_x += other.sum_x;
        self.sum_y += other.sum_y;
        self.sum_xx += other.sum_xx;
        self.sum_yy += other.sum_yy;
        self.sum_xy += other.sum_xy;
    }

    /// Pixel-exact bounding box in continuous coordinates.
    pub fn bbox(&self) -> BBox {
        BBox::from_corners(
            f64::from(self.x0),
            f64::from(self.y0),
            f64::from(self.x1 + 1),
            f64::from(self.y1 + 1),
        )
        .expect("components cover at least one pixel")
    }

    pub fn bbox_area(&self) -> u64 {
        u64::from(self.x1 - self.x0 + 1) * u64::from(self.y1 - self.y0 + 1)
    }

    /// Fraction of the bounding box covered by the component.
    pub fn fill_ratio(&self) -> f64 {
        self.area as f64 / self.bbox_area() as f64
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.area as f64;
        (self.sum_x / n, self.sum_y / n)
    }

    /// Ratio of the major to the minor axis of the moment ellipse (1 for a disc).
    pub fn elongation(&self) -> f64 {
        let n = self.area as f64;
        let (mx, my) = self.centroid();
        // Pixel-area variance term keeps single-pixel-thick shapes finite.
        let cxx = self.sum_xx / n - mx * mx + 1.0 / 12.0;
        let cyy = self.sum_yy / n - my * my + 1.0 / 12.0;
        let cxy = self.sum_xy / n - mx * my;
        let tr = cxx + cyy;
        let disc = ((cxx - cyy).powi(2) + 4.0 * cxy * cxy).sqrt();
        let major = (tr + disc) / 2.0;
        let minor = ((tr - disc) / 2.0).max(1e-12);
        (major / minor).sqrt()
    }

    /// Chebyshev gap between bounding boxes in pixels; 0 when they touch or overlap.
    pub fn gap(&self, other: &Component) -> u32 {
        let gx = other.x0.saturating_sub(self.x1 + 1).max(self.x0.saturating_sub(other.x1 + 1));
        let gy = other.y0.saturating_sub(self.y1 + 1).max(self.y0.saturating_sub(other.y1 + 1));
        gx.max(gy)
    }
}

/// Labels 8-connected `true` pixels. Returns the per-pixel label map (`u32::MAX` for background)
/// and the components in raster order of their first pixel.
pub fn label_components(mask: &[bool], width: u32, height: u32) -> (Vec<u32>, Vec<Component>) {
    let (w, h) = (width as usize, height as usize);
    debug_assert_eq!(mask.len(), w * h);
    let mut labels = vec![u32::MAX; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || labels[start] != u32::MAX {
            continue;
        }
        let label = comps.len() as u32;
        let mut comp = Component::seed((start % w) as u32, (start / w) as u32);
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.add(x as u32, y as u32);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && labels[j] == u32::MAX {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        comps.push(comp);
    }
    (labels, comps)
}

/// Components of pixels darker than `threshold`.
pub fn dark_components(gray: &[u8], width: u32, height: u32, threshold: u8) -> Vec<Component> {
    let mask: Vec<bool> = gray.iter().map(|&g| g < threshold).collect();
    label_components(&mask, width, height).1
}

/// Unions components whose bounding boxes are closer than `distance` pixels.
pub fn merge_close(mut comps: Vec<Component>, distance: u32) -> Vec<Component> {
    if distance == 0 || comps.len() < 2 {
        return comps;
    }
    comps.sort_by_key(|c| (c.x0, c.y0));
    let n = comps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if comps[j].x0 > comps[i].x1 + distance {
                break;
            }
            if comps[i].gap(&comps[j]) < distance {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut merged: Vec<Option<Component>> = vec![None; n];
    for (i, comp) in comps.iter().enumerate() {
        let root = find(&mut parent, i);
        match &mut merged[root] {
            Some(c) => c.merge(comp),
            slot @ None => *slot = Some(comp.clone()),
        }
    }
    merged.into_iter().flatten().collect()
}

/// Copies the integer-aligned pixels covered by `region`.
pub fn crop(img: &RgbImage, region: &BBox) -> RgbImage {
    let x0 = region.x().floor().max(0.0) as u32;
    let y0 = region.y().floor().max(0.0) as u32;
    let x1 = (region.right().ceil() as u32).min(img.width());
    let y1 = (region.bottom().ceil() as u32).min(img.height());
    image::imageops::crop_imm(img, x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0)).to_image()
}
