//! Deterministic synthetic scenes: filled ellipses on a light background, each with the exact
//! bounding box of its rendered pixels recorded as ground truth.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Annotation, AnnotationSet, ImageRecord, SceneImage, NUCLEI_CATEGORY};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::seed;

const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub image_size: u32,
    /// Inclusive range of objects per image.
    pub object_count_range: (u32, u32),
    /// Inclusive range of ellipse semi-axes, in pixels.
    pub radius_range: (f64, f64),
    pub fill_color_palette: Vec<[u8; 3]>,
    pub background_color: [u8; 3],
    pub seed: u64,
    /// Clearance kept between object boxes while placement succeeds within a bounded number of
    /// attempts; after that objects may overlap.
    #[serde(default = "default_gap")]
    pub min_gap: f64,
}

fn default_gap() -> f64 {
    3.0
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            object_count_range: (30, 45),
            radius_range: (4.0, 8.0),
            fill_color_palette: vec![[96, 38, 122], [72, 52, 150], [58, 30, 88], [110, 48, 140]],
            background_color: [236, 214, 228],
            seed: 0,
            min_gap: default_gap(),
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.object_count_range;
        let (rlo, rhi) = self.radius_range;
        if self.image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if lo > hi {
            return Err(Error::Config(format!("empty object count range ({lo}, {hi})")));
        }
        if !(rlo >= 1.0 && rlo <= rhi) {
            return Err(Error::Config(format!(
                "radius range ({rlo}, {rhi}) must satisfy 1 <= min <= max"
            )));
        }
        if 2.0 * rhi + 2.0 >= f64::from(self.image_size) {
            return Err(Error::Config(format!(
                "radius {rhi} too large for a {} pixel image",
                self.image_size
            )));
        }
        if self.fill_color_palette.is_empty() {
            return Err(Error::Config("fill colour palette is empty".into()));
        }
        if self.min_gap.is_nan() || self.min_gap < 0.0 {
            return Err(Error::Config("minimum gap must be non-negative".into()));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            (self.a * self.a * c * c + self.b * self.b * s * s).sqrt(),
            (self.a * self.a * s * s + self.b * self.b * c * c).sqrt(),
        )
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (px - self.cx, py - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Renders one scene. The returned set holds a single image record with id 1.
pub fn generate_synthetic_scene(cfg: &SyntheticSceneConfig) -> Result<(RgbImage, AnnotationSet)> {
    generate_scene_with_record(
        cfg,
        ImageRecord {
            id: 1,
            file_name: "scene.png".into(),
            width: cfg.image_size,
            height: cfg.image_size,
        },
    )
}

fn generate_scene_with_record(
    cfg: &SyntheticSceneConfig,
    record: ImageRecord,
) -> Result<(RgbImage, AnnotationSet)> {
    cfg.validate()?;
    let size = cfg.image_size;
    let sizef = f64::from(size);
    let mut rng = seed::rng(cfg.seed, &[0x5ce4e]);
    let mut img = RgbImage::from_pixel(size, size, Rgb(cfg.background_color));
    let n = rng.random_range(cfg.object_count_range.0..=cfg.object_count_range.1);

    let mut placed: Vec<BBox> = Vec::with_capacity(n as usize);
    let mut set = AnnotationSet::new(vec![record.clone()]);
    for _ in 0..n {
        let mut chosen = None;
        for attempt in 0..PLACEMENT_ATTEMPTS {
            let a = rng.random_range(cfg.radius_range.0..=cfg.radius_range.1);
            let b = rng.random_range(cfg.radius_range.0..=cfg.radius_range.1);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let mut e = Ellipse { cx: 0.0, cy: 0.0, a, b, theta };
            let (ex, ey) = e.half_extents();
            e.cx = rng.random_range(ex + 1.0..=sizef - ex - 1.0);
            e.cy = rng.random_range(ey + 1.0..=sizef - ey - 1.0);
            let hull = BBox::from_corners(
                e.cx - ex - cfg.min_gap,
                e.cy - ey - cfg.min_gap,
                e.cx + ex + cfg.min_gap,
                e.cy + ey + cfg.min_gap,
            )?;
            let clear = placed.iter().all(|p| p.intersection(&hull).is_none());
            if clear || attempt + 1 == PLACEMENT_ATTEMPTS {
                placed.push(hull);
                chosen = Some((e, ex, ey));
                break;
            }
        }
        let (e, ex, ey) = chosen.expect("placement loop always chooses");
        let color = Rgb(cfg.fill_color_palette[rng.random_range(0..cfg.fill_color_palette.len())]);

        let x_lo = (e.cx - ex).floor().max(0.0) as u32;
        let y_lo = (e.cy - ey).floor().max(0.0) as u32;
        let x_hi = ((e.cx + ex).ceil() as u32).min(size - 1);
        let y_hi = ((e.cy + ey).ceil() as u32).min(size - 1);
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                if e.contains(f64::from(px) + 0.5, f64::from(py) + 0.5) {
                    img.put_pixel(px, py, color);
                    bounds = Some(match bounds {
                        None => (px, py, px, py),
                        Some((x0, y0, x1, y1)) => (x0.min(px), y0.min(py), x1.max(px), y1.max(py)),
                    });
                }
            }
        }
        let (x0, y0, x1, y1) = bounds.expect("semi-axes >= 1 always cover the centre pixel");
        set.push(
            record.id,
            Annotation {
                bbox: BBox::from_corners(
                    f64::from(x0),
                    f64::from(y0),
                    f64::from(x1 + 1),
                    f64::from(y1 + 1),
                )?,
                category_id: NUCLEI_CATEGORY,
                score: None,
            },
        )?;
    }
    Ok((img, set))
}

/// Renders `count` scenes with ids `1..=count`; scene `i` uses a seed derived from `cfg.seed`.
pub fn generate_synthetic_dataset(
    cfg: &SyntheticSceneConfig,
    count: usize,
) -> Result<(Vec<SceneImage>, AnnotationSet)> {
    let mut images = Vec::with_capacity(count);
    let mut truth = AnnotationSet::new(Vec::new());
    for i in 0..count as u64 {
        let record = ImageRecord {
            id: i + 1,
            file_name: format!("images/synth_{:04}.png", i + 1),
            width: cfg.image_size,
            height: cfg.image_size,
        };
        let scene_cfg = SyntheticSceneConfig {
            seed: seed::derive(cfg.seed, &[i]),
            ..cfg.clone()
        };
        let (pixels, gt) = generate_scene_with_record(&scene_cfg, record.clone())?;
        truth.images.push(record.clone());
        if let Some(anns) = gt.annotations.get(&record.id) {
            truth.annotations.insert(record.id, anns.clone());
        }
        images.push(SceneImage::new(record, pixels)?);
    }
    Ok((images, truth))
}
