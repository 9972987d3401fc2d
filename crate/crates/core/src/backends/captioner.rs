use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;

use super::Captioner;
use crate::error::{Error, Result};
use crate::raster::{gray, label_components};

pub const PLAIN_BACKGROUND_CAPTION: &str = "a plain background";

/// Rule-based captioner for synthetic stains.
///
/// Picks the foreground blob under the crop centre (or the one whose centroid is nearest to
/// it), then names its mean colour by hue and its shape by elongation:
/// `"a {shape} {color} object"` (with "an" before a vowel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateCaptioner {
    /// Pixels with luminance below this are foreground.
    pub foreground_threshold: u8,
    /// Blobs smaller than this many pixels are ignored.
    pub min_area: u64,
}

impl Default for TemplateCaptioner {
    fn default() -> Self {
        Self {
            foreground_threshold: 170,
            min_area: 6,
        }
    }
}

impl TemplateCaptioner {
    pub fn describe(&self, crop: &RgbImage) -> String {
        let (w, h) = crop.dimensions();
        if w == 0 || h == 0 {
            return PLAIN_BACKGROUND_CAPTION.to_string();
        }
        let mask: Vec<bool> = gray(crop).into_iter().map(|g| g < self.foreground_threshold).collect();
        let (labels, comps) = label_components(&mask, w, h);
        let (cx, cy) = (w / 2, h / 2);
        let center_label = labels[(cy * w + cx) as usize];
        let chosen = if center_label != u32::MAX && comps[center_label as usize].area >= self.min_area {
            Some(center_label as usize)
        } else {
            let (fx, fy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
            comps
                .iter()
                .enumerate()
                .filter(|(_, c)| c.area >= self.min_area)
                .map(|(i, c)| {
                    let (mx, my) = c.centroid();
                    (i, (mx + 0.5 - fx).powi(2) + (my + 0.5 - fy).powi(2))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
        };
        let Some(idx) = chosen else {
            return PLAIN_BACKGROUND_CAPTION.to_string();
        };

        let mut sum = [0u64; 3];
        for (p, &l) in crop.pixels().zip(&labels) {
            if l as usize == idx {
                for (s, &v) in sum.iter_mut().zip(&p.0) {
                    *s += u64::from(v);
                }
            }
        }
        let n = comps[idx].area;
        let mean = sum.map(|s| (s as f64 / n as f64) / 255.0);
        let shape = shape_word(comps[idx].elongation());
        let article = if shape.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
        format!("{article} {shape} {} object", color_word(mean))
    }
}

fn shape_word(elongation: f64) -> &'static str {
    if elongation < 1.25 {
        "round"
    } else if elongation < 1.8 {
        "oval"
    } else {
        "oblong"
    }
}

/// Names an RGB colour with components in [0, 1].
fn color_word(rgb: [f64; 3]) -> &'static str {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max;
    let s = if max > 0.0 { (max - min) / max } else { 0.0 };
    if v < 0.2 {
        return "black";
    }
    if s < 0.15 {
        return if v > 0.85 { "white" } else { "gray" };
    }
    let d = max - min;
    let hue = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    match hue {
        h if h < 15.0 => "red",
        h if h < 45.0 => "orange",
        h if h < 70.0 => "yellow",
        h if h < 165.0 => "green",
        h if h < 200.0 => "cyan",
        h if h < 260.0 => "blue",
        h if h < 300.0 => "purple",
        h if h < 340.0 => "pink",
        _ => "red",
    }
}

impl Captioner for TemplateCaptioner {
    fn caption(&self, crop: &RgbImage) -> Result<String> {
        Ok(self.describe(crop))
    }
}

/// Returns a fixed list of captions in round-robin order, regardless of input.
#[derive(Debug)]
pub struct ScriptedCaptioner {
    captions: Vec<String>,
    next: AtomicUsize,
}

impl ScriptedCaptioner {
    pub fn new<S: Into<String>>(captions: impl IntoIterator<Item = S>) -> Result<Self> {
        let captions: Vec<String> = captions.into_iter().map(Into::into).collect();
        if captions.is_empty() {
            return Err(Error::Config("scripted captioner needs at least one caption".into()));
        }
        Ok(Self {
            captions,
            next: AtomicUsize::new(0),
        })
    }
}

impl Captioner for ScriptedCaptioner {
    fn caption(&self, _crop: &RgbImage) -> Result<String> {
        let i = self.next.fetch_add(1, Ordering::Relaxed);
        Ok(self.captions[i % self.captions.len()].clone())
    }
}
