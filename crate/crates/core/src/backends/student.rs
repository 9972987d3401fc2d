use std::f64::consts::FRAC_PI_4;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StudentTrainer;
use crate::data::{AnnotationSet, SceneImage};
use crate::error::{Error, Result};
use crate::evalkit::match_detections;
use crate::geometry::{BBox, Detection};
use crate::raster::{dark_components, gray, merge_close, Component};

pub const STUDENT_PHRASE: &str = "student";

/// Parameters of the blob detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StudentParams {
    /// Pixels with luminance strictly below this are foreground.
    pub intensity_threshold: u8,
    /// Inclusive bounds on component pixel area.
    pub min_area: u32,
    pub max_area: u32,
    /// Components whose boxes are fewer than this many pixels apart are merged.
    pub merge_distance: u32,
}

impl StudentParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_area >= self.max_area {
            return Err(Error::Config(format!(
                "student min_area {} must be below max_area {}",
                self.min_area, self.max_area
            )));
        }
        Ok(())
    }

    fn accepts(&self, c: &Component) -> bool {
        (u64::from(self.min_area)..=u64::from(self.max_area)).contains(&c.area)
    }
}

impl Default for StudentParams {
    fn default() -> Self {
        Self {
            intensity_threshold: 140,
            min_area: 10,
            max_area: 1500,
            merge_distance: 0,
        }
    }
}

/// Cartesian grid of candidate parameters. Grid order is threshold-major, then merge
/// distance, min area, max area; pairs with `min_area >= max_area` are skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub thresholds: Vec<u8>,
    pub merge_distances: Vec<u32>,
    pub min_areas: Vec<u32>,
    pub max_areas: Vec<u32>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            thresholds: vec![80, 110, 140, 170, 200],
            merge_distances: vec![0, 1, 2, 3],
            min_areas: vec![4, 10, 20, 40],
            max_areas: vec![400, 1500, 6000],
        }
    }
}

impl SearchSpace {
    pub fn single(p: StudentParams) -> Self {
        Self {
            thresholds: vec![p.intensity_threshold],
            merge_distances: vec![p.merge_distance],
            min_areas: vec![p.min_area],
            max_areas: vec![p.max_area],
        }
    }

    pub fn points(&self) -> Vec<StudentParams> {
        let mut out = Vec::new();
        for &intensity_threshold in &self.thresholds {
            for &merge_distance in &self.merge_distances {
                for &min_area in &self.min_areas {
                    for &max_area in &self.max_areas {
                        if min_area < max_area {
                            out.push(StudentParams {
                                intensity_threshold,
                                min_area,
                                max_area,
                                merge_distance,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn components(pixels: &RgbImage, threshold: u8, merge_distance: u32) -> Vec<Component> {
    let g = gray(pixels);
    merge_close(dark_components(&g, pixels.width(), pixels.height(), threshold), merge_distance)
}

fn to_detection(c: &Component) -> Detection {
    Detection {
        bbox: c.bbox(),
        score: (c.fill_ratio() / FRAC_PI_4).min(1.0),
        phrase: STUDENT_PHRASE.to_string(),
    }
}

/// Threshold, connected components, merge, area filter. Score is the component's fill ratio
/// relative to that of an ideal ellipse, capped at 1.
pub fn student_detect(params: &StudentParams, pixels: &RgbImage) -> Vec<Detection> {
    let mut dets: Vec<Detection> = components(pixels, params.intensity_threshold, params.merge_distance)
        .iter()
        .filter(|c| params.accepts(c))
        .map(to_detection)
        .collect();
    dets.sort_by(|a, b| a.rank_cmp(b));
    dets
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentFit {
    pub params: StudentParams,
    /// F1 at IoU 0.5 against the pseudo-labels on the fit images.
    pub f1: f64,
}

/// Grid search for the parameters whose detections best agree with `pseudo` (F1 at IoU 0.5,
/// pooled over `images`). The first best point in grid order wins.
pub fn fit_student(pseudo: &AnnotationSet, images: &[SceneImage], space: &SearchSpace) -> Result<StudentFit> {
    if images.is_empty() {
        return Err(Error::Fit("no training images".into()));
    }
    let n_pseudo: usize = images.iter().map(|im| pseudo.get(im.id()).len()).sum();
    if n_pseudo == 0 {
        return Err(Error::Fit("pseudo-label set is empty on the training images".into()));
    }
    let points = space.points();
    if points.is_empty() {
        return Err(Error::Fit("student search space has no valid point".into()));
    }

    let mut pairs: Vec<(u8, u32)> = Vec::new();
    for p in &points {
        if !pairs.contains(&(p.intensity_threshold, p.merge_distance)) {
            pairs.push((p.intensity_threshold, p.merge_distance));
        }
    }
    // (pair, image) -> components, computed once and reused across area bounds.
    let comps: Vec<Vec<Vec<Component>>> = pairs
        .par_iter()
        .map(|&(t, m)| images.iter().map(|im| components(&im.pixels, t, m)).collect())
        .collect();
    let gts: Vec<Vec<BBox>> = images.iter().map(|im| pseudo.boxes(im.id())).collect();

    let scores: Vec<f64> = points
        .par_iter()
        .map(|p| {
            let k = pairs
                .iter()
                .position(|&pair| pair == (p.intensity_threshold, p.merge_distance))
                .expect("pair collected above");
            let (mut tp, mut n_det) = (0usize, 0usize);
            for (im_comps, gt) in comps[k].iter().zip(&gts) {
                let dets: Vec<Detection> = im_comps.iter().filter(|c| p.accepts(c)).map(to_detection).collect();
                n_det += dets.len();
                tp += match_detections(&dets, gt, 0.5).true_positives();
            }
            2.0 * tp as f64 / (n_det + n_pseudo) as f64
        })
        .collect();

    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(StudentFit {
        params: points[best],
        f1: scores[best],
    })
}

/// The builtin trainable detector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlobStudent {
    pub space: SearchSpace,
}

impl StudentTrainer for BlobStudent {
    type Model = StudentParams;

    fn fit(&self, pseudo: &AnnotationSet, images: &[SceneImage]) -> Result<StudentParams> {
        let fit = fit_student(pseudo, images, &self.space)?;
        log::debug!("student fit {:?} with F1 {:.4}", fit.params, fit.f1);
        Ok(fit.params)
    }

    fn detect(&self, model: &StudentParams, image: &SceneImage) -> Result<Vec<Detection>> {
        model.validate()?;
        Ok(student_detect(model, &image.pixels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SyntheticSceneConfig};
    use crate::geometry::iou;
    use image::Rgb;

    fn canvas() -> RgbImage {
        RgbImage::from_pixel(40, 40, Rgb([236, 214, 228]))
    }

    fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.put_pixel(x, y, Rgb([90, 40, 120]));
            }
        }
    }

    #[test]
    fn blank_image_has_no_detections() {
        assert!(student_detect(&StudentParams::default(), &canvas()).is_empty());
    }

    #[test]
    fn close_blobs_merge() {
        let mut img = canvas();
        fill_rect(&mut img, 5, 5, 5, 5);
        fill_rect(&mut img, 12, 5, 5, 5);
        let mut p = StudentParams::default();
        assert_eq!(student_detect(&p, &img).len(), 2);
        p.merge_distance = 3;
        let dets = student_detect(&p, &img);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, BBox::new(5.0, 5.0, 12.0, 5.0).unwrap());
    }

    #[test]
    fn single_ellipse_box_matches_renderer() {
        let cfg = SyntheticSceneConfig {
            object_count_range: (1, 1),
            seed: 11,
            ..Default::default()
        };
        let (images, gt) = generate_synthetic_dataset(&cfg, 1).unwrap();
        let dets = student_detect(&StudentParams::default(), &images[0].pixels);
        assert_eq!(dets.len(), 1);
        assert!(iou(&dets[0].bbox, &gt.boxes(1)[0]) >= 0.9);
    }

    #[test]
    fn single_point_space_returns_it() {
        let (images, gt) = generate_synthetic_dataset(&SyntheticSceneConfig::default(), 2).unwrap();
        let p = StudentParams {
            intensity_threshold: 200,
            min_area: 3,
            max_area: 77,
            merge_distance: 5,
        };
        assert_eq!(fit_student(&gt, &images, &SearchSpace::single(p)).unwrap().params, p);
    }

    #[test]
    fn empty_pseudo_is_a_fit_error() {
        let (images, gt) = generate_synthetic_dataset(&SyntheticSceneConfig::default(), 1).unwrap();
        let empty = gt.empty_like();
        assert!(matches!(fit_student(&empty, &images, &SearchSpace::default()), Err(Error::Fit(_))));
        assert!(matches!(fit_student(&gt, &[], &SearchSpace::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn exact_labels_generalise_to_held_out_images() {
        let cfg = SyntheticSceneConfig {
            seed: 5,
            ..Default::default()
        };
        let (images, gt) = generate_synthetic_dataset(&cfg, 8).unwrap();
        let (train, test) = images.split_at(5);
        let params = fit_student(&gt, train, &SearchSpace::default()).unwrap().params;
        let (mut tp, mut n_det, mut n_gt) = (0, 0, 0);
        for im in test {
            let dets = student_detect(&params, &im.pixels);
            let g = gt.boxes(im.id());
            tp += match_detections(&dets, &g, 0.5).true_positives();
            n_det += dets.len();
            n_gt += g.len();
        }
        let f1 = 2.0 * tp as f64 / (n_det + n_gt) as f64;
        assert!(f1 >= 0.95, "held-out F1 {f1}");
    }
}
