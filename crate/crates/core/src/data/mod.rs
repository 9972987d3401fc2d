//! Images and their boxes, COCO file I/O, tiling, splits and synthetic scenes.

mod coco;
mod split;
mod synth;
mod tiling;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};

pub use coco::{load_annotations, parse_annotations, save_annotations, to_coco_json};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{generate_synthetic_dataset, generate_synthetic_scene, SyntheticSceneConfig};
pub use tiling::{
    extract_patches, plan_patches, project_annotations, project_to_patches, random_crop,
    stitch_patches, tile_origins, Patch, TileSpec, DEFAULT_MIN_OVERLAP,
};

/// Category id used for the single "nuclei" class.
pub const NUCLEI_CATEGORY: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    pub fn frame(&self) -> BBox {
        BBox::new(0.0, 0.0, f64::from(self.width), f64::from(self.height))
            .expect("image dimensions are positive")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub category_id: u64,
    /// Present on pseudo-labels and predictions, absent on ground truth.
    pub score: Option<f64>,
}

/// COCO-style annotation collection keyed by image id.
///
/// Images without annotations have no entry in `annotations`; the mutators keep it that way so
/// structural equality does not depend on how a set was built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub images: Vec<ImageRecord>,
    pub annotations: BTreeMap<u64, Vec<Annotation>>,
    pub categories: Vec<Category>,
}

impl AnnotationSet {
    pub fn new(images: Vec<ImageRecord>) -> Self {
        Self {
            images,
            annotations: BTreeMap::new(),
            categories: vec![Category {
                id: NUCLEI_CATEGORY,
                name: "nuclei".to_string(),
            }],
        }
    }

    /// Same images and categories, no annotations.
    pub fn empty_like(&self) -> Self {
        Self {
            images: self.images.clone(),
            annotations: BTreeMap::new(),
            categories: self.categories.clone(),
        }
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }

    pub fn image_ids(&self) -> Vec<u64> {
        self.images.iter().map(|r| r.id).collect()
    }

    pub fn push(&mut self, image_id: u64, ann: Annotation) -> Result<()> {
        if self.image(image_id).is_none() {
            return Err(Error::Validation(format!(
                "annotation references unknown image id {image_id}"
            )));
        }
        self.annotations.entry(image_id).or_default().push(ann);
        Ok(())
    }

    /// Replaces the annotations of one image with the given detections (as scored labels).
    pub fn set_detections(&mut self, image_id: u64, dets: &[Detection]) -> Result<()> {
        if self.image(image_id).is_none() {
            return Err(Error::Validation(format!(
                "detections reference unknown image id {image_id}"
            )));
        }
        if dets.is_empty() {
            self.annotations.remove(&image_id);
        } else {
            self.annotations.insert(
                image_id,
                dets.iter()
                    .map(|d| Annotation {
                        bbox: d.bbox,
                        category_id: NUCLEI_CATEGORY,
                        score: Some(d.score),
                    })
                    .collect(),
            );
        }
        Ok(())
    }

    pub fn get(&self, image_id: u64) -> &[Annotation] {
        self.annotations
            .get(&image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn boxes(&self, image_id: u64) -> Vec<BBox> {
        self.get(image_id).iter().map(|a| a.bbox).collect()
    }

    /// Annotations of one image as detections; unscored annotations get score 1.
    pub fn detections(&self, image_id: u64) -> Vec<Detection> {
        self.get(image_id)
            .iter()
            .map(|a| Detection {
                bbox: a.bbox,
                score: a.score.unwrap_or(1.0),
                phrase: String::new(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.annotations.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Restricts the set to the given image ids, keeping the original image order.
    pub fn subset(&self, ids: &[u64]) -> Self {
        let keep: BTreeSet<u64> = ids.iter().copied().collect();
        Self {
            images: self
                .images
                .iter()
                .filter(|r| keep.contains(&r.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(id, v)| (*id, v.clone()))
                .collect(),
            categories: self.categories.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.images {
            if r.width == 0 || r.height == 0 {
                return Err(Error::Validation(format!(
                    "image {} has zero dimension {}x{}",
                    r.id, r.width, r.height
                )));
            }
            if !ids.insert(r.id) {
                return Err(Error::Validation(format!("duplicate image id {}", r.id)));
            }
        }
        let cats: BTreeSet<u64> = self.categories.iter().map(|c| c.id).collect();
        for (image_id, anns) in &self.annotations {
            if !ids.contains(image_id) {
                return Err(Error::Validation(format!(
                    "annotation references unknown image id {image_id}"
                )));
            }
            for a in anns {
                if !cats.is_empty() && !cats.contains(&a.category_id) {
                    return Err(Error::Validation(format!(
                        "annotation on image {image_id} references unknown category {}",
                        a.category_id
                    )));
                }
                if let Some(s) = a.score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(Error::Validation(format!(
                            "annotation on image {image_id} has score {s} outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// An image record together with its decoded pixels.
#[derive(Debug, Clone)]
pub struct SceneImage {
    pub record: ImageRecord,
    pub pixels: Arc<RgbImage>,
}

impl SceneImage {
    pub fn new(record: ImageRecord, pixels: RgbImage) -> Result<Self> {
        if pixels.width() != record.width || pixels.height() != record.height {
            return Err(Error::Validation(format!(
                "image {} declares {}x{} but has {}x{} pixels",
                record.id,
                record.width,
                record.height,
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(Self {
            record,
            pixels: Arc::new(pixels),
        })
    }

    /// Loads a PNG or TIFF file, resolving `record.file_name` against `root`.
    pub fn load(root: &Path, record: &ImageRecord) -> Result<Self> {
        let path = root.join(&record.file_name);
        let pixels = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        Self::new(record.clone(), pixels)
    }

    pub fn id(&self) -> u64 {
        self.record.id
    }
}

pub fn load_images(set: &AnnotationSet, root: &Path) -> Result<Vec<SceneImage>> {
    set.images
        .iter()
        .map(|r| SceneImage::load(root, r))
        .collect()
}

/// Writes PNGs for every scene under `root`, creating parent directories as needed.
pub fn save_images(images: &[SceneImage], root: &Path) -> Result<()> {
    for img in images {
        let path = root.join(&img.record.file_name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        img.pixels
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}
