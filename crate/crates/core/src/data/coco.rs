//! COCO detection document I/O.
//!
//! Annotation ids are not part of the data model: they are assigned sequentially on save, in
//! image-id order, so that save -> load -> save is byte-stable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Annotation, AnnotationSet, Category, ImageRecord};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::BBox;

#[derive(Debug, Serialize, Deserialize)]
struct CocoDocument {
    #[serde(default)]
    images: Vec<ImageRecord>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: BBox,
    area: f64,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

pub fn to_coco_json(set: &AnnotationSet) -> String {
    let mut next_id = 1u64;
    let annotations = set
        .annotations
        .iter()
        .flat_map(|(image_id, anns)| anns.iter().map(move |a| (*image_id, a)))
        .map(|(image_id, a)| {
            let id = next_id;
            next_id += 1;
            CocoAnnotation {
                id,
                image_id,
                category_id: a.category_id,
                bbox: a.bbox,
                area: a.bbox.area(),
                iscrowd: 0,
                score: a.score,
            }
        })
        .collect();
    let doc = CocoDocument {
        images: set.images.clone(),
        annotations,
        categories: set.categories.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("COCO document serializes");
    s.push('\n');
    s
}

/// Parses a COCO document; `origin` names the source in error messages.
pub fn parse_annotations(text: &str, origin: &str) -> Result<AnnotationSet> {
    let doc: CocoDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut annotations: BTreeMap<u64, Vec<Annotation>> = BTreeMap::new();
    for a in doc.annotations {
        if a.iscrowd != 0 {
            return Err(Error::Validation(format!(
                "{origin}: annotation {} is a crowd region, which is not supported",
                a.id
            )));
        }
        annotations.entry(a.image_id).or_default().push(Annotation {
            bbox: a.bbox,
            category_id: a.category_id,
            score: a.score,
        });
    }
    let set = AnnotationSet {
        images: doc.images,
        annotations,
        categories: doc.categories,
    };
    set.validate()
        .map_err(|e| Error::Validation(format!("{origin}: {e}")))?;
    Ok(set)
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = fsutil::read_to_string(path)?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn save_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    set.validate()?;
    fsutil::write_atomic(path, to_coco_json(set).as_bytes())
}
