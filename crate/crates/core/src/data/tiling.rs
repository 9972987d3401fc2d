//! Overlapping tile layout, random crops inside tiles, and moving annotations between image and
//! patch coordinates.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Annotation, AnnotationSet, ImageRecord, SceneImage};
use crate::error::{Error, Result};
use crate::geometry::{nms, BBox, Detection};
use crate::seed;

/// Minimum fraction of a box's area that must survive clipping for it to be carried into a patch.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_size: u32,
    /// Tiles per axis.
    pub grid_n: u32,
    /// Side of the random crop taken inside each tile; equal to `tile_size` for no cropping.
    pub crop_size: u32,
}

impl TileSpec {
    pub fn validate(&self, image_w: u32, image_h: u32) -> Result<()> {
        if self.grid_n == 0 {
            return Err(Error::Config("tile grid must have at least one tile per axis".into()));
        }
        if self.crop_size == 0 || self.crop_size > self.tile_size {
            return Err(Error::Config(format!(
                "crop size {} must be in 1..={}",
                self.crop_size, self.tile_size
            )));
        }
        if self.tile_size > image_w.min(image_h) {
            return Err(Error::Config(format!(
                "tile size {} exceeds image {}x{}",
                self.tile_size, image_w, image_h
            )));
        }
        Ok(())
    }
}

fn axis_origins(dim: u32, tile: u32, n: u32) -> Vec<u32> {
    if n == 1 {
        return vec![0];
    }
    let stride = (dim - tile) / (n - 1);
    (0..n)
        .map(|i| if i == n - 1 { dim - tile } else { i * stride })
        .collect()
}

/// `grid_n x grid_n` tiles in row-major order; the last row and column sit flush with the
/// image edge.
pub fn tile_origins(image_w: u32, image_h: u32, spec: &TileSpec) -> Result<Vec<BBox>> {
    spec.validate(image_w, image_h)?;
    let xs = axis_origins(image_w, spec.tile_size, spec.grid_n);
    let ys = axis_origins(image_h, spec.tile_size, spec.grid_n);
    for axis in [&xs, &ys] {
        if axis.windows(2).any(|w| w[1] > w[0] + spec.tile_size) {
            return Err(Error::Config(format!(
                "{} tiles of size {} per axis leave gaps in a {}x{} image",
                spec.grid_n, spec.tile_size, image_w, image_h
            )));
        }
    }
    let side = f64::from(spec.tile_size);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .map(|(x, y)| BBox::new(f64::from(x), f64::from(y), side, side))
        .collect()
}

/// Uniformly placed integer-offset crop of side `crop_size` inside `tile`.
pub fn random_crop(tile: &BBox, crop_size: u32, rng_seed: u64) -> Result<BBox> {
    let side = f64::from(crop_size);
    if crop_size == 0 || side > tile.w() || side > tile.h() {
        return Err(Error::Config(format!(
            "crop size {crop_size} does not fit tile {:?}",
            tile.to_array()
        )));
    }
    let max_dx = (tile.w() - side).floor() as u32;
    let max_dy = (tile.h() - side).floor() as u32;
    let mut rng = seed::rng(rng_seed, &[]);
    let dx = rng.random_range(0..=max_dx);
    let dy = rng.random_range(0..=max_dy);
    BBox::new(
        tile.x() + f64::from(dx),
        tile.y() + f64::from(dy),
        side,
        side,
    )
}

/// Moves every image's annotations into the frame of `region`.
///
/// Boxes are clipped to the region and kept iff the clipped area is at least `min_overlap` of
/// the original area. Image records take the region's dimensions.
pub fn project_annotations(set: &AnnotationSet, region: &BBox, min_overlap: f64) -> AnnotationSet {
    let images = set
        .images
        .iter()
        .map(|r| ImageRecord {
            width: region.w().round() as u32,
            height: region.h().round() as u32,
            ..r.clone()
        })
        .collect();
    let mut out = AnnotationSet {
        images,
        annotations: BTreeMap::new(),
        categories: set.categories.clone(),
    };
    for (image_id, anns) in &set.annotations {
        let projected: Vec<Annotation> = anns
            .iter()
            .filter_map(|a| project_box(&a.bbox, region, min_overlap).map(|bbox| Annotation { bbox, ..a.clone() }))
            .collect();
        if !projected.is_empty() {
            out.annotations.insert(*image_id, projected);
        }
    }
    out
}

fn project_box(bbox: &BBox, region: &BBox, min_overlap: f64) -> Option<BBox> {
    let clipped = bbox.intersection(region)?;
    if clipped.area() / bbox.area() < min_overlap {
        return None;
    }
    Some(clipped.translate(-region.x(), -region.y()))
}

/// A rectangular sub-image of a parent image, treated as an image in its own right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub record: ImageRecord,
    pub parent_id: u64,
    pub region: BBox,
}

/// Lays out tiles (and a seeded random crop inside each tile) for every image.
///
/// Patch ids are assigned sequentially from 1 in image order, then tile order.
pub fn plan_patches(images: &[ImageRecord], spec: &TileSpec, seed: u64) -> Result<Vec<Patch>> {
    let mut patches = Vec::new();
    for image in images {
        for (k, tile) in tile_origins(image.width, image.height, spec)?
            .iter()
            .enumerate()
        {
            let region = random_crop(tile, spec.crop_size, seed::derive(seed, &[image.id, k as u64]))?;
            let stem = Path::new(&image.file_name).with_extension("");
            patches.push(Patch {
                record: ImageRecord {
                    id: patches.len() as u64 + 1,
                    file_name: format!("{}_p{k:02}.png", stem.display()),
                    width: spec.crop_size,
                    height: spec.crop_size,
                },
                parent_id: image.id,
                region,
            });
        }
    }
    Ok(patches)
}

pub fn extract_patches(images: &[SceneImage], patches: &[Patch]) -> Result<Vec<SceneImage>> {
    patches
        .iter()
        .map(|p| {
            let parent = images
                .iter()
                .find(|i| i.id() == p.parent_id)
                .ok_or_else(|| {
                    Error::Validation(format!("patch {} has no parent image {}", p.record.id, p.parent_id))
                })?;
            let view = image::imageops::crop_imm(
                parent.pixels.as_ref(),
                p.region.x() as u32,
                p.region.y() as u32,
                p.record.width,
                p.record.height,
            );
            SceneImage::new(p.record.clone(), view.to_image())
        })
        .collect()
}

/// Projects image-level annotations into every patch; the result is keyed by patch id.
pub fn project_to_patches(set: &AnnotationSet, patches: &[Patch], min_overlap: f64) -> AnnotationSet {
    let mut out = AnnotationSet {
        images: patches.iter().map(|p| p.record.clone()).collect(),
        annotations: BTreeMap::new(),
        categories: set.categories.clone(),
    };
    for p in patches {
        let projected: Vec<Annotation> = set
            .get(p.parent_id)
            .iter()
            .filter_map(|a| project_box(&a.bbox, &p.region, min_overlap).map(|bbox| Annotation { bbox, ..a.clone() }))
            .collect();
        if !projected.is_empty() {
            out.annotations.insert(p.record.id, projected);
        }
    }
    out
}

/// Re-projects patch-level detections into parent-image coordinates and removes cross-patch
/// duplicates with NMS.
pub fn stitch_patches(
    patch_set: &AnnotationSet,
    patches: &[Patch],
    parents: &[ImageRecord],
    nms_threshold: f64,
) -> Result<AnnotationSet> {
    let mut gathered: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for p in patches {
        for d in patch_set.detections(p.record.id) {
            gathered.entry(p.parent_id).or_default().push(Detection {
                bbox: d.bbox.translate(p.region.x(), p.region.y()),
                ..d
            });
        }
    }
    let mut out = AnnotationSet {
        images: parents.to_vec(),
        annotations: BTreeMap::new(),
        categories: patch_set.categories.clone(),
    };
    for (parent, dets) in gathered {
        out.set_detections(parent, &nms(&dets, nms_threshold))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NUCLEI_CATEGORY;

    fn spec(tile: u32, grid: u32) -> TileSpec {
        TileSpec {
            tile_size: tile,
            grid_n: grid,
            crop_size: tile,
        }
    }

    fn covers_every_pixel(w: u32, h: u32, tiles: &[BBox]) -> bool {
        let mut grid = vec![false; (w * h) as usize];
        for t in tiles {
            for y in t.y() as u32..t.bottom() as u32 {
                for x in t.x() as u32..t.right() as u32 {
                    grid[(y * w + x) as usize] = true;
                }
            }
        }
        grid.iter().all(|&c| c)
    }

    #[test]
    fn sixteen_overlapping_tiles() {
        let tiles = tile_origins(1000, 1000, &spec(256, 4)).unwrap();
        assert_eq!(tiles.len(), 16);
        let mut xs: Vec<u32> = tiles.iter().map(|t| t.x() as u32).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs, vec![0, 248, 496, 744]);
        assert!(covers_every_pixel(1000, 1000, &tiles));
    }

    #[test]
    fn single_and_non_overlapping_grids() {
        let one = tile_origins(256, 256, &spec(256, 1)).unwrap();
        assert_eq!(one, vec![BBox::new(0., 0., 256., 256.).unwrap()]);

        let four = tile_origins(512, 512, &spec(256, 2)).unwrap();
        let origins: Vec<(f64, f64)> = four.iter().map(|t| (t.x(), t.y())).collect();
        assert_eq!(origins, vec![(0., 0.), (256., 0.), (0., 256.), (256., 256.)]);
    }

    #[test]
    fn coverage_holds_for_awkward_sizes() {
        for (w, h, tile, n) in [(1000, 700, 256, 4), (333, 333, 100, 4), (257, 300, 128, 3)] {
            let tiles = tile_origins(w, h, &spec(tile, n)).unwrap();
            assert!(covers_every_pixel(w, h, &tiles), "{w}x{h} tile {tile} grid {n}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(tile_origins(100, 100, &spec(256, 1)).is_err());
        assert!(tile_origins(300, 300, &spec(256, 0)).is_err());
        // Stride larger than the tile would leave uncovered strips.
        assert!(tile_origins(333, 333, &spec(100, 3)).is_err());
        let bad_crop = TileSpec {
            tile_size: 100,
            grid_n: 1,
            crop_size: 120,
        };
        assert!(tile_origins(300, 300, &bad_crop).is_err());
    }

    #[test]
    fn random_crop_is_seeded_and_contained() {
        let tile = BBox::new(0., 0., 256., 256.).unwrap();
        assert_eq!(random_crop(&tile, 256, 5).unwrap(), tile);

        let a = random_crop(&tile, 224, 0).unwrap();
        assert_eq!(a, random_crop(&tile, 224, 0).unwrap());
        assert!((0.0..=32.0).contains(&a.x()) && (0.0..=32.0).contains(&a.y()));
        assert_eq!((a.w(), a.h()), (224., 224.));

        let offsets: std::collections::BTreeSet<(u32, u32)> = (0..64)
            .map(|s| random_crop(&tile, 224, s).unwrap())
            .map(|c| (c.x() as u32, c.y() as u32))
            .collect();
        assert!(offsets.len() > 10);
    }

    fn one_box_set(bbox: BBox) -> AnnotationSet {
        let mut set = AnnotationSet::new(vec![ImageRecord {
            id: 1,
            file_name: "a.png".into(),
            width: 100,
            height: 100,
        }]);
        set.push(
            1,
            Annotation {
                bbox,
                category_id: NUCLEI_CATEGORY,
                score: None,
            },
        )
        .unwrap();
        set
    }

    #[test]
    fn projection_examples() {
        let set = one_box_set(BBox::new(10., 10., 20., 20.).unwrap());
        let whole = BBox::new(0., 0., 100., 100.).unwrap();
        assert_eq!(project_annotations(&set, &whole, 0.3), set);

        let far = BBox::new(50., 50., 40., 40.).unwrap();
        assert!(project_annotations(&set, &far, 0.3).is_empty());

        // Half of the box lies inside the region.
        let region = BBox::new(20., 0., 80., 100.).unwrap();
        let kept = project_annotations(&set, &region, 0.25);
        assert_eq!(kept.boxes(1), vec![BBox::new(0., 10., 10., 20.).unwrap()]);
        assert_eq!(kept.images[0].width, 80);
        assert!(project_annotations(&set, &region, 0.75).is_empty());
    }

    #[test]
    fn patches_roundtrip_through_stitching() {
        let set = one_box_set(BBox::new(40., 40., 10., 10.).unwrap());
        let spec = TileSpec {
            tile_size: 60,
            grid_n: 2,
            crop_size: 60,
        };
        let patches = plan_patches(&set.images, &spec, 1).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[0].record.file_name, "a_p00.png");
        let projected = project_to_patches(&set, &patches, 0.3);
        // The box sits in the overlap of all four tiles.
        assert_eq!(projected.len(), 4);
        let stitched = stitch_patches(&projected, &patches, &set.images, 0.5).unwrap();
        assert_eq!(stitched.boxes(1), set.boxes(1));
    }

    proptest::proptest! {
        #[test]
        fn projected_boxes_stay_inside_region(
            x in -20.0..120.0f64, y in -20.0..120.0f64, w in 1.0..50.0f64, h in 1.0..50.0f64,
            rx in 0.0..60.0f64, ry in 0.0..60.0f64, rw in 5.0..40.0f64, rh in 5.0..40.0f64,
            min_overlap in 0.0..1.0f64,
        ) {
            let set = one_box_set(BBox::new(x, y, w, h).unwrap());
            let region = BBox::new(rx, ry, rw, rh).unwrap();
            let out = project_annotations(&set, &region, min_overlap);
            for b in out.boxes(1) {
                proptest::prop_assert!(b.x() >= 0.0 && b.y() >= 0.0);
                proptest::prop_assert!(b.right() <= rw + 1e-9 && b.bottom() <= rh + 1e-9);
            }
        }
    }
}
