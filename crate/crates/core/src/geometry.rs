//! Axis-aligned box arithmetic.
//!
//! Boxes use the COCO convention: `(x, y, w, h)` with the origin at the top-left corner and
//! continuous coordinates, so a box covering pixel columns `0..10` is `(0, 0, 10, 10)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box with strictly positive, finite extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinates ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive extent ({x}, {y}, {w}, {h})"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Overlap region, or `None` when the boxes only touch or are disjoint.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            Some(BBox {
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
            })
        } else {
            None
        }
    }

    pub fn union_hull(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        BBox {
            x: x0,
            y: y0,
            w: self.right().max(other.right()) - x0,
            h: self.bottom().max(other.bottom()) - y0,
        }
    }

    /// Lexicographic order on `(x, y, w, h)`, used wherever a deterministic box order is needed.
    pub fn total_cmp(&self, other: &BBox) -> Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.w.total_cmp(&other.w))
            .then(self.h.total_cmp(&other.h))
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// A scored box together with the prompt phrase that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    #[serde(default)]
    pub phrase: String,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, phrase: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score,
            phrase: phrase.into(),
        })
    }

    /// Ranking order: score descending, then `x`, `y`, `w`, `h` ascending.
    pub fn rank_cmp(&self, other: &Detection) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.bbox.total_cmp(&other.bbox))
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let Some(inter) = a.intersection(b) else {
        return 0.0;
    };
    // Corner-based extents so that iou(a, a) is exactly 1.
    let extent = |r: &BBox| (r.right() - r.x) * (r.bottom() - r.y);
    let inter = extent(&inter);
    let union = extent(a) + extent(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Greedy non-maximum suppression.
///
/// Detections are visited in [`Detection::rank_cmp`] order; a detection is kept iff its IoU
/// with every detection kept so far is strictly below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| a.rank_cmp(b));

    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for det in order {
        if kept
            .iter()
            .all(|k| iou(&k.bbox, &det.bbox) < iou_threshold)
        {
            kept.push(det.clone());
        }
    }
    kept
}

/// Square region of side `max(w, h)` centred on the box, translated (never shrunk) to fit the
/// image. When the side exceeds the smaller image dimension it is clamped to that dimension.
pub fn square_expand(bbox: &BBox, image_w: f64, image_h: f64) -> Result<BBox> {
    let frame = BBox::new(0.0, 0.0, image_w, image_h)?;
    if bbox.intersection(&frame).is_none() {
        return Err(Error::EmptyClip {
            bbox: bbox.to_array(),
            width: image_w,
            height: image_h,
        });
    }
    let side = bbox.w.max(bbox.h).min(image_w.min(image_h));
    let (cx, cy) = bbox.center();
    let x = (cx - side / 2.0).clamp(0.0, image_w - side);
    let y = (cy - side / 2.0).clamp(0.0, image_h - side);
    BBox::new(x, y, side, side)
}

pub fn clip(bbox: &BBox, image_w: f64, image_h: f64) -> Result<BBox> {
    let frame = BBox::new(0.0, 0.0, image_w, image_h)?;
    bbox.intersection(&frame).ok_or(Error::EmptyClip {
        bbox: bbox.to_array(),
        width: image_w,
        height: image_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn det(x: f64, y: f64, w: f64, h: f64, s: f64) -> Detection {
        Detection::new(b(x, y, w, h), s, "").unwrap()
    }

    /// Counts unit pixels covered by each integer box.
    fn pixel_iou(a: (i32, i32, i32, i32), c: (i32, i32, i32, i32)) -> f64 {
        let lo_x = a.0.min(c.0);
        let lo_y = a.1.min(c.1);
        let hi_x = (a.0 + a.2).max(c.0 + c.2);
        let hi_y = (a.1 + a.3).max(c.1 + c.3);
        let inside = |r: (i32, i32, i32, i32), px: i32, py: i32| {
            px >= r.0 && px < r.0 + r.2 && py >= r.1 && py < r.1 + r.3
        };
        let (mut inter, mut union) = (0u64, 0u64);
        for py in lo_y..hi_y {
            for px in lo_x..hi_x {
                let (ia, ic) = (inside(a, px, py), inside(c, px, py));
                if ia && ic {
                    inter += 1;
                }
                if ia || ic {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 5., 5.)), 0.0);
        let expected = pixel_iou((0, 0, 10, 10), (5, 0, 10, 10));
        assert!((expected - 50.0 / 150.0).abs() < 1e-12);
        assert!((iou(&b(0., 0., 10., 10.), &b(5., 0., 10., 10.)) - expected).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(10., 0., 10., 10.)), 0.0);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0., 0., 0., 5.).is_err());
        assert!(BBox::new(0., 0., 5., -1.).is_err());
        assert!(BBox::new(f64::NAN, 0., 5., 5.).is_err());
        assert!(Detection::new(b(0., 0., 1., 1.), 1.5, "").is_err());
    }

    #[test]
    fn nms_examples() {
        let one = vec![det(1., 2., 3., 4., 0.7)];
        assert_eq!(nms(&one, 0.5), one);

        let dup = vec![det(0., 0., 10., 10., 0.8), det(0., 0., 10., 10., 0.9)];
        let kept = nms(&dup, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);

        let disjoint = vec![det(0., 0., 10., 10., 0.8), det(50., 50., 10., 10., 0.9)];
        let kept = nms(&disjoint, 0.5);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.9);

        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn nms_ties_are_broken_by_position() {
        let dets = vec![det(4., 0., 10., 10., 0.5), det(2., 0., 10., 10., 0.5)];
        let kept = nms(&dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox.x(), 2.0);
    }

    #[test]
    fn square_expand_examples() {
        assert_eq!(
            square_expand(&b(10., 20., 20., 40.), 100., 100.).unwrap(),
            b(0., 20., 40., 40.)
        );
        assert_eq!(
            square_expand(&b(40., 40., 12., 12.), 100., 100.).unwrap(),
            b(40., 40., 12., 12.)
        );
        assert_eq!(
            square_expand(&b(90., 90., 8., 8.), 100., 100.).unwrap(),
            b(90., 90., 8., 8.)
        );
        // Side clamps to the smaller image dimension.
        assert_eq!(
            square_expand(&b(0., 0., 80., 10.), 100., 50.).unwrap(),
            b(15., 0., 50., 50.)
        );
        assert!(square_expand(&b(200., 200., 5., 5.), 100., 100.).is_err());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(
            clip(&b(-5., -5., 20., 20.), 100., 100.).unwrap(),
            b(0., 0., 15., 15.)
        );
        assert_eq!(
            clip(&b(10., 10., 20., 20.), 100., 100.).unwrap(),
            b(10., 10., 20., 20.)
        );
        assert!(matches!(
            clip(&b(200., 200., 10., 10.), 100., 100.),
            Err(Error::EmptyClip { .. })
        ));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..150.0f64, -50.0..150.0f64, 0.5..80.0f64, 0.5..80.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn square_expand_is_square_and_inside(
            a in arb_box(), iw in 20.0..200.0f64, ih in 20.0..200.0f64
        ) {
            if let Ok(s) = square_expand(&a, iw, ih) {
                prop_assert_eq!(s.w(), s.h());
                prop_assert!(s.x() >= 0.0 && s.y() >= 0.0);
                prop_assert!(s.right() <= iw + 1e-9 && s.bottom() <= ih + 1e-9);
                prop_assert!(s.w() == a.w().max(a.h()) || s.w() == iw.min(ih));
            }
        }
    }
}
