//! COCO-style single-category detection metrics.
//!
//! Matching follows the COCO greedy protocol: detections are visited by descending score and
//! each claims the still-unmatched ground-truth box with the highest IoU, provided that IoU
//! reaches the threshold. AP is the 101-point interpolated area under the pooled PR curve.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stitch_patches, AnnotationSet, ImageRecord, Patch};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Detection};

/// COCO's default of 100 is far below the ~650 nuclei found in a full-size tissue image.
pub const DEFAULT_MAX_DETS: usize = 1000;

const RECALL_STEPS: usize = 100;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetMatch {
    pub score: f64,
    /// Index into the ground-truth slice, when matched.
    pub gt_index: Option<usize>,
    /// IoU with the matched ground truth; 0 for false positives.
    pub iou: f64,
}

impl DetMatch {
    pub fn is_tp(&self) -> bool {
        self.gt_index.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// One entry per detection, in descending score order.
    pub detections: Vec<DetMatch>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.is_tp()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

fn ranked(dets: &[Detection]) -> Vec<&Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| a.rank_cmp(b));
    order
}

/// Greedy matching for a single image and category. Equal-IoU candidates go to the lowest
/// ground-truth index.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut gt_matched = vec![false; gts.len()];
    let detections = ranked(dets)
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if gt_matched[j] {
                    continue;
                }
                let v = iou(&d.bbox, g);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                gt_matched[j] = true;
            }
            DetMatch {
                score: d.score,
                gt_index: best.map(|(j, _)| j),
                iou: best.map_or(0.0, |(_, v)| v),
            }
        })
        .collect();
    MatchResult {
        detections,
        gt_matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// PR points after each detection of a ranked TP/FP sequence.
pub fn pr_curve(ranked_tp: &[bool], n_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    ranked_tp
        .iter()
        .enumerate()
        .map(|(k, &is_tp)| {
            tp += usize::from(is_tp);
            PrPoint {
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect()
}

/// 101-point interpolated AP: the mean over recall levels r = 0, 0.01, ..., 1 of the highest
/// precision reached at any recall >= r (0 when r is never reached).
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let total: f64 = (0..=RECALL_STEPS)
        .map(|step| {
            let r = step as f64 / RECALL_STEPS as f64;
            let i = points.partition_point(|p| p.recall < r);
            envelope.get(i).copied().unwrap_or(0.0)
        })
        .sum();
    total / (RECALL_STEPS + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub iou_threshold: f64,
    pub points: Vec<PrPoint>,
    pub ap: f64,
    /// Recall with every kept detection.
    pub recall: f64,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub precision50: f64,
    pub recall50: f64,
    pub curves: Vec<PrCurve>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalResult {
    fn zeros(warnings: Vec<String>) -> Self {
        Self {
            map: 0.0,
            ap50: 0.0,
            ap75: 0.0,
            ar: 0.0,
            precision50: 0.0,
            recall50: 0.0,
            curves: Vec::new(),
            warnings,
        }
    }
}

/// Where detections live relative to the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Predictions and ground truth share the same (patch) images.
    #[default]
    Patch,
    /// Patch predictions are re-projected into full images and de-duplicated before matching.
    Stitched,
}

fn check_universe(pred: &AnnotationSet, gt: &AnnotationSet) -> Result<()> {
    let known: BTreeSet<u64> = gt.image_ids().into_iter().collect();
    let referenced = pred
        .images
        .iter()
        .map(|r| r.id)
        .chain(pred.annotations.keys().copied());
    for id in referenced {
        if !known.contains(&id) {
            return Err(Error::Validation(format!(
                "prediction references image id {id} absent from the ground truth"
            )));
        }
    }
    Ok(())
}

struct Scored {
    score: f64,
    image_id: u64,
    rank: usize,
    tp: bool,
}

/// Evaluates predictions against ground truth over the ground-truth image universe.
pub fn evaluate(pred: &AnnotationSet, gt: &AnnotationSet, max_dets: usize) -> Result<EvalResult> {
    check_universe(pred, gt)?;
    let n_gt = gt.len();
    if n_gt == 0 {
        let msg = "ground truth is empty; AP is reported as 0".to_string();
        log::warn!("{msg}");
        return Ok(EvalResult::zeros(vec![msg]));
    }

    let images: Vec<(u64, Vec<Detection>, Vec<BBox>)> = gt
        .images
        .iter()
        .map(|r| {
            let mut dets: Vec<Detection> = ranked(&pred.detections(r.id)).into_iter().cloned().collect();
            dets.truncate(max_dets);
            (r.id, dets, gt.boxes(r.id))
        })
        .collect();

    let curves: Vec<PrCurve> = iou_thresholds()
        .into_par_iter()
        .map(|t| {
            let mut pooled: Vec<Scored> = images
                .iter()
                .flat_map(|(id, dets, gts)| {
                    match_detections(dets, gts, t)
                        .detections
                        .into_iter()
                        .enumerate()
                        .map(|(rank, m)| Scored {
                            score: m.score,
                            image_id: *id,
                            rank,
                            tp: m.is_tp(),
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            pooled.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.image_id.cmp(&b.image_id))
                    .then(a.rank.cmp(&b.rank))
            });
            let flags: Vec<bool> = pooled.iter().map(|s| s.tp).collect();
            let points = pr_curve(&flags, n_gt);
            let tp = flags.iter().filter(|f| **f).count();
            PrCurve {
                iou_threshold: t,
                ap: average_precision(&points),
                recall: tp as f64 / n_gt as f64,
                true_positives: tp,
                points,
            }
        })
        .collect();

    let n = curves.len() as f64;
    let at50 = &curves[0];
    let kept = at50.points.len();
    Ok(EvalResult {
        map: curves.iter().map(|c| c.ap).sum::<f64>() / n,
        ap50: curves[0].ap,
        ap75: curves[5].ap,
        ar: curves.iter().map(|c| c.recall).sum::<f64>() / n,
        precision50: if kept == 0 { 0.0 } else { at50.true_positives as f64 / kept as f64 },
        recall50: at50.recall,
        curves,
        warnings: Vec::new(),
    })
}

/// Evaluates in the requested mode. `Stitched` needs the patch layout and the full-image
/// records the ground truth refers to.
pub fn evaluate_with_mode(
    pred: &AnnotationSet,
    gt: &AnnotationSet,
    max_dets: usize,
    mode: EvalMode,
    layout: Option<(&[Patch], &[ImageRecord])>,
    nms_threshold: f64,
) -> Result<EvalResult> {
    match mode {
        EvalMode::Patch => evaluate(pred, gt, max_dets),
        EvalMode::Stitched => {
            let (patches, parents) = layout.ok_or_else(|| {
                Error::Config("stitched evaluation needs the patch layout".into())
            })?;
            let stitched = stitch_patches(pred, patches, parents, nms_threshold)?;
            evaluate(&stitched, gt, max_dets)
        }
    }
}

const COLUMNS: [&str; 6] = ["precision50", "recall50", "map", "ap50", "ap75", "ar"];

fn values(r: &EvalResult) -> [f64; 6] {
    [r.precision50, r.recall50, r.map, r.ap50, r.ap75, r.ar]
}

/// Fixed-width text table, one row per labelled result.
pub fn render_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a EvalResult)>) -> String {
    let rows: Vec<(&str, &EvalResult)> = rows.into_iter().collect();
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let headers = ["Precision", "Recall", "mAP", "AP50", "AP75", "AR"];
    let mut out = format!("{:<label_w$}", "method");
    for h in headers {
        let _ = write!(out, " | {h:>9}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_w + headers.len() * 12));
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for v in values(r) {
            let _ = write!(out, " | {v:>9.3}");
        }
        out.push('\n');
    }
    out
}

pub fn render_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a EvalResult)>) -> String {
    let mut out = format!("label,{}\n", COLUMNS.join(","));
    for (label, r) in rows {
        let vals: Vec<String> = values(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{label},{}", vals.join(","));
    }
    out
}
