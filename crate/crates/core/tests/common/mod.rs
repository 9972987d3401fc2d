//! Test-only helpers: an independent brute-force COCO evaluator, an exhaustive NMS reference,
//! and random instance generators.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zeroshot_nuclei::data::{Annotation, AnnotationSet, ImageRecord, NUCLEI_CATEGORY};
use zeroshot_nuclei::geometry::{iou, BBox, Detection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteMetrics {
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub precision50: f64,
    pub recall50: f64,
}

fn det_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then(a.bbox.x().partial_cmp(&b.bbox.x()).unwrap())
        .then(a.bbox.y().partial_cmp(&b.bbox.y()).unwrap())
        .then(a.bbox.w().partial_cmp(&b.bbox.w()).unwrap())
        .then(a.bbox.h().partial_cmp(&b.bbox.h()).unwrap())
}

/// Interpolated precision at recall level `step/100`, by scanning every cut-off of the ranked
/// list and comparing recall against the level in exact integer arithmetic.
fn interpolated_precision(flags: &[bool], n_gt: usize, step: usize) -> f64 {
    let mut best = 0.0f64;
    let mut tp = 0usize;
    for (k, f) in flags.iter().enumerate() {
        if *f {
            tp += 1;
        }
        if tp * 100 >= step * n_gt {
            best = best.max(tp as f64 / (k + 1) as f64);
        }
    }
    best
}

/// Evaluates by enumerating matches per threshold and cut-offs per recall level directly.
pub fn brute_force_evaluate(pred: &AnnotationSet, gt: &AnnotationSet, max_dets: usize) -> BruteMetrics {
    let n_gt: usize = gt.images.iter().map(|r| gt.get(r.id).len()).sum();
    if n_gt == 0 {
        return BruteMetrics {
            map: 0.0,
            ap50: 0.0,
            ap75: 0.0,
            ar: 0.0,
            precision50: 0.0,
            recall50: 0.0,
        };
    }
    let mut aps = Vec::new();
    let mut recalls = Vec::new();
    let mut p50 = 0.0;
    for t_idx in 0..10 {
        let t = (50 + 5 * t_idx) as f64 / 100.0;
        // (score, image id, rank, tp)
        let mut all: Vec<(f64, u64, usize, bool)> = Vec::new();
        for r in &gt.images {
            let mut dets: Vec<Detection> = pred
                .get(r.id)
                .iter()
                .map(|a| Detection {
                    bbox: a.bbox,
                    score: a.score.unwrap_or(1.0),
                    phrase: String::new(),
                })
                .collect();
            dets.sort_by(det_order);
            dets.truncate(max_dets);
            let gts: Vec<BBox> = gt.get(r.id).iter().map(|a| a.bbox).collect();
            let mut taken = vec![false; gts.len()];
            for (rank, d) in dets.iter().enumerate() {
                let mut choice: Option<usize> = None;
                let mut choice_iou = -1.0;
                for j in 0..gts.len() {
                    let v = iou(&d.bbox, &gts[j]);
                    if !taken[j] && v >= t && v > choice_iou {
                        choice = Some(j);
                        choice_iou = v;
                    }
                }
                if let Some(j) = choice {
                    taken[j] = true;
                }
                all.push((d.score, r.id, rank, choice.is_some()));
            }
        }
        all.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let flags: Vec<bool> = all.iter().map(|x| x.3).collect();
        let ap = (0..=100)
            .map(|step| interpolated_precision(&flags, n_gt, step))
            .sum::<f64>()
            / 101.0;
        let tp = flags.iter().filter(|f| **f).count();
        aps.push(ap);
        recalls.push(tp as f64 / n_gt as f64);
        if t_idx == 0 {
            p50 = if flags.is_empty() { 0.0 } else { tp as f64 / flags.len() as f64 };
        }
    }
    BruteMetrics {
        map: aps.iter().sum::<f64>() / 10.0,
        ap50: aps[0],
        ap75: aps[5],
        ar: recalls.iter().sum::<f64>() / 10.0,
        precision50: p50,
        recall50: recalls[0],
    }
}

/// Keeps a detection iff no higher-ranked kept detection overlaps it at or above the
/// threshold, using a precomputed suppression matrix.
pub fn exhaustive_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| det_order(&dets[i], &dets[j]));
    let n = order.len();
    let mut suppresses = vec![vec![false; n]; n];
    for a in 0..n {
        for b in 0..n {
            suppresses[a][b] = iou(&dets[order[a]].bbox, &dets[order[b]].bbox) >= thr;
        }
    }
    let mut kept = vec![false; n];
    for b in 0..n {
        kept[b] = (0..b).all(|a| !(kept[a] && suppresses[a][b]));
    }
    (0..n).filter(|&b| kept[b]).map(|b| dets[order[b]].clone()).collect()
}

pub fn image_records(n: u64, size: u32) -> Vec<ImageRecord> {
    (1..=n)
        .map(|id| ImageRecord {
            id,
            file_name: format!("img_{id}.png"),
            width: size,
            height: size,
        })
        .collect()
}

/// Random small instance: up to 3 images, up to 10 GT and 10 detections each. Detections are
/// mostly perturbed copies of GT boxes so that matches occur across the IoU sweep; scores are
/// coarsely quantised to exercise tie handling.
pub fn random_instance(seed: u64) -> (AnnotationSet, AnnotationSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_images = rng.random_range(1..=3);
    let images = image_records(n_images, 100);
    let mut gt = AnnotationSet::new(images.clone());
    let mut pred = AnnotationSet::new(images);
    for id in 1..=n_images {
        let n_gt = rng.random_range(0..=10);
        let mut gts = Vec::new();
        for _ in 0..n_gt {
            let b = BBox::new(
                rng.random_range(0.0..80.0),
                rng.random_range(0.0..80.0),
                rng.random_range(4.0..20.0),
                rng.random_range(4.0..20.0),
            )
            .unwrap();
            gts.push(b);
            gt.push(id, Annotation { bbox: b, category_id: NUCLEI_CATEGORY, score: None }).unwrap();
        }
        let n_det = rng.random_range(0..=10);
        for _ in 0..n_det {
            let bbox = if !gts.is_empty() && rng.random_bool(0.75) {
                let g = gts[rng.random_range(0..gts.len())];
                let j = rng.random_range(0.0..0.35);
                BBox::new(
                    g.x() + rng.random_range(-j..=j) * g.w(),
                    g.y() + rng.random_range(-j..=j) * g.h(),
                    g.w() * (1.0 + rng.random_range(-j..=j)),
                    g.h() * (1.0 + rng.random_range(-j..=j)),
                )
                .unwrap()
            } else {
                BBox::new(
                    rng.random_range(0.0..90.0),
                    rng.random_range(0.0..90.0),
                    rng.random_range(3.0..20.0),
                    rng.random_range(3.0..20.0),
                )
                .unwrap()
            };
            let score = (rng.random_range(0..=10) as f64) / 10.0;
            pred.push(id, Annotation { bbox, category_id: NUCLEI_CATEGORY, score: Some(score) }).unwrap();
        }
    }
    (pred, gt)
}

pub fn random_detections(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let bbox = BBox::new(
                rng.random_range(0.0..60.0),
                rng.random_range(0.0..60.0),
                rng.random_range(2.0..30.0),
                rng.random_range(2.0..30.0),
            )
            .unwrap();
            // Coarse scores force ties.
            Detection::new(bbox, rng.random_range(0..=20) as f64 / 20.0, "").unwrap()
        })
        .collect()
}
