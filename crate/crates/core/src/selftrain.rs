//! Iterative teacher/student refinement of pseudo-labels.
//!
//! Round 0 labels come from the teacher (a grounding detector driven by a prompt bundle, or a
//! supplied label set). Each later round fits a student on the previous round's labels, runs
//! it over the training images and keeps the filtered detections as the next labels. The loop
//! stops once consecutive label sets agree to within `stability_epsilon` for `patience` rounds,
//! or after `max_rounds`.
//!
//! Ground truth, when given, is only passed to [`evaluate`] on held-out images for the
//! per-round report.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Grounder, GroundingQuery, StudentTrainer};
use crate::data::{to_coco_json, AnnotationSet, SceneImage};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalResult, DEFAULT_MAX_DETS};
use crate::fsutil;
use crate::geometry::{iou, nms, BBox, Detection};
use crate::prompt_forge::{render_query, PromptBundle, QueryStrategy, DEFAULT_MAX_TRIPLETS_PER_QUERY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelFilter {
    pub score_threshold: f64,
    pub nms_threshold: f64,
}

impl LabelFilter {
    /// Drops low scores first, then suppresses overlaps.
    pub fn apply(&self, dets: &[Detection]) -> Vec<Detection> {
        let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= self.score_threshold).cloned().collect();
        nms(&kept, self.nms_threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelUpdate {
    /// Each round's labels are the student's filtered detections only.
    #[default]
    Replace,
    /// Student detections are pooled with the previous labels before filtering.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    pub max_rounds: usize,
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub stability_epsilon: f64,
    pub patience: usize,
    pub seed: u64,
    pub label_update: LabelUpdate,
    pub strategy: QueryStrategy,
    pub max_triplets_per_query: usize,
    /// Per-query cap on teacher detections.
    pub max_results: usize,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            score_threshold: 0.25,
            nms_threshold: 0.5,
            stability_epsilon: 0.02,
            patience: 2,
            seed: 0,
            label_update: LabelUpdate::Replace,
            strategy: QueryStrategy::Concatenated,
            max_triplets_per_query: DEFAULT_MAX_TRIPLETS_PER_QUERY,
            max_results: 1000,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_threshold", self.nms_threshold),
            ("stability_epsilon", self.stability_epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn filter(&self) -> LabelFilter {
        LabelFilter {
            score_threshold: self.score_threshold,
            nms_threshold: self.nms_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 0 is the raw teacher.
    pub round_index: usize,
    /// Path of the label snapshot relative to the run directory.
    pub pseudo_label_ref: String,
    pub filter_config: LabelFilter,
    pub label_count: usize,
    /// Held-out metrics; present only when ground truth was supplied.
    pub metrics_vs_gt: Option<EvalResult>,
    /// Agreement with the previous round's labels; absent for round 0.
    pub stability_vs_previous: Option<f64>,
    /// Whether the stability criterion was met this round.
    pub accepted: bool,
    /// Serialised student model; absent for round 0.
    pub model: Option<serde_json::Value>,
}

/// Where round-0 labels come from.
#[derive(Clone, Copy)]
pub enum TeacherSource<'a> {
    Grounder {
        grounder: &'a dyn Grounder,
        prompts: &'a PromptBundle,
    },
    Labels(&'a AnnotationSet),
}

/// Images and reference boxes used only for reporting.
#[derive(Debug, Clone, Copy)]
pub struct HeldOut<'a> {
    pub images: &'a [SceneImage],
    pub truth: &'a AnnotationSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainOutcome<M> {
    pub reports: Vec<RoundReport>,
    /// Round with the highest held-out AP50 (earliest on ties) when ground truth was given,
    /// otherwise the last round.
    pub best_round: usize,
    pub converged: bool,
    pub final_labels: AnnotationSet,
    pub final_model: Option<M>,
}

/// Symmetric F1 of a one-to-one greedy matching at IoU 0.5 between two label sets over the
/// union of their images. Two empty sets agree perfectly.
pub fn stability(a: &AnnotationSet, b: &AnnotationSet) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let mut ids: Vec<u64> = a.annotations.keys().chain(b.annotations.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let matched: usize = ids
        .par_iter()
        .map(|&id| greedy_pairs(&a.boxes(id), &b.boxes(id)))
        .sum();
    2.0 * matched as f64 / total as f64
}

fn greedy_pairs(a: &[BBox], b: &[BBox]) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let v = iou(x, y);
            if v >= 0.5 {
                pairs.push((v, i, j));
            }
        }
    }
    // Ties ordered by the unordered box pair, so swapping a and b keeps the order.
    let key = |&(_, i, j): &(f64, usize, usize)| {
        let (p, q) = (a[i], b[j]);
        if p.total_cmp(&q).is_le() { (p, q) } else { (q, p) }
    };
    pairs.sort_by(|x, y| {
        y.0.total_cmp(&x.0).then_with(|| {
            let (kx, ky) = (key(x), key(y));
            kx.0.total_cmp(&ky.0).then(kx.1.total_cmp(&ky.1))
        })
    });
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let mut n = 0;
    for (_, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            n += 1;
        }
    }
    n
}

fn record_set(images: &[SceneImage]) -> AnnotationSet {
    AnnotationSet::new(images.iter().map(|im| im.record.clone()).collect())
}

/// Runs every rendered query on every image and keeps the filtered union of the results.
pub fn bootstrap_pseudo_labels(
    grounder: &dyn Grounder,
    prompts: &PromptBundle,
    images: &[SceneImage],
    cfg: &SelfTrainConfig,
) -> Result<AnnotationSet> {
    if prompts.is_empty() {
        return Err(Error::Config("prompt bundle is empty".into()));
    }
    let queries = render_query(prompts, cfg.strategy, cfg.max_triplets_per_query);
    let filter = cfg.filter();
    let per_image: Vec<(u64, Vec<Detection>)> = images
        .par_iter()
        .map(|im| {
            let mut all = Vec::new();
            for q in &queries {
                let query = GroundingQuery::new(im, q.clone(), cfg.score_threshold, cfg.max_results)?;
                let dets = grounder
                    .ground(&query)
                    .map_err(|e| e.with_context(format!("teacher on image {}", im.id())))?;
                all.extend(dets);
            }
            Ok((im.id(), filter.apply(&all)))
        })
        .collect::<Result<_>>()?;
    let mut labels = record_set(images);
    for (id, dets) in &per_image {
        labels.set_detections(*id, dets)?;
    }
    Ok(labels)
}

fn student_labels<T: StudentTrainer>(
    trainer: &T,
    model: &T::Model,
    images: &[SceneImage],
    filter: &LabelFilter,
) -> Result<AnnotationSet> {
    let per_image: Vec<(u64, Vec<Detection>)> = images
        .par_iter()
        .map(|im| {
            let dets = trainer
                .detect(model, im)
                .map_err(|e| e.with_context(format!("student on image {}", im.id())))?;
            Ok((im.id(), filter.apply(&dets)))
        })
        .collect::<Result<_>>()?;
    let mut labels = record_set(images);
    for (id, dets) in &per_image {
        labels.set_detections(*id, dets)?;
    }
    Ok(labels)
}

/// Fits a student on `teacher_labels` and returns it with its filtered labels on `images`.
pub fn run_round<T: StudentTrainer>(
    trainer: &T,
    teacher_labels: &AnnotationSet,
    images: &[SceneImage],
    cfg: &SelfTrainConfig,
) -> Result<(T::Model, AnnotationSet)> {
    if teacher_labels.is_empty() {
        return Err(Error::Fit("teacher produced no labels".into()));
    }
    let model = trainer.fit(teacher_labels, images)?;
    let filter = cfg.filter();
    let mut labels = student_labels(trainer, &model, images, &filter)?;
    if cfg.label_update == LabelUpdate::Union {
        for im in images {
            let mut pooled = teacher_labels.detections(im.id());
            pooled.extend(labels.detections(im.id()));
            labels.set_detections(im.id(), &filter.apply(&pooled))?;
        }
    }
    Ok((model, labels))
}

/// A self-training output directory.
///
/// Layout: `run_config.json`, `rounds/<k>/pseudo_labels.json`, `rounds/<k>/report.json`,
/// `summary.json`. Every file is written atomically.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Refuses a directory that already holds a run unless `force` is set, in which case the
    /// previous run's files are removed first.
    pub fn create(root: &Path, force: bool) -> Result<Self> {
        let existing = ["run_config.json", "rounds", "summary.json"]
            .iter()
            .map(|n| root.join(n))
            .filter(|p| p.exists())
            .collect::<Vec<_>>();
        if !existing.is_empty() {
            if !force {
                return Err(Error::Config(format!(
                    "{} already contains a run; pass --force to overwrite it",
                    root.display()
                )));
            }
            for p in existing {
                let r = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
                r.map_err(|e| Error::io(&p, e))?;
            }
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn labels_ref(round: usize) -> String {
        format!("rounds/{round}/pseudo_labels.json")
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serialisable");
        text.push('\n');
        fsutil::write_atomic(&self.root.join(rel), text.as_bytes())
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        fsutil::write_atomic(&self.root.join(rel), text.as_bytes())
    }

    pub fn write_round(&self, labels: &AnnotationSet, report: &RoundReport) -> Result<()> {
        let k = report.round_index;
        self.write_text(&Self::labels_ref(k), &to_coco_json(labels))?;
        self.write_json(&format!("rounds/{k}/report.json"), report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_round: usize,
    pub converged: bool,
    pub rounds: usize,
    pub stopping_rule: String,
}

/// Runs the teacher, then student rounds until the labels stabilise or `max_rounds` is hit.
pub fn run_self_training<T: StudentTrainer>(
    teacher: TeacherSource<'_>,
    trainer: &T,
    train: &[SceneImage],
    cfg: &SelfTrainConfig,
    held_out: Option<HeldOut<'_>>,
    run_dir: Option<&RunDir>,
) -> Result<SelfTrainOutcome<T::Model>> {
    cfg.validate()?;
    let filter = cfg.filter();
    let evaluate_on = |pred: &AnnotationSet| -> Result<Option<EvalResult>> {
        held_out.map(|h| evaluate(pred, h.truth, DEFAULT_MAX_DETS)).transpose()
    };

    let (mut labels, teacher_on_test) = match teacher {
        TeacherSource::Grounder { grounder, prompts } => {
            let labels = bootstrap_pseudo_labels(grounder, prompts, train, cfg)?;
            let test = match held_out {
                Some(h) => Some(bootstrap_pseudo_labels(grounder, prompts, h.images, cfg)?),
                None => None,
            };
            (labels, test)
        }
        TeacherSource::Labels(set) => {
            let ids: Vec<u64> = train.iter().map(|im| im.id()).collect();
            let test = held_out.map(|h| set.subset(&h.truth.image_ids()));
            (set.subset(&ids), test)
        }
    };
    let mut reports = vec![RoundReport {
        round_index: 0,
        pseudo_label_ref: RunDir::labels_ref(0),
        filter_config: filter,
        label_count: labels.len(),
        metrics_vs_gt: teacher_on_test.as_ref().map(evaluate_on).transpose()?.flatten(),
        stability_vs_previous: None,
        accepted: false,
        model: None,
    }];
    log::info!("round 0: {} teacher labels", labels.len());
    if let Some(dir) = run_dir {
        dir.write_round(&labels, &reports[0])?;
    }

    let mut streak = 0;
    let mut converged = false;
    let mut final_model = None;
    for k in 1..=cfg.max_rounds {
        let (model, next) =
            run_round(trainer, &labels, train, cfg).map_err(|e| wrap_round(e, k))?;
        let s = stability(&next, &labels);
        let accepted = s >= 1.0 - cfg.stability_epsilon;
        streak = if accepted { streak + 1 } else { 0 };
        let metrics = match held_out {
            Some(h) => evaluate_on(&student_labels(trainer, &model, h.images, &filter)?)?,
            None => None,
        };
        let report = RoundReport {
            round_index: k,
            pseudo_label_ref: RunDir::labels_ref(k),
            filter_config: filter,
            label_count: next.len(),
            metrics_vs_gt: metrics,
            stability_vs_previous: Some(s),
            accepted,
            model: Some(serde_json::to_value(&model).expect("model serialises")),
        };
        log::info!("round {k}: {} labels, stability {s:.4}", next.len());
        if let Some(dir) = run_dir {
            dir.write_round(&next, &report)?;
        }
        reports.push(report);
        labels = next;
        final_model = Some(model);
        if streak >= cfg.patience {
            converged = true;
            break;
        }
    }

    let best_round = if held_out.is_some() {
        let mut best = 0;
        for (i, r) in reports.iter().enumerate() {
            let ap = |r: &RoundReport| r.metrics_vs_gt.as_ref().map_or(f64::NEG_INFINITY, |m| m.ap50);
            if ap(r) > ap(&reports[best]) {
                best = i;
            }
        }
        best
    } else {
        reports.len() - 1
    };
    if let Some(dir) = run_dir {
        dir.write_json(
            "summary.json",
            &RunSummary {
                best_round,
                converged,
                rounds: reports.len(),
                stopping_rule: format!(
                    "label stability >= {} for {} consecutive rounds, at most {} rounds",
                    1.0 - cfg.stability_epsilon,
                    cfg.patience,
                    cfg.max_rounds
                ),
            },
        )?;
    }
    Ok(SelfTrainOutcome {
        reports,
        best_round,
        converged,
        final_labels: labels,
        final_model,
    })
}

fn wrap_round(e: Error, k: usize) -> Error {
    match e {
        Error::Fit(msg) => Error::Fit(format!("round {k}: {msg}")),
        other => other.with_context(format!("round {k}")),
    }
}
