//! Model capabilities and their implementations.
//!
//! The pipeline talks to models only through the traits in this module. Builtin
//! implementations are deterministic functions of their inputs and seed:
//!
//! * [`OracleGrounder`] perturbs known boxes with a configurable noise model, standing in for
//!   a grounding detector of known precision and recall.
//! * [`TemplateCaptioner`] describes the central blob of a crop by hue and elongation.
//! * [`StaticSynonyms`] serves a fixed synonym table.
//! * [`BlobStudent`] is a threshold/connected-component detector fit by grid search.
//!
//! [`remote::RemoteBackend`] implements every capability over HTTP.

mod captioner;
mod oracle;
pub mod remote;
mod student;
mod synonyms;

use std::fmt::Debug;
use std::sync::Arc;

use image::RgbImage;
use serde::Serialize;

use crate::data::{AnnotationSet, SceneImage};
use crate::error::{Error, Result};
use crate::geometry::{clip, Detection};

pub use captioner::{ScriptedCaptioner, TemplateCaptioner, PLAIN_BACKGROUND_CAPTION};
pub use oracle::{OracleGrounder, OracleNoiseConfig, ScoreDistribution};
pub use student::{fit_student, student_detect, BlobStudent, SearchSpace, StudentFit, StudentParams};
pub use synonyms::StaticSynonyms;

#[derive(Debug, Clone)]
pub struct GroundingQuery<'a> {
    pub image: &'a SceneImage,
    pub query: String,
    pub score_threshold: f64,
    pub max_results: usize,
}

impl<'a> GroundingQuery<'a> {
    pub fn new(
        image: &'a SceneImage,
        query: impl Into<String>,
        score_threshold: f64,
        max_results: usize,
    ) -> Result<Self> {
        let query = query.into();
        if query.trim().is_empty() {
            return Err(Error::Config("grounding query is empty".into()));
        }
        if !(0.0..=1.0).contains(&score_threshold) {
            return Err(Error::Config(format!(
                "score threshold {score_threshold} outside [0, 1]"
            )));
        }
        Ok(Self {
            image,
            query,
            score_threshold,
            max_results,
        })
    }

    /// Phrases of the query, split on `.` separators.
    pub fn phrases(&self) -> Vec<&str> {
        self.query
            .split('.')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .collect()
    }
}

/// Enforces the grounding post-conditions: boxes clipped to the image, scores at or above the
/// threshold, best `max_results` kept in rank order.
pub fn finalize_detections(dets: Vec<Detection>, query: &GroundingQuery<'_>) -> Vec<Detection> {
    let (w, h) = (
        f64::from(query.image.record.width),
        f64::from(query.image.record.height),
    );
    let mut kept: Vec<Detection> = dets
        .into_iter()
        .filter(|d| d.score >= query.score_threshold)
        .filter_map(|d| clip(&d.bbox, w, h).ok().map(|bbox| Detection { bbox, ..d }))
        .collect();
    kept.sort_by(|a, b| a.rank_cmp(b));
    kept.truncate(query.max_results);
    kept
}

/// Phrase-grounding detector.
pub trait Grounder: Send + Sync {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<Vec<Detection>>;
}

/// Image-to-text model.
pub trait Captioner: Send + Sync {
    fn caption(&self, crop: &RgbImage) -> Result<String>;
}

/// Source of related words. Implementations return at most `k` distinct words, never the
/// input word itself.
pub trait SynonymProvider: Send + Sync {
    fn synonyms(&self, word: &str, k: usize) -> Result<Vec<String>>;
}

/// A detector that can be trained on pseudo-labels and then run on images.
pub trait StudentTrainer: Send + Sync {
    type Model: Clone + Debug + Send + Sync + Serialize;

    fn fit(&self, pseudo: &AnnotationSet, images: &[SceneImage]) -> Result<Self::Model>;

    fn detect(&self, model: &Self::Model, image: &SceneImage) -> Result<Vec<Detection>>;
}

impl<T: Grounder + ?Sized> Grounder for &T {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<Vec<Detection>> {
        (**self).ground(query)
    }
}

impl<T: Captioner + ?Sized> Captioner for &T {
    fn caption(&self, crop: &RgbImage) -> Result<String> {
        (**self).caption(crop)
    }
}

impl<T: SynonymProvider + ?Sized> SynonymProvider for &T {
    fn synonyms(&self, word: &str, k: usize) -> Result<Vec<String>> {
        (**self).synonyms(word, k)
    }
}

impl<T: Grounder + ?Sized> Grounder for Box<T> {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<Vec<Detection>> {
        (**self).ground(query)
    }
}

impl<T: Captioner + ?Sized> Captioner for Box<T> {
    fn caption(&self, crop: &RgbImage) -> Result<String> {
        (**self).caption(crop)
    }
}

impl<T: SynonymProvider + ?Sized> SynonymProvider for Box<T> {
    fn synonyms(&self, word: &str, k: usize) -> Result<Vec<String>> {
        (**self).synonyms(word, k)
    }
}

impl<T: Grounder + ?Sized> Grounder for Arc<T> {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<Vec<Detection>> {
        (**self).ground(query)
    }
}

impl<T: Captioner + ?Sized> Captioner for Arc<T> {
    fn caption(&self, crop: &RgbImage) -> Result<String> {
        (**self).caption(crop)
    }
}

impl<T: SynonymProvider + ?Sized> SynonymProvider for Arc<T> {
    fn synonyms(&self, word: &str, k: usize) -> Result<Vec<String>> {
        (**self).synonyms(word, k)
    }
}
