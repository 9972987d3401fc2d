use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    augment_nouns, augment_synonyms, compose_prompts, tally_attributes, top_m, AttributeLexicon, AttributeStats,
    PromptBundle, PromptMode, TaggedWord, WordSource,
};
use crate::backends::{Captioner, Grounder, GroundingQuery, SynonymProvider};
use crate::data::{AnnotationSet, SceneImage};
use crate::error::{Error, Result};
use crate::geometry::{square_expand, Detection};
use crate::raster::crop;

pub const DEFAULT_CROP_CAP: usize = 200;

/// Captions square crops around coarse detections.
///
/// When there are more boxes than `crop_cap`, the best-scored ones are kept. Captions come
/// back ordered by image id, then score descending, whatever order the captioner finishes in.
pub fn harvest_captions(
    images: &[SceneImage],
    coarse: &AnnotationSet,
    captioner: &dyn Captioner,
    crop_cap: usize,
) -> Result<Vec<String>> {
    let mut sorted: Vec<&SceneImage> = images.iter().collect();
    sorted.sort_by_key(|im| im.id());
    let mut crops: Vec<(&SceneImage, usize, Detection)> = Vec::new();
    for im in sorted {
        let mut dets = coarse.detections(im.id());
        dets.sort_by(|a, b| a.rank_cmp(b));
        crops.extend(dets.into_iter().enumerate().map(|(rank, d)| (im, rank, d)));
    }
    if crops.len() > crop_cap {
        crops.sort_by(|a, b| {
            b.2.score
                .total_cmp(&a.2.score)
                .then(a.0.id().cmp(&b.0.id()))
                .then(a.1.cmp(&b.1))
        });
        crops.truncate(crop_cap);
        crops.sort_by(|a, b| a.0.id().cmp(&b.0.id()).then(a.1.cmp(&b.1)));
    }

    crops
        .par_iter()
        .map(|(im, rank, det)| {
            let identity = || format!("caption of image {} box {rank} {:?}", im.id(), det.bbox.to_array());
            let (w, h) = (f64::from(im.record.width), f64::from(im.record.height));
            let region = square_expand(&det.bbox, w, h).map_err(|e| Error::Validation(format!("{}: {e}", identity())))?;
            captioner
                .caption(&crop(&im.pixels, &region))
                .map_err(|e| e.with_context(identity()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeConfig {
    pub nouns: Vec<String>,
    pub m: usize,
    pub mode: PromptMode,
    pub attr_aug: bool,
    pub noun_aug: bool,
    /// Synonyms requested per attribute word.
    pub attr_synonyms: usize,
    /// Synonyms requested per noun.
    pub noun_synonyms: usize,
    pub crop_cap: usize,
    /// Threshold for the coarse noun-only detections.
    pub score_threshold: f64,
    pub max_results: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            nouns: vec!["nuclei".into()],
            m: 3,
            mode: PromptMode::Full,
            attr_aug: true,
            noun_aug: false,
            attr_synonyms: 3,
            noun_synonyms: 3,
            crop_cap: DEFAULT_CROP_CAP,
            score_threshold: 0.25,
            max_results: 1000,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nouns.iter().all(|n| n.trim().is_empty()) {
            return Err(Error::Config("at least one target noun is required".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.mode == PromptMode::Manual {
            return Err(Error::Config("manual prompts bypass forging".into()));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!("score threshold {} outside [0, 1]", self.score_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeOutput {
    pub bundle: PromptBundle,
    /// Noun-only detections that were cropped for captioning; empty in noun mode.
    pub coarse: AnnotationSet,
    pub captions: Vec<String>,
    pub stats: AttributeStats,
}

/// Runs the whole prompt design procedure: noun-only grounding, captioning of crops, word
/// statistics, top-m selection, optional synonym augmentation and composition.
pub fn forge(
    images: &[SceneImage],
    grounder: &dyn Grounder,
    captioner: &dyn Captioner,
    provider: &dyn SynonymProvider,
    lexicon: &AttributeLexicon,
    cfg: &ForgeConfig,
) -> Result<ForgeOutput> {
    cfg.validate()?;
    let mut nouns = TaggedWord::tag_all(&cfg.nouns, WordSource::ConfigNoun);
    nouns.retain(|n| !n.text.is_empty());
    if cfg.noun_aug {
        nouns = augment_nouns(&nouns, provider, cfg.noun_synonyms);
    }
    let mut coarse = AnnotationSet::new(images.iter().map(|im| im.record.clone()).collect());
    if !cfg.mode.uses_attributes() {
        let bundle = compose_prompts(&[], &[], &nouns, cfg.mode, cfg.m)?;
        return Ok(ForgeOutput {
            bundle,
            coarse,
            captions: Vec::new(),
            stats: AttributeStats::default(),
        });
    }

    let query: Vec<&str> = nouns.iter().map(|n| n.text.as_str()).collect();
    let query = query.join(". ");
    let found: Vec<(u64, Vec<Detection>)> = images
        .par_iter()
        .map(|im| {
            let q = GroundingQuery::new(im, query.clone(), cfg.score_threshold, cfg.max_results)?;
            let dets = grounder
                .ground(&q)
                .map_err(|e| e.with_context(format!("coarse grounding of image {}", im.id())))?;
            Ok((im.id(), dets))
        })
        .collect::<Result<_>>()?;
    for (id, dets) in &found {
        coarse.set_detections(*id, dets)?;
    }
    log::info!("forge: {} coarse boxes on {} images", coarse.len(), images.len());

    let captions = harvest_captions(images, &coarse, captioner, cfg.crop_cap)?;
    let stats = tally_attributes(&captions, lexicon);
    let (shapes, colors) = top_m(&stats, cfg.m)?;
    log::info!("forge: top shapes {shapes:?}, top colours {colors:?} from {} captions", captions.len());
    let mut shapes = TaggedWord::tag_all(&shapes, WordSource::Captioner);
    let mut colors = TaggedWord::tag_all(&colors, WordSource::Captioner);
    if cfg.attr_aug {
        shapes = augment_synonyms(&shapes, provider, cfg.attr_synonyms);
        colors = augment_synonyms(&colors, provider, cfg.attr_synonyms);
    }
    let bundle = compose_prompts(&shapes, &colors, &nouns, cfg.mode, cfg.m).map_err(|e| match e {
        Error::Config(msg) => Error::Validation(format!("{msg} (found in {} captions)", captions.len())),
        other => other,
    })?;
    Ok(ForgeOutput {
        bundle,
        coarse,
        captions,
        stats,
    })
}
