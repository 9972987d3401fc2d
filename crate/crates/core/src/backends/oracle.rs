use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{finalize_detections, Grounder, GroundingQuery};
use crate::data::AnnotationSet;
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub tp_mean: f64,
    pub fp_mean: f64,
    /// Half-width of the uniform score noise around each mean.
    pub spread: f64,
}

/// Noise applied by [`OracleGrounder`]: independent drops, uniform jitter, and Poisson false
/// positives placed uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNoiseConfig {
    pub drop_rate: f64,
    /// Maximum absolute perturbation of each of x, y, w, h.
    pub jitter_px: f64,
    /// Expected false positives per image.
    pub fp_rate: f64,
    pub score_distribution: ScoreDistribution,
    pub seed: u64,
}

impl OracleNoiseConfig {
    /// No drops, no jitter, no false positives; every box scores `tp_mean`.
    pub fn noiseless(tp_mean: f64) -> Self {
        Self {
            drop_rate: 0.0,
            jitter_px: 0.0,
            fp_rate: 0.0,
            score_distribution: ScoreDistribution {
                tp_mean,
                fp_mean: tp_mean,
                spread: 0.0,
            },
            seed: 0,
        }
    }

    /// A high-precision, low-recall teacher: 60% of objects missed, about one false positive
    /// for every ten kept boxes on scenes of ~40 objects.
    pub fn weak_teacher(seed: u64) -> Self {
        Self {
            drop_rate: 0.6,
            jitter_px: 1.0,
            fp_rate: 1.8,
            score_distribution: ScoreDistribution {
                tp_mean: 0.7,
                fp_mean: 0.5,
                spread: 0.2,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.score_distribution;
        let checks = [
            ((0.0..=1.0).contains(&self.drop_rate), "drop_rate must be in [0, 1]"),
            (self.jitter_px >= 0.0, "jitter_px must be non-negative"),
            (self.fp_rate >= 0.0 && self.fp_rate.is_finite(), "fp_rate must be non-negative"),
            ((0.0..=1.0).contains(&s.tp_mean), "tp_mean must be in [0, 1]"),
            ((0.0..=1.0).contains(&s.fp_mean), "fp_mean must be in [0, 1]"),
            (s.spread >= 0.0, "score spread must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config(format!("oracle noise: {msg}"))),
            None => Ok(()),
        }
    }
}

/// Simulated grounding detector built from reference boxes.
///
/// Output depends only on the image id and the noise seed, not on the query text, so repeated
/// queries for the same image return identical boxes.
#[derive(Debug, Clone)]
pub struct OracleGrounder {
    truth: AnnotationSet,
    noise: OracleNoiseConfig,
}

impl OracleGrounder {
    pub fn new(truth: AnnotationSet, noise: OracleNoiseConfig) -> Result<Self> {
        noise.validate()?;
        Ok(Self { truth, noise })
    }

    pub fn noise(&self) -> &OracleNoiseConfig {
        &self.noise
    }

    fn raw_detections(&self, query: &GroundingQuery<'_>) -> Result<Vec<Detection>> {
        let image = &query.image.record;
        if self.truth.image(image.id).is_none() {
            return Err(Error::Backend {
                context: format!("oracle grounder, image {}", image.id),
                message: "no reference boxes for this image".into(),
                retriable: false,
            });
        }
        let phrases = query.phrases();
        let phrase = |i: usize| phrases.get(i % phrases.len().max(1)).copied().unwrap_or("").to_string();
        let n = &self.noise;
        let sd = &n.score_distribution;
        let mut rng = seed::rng(n.seed, &[image.id]);
        let score = |rng: &mut rand_chacha::ChaCha8Rng, mean: f64| {
            (mean + rng.random_range(-1.0..=1.0) * sd.spread).clamp(0.0, 1.0)
        };

        let truth = self.truth.boxes(image.id);
        let mut out = Vec::with_capacity(truth.len());
        for (i, b) in truth.iter().enumerate() {
            let dropped = rng.random::<f64>() < n.drop_rate;
            let mut j = [0.0f64; 4];
            for v in &mut j {
                *v = rng.random_range(-1.0..=1.0) * n.jitter_px;
            }
            let s = score(&mut rng, sd.tp_mean);
            if dropped {
                continue;
            }
            let bbox = BBox::new(b.x() + j[0], b.y() + j[1], (b.w() + j[2]).max(1.0), (b.h() + j[3]).max(1.0))?;
            out.push(Detection { bbox, score: s, phrase: phrase(i) });
        }

        let n_fp = if n.fp_rate > 0.0 {
            Poisson::new(n.fp_rate)
                .map_err(|e| Error::Config(format!("oracle fp_rate: {e}")))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        let (iw, ih) = (f64::from(image.width), f64::from(image.height));
        for i in 0..n_fp {
            let (w, h) = if truth.is_empty() {
                (10.0f64.min(iw), 10.0f64.min(ih))
            } else {
                let t = truth[rng.random_range(0..truth.len())];
                (t.w().min(iw), t.h().min(ih))
            };
            let x = rng.random_range(0.0..=iw - w);
            let y = rng.random_range(0.0..=ih - h);
            let s = score(&mut rng, sd.fp_mean);
            out.push(Detection {
                bbox: BBox::new(x, y, w, h)?,
                score: s,
                phrase: phrase(truth.len() + i),
            });
        }
        Ok(out)
    }
}

impl Grounder for OracleGrounder {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<Vec<Detection>> {
        Ok(finalize_detections(self.raw_detections(query)?, query))
    }
}
