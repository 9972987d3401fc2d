//! HTTP client for model servers speaking the JSON wire protocol.
//!
//! | endpoint | request | response |
//! |---|---|---|
//! | `POST /v1/ground` | [`GroundRequest`] | [`DetectionsResponse`] |
//! | `POST /v1/caption` | [`CaptionRequest`] | [`CaptionResponse`] |
//! | `POST /v1/synonyms` | [`SynonymsRequest`] | [`SynonymsResponse`] |
//! | `POST /v1/train` | [`TrainRequest`] | [`TrainResponse`] |
//! | `POST /v1/detect` | [`DetectRequest`] | [`DetectionsResponse`] |
//!
//! Failures come back as [`ErrorBody`] with a 4xx/5xx status. The code `"overloaded"` is
//! retriable, as are transport failures; anything else fails immediately.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{finalize_detections, Captioner, Grounder, GroundingQuery, StudentTrainer, SynonymProvider};
use crate::data::to_coco_json;
use crate::data::{AnnotationSet, SceneImage};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};

pub const OVERLOADED: &str = "overloaded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundRequest {
    pub image: String,
    pub query: String,
    pub score_threshold: f64,
    pub max_results: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub score: f64,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsResponse {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRequest {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynonymsRequest {
    pub word: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymsResponse {
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    /// A COCO document.
    pub annotations: serde_json::Value,
    pub image_root: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub model_id: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

/// How scene images travel to the server.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ImageTransport {
    /// Base64-encoded PNG bytes.
    #[default]
    Inline,
    /// `root.join(file_name)`, for servers sharing the client's filesystem. Crops are always
    /// sent inline.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Server root, e.g. `http://localhost:8080`.
    pub base_url: String,
    pub timeout: Duration,
    /// Total attempts for retriable failures.
    pub attempts: u32,
    /// Delay before the second attempt; doubled for each later one.
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub transport: ImageTransport,
    /// Image directory the server reads when training; required by [`StudentTrainer::fit`].
    pub image_root: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            attempts: 3,
            backoff: Duration::from_millis(200),
            max_in_flight: 4,
            transport: ImageTransport::Inline,
            image_root: None,
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Implements every capability against a remote server.
#[derive(Debug)]
pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

pub fn encode_png(img: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| Error::Image {
        path: PathBuf::from("<in-memory>"),
        source: e,
    })?;
    Ok(BASE64.encode(buf.into_inner()))
}

pub fn decode_png(data: &str) -> Result<RgbImage> {
    let bytes = BASE64
        .decode(data)
        .map_err(|e| Error::Validation(format!("invalid base64 image: {e}")))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Image {
            path: PathBuf::from("<in-memory>"),
            source: e,
        })
}

fn transport_error(context: &str, e: &ureq::Error) -> Error {
    let retriable = matches!(
        e,
        ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound
    );
    Error::Backend {
        context: context.to_string(),
        message: e.to_string(),
        retriable,
    }
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if !(cfg.base_url.starts_with("http://") || cfg.base_url.starts_with("https://")) {
            return Err(Error::Config(format!("remote backend URL {:?} must be http(s)", cfg.base_url)));
        }
        if cfg.attempts == 0 {
            return Err(Error::Config("remote backend needs at least one attempt".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        Ok(Self { cfg, agent, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn scene_image(&self, image: &SceneImage) -> Result<String> {
        match &self.cfg.transport {
            ImageTransport::Inline => encode_png(&image.pixels),
            ImageTransport::Path(root) => Ok(root.join(&image.record.file_name).to_string_lossy().into_owned()),
        }
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{endpoint}", self.cfg.base_url);
        let _permit = self.gate.acquire();
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| transport_error(endpoint, &e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| transport_error(endpoint, &e))?;
        if (200..300).contains(&status) {
            return serde_json::from_str(&text).map_err(|e| Error::Protocol {
                context: endpoint.to_string(),
                message: format!("malformed response: {e}"),
            });
        }
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(ErrorBody { error }) => Err(Error::Backend {
                context: endpoint.to_string(),
                message: format!("HTTP {status} {}: {}", error.code, error.message),
                retriable: error.code == OVERLOADED,
            }),
            Err(_) => Err(Error::Protocol {
                context: endpoint.to_string(),
                message: format!("HTTP {status} without an error body"),
            }),
        }
    }

    /// POSTs `body` and decodes the reply, retrying retriable failures with exponential backoff.
    pub fn call<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp> {
        let mut delay = self.cfg.backoff;
        let mut tries = 0;
        loop {
            tries += 1;
            match self.attempt(endpoint, body) {
                Err(e) if e.is_retriable() && tries < self.cfg.attempts => {
                    log::warn!("{e}; retrying in {delay:?} (attempt {tries} of {})", self.cfg.attempts);
                    thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    }

    fn detections(&self, endpoint: &str, resp: DetectionsResponse) -> Result<Vec<Detection>> {
        resp.detections
            .into_iter()
            .map(|d| {
                let [x, y, w, h] = d.bbox;
                BBox::new(x, y, w, h)
                    .and_then(|bbox| Detection::new(bbox, d.score, d.phrase))
                    .map_err(|e| Error::Protocol {
                        context: endpoint.to_string(),
                        message: e.to_string(),
                    })
            })
            .collect()
    }
}

impl Grounder for RemoteBackend {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<Vec<Detection>> {
        let req = GroundRequest {
            image: self.scene_image(query.image)?,
            query: query.query.clone(),
            score_threshold: query.score_threshold,
            max_results: query.max_results,
        };
        let resp = self.call("/v1/ground", &req)?;
        let dets = self.detections("/v1/ground", resp)?;
        Ok(finalize_detections(dets, query))
    }
}

impl Captioner for RemoteBackend {
    fn caption(&self, crop: &RgbImage) -> Result<String> {
        let resp: CaptionResponse = self.call("/v1/caption", &CaptionRequest { image: encode_png(crop)? })?;
        Ok(resp.text)
    }
}

impl SynonymProvider for RemoteBackend {
    fn synonyms(&self, word: &str, k: usize) -> Result<Vec<String>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let req = SynonymsRequest {
            word: word.to_string(),
            k,
        };
        let resp: SynonymsResponse = self.call("/v1/synonyms", &req)?;
        let word = word.to_lowercase();
        let mut out: Vec<String> = Vec::new();
        for w in resp.words.into_iter().map(|w| w.trim().to_lowercase()) {
            if out.len() < k && !w.is_empty() && w != word && !out.contains(&w) {
                out.push(w);
            }
        }
        Ok(out)
    }
}

impl StudentTrainer for RemoteBackend {
    /// Server-side model id.
    type Model = String;

    fn fit(&self, pseudo: &AnnotationSet, _images: &[SceneImage]) -> Result<String> {
        if pseudo.is_empty() {
            return Err(Error::Fit("pseudo-label set is empty".into()));
        }
        let root = self
            .cfg
            .image_root
            .as_ref()
            .ok_or_else(|| Error::Config("remote training needs an image root".into()))?;
        let annotations = serde_json::from_str(&to_coco_json(pseudo)).expect("COCO output is valid JSON");
        let req = TrainRequest {
            annotations,
            image_root: root.to_string_lossy().into_owned(),
        };
        let resp: TrainResponse = self.call("/v1/train", &req)?;
        Ok(resp.model_id)
    }

    fn detect(&self, model: &String, image: &SceneImage) -> Result<Vec<Detection>> {
        let req = DetectRequest {
            model_id: model.clone(),
            image: self.scene_image(image)?,
        };
        let resp = self.call("/v1/detect", &req)?;
        self.detections("/v1/detect", resp)
    }
}
