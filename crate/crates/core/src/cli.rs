//! The `synth`, `forge`, `detect`, `selftrain` and `eval` commands. Each is a plain function
//! over a resolved [`RunConfig`]; the binary only parses flags into one.
//!
//! Exit codes: 0 success, 2 configuration error, 3 backend error, 4 data validation error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backends::remote::{RemoteBackend, RemoteConfig};
use crate::backends::{
    BlobStudent, Captioner, Grounder, OracleGrounder, OracleNoiseConfig, StaticSynonyms, SynonymProvider,
    TemplateCaptioner,
};
use crate::data::{
    extract_patches, generate_synthetic_dataset, load_annotations, load_images, plan_patches, project_to_patches,
    save_annotations, save_images, split_dataset, AnnotationSet, SceneImage, SyntheticSceneConfig, TileSpec,
    DEFAULT_MIN_OVERLAP,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, render_csv, render_table, EvalResult, DEFAULT_MAX_DETS};
use crate::fsutil;
use crate::prompt_forge::{
    forge, render_query, AttributeLexicon, ForgeConfig, ForgeOutput, PromptBundle, PromptMode, QueryStrategy,
};
use crate::selftrain::{
    bootstrap_pseudo_labels, run_self_training, HeldOut, LabelUpdate, RoundReport, RunDir, SelfTrainConfig,
    TeacherSource,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_DATA: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io { .. } => EXIT_CONFIG,
        Error::Backend { .. } | Error::Protocol { .. } | Error::Fit(_) => EXIT_BACKEND,
        Error::InvalidBox(_)
        | Error::EmptyClip { .. }
        | Error::Validation(_)
        | Error::Parse { .. }
        | Error::Image { .. } => EXIT_DATA,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Training images; defaults to 16/30 of the dataset, rounded up.
    pub train: Option<usize>,
    /// Test images; defaults to the rest.
    pub test: Option<usize>,
    /// Validation images drawn from the training set.
    pub val: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            val: 4,
        }
    }
}

impl SplitConfig {
    fn counts(&self, total: usize) -> Result<(usize, usize, usize)> {
        let (train, test) = match (self.train, self.test) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, total.saturating_sub(a)),
            (None, Some(b)) => (total.saturating_sub(b), b),
            (None, None) => {
                let a = (total * 16).div_ceil(30);
                (a, total - a)
            }
        };
        if train + test != total {
            return Err(Error::Config(format!(
                "split of {train} train + {test} test does not cover the {total} images"
            )));
        }
        Ok((train, test, self.val.min(train)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub scene: SyntheticSceneConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 30,
            scene: SyntheticSceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    pub max_in_flight: usize,
    pub attempts: u32,
    pub timeout_secs: u64,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            attempts: 3,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub max_dets: usize,
    /// Where to write the CSV report; defaults to `<out>/eval.csv` when `out` is set.
    pub csv: Option<PathBuf>,
    pub label: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            pred: None,
            gt: None,
            max_dets: DEFAULT_MAX_DETS,
            csv: None,
            label: "predictions".into(),
        }
    }
}

/// Everything a command needs. Loaded from JSON, then overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `builtin` or `remote:<url>`.
    pub backend: String,
    /// COCO file listing the images; its boxes drive the builtin teacher and evaluation.
    pub dataset: Option<PathBuf>,
    /// Directory image file names are relative to; defaults to the dataset file's directory.
    pub images_root: Option<PathBuf>,
    /// Cut every image into patches before running the pipeline.
    pub tile: Option<TileSpec>,
    pub split: SplitConfig,
    pub synth: SynthConfig,
    /// Noise of the builtin teacher.
    pub oracle: OracleNoiseConfig,
    pub remote: RemoteSettings,
    pub lexicon: Option<PathBuf>,
    pub forge: ForgeConfig,
    pub selftrain: SelfTrainConfig,
    /// Prompt bundle produced by `forge`.
    pub prompts: Option<PathBuf>,
    /// Literal prompt used verbatim instead of a bundle.
    pub prompt: Option<String>,
    pub force: bool,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            backend: "builtin".into(),
            dataset: None,
            images_root: None,
            tile: None,
            split: SplitConfig::default(),
            synth: SynthConfig::default(),
            oracle: OracleNoiseConfig::weak_teacher(0),
            remote: RemoteSettings::default(),
            lexicon: None,
            forge: ForgeConfig::default(),
            selftrain: SelfTrainConfig::default(),
            prompts: None,
            prompt: None,
            force: false,
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!(
                "{}: {e} (line {}, column {})",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    /// Checks the seed is set and copies it into every seeded component.
    pub fn resolve(mut self) -> Result<Self> {
        let seed = self
            .seed
            .ok_or_else(|| Error::Config("a seed is required (--seed or \"seed\" in the config)".into()))?;
        self.synth.scene.seed = seed;
        self.oracle.seed = seed;
        self.selftrain.seed = seed;
        self.oracle.validate()?;
        self.forge.validate()?;
        self.selftrain.validate()?;
        BackendChoice::from_str(&self.backend)?;
        for (name, p) in [("dataset", &self.dataset), ("prompts", &self.prompts), ("lexicon", &self.lexicon)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{name} file {} does not exist", p.display())));
                }
            }
        }
        if let Some(root) = &self.images_root {
            if !root.is_dir() {
                return Err(Error::Config(format!("image root {} is not a directory", root.display())));
            }
        }
        Ok(self)
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("an output directory is required (--out)".into()))
    }

    fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("a dataset annotation file is required (--dataset)".into()))
    }

    fn image_root(&self) -> Result<PathBuf> {
        match &self.images_root {
            Some(r) => Ok(r.clone()),
            None => Ok(self
                .dataset_path()?
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Builtin,
    Remote(String),
}

impl FromStr for BackendChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin" => Ok(Self::Builtin),
            _ => match s.strip_prefix("remote:") {
                Some(url) if !url.is_empty() => Ok(Self::Remote(url.to_string())),
                _ => Err(Error::Config(format!("backend {s:?} is neither builtin nor remote:<url>"))),
            },
        }
    }
}

/// Images and reference boxes after optional tiling, split into train and test.
struct Workspace {
    all: Vec<SceneImage>,
    train: Vec<SceneImage>,
    test: Vec<SceneImage>,
    truth: AnnotationSet,
}

impl Workspace {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let set = load_annotations(cfg.dataset_path()?)?;
        let images = load_images(&set, &cfg.image_root()?)?;
        let seed = cfg.seed.unwrap_or_default();
        let (train_n, test_n, val_n) = cfg.split.counts(set.images.len())?;
        let split = split_dataset(&set, train_n, test_n, val_n, seed)?;
        let train_parents = split.train.image_ids();

        let (all, truth, is_train): (Vec<SceneImage>, AnnotationSet, Vec<bool>) = match &cfg.tile {
            None => {
                let flags = images.iter().map(|im| train_parents.contains(&im.id())).collect();
                (images, set, flags)
            }
            Some(spec) => {
                let patches = plan_patches(&set.images, spec, seed)?;
                let flags = patches.iter().map(|p| train_parents.contains(&p.parent_id)).collect();
                let truth = project_to_patches(&set, &patches, DEFAULT_MIN_OVERLAP);
                (extract_patches(&images, &patches)?, truth, flags)
            }
        };
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (im, t) in all.iter().zip(is_train) {
            if t { train.push(im.clone()) } else { test.push(im.clone()) }
        }
        Ok(Self {
            all,
            train,
            test,
            truth,
        })
    }

    fn ids(images: &[SceneImage]) -> Vec<u64> {
        images.iter().map(|im| im.id()).collect()
    }
}

enum Student {
    Blob(BlobStudent),
    Remote(Arc<RemoteBackend>),
}

struct Backends {
    grounder: Arc<dyn Grounder>,
    captioner: Arc<dyn Captioner>,
    synonyms: Arc<dyn SynonymProvider>,
    student: Student,
}

impl Backends {
    /// The builtin teacher perturbs `truth`; nothing else sees it.
    fn resolve(cfg: &RunConfig, truth: &AnnotationSet) -> Result<Self> {
        match BackendChoice::from_str(&cfg.backend)? {
            BackendChoice::Builtin => Ok(Self {
                grounder: Arc::new(OracleGrounder::new(truth.clone(), cfg.oracle)?),
                captioner: Arc::new(TemplateCaptioner::default()),
                synonyms: Arc::new(StaticSynonyms::builtin()),
                student: Student::Blob(BlobStudent::default()),
            }),
            BackendChoice::Remote(url) => {
                let mut rc = RemoteConfig::new(url);
                rc.max_in_flight = cfg.remote.max_in_flight;
                rc.attempts = cfg.remote.attempts;
                rc.timeout = Duration::from_secs(cfg.remote.timeout_secs);
                rc.image_root = cfg.image_root().ok();
                let remote = Arc::new(RemoteBackend::new(rc)?);
                Ok(Self {
                    grounder: remote.clone(),
                    captioner: remote.clone(),
                    synonyms: remote.clone(),
                    student: Student::Remote(remote),
                })
            }
        }
    }
}

fn lexicon(cfg: &RunConfig) -> Result<AttributeLexicon> {
    match &cfg.lexicon {
        Some(p) => AttributeLexicon::load(p),
        None => Ok(AttributeLexicon::builtin()),
    }
}

/// The literal prompt if given, else the bundle file.
fn prompts(cfg: &RunConfig) -> Result<PromptBundle> {
    match (&cfg.prompt, &cfg.prompts) {
        (Some(text), _) => PromptBundle::manual(text),
        (None, Some(path)) => PromptBundle::load(path),
        (None, None) => Err(Error::Config(
            "a prompt bundle (--prompts) or a literal prompt (--prompt) is required".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub annotations: PathBuf,
    pub images: usize,
    pub boxes: usize,
}

/// Renders `synth.count` scenes into `<out>/images/` with ground truth in
/// `<out>/annotations.json`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    let out = cfg.out_dir()?;
    let (images, truth) = generate_synthetic_dataset(&cfg.synth.scene, cfg.synth.count)?;
    save_images(&images, out)?;
    let annotations = out.join("annotations.json");
    save_annotations(&truth, &annotations)?;
    Ok(SynthSummary {
        annotations,
        images: images.len(),
        boxes: truth.len(),
    })
}

/// Designs prompts on the training images and writes `<out>/prompts.json`,
/// `<out>/captions.txt` and `<out>/attribute_stats.json`.
pub fn cmd_forge(cfg: &RunConfig) -> Result<ForgeOutput> {
    let out = cfg.out_dir()?;
    let ws = Workspace::load(cfg)?;
    let b = Backends::resolve(cfg, &ws.truth)?;
    let output = forge(
        &ws.train,
        b.grounder.as_ref(),
        b.captioner.as_ref(),
        b.synonyms.as_ref(),
        &lexicon(cfg)?,
        &cfg.forge,
    )?;
    output.bundle.save(&out.join("prompts.json"))?;
    let mut captions = output.captions.join("\n");
    if !captions.is_empty() {
        captions.push('\n');
    }
    fsutil::write_atomic(&out.join("captions.txt"), captions.as_bytes())?;
    let mut stats = serde_json::to_string_pretty(&output.stats).expect("stats serialise");
    stats.push('\n');
    fsutil::write_atomic(&out.join("attribute_stats.json"), stats.as_bytes())?;
    Ok(output)
}

/// Runs the teacher with the configured prompts over every image and writes the filtered
/// detections to `<out>/detections.json`.
pub fn cmd_detect(cfg: &RunConfig) -> Result<AnnotationSet> {
    let out = cfg.out_dir()?;
    let ws = Workspace::load(cfg)?;
    let b = Backends::resolve(cfg, &ws.truth)?;
    let bundle = prompts(cfg)?;
    let dets = bootstrap_pseudo_labels(b.grounder.as_ref(), &bundle, &ws.all, &cfg.selftrain)?;
    save_annotations(&dets, &out.join("detections.json"))?;
    Ok(dets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainSummary {
    pub run_dir: PathBuf,
    pub reports: Vec<RoundReport>,
    pub best_round: usize,
    pub converged: bool,
}

fn round_label(k: usize) -> String {
    if k == 0 { "T0".into() } else { format!("S{k}") }
}

/// Runs self-training into the run directory `<out>`. Test-split metrics are recorded per
/// round when the dataset carries boxes.
pub fn cmd_selftrain(cfg: &RunConfig) -> Result<SelfTrainSummary> {
    let out = cfg.out_dir()?;
    let ws = Workspace::load(cfg)?;
    let bundle = prompts(cfg)?;
    let b = Backends::resolve(cfg, &ws.truth)?;
    let dir = RunDir::create(out, cfg.force)?;
    dir.write_text("run_config.json", &cfg.to_json())?;
    dir.write_text("prompts.json", &bundle.to_json())?;

    let test_truth = ws.truth.subset(&Workspace::ids(&ws.test));
    let held_out = (!ws.truth.is_empty() && !ws.test.is_empty()).then_some(HeldOut {
        images: &ws.test,
        truth: &test_truth,
    });
    let teacher = TeacherSource::Grounder {
        grounder: b.grounder.as_ref(),
        prompts: &bundle,
    };
    let (reports, best_round, converged) = match &b.student {
        Student::Blob(s) => {
            let o = run_self_training(teacher, s, &ws.train, &cfg.selftrain, held_out, Some(&dir))?;
            (o.reports, o.best_round, o.converged)
        }
        Student::Remote(r) => {
            let o = run_self_training(teacher, r.as_ref(), &ws.train, &cfg.selftrain, held_out, Some(&dir))?;
            (o.reports, o.best_round, o.converged)
        }
    };

    let labels: Vec<String> = reports.iter().map(|r| round_label(r.round_index)).collect();
    let rows: Vec<(&str, &EvalResult)> = reports
        .iter()
        .zip(&labels)
        .filter_map(|(r, l)| r.metrics_vs_gt.as_ref().map(|m| (l.as_str(), m)))
        .collect();
    if !rows.is_empty() {
        dir.write_text("report.txt", &render_table(rows.iter().copied()))?;
        dir.write_text("report.csv", &render_csv(rows.iter().copied()))?;
    }
    Ok(SelfTrainSummary {
        run_dir: dir.root().to_path_buf(),
        reports,
        best_round,
        converged,
    })
}

/// Evaluates a prediction file against a ground-truth file.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(EvalResult, String)> {
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("{flag} is required for eval")))
    };
    let pred = load_annotations(&need(&cfg.eval.pred, "--pred")?)?;
    let gt = load_annotations(&need(&cfg.eval.gt, "--gt")?)?;
    let result = evaluate(&pred, &gt, cfg.eval.max_dets)?;
    let label = cfg.eval.label.as_str();
    let table = render_table([(label, &result)]);
    let csv_path = cfg.eval.csv.clone().or_else(|| cfg.out.as_ref().map(|o| o.join("eval.csv")));
    if let Some(p) = csv_path {
        fsutil::write_atomic(&p, render_csv([(label, &result)]).as_bytes())?;
    }
    Ok((result, table))
}

fn parse_mode(s: &str) -> std::result::Result<PromptMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<QueryStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "zeroshot-nuclei", version, about = "Zero-shot nuclei detection with prompt design and self-training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub shared: SharedArgs,
}

#[derive(Debug, Default, Args)]
pub struct SharedArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// builtin | remote:URL
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// COCO annotation file listing the dataset images.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub images_root: Option<PathBuf>,
    /// Teacher and pseudo-label score threshold [default: 0.25]
    #[arg(long, global = true)]
    pub score_threshold: Option<f64>,
    /// Pseudo-label NMS IoU threshold [default: 0.5]
    #[arg(long, global = true)]
    pub nms_threshold: Option<f64>,
    /// Cut images into GRID x GRID tiles of side TILE: `TILE,GRID[,CROP]`.
    #[arg(long, global = true, value_parser = parse_tile)]
    pub tile: Option<TileSpec>,
}

fn parse_tile(s: &str) -> std::result::Result<TileSpec, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [tile_size, grid_n] => Ok(TileSpec { tile_size, grid_n, crop_size: tile_size }),
        [tile_size, grid_n, crop_size] => Ok(TileSpec { tile_size, grid_n, crop_size }),
        _ => Err("expected TILE,GRID or TILE,GRID,CROP".into()),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Design attribute prompts from captions of coarse detections.
    Forge(ForgeArgs),
    /// Run the teacher with a prompt and save its detections.
    Detect(PromptArgs),
    /// Self-train a student from teacher pseudo-labels.
    Selftrain(SelftrainArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub image_size: Option<u32>,
}

#[derive(Debug, Default, Args)]
pub struct ForgeArgs {
    /// Top words kept per attribute [default: 3]
    #[arg(long)]
    pub m: Option<usize>,
    /// Augment attribute words with synonyms (default on).
    #[arg(long, overrides_with = "no_attr_aug")]
    pub attr_aug: bool,
    #[arg(long)]
    pub no_attr_aug: bool,
    /// Augment target nouns with synonyms (default off).
    #[arg(long, overrides_with = "no_noun_aug")]
    pub noun_aug: bool,
    #[arg(long)]
    pub no_noun_aug: bool,
    /// noun | shape-noun | color-noun | shape-color | full
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<PromptMode>,
    /// concatenated | per-triplet
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<QueryStrategy>,
    /// Comma-separated target nouns [default: nuclei]
    #[arg(long, value_delimiter = ',')]
    pub nouns: Option<Vec<String>>,
    #[arg(long)]
    pub crop_cap: Option<usize>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct PromptArgs {
    /// Prompt bundle written by `forge`.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Literal prompt, used verbatim.
    #[arg(long)]
    pub prompt: Option<String>,
    /// concatenated | per-triplet
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<QueryStrategy>,
}

#[derive(Debug, Default, Args)]
pub struct SelftrainArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub stability_epsilon: Option<f64>,
    /// Pool student detections with the previous labels instead of replacing them.
    #[arg(long)]
    pub union: bool,
    /// Overwrite an existing run directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub max_dets: Option<usize>,
    /// Also write the metrics row as CSV here.
    #[arg(long)]
    pub emit_csv: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn toggle(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

impl PromptArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.prompts.is_some() {
            cfg.prompts = self.prompts.clone();
        }
        if self.prompt.is_some() {
            cfg.prompt = self.prompt.clone();
        }
        set(&mut cfg.selftrain.strategy, self.strategy);
    }
}

impl Cli {
    /// The file configuration (or defaults) with every given flag applied on top.
    pub fn config(&self) -> Result<RunConfig> {
        let s = &self.shared;
        let mut cfg = match &s.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if s.seed.is_some() {
            cfg.seed = s.seed;
        }
        if s.out.is_some() {
            cfg.out = s.out.clone();
        }
        set(&mut cfg.backend, s.backend.clone());
        if s.dataset.is_some() {
            cfg.dataset = s.dataset.clone();
        }
        if s.images_root.is_some() {
            cfg.images_root = s.images_root.clone();
        }
        if s.tile.is_some() {
            cfg.tile = s.tile;
        }
        if let Some(t) = s.score_threshold {
            cfg.selftrain.score_threshold = t;
            cfg.forge.score_threshold = t;
        }
        set(&mut cfg.selftrain.nms_threshold, s.nms_threshold);

        match &self.command {
            Command::Synth(a) => {
                set(&mut cfg.synth.count, a.count);
                set(&mut cfg.synth.scene.image_size, a.image_size);
            }
            Command::Forge(a) => {
                set(&mut cfg.forge.m, a.m);
                set(&mut cfg.forge.attr_aug, toggle(a.attr_aug, a.no_attr_aug));
                set(&mut cfg.forge.noun_aug, toggle(a.noun_aug, a.no_noun_aug));
                set(&mut cfg.forge.mode, a.mode);
                set(&mut cfg.selftrain.strategy, a.strategy);
                set(&mut cfg.forge.nouns, a.nouns.clone());
                set(&mut cfg.forge.crop_cap, a.crop_cap);
                if a.lexicon.is_some() {
                    cfg.lexicon = a.lexicon.clone();
                }
            }
            Command::Detect(a) => a.apply(&mut cfg),
            Command::Selftrain(a) => {
                a.prompt.apply(&mut cfg);
                set(&mut cfg.selftrain.max_rounds, a.max_rounds);
                set(&mut cfg.selftrain.patience, a.patience);
                set(&mut cfg.selftrain.stability_epsilon, a.stability_epsilon);
                if a.union {
                    cfg.selftrain.label_update = LabelUpdate::Union;
                }
                cfg.force |= a.force;
            }
            Command::Eval(a) => {
                if a.pred.is_some() {
                    cfg.eval.pred = a.pred.clone();
                }
                if a.gt.is_some() {
                    cfg.eval.gt = a.gt.clone();
                }
                set(&mut cfg.eval.max_dets, a.max_dets);
                if a.emit_csv.is_some() {
                    cfg.eval.csv = a.emit_csv.clone();
                }
                set(&mut cfg.eval.label, a.label.clone());
            }
        }
        Ok(cfg)
    }
}

/// Runs a parsed command and returns the text to print.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.config()?;
    // eval is a pure function of its two files and needs no seed.
    let cfg = if matches!(cli.command, Command::Eval(_)) && cfg.seed.is_none() {
        RunConfig { seed: Some(0), ..cfg }.resolve()?
    } else {
        cfg.resolve()?
    };
    let mut out = String::new();
    match &cli.command {
        Command::Synth(_) => {
            let s = cmd_synth(&cfg)?;
            let _ = writeln!(out, "wrote {} images with {} boxes to {}", s.images, s.boxes, s.annotations.display());
        }
        Command::Forge(_) => {
            let f = cmd_forge(&cfg)?;
            let _ = writeln!(out, "{} captions, {} prompts", f.captions.len(), f.bundle.triplets.len());
            for q in render_query(&f.bundle, cfg.selftrain.strategy, cfg.selftrain.max_triplets_per_query) {
                let _ = writeln!(out, "{q}");
            }
        }
        Command::Detect(_) => {
            let d = cmd_detect(&cfg)?;
            let _ = writeln!(out, "{} detections on {} images", d.len(), d.images.len());
        }
        Command::Selftrain(_) => {
            let s = cmd_selftrain(&cfg)?;
            for r in &s.reports {
                let _ = write!(out, "{:>3}  labels {:>6}", round_label(r.round_index), r.label_count);
                if let Some(st) = r.stability_vs_previous {
                    let _ = write!(out, "  stability {st:.4}");
                }
                if let Some(m) = &r.metrics_vs_gt {
                    let _ = write!(out, "  P {:.3} R {:.3} AP50 {:.3}", m.precision50, m.recall50, m.ap50);
                }
                out.push('\n');
            }
            let _ = writeln!(
                out,
                "best round {} ({}), run directory {}",
                round_label(s.best_round),
                if s.converged { "converged" } else { "round budget reached" },
                s.run_dir.display()
            );
        }
        Command::Eval(_) => {
            let (r, table) = cmd_eval(&cfg)?;
            out.push_str(&table);
            for w in &r.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
        }
    }
    Ok(out)
}

/// Entry point for the binary. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("zeroshot-nuclei").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 5, "forge": {"m": 2}, "selftrain": {"score_threshold": 0.4}}"#).unwrap();
        let cli = parse(&["forge", "--config", path.to_str().unwrap(), "--m", "4", "--no-attr-aug"]);
        let cfg = cli.config().unwrap();
        assert_eq!(cfg.seed, Some(5));
        assert_eq!(cfg.forge.m, 4);
        assert!(!cfg.forge.attr_aug);
        assert_eq!(cfg.selftrain.score_threshold, 0.4);

        let cli = parse(&["forge", "--config", path.to_str().unwrap(), "--score-threshold", "0.3"]);
        let cfg = cli.config().unwrap();
        assert_eq!((cfg.forge.m, cfg.selftrain.score_threshold), (2, 0.3));
    }

    #[test]
    fn defaults_follow_the_documented_values() {
        let cfg = parse(&["selftrain", "--seed", "1"]).config().unwrap();
        assert_eq!(cfg.selftrain.score_threshold, 0.25);
        assert_eq!(cfg.selftrain.nms_threshold, 0.5);
        assert_eq!(cfg.forge.m, 3);
        assert!(cfg.forge.attr_aug && !cfg.forge.noun_aug);
        assert_eq!(cfg.selftrain.strategy, QueryStrategy::Concatenated);
    }

    #[test]
    fn resolution_errors_are_configuration_errors() {
        let missing_seed = RunConfig::default().resolve().unwrap_err();
        assert_eq!(exit_code(&missing_seed), EXIT_CONFIG);
        let bad_backend = RunConfig { seed: Some(1), backend: "gpu".into(), ..Default::default() };
        assert_eq!(exit_code(&bad_backend.resolve().unwrap_err()), EXIT_CONFIG);
        let missing_file = RunConfig { seed: Some(1), dataset: Some("/nonexistent.json".into()), ..Default::default() };
        assert_eq!(exit_code(&missing_file.resolve().unwrap_err()), EXIT_CONFIG);
        assert!(RunConfig::load(Path::new("/nonexistent.json")).is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("run.json");
        std::fs::write(&path, "{\n  \"seed\": 1,\n  \"sede\": 2\n}").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn backend_choice_parsing() {
        assert_eq!("builtin".parse::<BackendChoice>().unwrap(), BackendChoice::Builtin);
        assert_eq!(
            "remote:http://h:1".parse::<BackendChoice>().unwrap(),
            BackendChoice::Remote("http://h:1".into())
        );
        assert!("remote:".parse::<BackendChoice>().is_err());
    }

    #[test]
    fn split_defaults() {
        assert_eq!(SplitConfig::default().counts(30).unwrap(), (16, 14, 4));
        assert_eq!(SplitConfig::default().counts(0).unwrap(), (0, 0, 0));
        let s = SplitConfig { train: Some(10), test: Some(10), val: 2 };
        assert!(s.counts(30).is_err());
    }

    #[test]
    fn tile_flag() {
        assert_eq!(parse_tile("256,4").unwrap(), TileSpec { tile_size: 256, grid_n: 4, crop_size: 256 });
        assert_eq!(parse_tile("256,4,224").unwrap().crop_size, 224);
        assert!(parse_tile("256").is_err());
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&Error::Validation("x".into())), EXIT_DATA);
        assert_eq!(
            exit_code(&Error::Backend { context: "c".into(), message: "m".into(), retriable: true }),
            EXIT_BACKEND
        );
        assert_eq!(exit_code(&Error::Protocol { context: "c".into(), message: "m".into() }), EXIT_BACKEND);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(main_with_args(["zeroshot-nuclei", "bogus"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["zeroshot-nuclei", "eval"]), EXIT_CONFIG);
    }
}
