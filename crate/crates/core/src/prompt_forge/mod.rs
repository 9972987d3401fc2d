//! Automatic prompt design: turn captions of coarse detections into `shape color noun`
//! detection prompts.
//!
//! The stages are separate functions so each can be driven and tested on its own:
//! [`harvest_captions`] → [`tally_attributes`] → [`top_m`] → [`augment_synonyms`] →
//! [`compose_prompts`] → [`render_query`]. [`forge`] runs them all.

mod harvest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::SynonymProvider;
use crate::error::{Error, Result};
use crate::fsutil;

pub use harvest::{forge, harvest_captions, ForgeConfig, ForgeOutput, DEFAULT_CROP_CAP};

const DEFAULT_LEXICON: &str = include_str!("../../data/attribute_lexicon.txt");

pub const DEFAULT_MAX_TRIPLETS_PER_QUERY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Shape,
    Color,
}

/// Shape and colour vocabularies used to classify caption tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeLexicon {
    shape_words: BTreeSet<String>,
    color_words: BTreeSet<String>,
}

fn is_word(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_alphabetic() && !c.is_uppercase())
}

impl AttributeLexicon {
    pub fn new<S: Into<String>>(
        shapes: impl IntoIterator<Item = S>,
        colors: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let lex = Self {
            shape_words: shapes.into_iter().map(Into::into).collect(),
            color_words: colors.into_iter().map(Into::into).collect(),
        };
        lex.validate()?;
        Ok(lex)
    }

    /// The lexicon shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON, "<builtin lexicon>").expect("builtin lexicon is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_to_string(path)?, &path.display().to_string())
    }

    /// Parses the text format: `#shape` and `#color` section headers, one word per line,
    /// blank lines and `# ` comments ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut shapes = BTreeSet::new();
        let mut colors = BTreeSet::new();
        let mut section: Option<AttributeKind> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                column: raw.find(|c: char| !c.is_whitespace()).unwrap_or(0) + 1,
                message,
            };
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                match header.trim() {
                    "shape" => section = Some(AttributeKind::Shape),
                    "color" => section = Some(AttributeKind::Color),
                    _ if header.starts_with(' ') || header.is_empty() => {}
                    other => return Err(err(format!("unknown section {other:?}"))),
                }
                continue;
            }
            if !is_word(line) {
                return Err(err(format!("{line:?} is not a single lowercase word")));
            }
            match section {
                Some(AttributeKind::Shape) => shapes.insert(line.to_string()),
                Some(AttributeKind::Color) => colors.insert(line.to_string()),
                None => return Err(err("word outside a #shape or #color section".into())),
            };
        }
        let lex = Self {
            shape_words: shapes,
            color_words: colors,
        };
        lex.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape_words.is_empty() || self.color_words.is_empty() {
            return Err(Error::Config("lexicon needs at least one shape and one colour word".into()));
        }
        if let Some(w) = self.shape_words.iter().chain(&self.color_words).find(|w| !is_word(w)) {
            return Err(Error::Config(format!("lexicon entry {w:?} is not a single lowercase word")));
        }
        if let Some(w) = self.shape_words.intersection(&self.color_words).next() {
            return Err(Error::Config(format!("{w:?} is listed as both a shape and a colour")));
        }
        Ok(())
    }

    pub fn classify(&self, token: &str) -> Option<AttributeKind> {
        if self.shape_words.contains(token) {
            Some(AttributeKind::Shape)
        } else if self.color_words.contains(token) {
            Some(AttributeKind::Color)
        } else {
            None
        }
    }

    pub fn shape_words(&self) -> &BTreeSet<String> {
        &self.shape_words
    }

    pub fn color_words(&self) -> &BTreeSet<String> {
        &self.color_words
    }

    /// Admits up to `k` single-word synonyms of every entry into the entry's class, skipping
    /// words already claimed by the other class. Provider failures leave the lexicon unchanged.
    pub fn extend_with(&mut self, provider: &dyn SynonymProvider, k: usize) {
        let snapshot = self.clone();
        for (kind, words) in [
            (AttributeKind::Shape, &snapshot.shape_words),
            (AttributeKind::Color, &snapshot.color_words),
        ] {
            for w in words {
                let syns = match provider.synonyms(w, k) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("lexicon extension skipped for {w:?}: {e}");
                        continue;
                    }
                };
                for s in syns.into_iter().map(|s| s.to_lowercase()).filter(|s| is_word(s)) {
                    if self.classify(&s).is_none() {
                        match kind {
                            AttributeKind::Shape => self.shape_words.insert(s),
                            AttributeKind::Color => self.color_words.insert(s),
                        };
                    }
                }
            }
        }
    }
}

/// Word frequencies by attribute class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub shape_counts: BTreeMap<String, usize>,
    pub color_counts: BTreeMap<String, usize>,
    pub caption_count: usize,
}

/// Lowercases and splits on every non-alphabetic character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn tally_attributes<S: AsRef<str>>(captions: &[S], lexicon: &AttributeLexicon) -> AttributeStats {
    let mut stats = AttributeStats::default();
    for c in captions {
        stats.caption_count += 1;
        for tok in tokenize(c.as_ref()) {
            let counts = match lexicon.classify(&tok) {
                Some(AttributeKind::Shape) => &mut stats.shape_counts,
                Some(AttributeKind::Color) => &mut stats.color_counts,
                None => continue,
            };
            *counts.entry(tok).or_default() += 1;
        }
    }
    stats
}

fn ranked(counts: &BTreeMap<String, usize>, m: usize) -> Vec<String> {
    let mut v: Vec<(&String, &usize)> = counts.iter().collect();
    v.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(m).map(|(w, _)| w.clone()).collect()
}

/// Most frequent `m` shape and colour words, ties broken lexicographically.
pub fn top_m(stats: &AttributeStats, m: usize) -> Result<(Vec<String>, Vec<String>)> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    Ok((ranked(&stats.shape_counts, m), ranked(&stats.color_counts, m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordSource {
    Captioner,
    Synonym,
    ConfigNoun,
    /// Part of a literal prompt supplied by the user.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedWord {
    pub text: String,
    pub source: WordSource,
}

impl TaggedWord {
    pub fn new(text: impl Into<String>, source: WordSource) -> Self {
        Self {
            text: text.into().trim().to_lowercase(),
            source,
        }
    }

    pub fn tag_all<S: AsRef<str>>(words: &[S], source: WordSource) -> Vec<Self> {
        words.iter().map(|w| Self::new(w.as_ref(), source)).collect()
    }
}

/// Originals first, then up to `k` synonyms of each original in provider order, lowercased and
/// deduplicated against the whole list. Multi-word suggestions are skipped so every prompt
/// field stays a single token. A provider failure returns the originals unchanged.
pub fn augment_synonyms(words: &[TaggedWord], provider: &dyn SynonymProvider, k: usize) -> Vec<TaggedWord> {
    let mut out: Vec<TaggedWord> = Vec::new();
    let mut seen = BTreeSet::new();
    for w in words {
        if seen.insert(w.text.clone()) {
            out.push(w.clone());
        }
    }
    if k == 0 {
        return out;
    }
    let originals = out.clone();
    for w in &originals {
        let syns = match provider.synonyms(&w.text, k) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("synonym augmentation disabled, provider failed on {:?}: {e}", w.text);
                return originals;
            }
        };
        for s in syns {
            let s = s.trim().to_lowercase();
            if s.is_empty() || s.contains(char::is_whitespace) {
                log::debug!("skipping synonym {s:?} of {:?}", w.text);
                continue;
            }
            if seen.insert(s.clone()) {
                out.push(TaggedWord::new(s, WordSource::Synonym));
            }
        }
    }
    out
}

/// Noun augmentation: the same procedure as [`augment_synonyms`] applied to the target nouns.
pub fn augment_nouns(nouns: &[TaggedWord], provider: &dyn SynonymProvider, k: usize) -> Vec<TaggedWord> {
    augment_synonyms(nouns, provider, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    Noun,
    ShapeNoun,
    ColorNoun,
    ShapeColor,
    #[default]
    Full,
    /// A literal prompt passed through unchanged.
    Manual,
}

impl PromptMode {
    fn fields(self) -> &'static [AttributeField] {
        use AttributeField::*;
        match self {
            PromptMode::Noun => &[Noun],
            PromptMode::ShapeNoun => &[Shape, Noun],
            PromptMode::ColorNoun => &[Color, Noun],
            PromptMode::ShapeColor => &[Shape, Color],
            PromptMode::Full => &[Shape, Color, Noun],
            PromptMode::Manual => &[],
        }
    }

    /// Whether the mode needs caption-derived attributes.
    pub fn uses_attributes(self) -> bool {
        self.fields().iter().any(|f| *f != AttributeField::Noun)
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noun" => Ok(Self::Noun),
            "shape-noun" => Ok(Self::ShapeNoun),
            "color-noun" => Ok(Self::ColorNoun),
            "shape-color" => Ok(Self::ShapeColor),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!(
                "unknown prompt mode {other:?} (expected noun, shape-noun, color-noun, shape-color or full)"
            ))),
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Noun => "noun",
            Self::ShapeNoun => "shape-noun",
            Self::ColorNoun => "color-noun",
            Self::ShapeColor => "shape-color",
            Self::Full => "full",
            Self::Manual => "manual",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AttributeField {
    Shape,
    Color,
    Noun,
}

/// Ordered detection prompts with the origin of every word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub m: usize,
    pub triplets: Vec<String>,
    pub provenance: BTreeMap<String, WordSource>,
}

impl PromptBundle {
    pub fn manual(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Config("manual prompt is empty".into()));
        }
        let provenance = tokenize(text).into_iter().map(|t| (t, WordSource::Manual)).collect();
        Ok(Self {
            mode: PromptMode::Manual,
            m: 0,
            triplets: vec![text.to_string()],
            provenance,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplets.is_empty() {
            return Err(Error::Validation("prompt bundle has no prompts".into()));
        }
        if self.mode == PromptMode::Manual {
            return Ok(());
        }
        let width = self.mode.fields().len();
        let mut seen = BTreeSet::new();
        for t in &self.triplets {
            let words: Vec<&str> = t.split(' ').collect();
            if words.len() != width || words.iter().any(|w| w.is_empty()) {
                return Err(Error::Validation(format!(
                    "prompt {t:?} does not have {width} fields for mode {}",
                    self.mode
                )));
            }
            if let Some(w) = words.iter().find(|w| !self.provenance.contains_key(**w)) {
                return Err(Error::Validation(format!("word {w:?} in {t:?} has no provenance")));
            }
            if !seen.insert(t) {
                return Err(Error::Validation(format!("duplicate prompt {t:?}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fsutil::read_to_string(path)?, &path.display().to_string())
    }
}

/// Cartesian product of the lists the mode asks for, in `shape color noun` field order, each
/// list iterated in its given (frequency-major) order. Identical prompts are kept once.
pub fn compose_prompts(
    shapes: &[TaggedWord],
    colors: &[TaggedWord],
    nouns: &[TaggedWord],
    mode: PromptMode,
    m: usize,
) -> Result<PromptBundle> {
    if mode == PromptMode::Manual {
        return Err(Error::Config("manual prompts are built with PromptBundle::manual".into()));
    }
    let lists: Vec<(&str, &[TaggedWord])> = mode
        .fields()
        .iter()
        .map(|f| match f {
            AttributeField::Shape => ("shape", shapes),
            AttributeField::Color => ("color", colors),
            AttributeField::Noun => ("noun", nouns),
        })
        .collect();
    if let Some((name, _)) = lists.iter().find(|(_, l)| l.is_empty()) {
        return Err(Error::Config(format!("prompt mode {mode} needs at least one {name} word")));
    }

    let mut provenance = BTreeMap::new();
    for (_, list) in &lists {
        for w in list.iter() {
            provenance.entry(w.text.clone()).or_insert(w.source);
        }
    }
    let mut combos: Vec<Vec<&str>> = vec![Vec::new()];
    for (_, list) in &lists {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                list.iter().map(move |w| {
                    let mut next = prefix.clone();
                    next.push(w.text.as_str());
                    next
                })
            })
            .collect();
    }
    let mut seen = BTreeSet::new();
    let triplets: Vec<String> = combos
        .into_iter()
        .map(|c| c.join(" "))
        .filter(|t| seen.insert(t.clone()))
        .collect();
    Ok(PromptBundle {
        mode,
        m,
        triplets,
        provenance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryStrategy {
    /// Prompts joined with `". "` into as few queries as the per-query cap allows.
    #[default]
    Concatenated,
    /// One query per prompt; results are merged downstream.
    PerTriplet,
}

impl FromStr for QueryStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenated" => Ok(Self::Concatenated),
            "per-triplet" => Ok(Self::PerTriplet),
            other => Err(Error::Config(format!(
                "unknown query strategy {other:?} (expected concatenated or per-triplet)"
            ))),
        }
    }
}

impl fmt::Display for QueryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Concatenated => "concatenated",
            Self::PerTriplet => "per-triplet",
        })
    }
}

/// Grounding query strings for a bundle. Manual bundles always yield their text verbatim.
pub fn render_query(bundle: &PromptBundle, strategy: QueryStrategy, max_per_query: usize) -> Vec<String> {
    if bundle.mode == PromptMode::Manual {
        return bundle.triplets.clone();
    }
    match strategy {
        QueryStrategy::PerTriplet => bundle.triplets.clone(),
        QueryStrategy::Concatenated => bundle
            .triplets
            .chunks(max_per_query.max(1))
            .map(|c| c.join(". "))
            .collect(),
    }
}
