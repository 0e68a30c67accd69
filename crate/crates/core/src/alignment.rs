//! Image-to-text alignment: turns a [`VisualContextRecord`] into textual
//! visual contexts and builds the cross-modal input `[sentence; context]`.
//!
//! * local alignment (LA): object tags with their strongest attributes,
//! * global alignment (GA): beam captions joined by the `[X]` separator,
//! * optical character alignment (OCA): OCR text, passed through.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextStore, LabeledSentence, VisualContextRecord};
use crate::error::{Error, Result};

/// Literal separator token between captions and between context segments.
pub const SEP_TOKEN: &str = "[X]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    La,
    Ga,
    Oca,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::La, Mode::Ga, Mode::Oca];

    pub fn name(self) -> &'static str {
        match self {
            Mode::La => "la",
            Mode::Ga => "ga",
            Mode::Oca => "oca",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "la" => Ok(Mode::La),
            "ga" => Ok(Mode::Ga),
            "oca" => Ok(Mode::Oca),
            other => Err(Error::Config(format!("unknown alignment mode `{other}`"))),
        }
    }
}

/// A set of alignment modes, serialized as a sorted list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Mode>", into = "Vec<Mode>")]
pub struct Modes {
    la: bool,
    ga: bool,
    oca: bool,
}

impl Modes {
    pub fn all() -> Self {
        Modes {
            la: true,
            ga: true,
            oca: true,
        }
    }

    pub fn only(mode: Mode) -> Self {
        let mut m = Modes {
            la: false,
            ga: false,
            oca: false,
        };
        m.set(mode);
        m
    }

    fn set(&mut self, mode: Mode) {
        match mode {
            Mode::La => self.la = true,
            Mode::Ga => self.ga = true,
            Mode::Oca => self.oca = true,
        }
    }

    pub fn contains(&self, mode: Mode) -> bool {
        match mode {
            Mode::La => self.la,
            Mode::Ga => self.ga,
            Mode::Oca => self.oca,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Mode> + '_ {
        Mode::ALL.into_iter().filter(|m| self.contains(*m))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parse a comma-separated list such as `la,oca` or the shorthand `all`.
    pub fn parse_list(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Modes::all());
        }
        let modes: Vec<Mode> = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        Modes::try_from(modes)
    }
}

impl TryFrom<Vec<Mode>> for Modes {
    type Error = Error;

    fn try_from(list: Vec<Mode>) -> Result<Self> {
        if list.is_empty() {
            return Err(Error::Config("at least one alignment mode is required".into()));
        }
        let mut m = Modes {
            la: false,
            ga: false,
            oca: false,
        };
        for mode in list {
            m.set(mode);
        }
        Ok(m)
    }
}

impl From<Modes> for Vec<Mode> {
    fn from(m: Modes) -> Self {
        m.iter().collect()
    }
}

impl fmt::Display for Modes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Mode::name).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    /// Attributes must score strictly above this to be kept.
    pub attr_threshold: f64,
    pub max_attrs_per_object: usize,
    /// Number of captions kept (beam size).
    pub num_captions: usize,
    pub max_caption_tokens: usize,
    pub modes: Modes,
    /// Order of the segments inside the concatenated context.
    pub segment_order: Vec<Mode>,
    /// Upper bound on `|sentence| + |context|`.
    pub max_total_length: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            attr_threshold: 0.1,
            max_attrs_per_object: 3,
            num_captions: 5,
            max_caption_tokens: 20,
            modes: Modes::all(),
            segment_order: Mode::ALL.to_vec(),
            max_total_length: 256,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.attr_threshold) {
            return Err(Error::Config(format!(
                "attr_threshold must lie in [0, 1], got {}",
                self.attr_threshold
            )));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("modes must not be empty".into()));
        }
        let mut order = self.segment_order.clone();
        order.sort();
        if order != Mode::ALL {
            return Err(Error::Config(
                "segment_order must list la, ga and oca exactly once".into(),
            ));
        }
        if self.max_total_length == 0 {
            return Err(Error::Config("max_total_length must be positive".into()));
        }
        Ok(())
    }
}

fn push_words(out: &mut Vec<String>, text: &str) {
    out.extend(text.split_whitespace().map(str::to_string));
}

/// Local alignment: objects by descending confidence, each preceded by up to
/// `max_attrs_per_object` of its attributes scoring above the threshold.
/// Ties keep record order.
pub fn linearize_local(record: &VisualContextRecord, config: &AlignmentConfig) -> Vec<String> {
    let mut objects: Vec<_> = record.objects.iter().collect();
    objects.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut out = Vec::new();
    for object in objects {
        let mut attrs: Vec<_> = object
            .attributes
            .iter()
            .filter(|a| a.confidence > config.attr_threshold)
            .collect();
        attrs.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        for attr in attrs.into_iter().take(config.max_attrs_per_object) {
            push_words(&mut out, &attr.name);
        }
        push_words(&mut out, &object.tag);
    }
    out
}

/// Global alignment: the top `num_captions` captions, each cut to
/// `max_caption_tokens` tokens, joined by [`SEP_TOKEN`].
pub fn linearize_global(record: &VisualContextRecord, config: &AlignmentConfig) -> Vec<String> {
    let mut out = Vec::new();
    let captions = record
        .captions
        .iter()
        .take(config.num_captions)
        .map(|c| {
            c.text
                .split_whitespace()
                .take(config.max_caption_tokens)
                .collect::<Vec<_>>()
        })
        .filter(|words| !words.is_empty());
    for (i, words) in captions.enumerate() {
        if i > 0 {
            out.push(SEP_TOKEN.to_string());
        }
        out.extend(words.into_iter().map(str::to_string));
    }
    out
}

/// Optical character alignment: whitespace tokens of the OCR text.
pub fn linearize_ocr(record: &VisualContextRecord) -> Vec<String> {
    record.ocr_text.split_whitespace().map(str::to_string).collect()
}

pub fn linearize_mode(record: &VisualContextRecord, mode: Mode, config: &AlignmentConfig) -> Vec<String> {
    match mode {
        Mode::La => linearize_local(record, config),
        Mode::Ga => linearize_global(record, config),
        Mode::Oca => linearize_ocr(record),
    }
}

/// Concatenate the enabled segments in `segment_order`, separated by
/// [`SEP_TOKEN`]; empty segments and their separators are left out.
pub fn linearize_all(record: &VisualContextRecord, config: &AlignmentConfig) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for &mode in &config.segment_order {
        if !config.modes.contains(mode) {
            continue;
        }
        let segment = linearize_mode(record, mode, config);
        if segment.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(SEP_TOKEN.to_string());
        }
        out.extend(segment);
    }
    out
}

/// Sentence tokens followed by visual-context tokens. Only the first
/// `sentence_len` positions carry labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossModalInput {
    pub tokens: Vec<String>,
    pub sentence_len: usize,
}

impl CrossModalInput {
    pub fn sentence_mask(&self) -> Vec<bool> {
        (0..self.tokens.len()).map(|i| i < self.sentence_len).collect()
    }

    pub fn context(&self) -> &[String] {
        &self.tokens[self.sentence_len..]
    }
}

/// Append context to a sentence, dropping context from the tail so the
/// result fits in `max_total_length`. Sentence tokens are never dropped.
pub fn build_cross_modal_input<S: AsRef<str>>(
    sentence: &[S],
    context: &[String],
    config: &AlignmentConfig,
) -> Result<CrossModalInput> {
    let n = sentence.len();
    if n > config.max_total_length {
        return Err(Error::TooLong(format!(
            "sentence of {n} tokens exceeds max_total_length {}",
            config.max_total_length
        )));
    }
    let keep = context.len().min(config.max_total_length - n);
    let mut tokens: Vec<String> = sentence.iter().map(|t| t.as_ref().to_string()).collect();
    tokens.extend(context[..keep].iter().cloned());
    Ok(CrossModalInput {
        tokens,
        sentence_len: n,
    })
}

/// Look up a sentence's record and linearize it. A missing image id (or a
/// sentence without one) yields an empty context; the flag reports whether
/// the id was present but unresolved.
pub fn context_for(
    sentence: &LabeledSentence,
    store: &ContextStore,
    config: &AlignmentConfig,
) -> (Vec<String>, bool) {
    match sentence.image_id.as_deref() {
        None => (Vec::new(), false),
        Some(id) => match store.get(id) {
            Some(record) => (linearize_all(record, config), false),
            None => (Vec::new(), true),
        },
    }
}

/// Randomly re-pair sentences with images (the image-id multiset is kept).
pub fn shuffle_pairing(dataset: &[LabeledSentence], seed: u64) -> Vec<LabeledSentence> {
    let mut ids: Vec<Option<String>> = dataset.iter().map(|s| s.image_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    dataset
        .iter()
        .zip(ids)
        .map(|(s, image_id)| LabeledSentence {
            image_id,
            ..s.clone()
        })
        .collect()
}
