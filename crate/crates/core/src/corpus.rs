//! CoNLL-style corpora, visual-context records and the vocabulary.
//!
//! Corpus files are tab-separated `token<TAB>label` lines with blank lines
//! between sentences. A sentence may be preceded by an image header, either
//! the legacy `IMGID:<id>` form or `# img_id = <id>`; the serializer always
//! writes the latter.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alignment::{self, AlignmentConfig, SEP_TOKEN};
use crate::error::{Error, Result};

/// Maximum number of detected objects a context record may carry.
pub const MAX_OBJECTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub image_id: Option<String>,
}

impl LabeledSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub tag: String,
    pub confidence: f64,
    pub attributes: Vec<Attribute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub score: f64,
}

/// Precomputed analysis of one image: detector output, beam-ranked
/// captions and OCR text.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VisualContextRecord {
    pub image_id: String,
    pub objects: Vec<DetectedObject>,
    pub captions: Vec<Caption>,
    pub ocr_text: String,
}

impl VisualContextRecord {
    pub fn empty(image_id: impl Into<String>) -> Self {
        VisualContextRecord {
            image_id: image_id.into(),
            ..Default::default()
        }
    }
}

/// Context records keyed by image id, plus the number of duplicate ids that
/// were overwritten while loading.
#[derive(Debug, Clone, Default)]
pub struct ContextStore {
    pub records: BTreeMap<String, VisualContextRecord>,
    pub duplicates: usize,
}

impl ContextStore {
    pub fn get(&self, image_id: &str) -> Option<&VisualContextRecord> {
        self.records.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, record: VisualContextRecord) {
        if self.records.insert(record.image_id.clone(), record).is_some() {
            self.duplicates += 1;
        }
    }
}

/// One BIOES tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
    End(&'a str),
    Single(&'a str),
}

impl<'a> Tag<'a> {
    pub fn parse(label: &'a str) -> Option<Tag<'a>> {
        if label == "O" {
            return Some(Tag::Outside);
        }
        let (prefix, ty) = label.split_once('-')?;
        if ty.is_empty() {
            return None;
        }
        match prefix {
            "B" => Some(Tag::Begin(ty)),
            "I" => Some(Tag::Inside(ty)),
            "E" => Some(Tag::End(ty)),
            "S" => Some(Tag::Single(ty)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioesViolation {
    pub index: usize,
    pub reason: String,
}

impl fmt::Display for BioesViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "index {}: {}", self.index, self.reason)
    }
}

/// Check the BIOES grammar, reporting the first violation.
///
/// A sequence that ends inside an open entity reports `index == labels.len()`.
pub fn validate_bioes<S: AsRef<str>>(labels: &[S]) -> Result<(), BioesViolation> {
    let violation = |index: usize, reason: String| Err(BioesViolation { index, reason });
    let mut open: Option<(&str, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        let Some(tag) = Tag::parse(label) else {
            return violation(i, format!("unknown tag `{label}`"));
        };
        match (tag, open) {
            (Tag::Outside | Tag::Begin(_) | Tag::Single(_), Some((ty, start))) => {
                return violation(i, format!("entity {ty} opened at {start} is not closed"));
            }
            (Tag::Outside, None) | (Tag::Single(_), None) => {}
            (Tag::Begin(ty), None) => open = Some((ty, i)),
            (Tag::Inside(_) | Tag::End(_), None) => {
                return violation(i, format!("`{label}` without a preceding B"));
            }
            (Tag::Inside(ty) | Tag::End(ty), Some((open_ty, _))) if ty != open_ty => {
                return violation(i, format!("type mismatch: `{label}` inside {open_ty}"));
            }
            (Tag::Inside(_), Some(_)) => {}
            (Tag::End(_), Some(_)) => open = None,
        }
    }
    match open {
        Some((ty, start)) => violation(
            labels.len(),
            format!("sequence ends inside entity {ty} opened at {start}"),
        ),
        None => Ok(()),
    }
}

/// The image id of a header line (`IMGID:<id>` or `# img_id = <id>`).
pub fn image_header(line: &str) -> Option<&str> {
    if let Some(id) = line.strip_prefix("IMGID:") {
        return Some(id.trim());
    }
    line.strip_prefix('#')
        .map(str::trim_start)
        .and_then(|rest| rest.strip_prefix("img_id"))
        .map(str::trim_start)
        .and_then(|rest| rest.strip_prefix('='))
        .map(str::trim)
}

/// Parse a CoNLL-style corpus. Every returned sentence passes [`validate_bioes`].
pub fn parse_conll<R: BufRead>(reader: R) -> Result<Vec<LabeledSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut image_id: Option<String> = None;

    let flush = |tokens: &mut Vec<String>,
                     labels: &mut Vec<String>,
                     image_id: &mut Option<String>,
                     sentences: &mut Vec<LabeledSentence>|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        if let Err(v) = validate_bioes(labels) {
            return Err(Error::InvalidLabels {
                sentence: sentences.len(),
                message: v.to_string(),
            });
        }
        sentences.push(LabeledSentence {
            tokens: std::mem::take(tokens),
            labels: std::mem::take(labels),
            image_id: image_id.take(),
        });
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut labels, &mut image_id, &mut sentences)?;
            continue;
        }
        if let Some(id) = image_header(line) {
            flush(&mut tokens, &mut labels, &mut image_id, &mut sentences)?;
            image_id = Some(id.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `token<TAB>label`, found {} field(s)", fields.len()),
            });
        }
        if fields[0].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty token".into(),
            });
        }
        tokens.push(fields[0].to_string());
        labels.push(fields[1].to_string());
    }
    flush(&mut tokens, &mut labels, &mut image_id, &mut sentences)?;
    Ok(sentences)
}

/// Write sentences in the format read by [`parse_conll`].
pub fn serialize_conll<W: Write>(sentences: &[LabeledSentence], mut out: W) -> std::io::Result<()> {
    for sentence in sentences {
        if let Some(id) = &sentence.image_id {
            writeln!(out, "# img_id = {id}")?;
        }
        for (token, label) in sentence.tokens.iter().zip(&sentence.labels) {
            writeln!(out, "{token}\t{label}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn field<'v>(obj: &'v Value, name: &str, path: &str, line: usize) -> Result<&'v Value> {
    obj.get(name).ok_or_else(|| Error::Schema {
        line,
        field: format!("{path}{name}"),
    })
}

fn string_field(obj: &Value, name: &str, path: &str, line: usize) -> Result<String> {
    field(obj, name, path, line)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Schema {
            line,
            field: format!("{path}{name}"),
        })
}

fn number_field(obj: &Value, name: &str, path: &str, line: usize, unit: bool) -> Result<f64> {
    let value = field(obj, name, path, line)?.as_f64().filter(|v| v.is_finite());
    match value {
        Some(v) if !unit || (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(Error::Schema {
            line,
            field: format!("{path}{name}"),
        }),
    }
}

fn array_field<'v>(obj: &'v Value, name: &str, path: &str, line: usize) -> Result<&'v Vec<Value>> {
    field(obj, name, path, line)?
        .as_array()
        .ok_or_else(|| Error::Schema {
            line,
            field: format!("{path}{name}"),
        })
}

fn record_from_value(value: &Value, line: usize) -> Result<VisualContextRecord> {
    if !value.is_object() {
        return Err(Error::Schema {
            line,
            field: "<record>".into(),
        });
    }
    let image_id = string_field(value, "image_id", "", line)?;
    let raw_objects = array_field(value, "objects", "", line)?;
    if raw_objects.len() > MAX_OBJECTS {
        return Err(Error::Schema {
            line,
            field: format!("objects (more than {MAX_OBJECTS})"),
        });
    }
    let mut objects = Vec::with_capacity(raw_objects.len());
    for (i, obj) in raw_objects.iter().enumerate() {
        let path = format!("objects[{i}].");
        let mut attributes = Vec::new();
        for (j, attr) in array_field(obj, "attributes", &path, line)?.iter().enumerate() {
            let apath = format!("{path}attributes[{j}].");
            attributes.push(Attribute {
                name: string_field(attr, "name", &apath, line)?,
                confidence: number_field(attr, "confidence", &apath, line, true)?,
            });
        }
        objects.push(DetectedObject {
            tag: string_field(obj, "tag", &path, line)?,
            confidence: number_field(obj, "confidence", &path, line, true)?,
            attributes,
        });
    }
    let mut captions = Vec::new();
    for (i, cap) in array_field(value, "captions", "", line)?.iter().enumerate() {
        let path = format!("captions[{i}].");
        captions.push(Caption {
            text: string_field(cap, "text", &path, line)?,
            score: number_field(cap, "score", &path, line, false)?,
        });
    }
    // Beam output is normally already ranked; a stable sort keeps that order.
    captions.sort_by(|a, b| b.score.total_cmp(&a.score));
    let ocr_text = string_field(value, "ocr_text", "", line)?;
    Ok(VisualContextRecord {
        image_id,
        objects,
        captions,
        ocr_text,
    })
}

/// Parse JSON Lines context records. Blank lines are skipped; a repeated
/// `image_id` replaces the earlier record and is counted in `duplicates`.
pub fn parse_context_records<R: BufRead>(reader: R) -> Result<ContextStore> {
    let mut store = ContextStore::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("malformed JSON: {e}"),
        })?;
        store.insert(record_from_value(&value, line_no)?);
    }
    Ok(store)
}

/// Serialize one record as a single JSON line in the context-file schema.
pub fn record_to_json_line(record: &VisualContextRecord) -> String {
    serde_json::to_string(record).expect("context records always serialize")
}

pub const UNK_TOKEN: &str = "[UNK]";
pub const PAD_TOKEN: &str = "[PAD]";

/// Token and label vocabularies.
///
/// Corpus tokens take ids `0..k` in order of first occurrence, followed by
/// the reserved UNK, PAD and SEP ids. Label id 0 is always `O`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_index: HashMap<String, usize>,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuild from stored token and label lists (as found in a checkpoint).
    pub fn from_parts(tokens: Vec<String>, labels: Vec<String>) -> Result<Self> {
        let mut token_index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t == UNK_TOKEN || t == PAD_TOKEN || t == SEP_TOKEN {
                return Err(Error::Config(format!("reserved token `{t}` in token list")));
            }
            if token_index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate token `{t}`")));
            }
        }
        let mut label_index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if label_index.insert(l.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate label `{l}`")));
            }
        }
        if labels.is_empty() {
            return Err(Error::Config("empty label set".into()));
        }
        Ok(Vocabulary {
            tokens,
            token_index,
            labels,
            label_index,
        })
    }

    pub fn unk_id(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad_id(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn sep_id(&self) -> usize {
        self.tokens.len() + 2
    }

    /// Total number of token ids, reserved ids included.
    pub fn size(&self) -> usize {
        self.tokens.len() + 3
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Corpus tokens in id order, reserved ids excluded.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn token_id(&self, token: &str) -> usize {
        if token == SEP_TOKEN {
            return self.sep_id();
        }
        self.token_index.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            _ if id < self.tokens.len() => Some(&self.tokens[id]),
            _ if id == self.unk_id() => Some(UNK_TOKEN),
            _ if id == self.pad_id() => Some(PAD_TOKEN),
            _ if id == self.sep_id() => Some(SEP_TOKEN),
            _ => None,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.token_id(t.as_ref())).collect()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    /// Map gold labels to ids; unseen labels are an error.
    pub fn encode_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.label_id(l.as_ref())
                    .ok_or_else(|| Error::Config(format!("label `{}` not in label set", l.as_ref())))
            })
            .collect()
    }
}

/// Build the vocabulary from training sentences and every context record.
///
/// Sentence tokens need `min_count` occurrences; all tokens produced by
/// linearizing the records (every mode) are admitted.
pub fn build_vocab(
    sentences: &[LabeledSentence],
    records: &ContextStore,
    config: &AlignmentConfig,
    min_count: usize,
) -> Result<Vocabulary> {
    let all_modes = AlignmentConfig {
        modes: alignment::Modes::all(),
        ..config.clone()
    };
    let contexts: Vec<Vec<String>> = records
        .records
        .values()
        .map(|r| alignment::linearize_all(r, &all_modes))
        .collect();
    build_vocab_from_contexts(sentences, contexts.iter().map(Vec::as_slice), min_count)
}

/// Like [`build_vocab`] for contexts that are already linearized.
pub fn build_vocab_from_contexts<'a>(
    sentences: &[LabeledSentence],
    contexts: impl IntoIterator<Item = &'a [String]>,
    min_count: usize,
) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if sentences.is_empty() {
        return Err(Error::Empty("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in sentences.iter().flat_map(|s| &s.tokens) {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let reserved = |t: &str| t == UNK_TOKEN || t == PAD_TOKEN || t == SEP_TOKEN;

    let mut tokens: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut admit = |t: &str, tokens: &mut Vec<String>| {
        if !reserved(t) && !seen.contains_key(t) {
            seen.insert(t.to_string(), tokens.len());
            tokens.push(t.to_string());
        }
    };
    for t in sentences.iter().flat_map(|s| &s.tokens) {
        if counts[t.as_str()] >= min_count {
            admit(t, &mut tokens);
        }
    }
    for context in contexts {
        for t in context {
            admit(t, &mut tokens);
        }
    }

    let mut labels = vec!["O".to_string()];
    for l in sentences.iter().flat_map(|s| &s.labels) {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    Vocabulary::from_parts(tokens, labels)
}
