//! Span extraction from BIOES tags and exact-match precision/recall/F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use ndarray::s;
use rayon::prelude::*;

use crate::alignment::AlignmentConfig;
use crate::corpus::{Tag, Vocabulary};
use crate::crf;
use crate::encoder;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::{self, AlignedSentence};

/// An entity span with inclusive token bounds.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    #[serde(rename = "type")]
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(kind: impl Into<String>, start: usize, end: usize) -> Self {
        Span {
            kind: kind.into(),
            start,
            end,
        }
    }
}

/// Extract spans, dropping malformed runs: a run must open with `B`
/// and close with a same-type `E`; `I`/`E` without an opener, a type change
/// inside a run, and runs left open are all discarded.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        match Tag::parse(label.as_ref()) {
            Some(Tag::Begin(ty)) => open = Some((ty, i)),
            Some(Tag::Single(ty)) => {
                open = None;
                spans.push(Span::new(ty, i, i));
            }
            Some(Tag::Inside(ty)) => {
                if !matches!(open, Some((t, _)) if t == ty) {
                    open = None;
                }
            }
            Some(Tag::End(ty)) => {
                if let Some((t, start)) = open.take() {
                    if t == ty {
                        spans.push(Span::new(ty, start, i));
                    }
                }
            }
            Some(Tag::Outside) | None => open = None,
        }
    }
    spans
}

/// Render non-overlapping spans over `n` tokens as BIOES tags.
pub fn render_bioes(spans: &[Span], n: usize) -> Result<Vec<String>> {
    let mut labels = vec!["O".to_string(); n];
    let mut used = vec![false; n];
    for span in spans {
        if span.start > span.end || span.end >= n {
            return Err(Error::Shape(format!("span {}..={} outside {n} tokens", span.start, span.end)));
        }
        if used[span.start..=span.end].iter().any(|u| *u) {
            return Err(Error::Shape(format!("overlapping span at {}", span.start)));
        }
        used[span.start..=span.end].fill(true);
        if span.start == span.end {
            labels[span.start] = format!("S-{}", span.kind);
        } else {
            labels[span.start] = format!("B-{}", span.kind);
            for l in &mut labels[span.start + 1..span.end] {
                *l = format!("I-{}", span.kind);
            }
            labels[span.end] = format!("E-{}", span.kind);
        }
    }
    Ok(labels)
}

/// Which input view a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "T")]
    Text,
    #[serde(rename = "I+T")]
    Cross,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Text => "T",
            View::Cross => "I+T",
        })
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "text" => Ok(View::Text),
            "i+t" | "it" | "cross" => Ok(View::Cross),
            other => Err(Error::Config(format!("unknown view `{other}` (expected t or i+t)"))),
        }
    }
}

/// Precision, recall and F1 as percentages, with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            support: gold,
            predicted,
            correct,
        }
    }

    fn rounded(&self) -> Prf {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        Prf {
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub view: View,
    pub micro: Prf,
    pub per_type: BTreeMap<String, Prf>,
}

impl MetricReport {
    /// Copy with percentages rounded to two decimals, as written to disk.
    pub fn rounded(&self) -> MetricReport {
        MetricReport {
            view: self.view,
            micro: self.micro.rounded(),
            per_type: self.per_type.iter().map(|(k, v)| (k.clone(), v.rounded())).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rounded()).expect("reports serialize")
    }

    /// Aligned plain-text table, one row per type plus the micro row.
    pub fn to_table(&self) -> String {
        let mut out = format!("view: {}\n", self.view);
        out.push_str(&format!(
            "{:<10} {:>9} {:>9} {:>9} {:>8}\n",
            "type", "precision", "recall", "f1", "support"
        ));
        let rows = self
            .per_type
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("micro", &self.micro)));
        for (name, p) in rows {
            out.push_str(&format!(
                "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>8}\n",
                name, p.precision, p.recall, p.f1, p.support
            ));
        }
        out
    }
}

/// Exact-match scoring over sentences; `gold[i]` and `pred[i]` are the span
/// sets of sentence `i`.
pub fn micro_prf(gold: &[Vec<Span>], pred: &[Vec<Span>], view: View) -> MetricReport {
    #[derive(Default)]
    struct Counts {
        correct: usize,
        predicted: usize,
        gold: usize,
    }
    let mut total = Counts::default();
    let mut by_type: BTreeMap<String, Counts> = BTreeMap::new();
    let empty = Vec::new();
    for i in 0..gold.len().max(pred.len()) {
        let g: BTreeSet<&Span> = gold.get(i).unwrap_or(&empty).iter().collect();
        let p: BTreeSet<&Span> = pred.get(i).unwrap_or(&empty).iter().collect();
        for s in &g {
            by_type.entry(s.kind.clone()).or_default().gold += 1;
        }
        for s in &p {
            let c = by_type.entry(s.kind.clone()).or_default();
            c.predicted += 1;
            if g.contains(s) {
                c.correct += 1;
                total.correct += 1;
            }
        }
        total.gold += g.len();
        total.predicted += p.len();
    }
    MetricReport {
        view,
        micro: Prf::from_counts(total.correct, total.predicted, total.gold),
        per_type: by_type
            .into_iter()
            .map(|(k, c)| (k, Prf::from_counts(c.correct, c.predicted, c.gold)))
            .collect(),
    }
}

/// Score label sequences directly.
pub fn evaluate_labels<S: AsRef<str>, T: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<T>], view: View) -> MetricReport {
    let g: Vec<Vec<Span>> = gold.iter().map(|l| extract_spans(l)).collect();
    let p: Vec<Vec<Span>> = pred.iter().map(|l| extract_spans(l)).collect();
    micro_prf(&g, &p, view)
}

/// Metrics for both views on one split, plus the mean distance between the
/// T and I+T representations of the sentence tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualViewReport {
    pub text: MetricReport,
    pub cross: MetricReport,
    pub representation_distance: f64,
    pub missing_images: usize,
}

impl DualViewReport {
    pub fn view(&self, view: View) -> &MetricReport {
        match view {
            View::Text => &self.text,
            View::Cross => &self.cross,
        }
    }
}

/// Decoded labels of both views for one sentence, and the representation
/// distance between them.
pub struct SentencePrediction {
    pub text: Vec<String>,
    pub cross: Vec<String>,
    pub distance: f64,
}

pub fn predict_aligned(
    model: &Model,
    vocab: &Vocabulary,
    aligned: &AlignedSentence,
    config: &AlignmentConfig,
) -> Result<SentencePrediction> {
    let (text_ids, cross_ids) = training::view_ids(aligned, vocab, config)?;
    let n = text_ids.len();
    let (t_reps, t_em) = model.emissions(&text_ids, n)?;
    let (c_reps, c_em) = model.emissions(&cross_ids, n)?;
    let names = |em: &ndarray::Array2<f64>| -> Result<Vec<String>> {
        let (path, _) = crf::viterbi(em.view(), &model.crf)?;
        Ok(path.into_iter().map(|id| vocab.label(id).to_string()).collect())
    };
    Ok(SentencePrediction {
        text: names(&t_em)?,
        cross: names(&c_em)?,
        distance: encoder::representation_distance(t_reps.view(), c_reps.slice(s![..n, ..]))?,
    })
}

/// Decode and score both views of a split. Sentences are decoded in
/// parallel; results do not depend on the thread count.
pub fn evaluate_aligned(
    model: &Model,
    vocab: &Vocabulary,
    split: &[AlignedSentence],
    config: &AlignmentConfig,
) -> Result<DualViewReport> {
    let predictions: Vec<SentencePrediction> = split
        .par_iter()
        .map(|a| predict_aligned(model, vocab, a, config))
        .collect::<Result<_>>()?;
    let gold: Vec<&[String]> = split.iter().map(|a| a.sentence.labels.as_slice()).collect();
    let text: Vec<&[String]> = predictions.iter().map(|p| p.text.as_slice()).collect();
    let cross: Vec<&[String]> = predictions.iter().map(|p| p.cross.as_slice()).collect();
    let distance = if predictions.is_empty() {
        0.0
    } else {
        predictions.iter().map(|p| p.distance).sum::<f64>() / predictions.len() as f64
    };
    Ok(DualViewReport {
        text: evaluate_slices(&gold, &text, View::Text),
        cross: evaluate_slices(&gold, &cross, View::Cross),
        representation_distance: distance,
        missing_images: split.iter().filter(|a| a.missing_image).count(),
    })
}

fn evaluate_slices(gold: &[&[String]], pred: &[&[String]], view: View) -> MetricReport {
    let g: Vec<Vec<Span>> = gold.iter().map(|l| extract_spans(l)).collect();
    let p: Vec<Vec<Span>> = pred.iter().map(|l| extract_spans(l)).collect();
    micro_prf(&g, &p, view)
}
