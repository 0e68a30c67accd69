//! Joint training of the T and I+T views.
//!
//! Each step encodes every sentence of the batch under both views with the
//! same parameters, sums `L_T + L_I+T (+ L_CVA)`, averages over the batch,
//! clips the global gradient norm and applies one AdamW update with separate
//! learning rates for the encoder and for the emission projection / CRF.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, AlignmentConfig};
use crate::corpus::{self, ContextStore, LabeledSentence, Vocabulary};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::{self, DualViewReport};
use crate::model::{self, Example, LossTerms, Model, Objective};
use crate::optim::{self, AdamW, AdamWConfig};

/// Which likelihood terms are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainViews {
    /// `L_T` only: the text baseline.
    Text,
    /// `L_I+T` only.
    Cross,
    /// `L_T + L_I+T`, optionally with the CVA term.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_crf: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub seeds: Vec<u64>,
    pub views: TrainViews,
    pub use_cva: bool,
    /// Epochs trained before the CVA term is switched on.
    pub cva_warmup_epochs: usize,
    pub random_pairing: bool,
    pub min_count: usize,
    #[serde(flatten)]
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr_encoder: 1e-3,
            lr_crf: 1e-2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            seeds: vec![1, 2, 3, 4, 5],
            views: TrainViews::Joint,
            use_cva: true,
            cva_warmup_epochs: 0,
            random_pairing: false,
            min_count: 1,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs: must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size: must be at least 1".to_string());
        }
        for (name, v) in [("lr_encoder", self.lr_encoder), ("lr_crf", self.lr_crf)] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name}: must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("beta1/beta2: must lie in [0, 1)".to_string());
        }
        if !(self.eps > 0.0) {
            problems.push("eps: must be positive".to_string());
        }
        if !(self.weight_decay >= 0.0) {
            problems.push("weight_decay: must be non-negative".to_string());
        }
        if !(self.clip_norm > 0.0) {
            problems.push("clip_norm: must be positive".to_string());
        }
        if self.seeds.is_empty() {
            problems.push("seeds: at least one seed is required".to_string());
        }
        if self.use_cva && self.views != TrainViews::Joint {
            problems.push("use_cva: requires views = joint".to_string());
        }
        if self.min_count == 0 {
            problems.push("min_count: must be at least 1".to_string());
        }
        if let Err(e) = self.encoder.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr_encoder: self.lr_encoder,
            lr_crf: self.lr_crf,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    fn objective(&self, epoch: usize) -> Objective {
        let (text, cross) = match self.views {
            TrainViews::Text => (true, false),
            TrainViews::Cross => (false, true),
            TrainViews::Joint => (true, true),
        };
        Objective {
            text,
            cross,
            cva: self.use_cva && epoch >= self.cva_warmup_epochs,
        }
    }
}

/// A sentence with its linearized visual context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSentence {
    pub sentence: LabeledSentence,
    pub context: Vec<String>,
    /// The sentence named an image absent from the context store.
    #[serde(default)]
    pub missing_image: bool,
}

/// Linearize contexts for a split.
pub fn align_sentences(
    sentences: &[LabeledSentence],
    store: &ContextStore,
    config: &AlignmentConfig,
) -> Vec<AlignedSentence> {
    sentences
        .iter()
        .map(|s| {
            let (context, missing_image) = alignment::context_for(s, store, config);
            AlignedSentence {
                sentence: s.clone(),
                context,
                missing_image,
            }
        })
        .collect()
}

/// Where the visual contexts come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Corpus splits plus context records; contexts are linearized here.
    Raw {
        train: Vec<LabeledSentence>,
        dev: Vec<LabeledSentence>,
        test: Vec<LabeledSentence>,
        store: ContextStore,
    },
    /// Splits that already carry their contexts.
    Aligned {
        train: Vec<AlignedSentence>,
        dev: Vec<AlignedSentence>,
        test: Vec<AlignedSentence>,
    },
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<AlignedSentence>,
    pub dev: Vec<AlignedSentence>,
    pub test: Vec<AlignedSentence>,
}

fn permute_contexts(split: &[AlignedSentence], seed: u64) -> Vec<AlignedSentence> {
    let mut payload: Vec<(Option<String>, Vec<String>, bool)> = split
        .iter()
        .map(|a| (a.sentence.image_id.clone(), a.context.clone(), a.missing_image))
        .collect();
    payload.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    split
        .iter()
        .zip(payload)
        .map(|(a, (image_id, context, missing_image))| AlignedSentence {
            sentence: LabeledSentence {
                image_id,
                ..a.sentence.clone()
            },
            context,
            missing_image,
        })
        .collect()
}

impl DataSource {
    pub fn train_len(&self) -> usize {
        match self {
            DataSource::Raw { train, .. } => train.len(),
            DataSource::Aligned { train, .. } => train.len(),
        }
    }

    /// Materialize the splits. With `pairing_seed`, images are randomly
    /// re-paired within each split before contexts are attached.
    pub fn splits(&self, config: &AlignmentConfig, pairing_seed: Option<u64>) -> Splits {
        match self {
            DataSource::Raw {
                train,
                dev,
                test,
                store,
            } => {
                let build = |s: &[LabeledSentence], k: u64| match pairing_seed {
                    Some(seed) => align_sentences(&alignment::shuffle_pairing(s, seed.wrapping_add(k)), store, config),
                    None => align_sentences(s, store, config),
                };
                Splits {
                    train: build(train, 0),
                    dev: build(dev, 1),
                    test: build(test, 2),
                }
            }
            DataSource::Aligned { train, dev, test } => {
                let build = |s: &[AlignedSentence], k: u64| match pairing_seed {
                    Some(seed) => permute_contexts(s, seed.wrapping_add(k)),
                    None => s.to_vec(),
                };
                Splits {
                    train: build(train, 0),
                    dev: build(dev, 1),
                    test: build(test, 2),
                }
            }
        }
    }

    /// Vocabulary over training tokens and every available context token.
    pub fn vocabulary(&self, config: &AlignmentConfig, min_count: usize) -> Result<Vocabulary> {
        match self {
            DataSource::Raw { train, store, .. } => corpus::build_vocab(train, store, config, min_count),
            DataSource::Aligned { train, dev, test } => {
                let sentences: Vec<LabeledSentence> = train.iter().map(|a| a.sentence.clone()).collect();
                let contexts = train.iter().chain(dev).chain(test).map(|a| a.context.as_slice());
                corpus::build_vocab_from_contexts(&sentences, contexts, min_count)
            }
        }
    }
}

/// Token ids of both views for one aligned sentence.
pub fn view_ids(aligned: &AlignedSentence, vocab: &Vocabulary, config: &AlignmentConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let cross = alignment::build_cross_modal_input(&aligned.sentence.tokens, &aligned.context, config)?;
    Ok((vocab.encode(&aligned.sentence.tokens), vocab.encode(&cross.tokens)))
}

pub fn make_example(aligned: &AlignedSentence, vocab: &Vocabulary, config: &AlignmentConfig) -> Result<Example> {
    let (text_ids, cross_ids) = view_ids(aligned, vocab, config)?;
    Ok(Example {
        text_ids,
        cross_ids,
        gold: vocab.encode_labels(&aligned.sentence.labels)?,
    })
}

/// Summary statistics across seeds (sample standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_text: f64,
    pub loss_cross: f64,
    pub loss_cva: f64,
    pub kl: f64,
    pub distance: f64,
    pub total: f64,
    pub dev_text_f1: f64,
    pub dev_cross_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs: Vec<EpochStats>,
    pub dev: DualViewReport,
    pub test: DualViewReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub test_text_f1: MeanStd,
    pub test_cross_f1: MeanStd,
    pub dev_text_f1: MeanStd,
    pub dev_cross_f1: MeanStd,
    pub test_distance: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl TrainReport {
    pub fn from_seeds(seeds: Vec<SeedReport>) -> Self {
        let collect = |f: &dyn Fn(&SeedReport) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
        let aggregate = Aggregate {
            test_text_f1: collect(&|s| s.test.text.micro.f1),
            test_cross_f1: collect(&|s| s.test.cross.micro.f1),
            dev_text_f1: collect(&|s| s.dev.text.micro.f1),
            dev_cross_f1: collect(&|s| s.dev.cross.micro.f1),
            test_distance: collect(&|s| s.test.representation_distance),
        };
        TrainReport { seeds, aggregate }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossTerms,
    pub wall_time: f64,
}

pub struct SeedRun {
    pub seed: u64,
    pub model: Model,
    pub report: SeedReport,
}

pub struct TrainOutcome {
    pub vocab: Vocabulary,
    pub runs: Vec<SeedRun>,
    pub report: TrainReport,
}

/// Worker pool sized by `ITA_THREADS` (machine parallelism when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var("ITA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn mean_terms(terms: &[LossTerms]) -> LossTerms {
    let n = terms.len().max(1) as f64;
    let mut m = LossTerms::default();
    for t in terms {
        m.text += t.text / n;
        m.cross += t.cross / n;
        m.cva += t.cva / n;
        m.kl += t.kl / n;
        m.distance += t.distance / n;
        m.total += t.total / n;
    }
    m
}

/// One optimization step over `batch`. Per-sentence gradients may be computed
/// in parallel; they are reduced in batch order.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut AdamW,
    batch: &[(usize, &Example)],
    objective: Objective,
    clip_norm: f64,
) -> Result<LossTerms> {
    let results: Vec<Result<(LossTerms, model::ModelGrad)>> = batch
        .par_iter()
        .map(|(_, ex)| model::sentence_loss(model, ex, objective))
        .collect();
    let mut grad = model.zeros_like();
    let mut terms = Vec::with_capacity(batch.len());
    let scale = 1.0 / batch.len() as f64;
    for ((index, _), result) in batch.iter().zip(results) {
        let (t, g) = result?;
        if !t.total.is_finite() {
            return Err(Error::NonFinite {
                sentence: *index,
                detail: format!("{t:?}"),
            });
        }
        grad.accumulate(&g, scale);
        terms.push(t);
    }
    optim::clip_grad_norm(&mut grad, clip_norm);
    optimizer.step(model, &grad);
    if !model.is_finite() {
        return Err(Error::NonFinite {
            sentence: batch.first().map_or(0, |b| b.0),
            detail: "parameters became non-finite after the update".into(),
        });
    }
    Ok(mean_terms(&terms))
}

fn selection_score(report: &DualViewReport, views: TrainViews) -> f64 {
    match views {
        TrainViews::Text => report.text.micro.f1,
        _ => report.cross.micro.f1,
    }
}

/// Train one seed.
pub fn train_seed(
    splits: &Splits,
    vocab: &Vocabulary,
    align: &AlignmentConfig,
    config: &TrainConfig,
    seed: u64,
    mut log: Option<&mut (dyn Write + Send)>,
) -> Result<(Model, SeedReport)> {
    if splits.train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let examples: Vec<Example> = splits
        .train
        .iter()
        .map(|a| make_example(a, vocab, align))
        .collect::<Result<_>>()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    order_rng.set_stream(1);
    let mut model = Model::init(
        &config.encoder,
        vocab.size(),
        align.max_total_length,
        vocab.num_labels(),
        &mut init_rng,
    );
    let mut optimizer = AdamW::new(&model, config.optimizer());
    let started = Instant::now();

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model, DualViewReport)> = None;
    for epoch in 0..config.epochs {
        let objective = config.objective(epoch);
        order.shuffle(&mut order_rng);
        let mut epoch_terms = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(usize, &Example)> = chunk.iter().map(|&i| (i, &examples[i])).collect();
            let terms = train_step(&mut model, &mut optimizer, &batch, objective, config.clip_norm)?;
            if let Some(sink) = log.as_mut() {
                let record = LogRecord {
                    seed,
                    step: optimizer.steps(),
                    epoch: epoch + 1,
                    loss: terms,
                    wall_time: started.elapsed().as_secs_f64(),
                };
                let line = serde_json::to_string(&record).expect("log records serialize");
                writeln!(sink, "{line}").map_err(|e| Error::io("<training log>", e))?;
            }
            for _ in 0..batch.len() {
                epoch_terms.push(terms);
            }
        }
        let dev = evaluation::evaluate_aligned(&model, vocab, &splits.dev, align)?;
        let m = mean_terms(&epoch_terms);
        epochs.push(EpochStats {
            epoch: epoch + 1,
            loss_text: m.text,
            loss_cross: m.cross,
            loss_cva: m.cva,
            kl: m.kl,
            distance: m.distance,
            total: m.total,
            dev_text_f1: dev.text.micro.f1,
            dev_cross_f1: dev.cross.micro.f1,
        });
        let score = selection_score(&dev, config.views);
        if best.as_ref().is_none_or(|(b, ..)| score > *b) {
            best = Some((score, epoch + 1, model.clone(), dev));
        }
    }
    let (_, best_epoch, best_model, dev) = best.expect("at least one epoch");
    let test = evaluation::evaluate_aligned(&best_model, vocab, &splits.test, align)?;
    Ok((
        best_model,
        SeedReport {
            seed,
            best_epoch,
            epochs,
            dev,
            test,
        },
    ))
}

/// Train every seed in `config.seeds` and aggregate the results.
pub fn train(
    data: &DataSource,
    align: &AlignmentConfig,
    config: &TrainConfig,
    mut log: Option<&mut (dyn Write + Send)>,
) -> Result<TrainOutcome> {
    config.validate()?;
    align.validate()?;
    if data.train_len() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    let vocab = data.vocabulary(align, config.min_count)?;
    let pool = thread_pool()?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let pairing = config.random_pairing.then_some(seed ^ 0x005e_ed0f_1a6e);
        let splits = data.splits(align, pairing);
        let sink = log.as_mut().map(|w| &mut **w as &mut (dyn Write + Send));
        let (model, report) = pool.install(|| train_seed(&splits, &vocab, align, config, seed, sink))?;
        runs.push(SeedRun { seed, model, report });
    }
    let report = TrainReport::from_seeds(runs.iter().map(|r| r.report.clone()).collect());
    Ok(TrainOutcome { vocab, runs, report })
}
