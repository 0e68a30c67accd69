//! The `ita` command line: `align`, `train`, `evaluate`, `predict`, `ablate`.
//!
//! Configuration comes from an optional flat JSON file (`--config`) whose
//! keys are the alignment and training fields plus data paths; flags override
//! file values. Every output file is written atomically.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alignment::{self, AlignmentConfig, Mode, Modes};
use crate::checkpoint::{self, Checkpoint};
use crate::corpus::{self, ContextStore, LabeledSentence};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::{self, DualViewReport, MetricReport, View};
use crate::synthetic::{self, SyntheticConfig};
use crate::training::{self, AlignedSentence, DataSource, MeanStd, TrainConfig, TrainViews};

pub const CONFIG_VERSION: &str = "ita-config/1";

#[derive(Debug, Parser)]
#[command(name = "ita", version, about = "Multimodal NER through image-text alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Linearize visual contexts for a corpus into aligned JSON Lines.
    Align(AlignArgs),
    /// Train one model per seed and write checkpoints and a report.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled split under both views.
    Evaluate(EvaluateArgs),
    /// Tag a corpus with a checkpoint.
    Predict(PredictArgs),
    /// Train the variant grid and print a comparison table.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Context modes, e.g. `la,oca` or `all`.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub max_total_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// CoNLL-style corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Context records, one JSON object per line.
    #[arg(long)]
    pub contexts: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Training split: a corpus file, or aligned `.jsonl` from `align`.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Context records for corpus-format splits.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_encoder: Option<f64>,
    #[arg(long)]
    pub lr_crf: Option<f64>,
    /// `text`, `cross` or `joint`.
    #[arg(long)]
    pub views: Option<String>,
    /// Train both views without the alignment loss.
    #[arg(long)]
    pub no_cva: bool,
    /// Pair sentences with randomly chosen images.
    #[arg(long)]
    pub random_pairing: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled split: a corpus file or aligned `.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub contexts: Option<PathBuf>,
    /// Restrict output to one view (`t` or `i+t`).
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Tokens one per line (an optional second column is ignored).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub contexts: Option<PathBuf>,
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Small synthetic corpus and model for a fast end-to-end run.
    #[arg(long)]
    pub quick: bool,
    /// Comma-separated subset of variants.
    #[arg(long)]
    pub variants: Option<String>,
    /// Also write the table (and `<output>.json`) here.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// File-level configuration: alignment and training fields plus paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: String,
    #[serde(flatten)]
    pub alignment: AlignmentConfig,
    #[serde(flatten)]
    pub training: TrainConfig,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub contexts: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION.into(),
            alignment: AlignmentConfig::default(),
            training: TrainConfig::default(),
            train: None,
            dev: None,
            test: None,
            contexts: None,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Parse a configuration document, rejecting unknown keys and versions.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "configuration".into(),
            source: e,
        })?;
        let Value::Object(map) = &value else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        if let Some(v) = map.get("version") {
            let found = v.as_str().unwrap_or_default();
            if found != CONFIG_VERSION {
                return Err(Error::Version {
                    found: found.to_string(),
                    supported: CONFIG_VERSION.to_string(),
                });
            }
        }
        let known = match serde_json::to_value(RunConfig::default()).expect("configs serialize") {
            Value::Object(m) => m.into_iter().map(|(k, _)| k).collect::<BTreeSet<_>>(),
            _ => unreachable!("structs serialize to objects"),
        };
        let unknown: Vec<&str> = map.keys().filter(|k| !known.contains(*k)).map(String::as_str).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => RunConfig::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    fn apply_config_args(&mut self, args: &ConfigArgs) -> Result<()> {
        if let Some(m) = &args.modes {
            self.alignment.modes = Modes::parse_list(m)?;
        }
        if let Some(n) = args.max_total_length {
            self.alignment.max_total_length = n;
        }
        self.alignment.validate()
    }

    fn apply_data_args(&mut self, args: &DataArgs) {
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        set(&mut self.train, &args.train);
        set(&mut self.dev, &args.dev);
        set(&mut self.test, &args.test);
        set(&mut self.contexts, &args.contexts);
    }

    fn apply_train_flags(&mut self, flags: &TrainFlags) -> Result<()> {
        let t = &mut self.training;
        if let Some(v) = flags.epochs {
            t.epochs = v;
        }
        if let Some(s) = &flags.seeds {
            t.seeds = parse_seeds(s)?;
        }
        if let Some(v) = flags.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = flags.lr_encoder {
            t.lr_encoder = v;
        }
        if let Some(v) = flags.lr_crf {
            t.lr_crf = v;
        }
        if let Some(v) = &flags.views {
            t.views = parse_views(v)?;
            if t.views != TrainViews::Joint {
                t.use_cva = false;
            }
        }
        if flags.no_cva {
            t.use_cva = false;
        }
        if flags.random_pairing {
            t.random_pairing = true;
        }
        Ok(())
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("seeds: `{p}` is not an unsigned integer")))
        })
        .collect()
}

fn parse_views(s: &str) -> Result<TrainViews> {
    match s.to_ascii_lowercase().as_str() {
        "text" | "t" => Ok(TrainViews::Text),
        "cross" | "i+t" => Ok(TrainViews::Cross),
        "joint" => Ok(TrainViews::Joint),
        other => Err(Error::Config(format!("views: unknown value `{other}`"))),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<LabeledSentence>> {
    corpus::parse_conll(open(path)?)
}

pub fn read_contexts(path: &Path) -> Result<ContextStore> {
    let store = corpus::parse_context_records(open(path)?)?;
    if store.duplicates > 0 {
        eprintln!(
            "warning: {}: {} duplicate image ids (last record kept)",
            path.display(),
            store.duplicates
        );
    }
    Ok(store)
}

/// Per-mode context segments of one aligned record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeContexts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub la: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ga: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oca: Option<Vec<String>>,
    /// All selected segments joined; present when more than one mode is on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all: Option<Vec<String>>,
}

impl ModeContexts {
    /// The context a model consumes: `all`, else the single selected mode.
    pub fn combined(&self) -> Vec<String> {
        self.all
            .clone()
            .or_else(|| self.la.clone())
            .or_else(|| self.ga.clone())
            .or_else(|| self.oca.clone())
            .unwrap_or_default()
    }
}

/// One line of an aligned dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub image_id: Option<String>,
    pub contexts: ModeContexts,
    pub sentence_mask_len: usize,
    #[serde(default)]
    pub missing_image: bool,
}

impl AlignedRecord {
    pub fn into_aligned(self) -> AlignedSentence {
        AlignedSentence {
            context: self.contexts.combined(),
            missing_image: self.missing_image,
            sentence: LabeledSentence {
                tokens: self.tokens,
                labels: self.labels,
                image_id: self.image_id,
            },
        }
    }
}

pub fn align_record(sentence: &LabeledSentence, store: &ContextStore, config: &AlignmentConfig) -> AlignedRecord {
    let record = sentence.image_id.as_deref().and_then(|id| store.get(id));
    let missing_image = sentence.image_id.is_some() && record.is_none();
    let segment = |mode: Mode| {
        config
            .modes
            .contains(mode)
            .then(|| record.map(|r| alignment::linearize_mode(r, mode, config)).unwrap_or_default())
    };
    let contexts = ModeContexts {
        la: segment(Mode::La),
        ga: segment(Mode::Ga),
        oca: segment(Mode::Oca),
        all: (config.modes.len() > 1)
            .then(|| record.map(|r| alignment::linearize_all(r, config)).unwrap_or_default()),
    };
    AlignedRecord {
        tokens: sentence.tokens.clone(),
        labels: sentence.labels.clone(),
        image_id: sentence.image_id.clone(),
        contexts,
        sentence_mask_len: sentence.tokens.len(),
        missing_image,
    }
}

/// Serialize aligned records as JSON Lines.
pub fn aligned_jsonl(records: &[AlignedRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_aligned(path: &Path) -> Result<Vec<AlignedSentence>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AlignedRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Err(v) = corpus::validate_bioes(&record.labels) {
            return Err(Error::InvalidLabels {
                sentence: out.len(),
                message: v.to_string(),
            });
        }
        if record.tokens.len() != record.labels.len() || record.tokens.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "tokens and labels must be non-empty and of equal length".into(),
            });
        }
        out.push(record.into_aligned());
    }
    Ok(out)
}

fn is_aligned(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn warn_missing(split: &str, aligned: &[AlignedSentence]) {
    let missing = aligned.iter().filter(|a| a.missing_image).count();
    if missing > 0 {
        eprintln!("warning: {split}: {missing} sentences reference unknown images (empty context used)");
    }
}

fn require<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{name}: a path is required")))
}

/// Build the data source from configured paths. Either all splits are
/// aligned `.jsonl` files or all are corpus files with a contexts file.
fn data_source(config: &RunConfig) -> Result<DataSource> {
    let paths = [
        require(&config.train, "train")?,
        require(&config.dev, "dev")?,
        require(&config.test, "test")?,
    ];
    if paths.iter().all(|p| is_aligned(p)) {
        let [train, dev, test] = paths.map(read_aligned);
        return Ok(DataSource::Aligned {
            train: train?,
            dev: dev?,
            test: test?,
        });
    }
    if paths.iter().any(|p| is_aligned(p)) {
        return Err(Error::Config("splits must all be aligned .jsonl or all corpus files".into()));
    }
    let store = match &config.contexts {
        Some(p) => read_contexts(p)?,
        None => ContextStore::default(),
    };
    let [train, dev, test] = paths.map(read_corpus);
    Ok(DataSource::Raw {
        train: train?,
        dev: dev?,
        test: test?,
        store,
    })
}

fn load_split(path: &Path, contexts: Option<&Path>, config: &AlignmentConfig) -> Result<Vec<AlignedSentence>> {
    if is_aligned(path) {
        return read_aligned(path);
    }
    let store = match contexts {
        Some(p) => read_contexts(p)?,
        None => ContextStore::default(),
    };
    Ok(training::align_sentences(&read_corpus(path)?, &store, config))
}

pub fn cmd_align(args: &AlignArgs) -> Result<()> {
    let mut config = RunConfig::load(args.config.config.as_deref())?;
    config.apply_config_args(&args.config)?;
    let sentences = read_corpus(&args.corpus)?;
    let store = read_contexts(&args.contexts)?;
    let records: Vec<AlignedRecord> = sentences
        .iter()
        .map(|s| align_record(s, &store, &config.alignment))
        .collect();
    for (i, r) in records.iter().enumerate() {
        if r.missing_image {
            eprintln!(
                "warning: sentence {i}: image `{}` not in contexts; empty context emitted",
                r.image_id.as_deref().unwrap_or_default()
            );
        }
    }
    checkpoint::write_atomic(&args.output, aligned_jsonl(&records).as_bytes())
}

fn seed_table(report: &training::TrainReport) -> String {
    let a = &report.aggregate;
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>16} {:>16}", "", "T", "I+T");
    let _ = writeln!(out, "{:<24} {:>16} {:>16}", "test F1", fmt_ms(a.test_text_f1), fmt_ms(a.test_cross_f1));
    let _ = writeln!(out, "{:<24} {:>16} {:>16}", "dev F1", fmt_ms(a.dev_text_f1), fmt_ms(a.dev_cross_f1));
    let _ = writeln!(out, "{:<24} {:>16}", "representation distance", fmt_ms(a.test_distance));
    out
}

fn fmt_ms(m: MeanStd) -> String {
    format!("{:.2} ± {:.2}", m.mean, m.std)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = RunConfig::load(args.config.config.as_deref())?;
    config.apply_config_args(&args.config)?;
    config.apply_data_args(&args.data);
    config.apply_train_flags(&args.flags)?;
    if args.output_dir.is_some() {
        config.output_dir.clone_from(&args.output_dir);
    }
    config.training.validate()?;
    let out_dir = require(&config.output_dir, "output_dir")?.to_path_buf();
    let data = data_source(&config)?;
    if let DataSource::Aligned { train, dev, test } = &data {
        warn_missing("train", train);
        warn_missing("dev", dev);
        warn_missing("test", test);
    }

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let log_file = tempfile::NamedTempFile::new_in(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut log = BufWriter::new(log_file);
    let outcome = training::train(&data, &config.alignment, &config.training, Some(&mut log))?;

    for run in &outcome.runs {
        let ck = Checkpoint {
            seed: run.seed,
            alignment: config.alignment.clone(),
            training: config.training.clone(),
            vocab: outcome.vocab.clone(),
            model: run.model.clone(),
        };
        ck.save(&out_dir.join(format!("checkpoint-seed{}.json", run.seed)))?;
    }
    let report_json = serde_json::to_string_pretty(&outcome.report).expect("reports serialize");
    checkpoint::write_atomic(&out_dir.join("report.json"), report_json.as_bytes())?;
    let table = seed_table(&outcome.report);
    checkpoint::write_atomic(&out_dir.join("report.txt"), table.as_bytes())?;
    let log_file = log.into_inner().map_err(|e| Error::io(&log_path, e.into_error()))?;
    log_file.persist(&log_path).map_err(|e| Error::io(&log_path, e.error))?;
    print!("{table}");
    Ok(())
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub text: Option<MetricReport>,
    #[serde(rename = "I+T", skip_serializing_if = "Option::is_none")]
    pub cross: Option<MetricReport>,
    pub representation_distance: f64,
    pub missing_images: usize,
}

impl MetricsFile {
    pub fn from_report(report: &DualViewReport, view: Option<View>) -> MetricsFile {
        let keep = |v: View| view.is_none_or(|w| w == v);
        MetricsFile {
            text: keep(View::Text).then(|| report.text.rounded()),
            cross: keep(View::Cross).then(|| report.cross.rounded()),
            representation_distance: (report.representation_distance * 1e4).round() / 1e4,
            missing_images: report.missing_images,
        }
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let view = args.view.as_deref().map(str::parse::<View>).transpose()?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let split = load_split(&args.data, args.contexts.as_deref(), &ck.alignment)?;
    warn_missing("data", &split);
    let report = evaluation::evaluate_aligned(&ck.model, &ck.vocab, &split, &ck.alignment)?;
    let file = MetricsFile::from_report(&report, view);
    let mut table = String::new();
    for r in [&file.text, &file.cross].into_iter().flatten() {
        table.push_str(&r.to_table());
        table.push('\n');
    }
    let _ = writeln!(table, "representation distance: {:.4}", file.representation_distance);
    let json = serde_json::to_string_pretty(&file).expect("metrics serialize");
    checkpoint::write_atomic(&args.output_dir.join("metrics.json"), json.as_bytes())?;
    checkpoint::write_atomic(&args.output_dir.join("metrics.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// Read a corpus whose lines hold a token and optionally a label.
pub fn read_tokens(path: &Path) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    let mut current = LabeledSentence {
        tokens: Vec::new(),
        labels: Vec::new(),
        image_id: None,
    };
    let flush = |current: &mut LabeledSentence, out: &mut Vec<LabeledSentence>| {
        if !current.tokens.is_empty() {
            let image_id = current.image_id.take();
            out.push(std::mem::replace(
                current,
                LabeledSentence {
                    tokens: Vec::new(),
                    labels: Vec::new(),
                    image_id: None,
                },
            ));
            out.last_mut().expect("just pushed").image_id = image_id;
        }
    };
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut current, &mut out);
            continue;
        }
        if let Some(id) = corpus::image_header(line) {
            flush(&mut current, &mut out);
            current.image_id = Some(id.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() > 2 || fields[0].is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected `token` or `token<TAB>label`".into(),
            });
        }
        current.tokens.push(fields[0].to_string());
        current.labels.push("O".to_string());
    }
    flush(&mut current, &mut out);
    Ok(out)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let view = match args.view.as_deref() {
        Some(v) => v.parse()?,
        None if args.contexts.is_some() => View::Cross,
        None => View::Text,
    };
    let sentences = read_tokens(&args.input)?;
    let store = match &args.contexts {
        Some(p) => read_contexts(p)?,
        None => ContextStore::default(),
    };
    let aligned = training::align_sentences(&sentences, &store, &ck.alignment);
    warn_missing("input", &aligned);
    let mut out = String::new();
    for a in &aligned {
        let p = evaluation::predict_aligned(&ck.model, &ck.vocab, a, &ck.alignment)?;
        let labels = match view {
            View::Text => &p.text,
            View::Cross => &p.cross,
        };
        if let Some(id) = &a.sentence.image_id {
            let _ = writeln!(out, "# img_id = {id}");
        }
        for (t, l) in a.sentence.tokens.iter().zip(labels) {
            let _ = writeln!(out, "{t}\t{l}");
        }
        out.push('\n');
    }
    checkpoint::write_atomic(&args.output, out.as_bytes())
}

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub views: TrainViews,
    pub use_cva: bool,
    pub modes: &'static [Mode],
    pub random_pairing: bool,
}

pub const VARIANTS: [Variant; 8] = [
    Variant {
        name: "baseline",
        views: TrainViews::Text,
        use_cva: false,
        modes: &[Mode::La, Mode::Ga, Mode::Oca],
        random_pairing: false,
    },
    Variant {
        name: "ita-la",
        views: TrainViews::Cross,
        use_cva: false,
        modes: &[Mode::La],
        random_pairing: false,
    },
    Variant {
        name: "ita-ga",
        views: TrainViews::Cross,
        use_cva: false,
        modes: &[Mode::Ga],
        random_pairing: false,
    },
    Variant {
        name: "ita-oca",
        views: TrainViews::Cross,
        use_cva: false,
        modes: &[Mode::Oca],
        random_pairing: false,
    },
    Variant {
        name: "ita-all",
        views: TrainViews::Cross,
        use_cva: false,
        modes: &[Mode::La, Mode::Ga, Mode::Oca],
        random_pairing: false,
    },
    Variant {
        name: "ita-all-cva",
        views: TrainViews::Joint,
        use_cva: true,
        modes: &[Mode::La, Mode::Ga, Mode::Oca],
        random_pairing: false,
    },
    Variant {
        name: "ita-joint",
        views: TrainViews::Joint,
        use_cva: false,
        modes: &[Mode::La, Mode::Ga, Mode::Oca],
        random_pairing: false,
    },
    Variant {
        name: "ita-random",
        views: TrainViews::Cross,
        use_cva: false,
        modes: &[Mode::La, Mode::Ga, Mode::Oca],
        random_pairing: true,
    },
];

impl Variant {
    pub fn by_name(name: &str) -> Result<Variant> {
        VARIANTS
            .iter()
            .find(|v| v.name == name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown variant `{name}`")))
    }

    pub fn apply(&self, align: &AlignmentConfig, train: &TrainConfig) -> (AlignmentConfig, TrainConfig) {
        let modes = Modes::try_from(self.modes.to_vec()).expect("variants name at least one mode");
        (
            AlignmentConfig {
                modes,
                ..align.clone()
            },
            TrainConfig {
                views: self.views,
                use_cva: self.use_cva,
                random_pairing: self.random_pairing,
                ..train.clone()
            },
        )
    }

    fn trains_text(&self) -> bool {
        self.views != TrainViews::Cross
    }

    fn trains_cross(&self) -> bool {
        self.views != TrainViews::Text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub test_text_f1: Option<MeanStd>,
    pub test_cross_f1: Option<MeanStd>,
    pub test_distance: MeanStd,
}

pub fn ablation_table(rows: &[AblationRow], seeds: usize) -> String {
    let cell = |m: Option<MeanStd>| m.map_or_else(|| "-".to_string(), fmt_ms);
    let mut out = format!("test micro-F1 over {seeds} seeds (mean ± std)\n");
    let _ = writeln!(out, "{:<14} {:>16} {:>16} {:>16}", "variant", "T", "I+T", "distance");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<14} {:>16} {:>16} {:>16}",
            r.variant,
            cell(r.test_text_f1),
            cell(r.test_cross_f1),
            format!("{:.3} ± {:.3}", r.test_distance.mean, r.test_distance.std)
        );
    }
    out
}

/// Train each variant and collect its row.
pub fn run_ablation(
    data: &DataSource,
    align: &AlignmentConfig,
    train: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            let (a, t) = v.apply(align, train);
            let outcome = training::train(data, &a, &t, None)?;
            let agg = &outcome.report.aggregate;
            Ok(AblationRow {
                variant: v.name.to_string(),
                test_text_f1: v.trains_text().then_some(agg.test_text_f1),
                test_cross_f1: v.trains_cross().then_some(agg.test_cross_f1),
                test_distance: agg.test_distance,
            })
        })
        .collect()
}

/// Settings of `ablate --quick`.
pub fn quick_settings() -> (SyntheticConfig, TrainConfig) {
    (
        SyntheticConfig {
            train: 200,
            dev: 50,
            test: 50,
            surface_forms: 12,
            ..SyntheticConfig::default()
        },
        TrainConfig {
            epochs: 2,
            encoder: EncoderConfig {
                dim: 16,
                ff_dim: 32,
                layers: 1,
                heads: 2,
            },
            ..TrainConfig::default()
        },
    )
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let mut config = RunConfig::load(args.config.config.as_deref())?;
    if args.quick {
        config.training = TrainConfig {
            seeds: config.training.seeds.clone(),
            ..quick_settings().1
        };
    }
    config.apply_config_args(&args.config)?;
    config.apply_data_args(&args.data);
    config.apply_train_flags(&args.flags)?;
    let variants = match &args.variants {
        Some(list) => list.split(',').map(|n| Variant::by_name(n.trim())).collect::<Result<Vec<_>>>()?,
        None => VARIANTS.to_vec(),
    };
    let data = if config.train.is_some() {
        data_source(&config)?
    } else if args.quick {
        synthetic::generate(&quick_settings().0).into_source()
    } else {
        synthetic::generate(&SyntheticConfig::default()).into_source()
    };
    let rows = run_ablation(&data, &config.alignment, &config.training, &variants)?;
    let table = ablation_table(&rows, config.training.seeds.len());
    if let Some(path) = &args.output {
        checkpoint::write_atomic(path, table.as_bytes())?;
        let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
        let mut json_path = path.clone().into_os_string();
        json_path.push(".json");
        checkpoint::write_atomic(Path::new(&json_path), json.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Align(a) => cmd_align(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
