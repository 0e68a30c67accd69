//! A synthetic disambiguation corpus.
//!
//! Every entity surface form has two candidate types and each occurrence
//! draws one uniformly, so the sentence alone cannot tell them apart. The
//! paired image record carries the correct type's cue word (as a detected
//! object and in the top caption) with probability `cue_probability`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Attribute, Caption, ContextStore, DetectedObject, LabeledSentence, VisualContextRecord};
use crate::training::DataSource;

pub const TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
/// Cue word of each entry of [`TYPES`].
pub const CUES: [&str; 4] = ["portrait", "skyline", "logo", "trophy"];

const DISTRACTORS: [&str; 12] = [
    "tree", "car", "sky", "table", "window", "road", "cup", "dog", "chair", "cloud", "wall", "grass",
];
const COLORS: [&str; 6] = ["red", "blue", "green", "white", "dark", "small"];
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "ten", "vo", "zu", "bel", "dor", "fi", "gan", "hu", "ix", "jo", "nem", "pra",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub surface_forms: usize,
    pub fillers: usize,
    pub cue_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train: 2000,
            dev: 500,
            test: 500,
            surface_forms: 60,
            fillers: 40,
            cue_probability: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct SurfaceForm {
    tokens: Vec<String>,
    candidates: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    pub store: ContextStore,
}

impl SyntheticCorpus {
    pub fn into_source(self) -> DataSource {
        DataSource::Raw {
            train: self.train,
            dev: self.dev,
            test: self.test,
            store: self.store,
        }
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

/// Distinct pseudo-words that collide with no cue or distractor.
fn lexicon(rng: &mut ChaCha8Rng, count: usize, syllables: usize, taken: &mut Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = pseudo_word(rng, syllables);
        if !taken.contains(&w) {
            taken.push(w.clone());
            out.push(w);
        }
    }
    out
}

fn labels_for(len: usize, ty: &str) -> Vec<String> {
    match len {
        1 => vec![format!("S-{ty}")],
        _ => {
            let mut l = vec![format!("B-{ty}")];
            l.extend((2..len).map(|_| format!("I-{ty}")));
            l.push(format!("E-{ty}"));
            l
        }
    }
}

fn context_record(rng: &mut ChaCha8Rng, image_id: String, ty: usize, cue_probability: f64) -> VisualContextRecord {
    let mut distractors: Vec<&str> = DISTRACTORS.choose_multiple(rng, 3).copied().collect();
    distractors.truncate(rng.gen_range(2..=3));
    let attribute = |rng: &mut ChaCha8Rng| Attribute {
        name: COLORS.choose(rng).expect("non-empty").to_string(),
        confidence: rng.gen_range(0.0..1.0),
    };
    let mut objects: Vec<DetectedObject> = distractors
        .iter()
        .map(|tag| DetectedObject {
            tag: tag.to_string(),
            confidence: rng.gen_range(0.3..1.0),
            attributes: vec![attribute(rng)],
        })
        .collect();
    let has_cue = rng.gen_bool(cue_probability);
    let caption = if has_cue {
        let at = rng.gen_range(0..=objects.len());
        objects.insert(
            at,
            DetectedObject {
                tag: CUES[ty].to_string(),
                confidence: rng.gen_range(0.5..1.0),
                attributes: vec![attribute(rng)],
            },
        );
        format!("a {} near a {}", CUES[ty], distractors[0])
    } else {
        format!("a {} near a {}", distractors[0], distractors[1])
    };
    VisualContextRecord {
        image_id,
        objects,
        captions: vec![Caption {
            text: caption,
            score: -rng.gen_range(0.5..3.0),
        }],
        ocr_text: String::new(),
    }
}

/// Generate the corpus. Identical configurations give identical corpora.
pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut taken: Vec<String> = CUES.iter().chain(&DISTRACTORS).chain(&COLORS).map(|s| s.to_string()).collect();
    taken.extend(["a", "near"].map(String::from));
    let fillers = lexicon(&mut rng, config.fillers, 2, &mut taken);
    let name_parts = lexicon(&mut rng, config.surface_forms * 2, 3, &mut taken);
    let forms: Vec<SurfaceForm> = (0..config.surface_forms)
        .map(|i| {
            let len = rng.gen_range(1..=2);
            let mut types = [0, 1, 2, 3];
            types.shuffle(&mut rng);
            SurfaceForm {
                tokens: name_parts[2 * i..2 * i + len].to_vec(),
                candidates: [types[0], types[1]],
            }
        })
        .collect();

    let mut store = ContextStore::default();
    let mut next_image = 0usize;
    let mut split = |count: usize, rng: &mut ChaCha8Rng, store: &mut ContextStore| -> Vec<LabeledSentence> {
        (0..count)
            .map(|_| {
                let form = forms.choose(rng).expect("surface forms");
                let ty = form.candidates[rng.gen_range(0..2)];
                let n_fill = rng.gen_range(4..=9);
                let mut tokens: Vec<String> =
                    (0..n_fill).map(|_| fillers.choose(rng).expect("fillers").clone()).collect();
                let mut labels = vec!["O".to_string(); n_fill];
                let at = rng.gen_range(0..=n_fill);
                tokens.splice(at..at, form.tokens.iter().cloned());
                labels.splice(at..at, labels_for(form.tokens.len(), TYPES[ty]));
                let image_id = format!("syn-{next_image:05}");
                next_image += 1;
                store.insert(context_record(rng, image_id.clone(), ty, config.cue_probability));
                LabeledSentence {
                    tokens,
                    labels,
                    image_id: Some(image_id),
                }
            })
            .collect()
    };
    let train = split(config.train, &mut rng, &mut store);
    let dev = split(config.dev, &mut rng, &mut store);
    let test = split(config.test, &mut rng, &mut store);
    SyntheticCorpus { train, dev, test, store }
}
