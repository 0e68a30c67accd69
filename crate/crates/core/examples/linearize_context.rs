//! Turn an image's detected objects, captions and OCR text into context
//! tokens, mode by mode, and append them to a sentence.

use ita::alignment::{self, AlignmentConfig, Mode};
use ita::corpus::parse_context_records;

const RECORD: &str = r#"{"image_id": "img1", "objects": [{"tag": "man", "confidence": 0.8, "attributes": [{"name": "young", "confidence": 0.7}, {"name": "tall", "confidence": 0.2}]}, {"tag": "stadium", "confidence": 0.95, "attributes": [{"name": "large", "confidence": 0.9}]}], "captions": [{"text": "A man kicks a ball", "score": -1.2}, {"text": "a crowd in a stadium", "score": -0.4}], "ocr_text": "GOAL 2-1"}"#;

fn main() -> ita::Result<()> {
    let store = parse_context_records(RECORD.as_bytes())?;
    let record = store.get("img1").expect("record");
    let config = AlignmentConfig::default();
    for mode in [Mode::La, Mode::Ga, Mode::Oca] {
        println!("{mode:>4}: {:?}", alignment::linearize_mode(record, mode, &config));
    }
    let context = alignment::linearize_all(record, &config);
    let sentence = ["Messi", "scores", "again"];
    let input = alignment::build_cross_modal_input(&sentence, &context, &config)?;
    println!("input: {}", input.tokens.join(" "));
    println!("labelled positions: {}", input.sentence_len);
    Ok(())
}
