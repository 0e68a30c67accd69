//! Span-level precision, recall and F1 from BIOES label sequences,
//! including how malformed predictions are read.

use ita::evaluation::{self, extract_spans, View};

fn main() {
    let gold = vec![
        vec!["B-PER", "E-PER", "O", "S-LOC"],
        vec!["S-ORG", "O", "B-MISC", "I-MISC", "E-MISC"],
    ];
    let pred = vec![
        vec!["B-PER", "E-PER", "O", "S-ORG"],
        vec!["S-ORG", "O", "B-MISC", "E-MISC", "O"],
    ];
    for p in &pred {
        println!("{p:?} -> {:?}", extract_spans(p));
    }
    println!("{:?}", extract_spans(&["B-PER", "S-LOC", "E-PER"]));
    let report = evaluation::evaluate_labels(&gold, &pred, View::Text);
    print!("{}", report.rounded().to_table());
}
