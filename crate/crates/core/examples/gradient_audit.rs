//! Check the hand-written gradients of every loss term against central
//! finite differences on a small random model.

use ita::encoder::EncoderConfig;
use ita::gradcheck::{self, AuditConfig};
use ita::model::{Example, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ita::Result<()> {
    let config = EncoderConfig {
        dim: 8,
        ff_dim: 16,
        layers: 2,
        heads: 2,
    };
    let mut model = Model::init(&config, 20, 16, 5, &mut ChaCha8Rng::seed_from_u64(1));
    model.crf.transitions.fill(0.2);
    let example = Example {
        text_ids: vec![4, 7, 9, 2],
        cross_ids: vec![4, 7, 9, 2, 11, 12, 13],
        gold: vec![1, 3, 0, 0],
    };
    let report = gradcheck::audit(&model, &example, &AuditConfig::default())?;
    for term in &report.terms {
        println!("{}", term.term);
        for t in &term.tensors {
            println!("  {:<18} {:>2} coords  rel {:.2e}", t.name, t.checked, t.max_rel_error);
        }
    }
    println!("teacher path gradient {:e}", report.teacher_path_max_abs);
    println!("{}", if report.passed() { "passed" } else { "failed" });
    Ok(())
}
