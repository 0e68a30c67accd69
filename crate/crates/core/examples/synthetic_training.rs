//! Train the text baseline and the cross-modal variants on the synthetic
//! disambiguation corpus and compare their test F1.
//!
//! Usage: cargo run --release --example synthetic_training -- [epochs] [seeds] [dim] [layers]

use std::time::Instant;

use ita::alignment::AlignmentConfig;
use ita::encoder::EncoderConfig;
use ita::synthetic::{self, SyntheticConfig};
use ita::training::{self, TrainConfig, TrainViews};

fn main() -> ita::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let dim: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(64);
    let layers: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let encoder = EncoderConfig {
        dim,
        ff_dim: 2 * dim,
        layers,
        heads: 4,
    };
    let data = synthetic::generate(&SyntheticConfig::default()).into_source();
    let align = AlignmentConfig::default();
    let variants = [
        ("baseline", TrainViews::Text, false),
        ("ita-all", TrainViews::Cross, false),
        ("ita-joint", TrainViews::Joint, false),
        ("ita-all-cva", TrainViews::Joint, true),
    ];
    for (name, views, use_cva) in variants {
        let config = TrainConfig {
            epochs,
            seeds: (1..=seeds).collect(),
            views,
            use_cva,
            encoder: encoder.clone(),
            ..TrainConfig::default()
        };
        let started = Instant::now();
        let outcome = training::train(&data, &align, &config, None)?;
        let a = &outcome.report.aggregate;
        println!(
            "{name:<12} T {:6.2}  I+T {:6.2}  distance {:.4}  ({:.1}s)",
            a.test_text_f1.mean,
            a.test_cross_f1.mean,
            a.test_distance.mean,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
