//! Two-phase search over the loss weights: α with β = 0 first, then β at the
//! chosen α, selecting on validation NDCG_p@10.
//!
//! ```text
//! cargo run --release --example tune_weights -- 2
//! ```
//!
//! The optional argument is the number of worker threads.

use pnfrec::data::{assign_feedback, kcore_filter, temporal_split};
use pnfrec::model::EncoderConfig;
use pnfrec::synth::{generate, SynthConfig, SYNTH_THRESHOLD};
use pnfrec::training::{tune_incremental, TrainConfig, TuneGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let jobs = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    let log = kcore_filter(&generate(&SynthConfig::default())?.log, 5)?;
    let split = temporal_split(&assign_feedback(&log, SYNTH_THRESHOLD)?, 0.9, 0)?;
    let base = TrainConfig {
        encoder: EncoderConfig {
            d: 32,
            ..EncoderConfig::default()
        },
        max_epochs: 20,
        patience: 4,
        ..TrainConfig::default()
    };
    let grid = TuneGrid::new(&[0.0, 0.1, 0.25, 0.5], &[0.0, 0.1, 0.25])?;
    let out = tune_incremental(&split, &base, &grid, jobs)?;
    print!("{}", out.table_tsv(10));
    println!("selected alpha={} beta={}", out.alpha, out.beta);
    Ok(())
}
