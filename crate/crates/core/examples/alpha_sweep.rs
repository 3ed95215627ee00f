//! Sweeps the negative-encoder weight α and prints how the gap between liked
//! and disliked targets responds.
//!
//! ```text
//! cargo run --release --example alpha_sweep
//! ```

use pnfrec::data::{assign_feedback, kcore_filter, temporal_split};
use pnfrec::losses::LossWeights;
use pnfrec::model::EncoderConfig;
use pnfrec::synth::{generate, SynthConfig, SYNTH_THRESHOLD};
use pnfrec::training::{evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let log = kcore_filter(&generate(&SynthConfig::default())?.log, 5)?;
    let split = temporal_split(&assign_feedback(&log, SYNTH_THRESHOLD)?, 0.9, 0)?;
    println!("alpha   NDCG_p@10  NDCG_n@10  dNDCG@10");
    for alpha in [0.0, 0.1, 0.25, 0.5, 1.0, 2.0] {
        let cfg = TrainConfig {
            encoder: EncoderConfig {
                d: 32,
                ..EncoderConfig::default()
            },
            weights: LossWeights::new(alpha, 0.0)?,
            max_epochs: 30,
            patience: 5,
            ..TrainConfig::default()
        };
        let run = train(&split, &cfg)?;
        let r = &evaluate(&run.model, &split.test, &[10], true)?[0];
        println!(
            "{alpha:<7} {:>9.4}  {:>9.4}  {:>8.4}",
            r.ndcg_p, r.ndcg_n, r.delta_ndcg
        );
    }
    Ok(())
}
