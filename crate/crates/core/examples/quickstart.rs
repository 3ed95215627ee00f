//! Generate a synthetic log, split it, train PNFRec and report polarity-split metrics.
//!
//! ```text
//! cargo run --release --example quickstart
//! ```

use pnfrec::data::{assign_feedback, kcore_filter, temporal_split};
use pnfrec::losses::LossWeights;
use pnfrec::model::{EncoderConfig, ModelVariant};
use pnfrec::synth::{generate, SynthConfig, SYNTH_THRESHOLD};
use pnfrec::training::{evaluate, train_with, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate(&SynthConfig::default())?;
    let log = kcore_filter(&data.log, 5)?;
    let labeled = assign_feedback(&log, SYNTH_THRESHOLD)?;
    println!(
        "{} users, {} items, {:.1}% negative",
        log.num_users(),
        log.num_items(),
        100.0 * labeled.negative_share()
    );
    let split = temporal_split(&labeled, 0.9, 0)?;

    let cfg = TrainConfig {
        encoder: EncoderConfig {
            d: 32,
            ..EncoderConfig::default()
        },
        variant: ModelVariant::PnfRec,
        weights: LossWeights::new(0.25, 0.1)?,
        max_epochs: 30,
        patience: 5,
        ..TrainConfig::default()
    };
    let run = train_with(&split, &cfg, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  val NDCG_p@10 {:.4}",
            r.epoch, r.loss, r.val_ndcg
        )
    })?;
    let report = &evaluate(&run.model, &split.test, &[10], true)?[0];
    print!("{}", report.to_table());
    let secs: f64 = run.epoch_seconds.iter().sum();
    println!("{:.1}s over {} epochs", secs, run.log.len());
    Ok(())
}
