//! Trains every model variant on the same synthetic split and prints the
//! polarity-split test metrics side by side.
//!
//! ```text
//! cargo run --release --example compare_variants
//! ```

use pnfrec::data::{assign_feedback, kcore_filter, temporal_split};
use pnfrec::losses::LossWeights;
use pnfrec::model::{parameter_count, EncoderConfig, ModelVariant};
use pnfrec::synth::{generate, SynthConfig, SYNTH_THRESHOLD};
use pnfrec::training::{evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let log = kcore_filter(&generate(&SynthConfig::default())?.log, 5)?;
    let split = temporal_split(&assign_feedback(&log, SYNTH_THRESHOLD)?, 0.9, 0)?;
    let encoder = EncoderConfig {
        d: 32,
        ..EncoderConfig::default()
    };
    let runs = [
        (ModelVariant::PnfRec, 0.25, 0.1),
        (ModelVariant::SasRecP, 0.0, 0.0),
        (ModelVariant::SasRec, 0.0, 0.0),
        (ModelVariant::SasRecC, 0.0, 0.1),
    ];
    println!(
        "{:<10} {:>8} {:>9} {:>9} {:>9} {:>7}",
        "variant", "params", "NDCG_p", "NDCG_n", "dNDCG", "epochs"
    );
    for (variant, alpha, beta) in runs {
        let cfg = TrainConfig {
            encoder,
            variant,
            weights: LossWeights::new(alpha, beta)?,
            max_epochs: 30,
            patience: 5,
            ..TrainConfig::default()
        };
        let run = train(&split, &cfg)?;
        let r = &evaluate(&run.model, &split.test, &[10], true)?[0];
        println!(
            "{:<10} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>7}",
            variant.name(),
            parameter_count(&encoder, variant, split.num_items()),
            r.ndcg_p,
            r.ndcg_n,
            r.delta_ndcg,
            run.log.len()
        );
    }
    Ok(())
}
