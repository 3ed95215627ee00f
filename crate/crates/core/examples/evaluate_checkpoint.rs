//! Saves a trained model, reloads it, evaluates at several cutoffs and prints
//! top-k recommendations for a few test users.
//!
//! ```text
//! cargo run --release --example evaluate_checkpoint
//! ```

use pnfrec::data::{assign_feedback, kcore_filter, temporal_split};
use pnfrec::losses::LossWeights;
use pnfrec::model::{load_checkpoint, save_checkpoint, EncoderConfig};
use pnfrec::synth::{generate, SynthConfig, SYNTH_THRESHOLD};
use pnfrec::training::{evaluate, model_input, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let log = kcore_filter(&generate(&SynthConfig::default())?.log, 5)?;
    let split = temporal_split(&assign_feedback(&log, SYNTH_THRESHOLD)?, 0.9, 0)?;
    let cfg = TrainConfig {
        encoder: EncoderConfig {
            d: 32,
            ..EncoderConfig::default()
        },
        weights: LossWeights::new(0.25, 0.1)?,
        max_epochs: 15,
        ..TrainConfig::default()
    };
    let run = train(&split, &cfg)?;

    let path = std::env::temp_dir().join("pnfrec-example.bin");
    save_checkpoint(&path, &run.model)?;
    let model = load_checkpoint(&path)?;
    // dropout is a training setting and is not stored
    assert_eq!(model.params(), run.model.params());
    println!(
        "checkpoint {} ({} parameters)",
        path.display(),
        model.num_parameters()
    );

    for report in evaluate(&model, &split.test, &[5, 10, 20], true)? {
        print!("{}", report.to_table());
    }

    let items = split.train.log.items();
    for case in split.test.iter().take(3) {
        let input = model_input(model.variant, case, model.config.max_len);
        let top = model.predict_topk(&input, &case.all_items(), 5, true)?;
        let names: Vec<&str> = top.iter().map(|&i| items.external(i)).collect();
        println!(
            "user {}: next was {} ({}), top-5 {:?}",
            split.train.log.users().external(case.user),
            items.external(case.target.item),
            if case.target_positive {
                "liked"
            } else {
                "disliked"
            },
            names
        );
    }
    Ok(())
}
