//! Converts MovieLens-1M `ratings.dat` into the tabular format the CLI reads,
//! then prepares and trains on it.
//!
//! ```text
//! cargo run --release --example movielens_1m -- ml-1m/ratings.dat ml1m.tsv
//! pnfrec prepare --input ml1m.tsv --threshold 4 --max-len 100
//! ```
//!
//! The source file uses `::` separators and has no header. With `--train` the
//! example also trains PNFRec in-process, which takes hours on one core.

use pnfrec::data::{
    assign_feedback, kcore_filter, temporal_split, write_interactions, InteractionLog,
    RawInteraction,
};
use pnfrec::losses::LossWeights;
use pnfrec::model::EncoderConfig;
use pnfrec::training::{evaluate, train_with, TrainConfig};

fn parse(line: &str) -> Result<RawInteraction, String> {
    let f: Vec<&str> = line.split("::").collect();
    if f.len() != 4 {
        return Err(format!("expected 4 fields: {line}"));
    }
    Ok(RawInteraction {
        user: f[0].to_string(),
        item: f[1].to_string(),
        value: f[2].parse().map_err(|e| format!("{line}: {e}"))?,
        timestamp: f[3].parse().map_err(|e| format!("{line}: {e}"))?,
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output, rest @ ..] = args.as_slice() else {
        return Err("usage: movielens_1m <ratings.dat> <out.tsv> [--train]".into());
    };
    let text = std::fs::read_to_string(input)?;
    let rows = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(parse)
        .collect::<Result<Vec<_>, _>>()?;
    let log = InteractionLog::from_raw(rows);
    write_interactions(output.as_ref(), &log, b'\t')?;
    println!(
        "{} users, {} items, {} ratings -> {output}",
        log.num_users(),
        log.num_items(),
        log.len()
    );

    if rest.first().map(String::as_str) == Some("--train") {
        let core = kcore_filter(&log, 5)?;
        let split = temporal_split(&assign_feedback(&core, 4.0)?, 0.9, 0)?;
        let cfg = TrainConfig {
            encoder: EncoderConfig {
                max_len: 100,
                ..EncoderConfig::default()
            },
            weights: LossWeights::new(0.2, 0.1)?,
            ..TrainConfig::default()
        };
        let run = train_with(&split, &cfg, |r| {
            println!("epoch {} val NDCG_p@10 {:.4}", r.epoch, r.val_ndcg)
        })?;
        print!(
            "{}",
            evaluate(&run.model, &split.test, &[10], true)?[0].to_table()
        );
    }
    Ok(())
}
