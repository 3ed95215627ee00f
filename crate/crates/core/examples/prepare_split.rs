//! Loads an interaction file, applies the k-core filter, labels feedback by a
//! threshold, splits on a global time boundary and writes the split directory.
//!
//! ```text
//! cargo run --release --example prepare_split -- ratings.csv out/split 4
//! ```
//!
//! Without arguments a synthetic log is generated and written to a temp dir.

use std::path::PathBuf;

use pnfrec::data::{
    assign_feedback, kcore_filter, load_interactions, read_split, temporal_split, write_split,
    Delimiter,
};
use pnfrec::synth::{generate, SynthConfig, SYNTH_THRESHOLD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (log, out, threshold) = match args.as_slice() {
        [input, out, threshold] => (
            load_interactions(input.as_ref(), Delimiter::Auto)?,
            PathBuf::from(out),
            threshold.parse()?,
        ),
        _ => (
            generate(&SynthConfig::default())?.log,
            std::env::temp_dir().join("pnfrec-example-split"),
            SYNTH_THRESHOLD,
        ),
    };
    println!(
        "raw: {} users, {} items, {} interactions",
        log.num_users(),
        log.num_items(),
        log.len()
    );
    let core = kcore_filter(&log, 5)?;
    println!(
        "5-core: {} users, {} items, {} interactions",
        core.num_users(),
        core.num_items(),
        core.len()
    );

    let labeled = assign_feedback(&core, threshold)?;
    let split = temporal_split(&labeled, 0.9, 0)?;
    let neg =
        |cases: &[pnfrec::data::EvalCase]| cases.iter().filter(|c| !c.target_positive).count();
    println!(
        "boundary t={}  train {} records  val {} users ({} negative targets)  test {} users ({} negative targets)",
        split.boundary_timestamp,
        split.train.log.len(),
        split.val.len(),
        neg(&split.val),
        split.test.len(),
        neg(&split.test),
    );

    write_split(&out, &split, 50)?;
    let (again, meta) = read_split(&out)?;
    assert_eq!(again, split);
    println!(
        "wrote {} ({} users, {} items, l={})",
        out.display(),
        meta.num_users,
        meta.num_items,
        meta.max_len
    );
    Ok(())
}
