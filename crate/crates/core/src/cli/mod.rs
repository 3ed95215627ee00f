//! The `pnfrec` command line: `generate`, `prepare`, `train`, `evaluate`, `tune`.
//!
//! Every command writes into `<out-dir>/<run-name>` and leaves a
//! `manifest.txt` there with the fully resolved settings and SHA-256 digests
//! of its inputs and outputs. Settings resolve as command-line flag, then
//! `--config` file (`key=value`, keys spelled like the flags), then built-in
//! default. A manifest is itself a valid config file.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.

mod config;
mod manifest;

pub use config::Resolver;
pub use manifest::{sha256_file, RunManifest, MANIFEST_FILE};

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::{
    assign_feedback, kcore_filter, load_interactions, read_split, temporal_split, write_split,
    DataError, Delimiter, SplitBundle, ITEMS_FILE, METADATA_FILE, TEST_FILE, TRAIN_FILE,
    USERS_FILE, VAL_FILE,
};
use crate::losses::{LossError, LossWeights};
use crate::metrics::{MetricError, REPORT_HEADER};
use crate::model::{load_checkpoint, save_checkpoint, EncoderConfig, ModelError, ModelVariant};
use crate::synth::{generate, write_clusters, SynthConfig};
use crate::tensor::TensorError;
use crate::training::{evaluate, tune_incremental, TrainConfig, TrainError, TuneGrid};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const TRAIN_TIMING_FILE: &str = "train_timing.tsv";
pub const REPORT_FILE: &str = "report.tsv";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const BEST_FILE: &str = "best.txt";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const CLUSTERS_FILE: &str = "clusters.tsv";

const SPLIT_FILES: [&str; 6] = [
    TRAIN_FILE,
    VAL_FILE,
    TEST_FILE,
    METADATA_FILE,
    USERS_FILE,
    ITEMS_FILE,
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Clap(#[from] clap::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Clap(e) => e.exit_code() as u8,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Invalid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Tensor(_) | ModelError::Inference(_) => CliError::Numeric(e.to_string()),
            ModelError::Io { .. } | ModelError::Format(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::Config(_)
            | TrainError::Loss(LossError::Weights { .. })
            | TrainError::Metric(MetricError::ZeroK) => CliError::Usage(msg),
            TrainError::Model(m) => m.into(),
            TrainError::NoTrainingData | TrainError::NoValidation => CliError::Data(msg),
            TrainError::Metric(MetricError::NoUsers) => CliError::Data(msg),
            TrainError::Diverged { .. }
            | TrainError::Loss(_)
            | TrainError::Tensor(_)
            | TrainError::Metric(_) => CliError::Numeric(msg),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Model variant as named on the command line. `pnfrec_pn` and `pnfrec_pc`
/// are the dual encoder with only the negative CE or only the contrastive term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CliVariant {
    Pnfrec,
    PnfrecPn,
    PnfrecPc,
    SasrecP,
    Sasrec,
    SasrecC,
}

impl CliVariant {
    const NAMES: [(&'static str, CliVariant); 6] = [
        ("pnfrec", CliVariant::Pnfrec),
        ("pnfrec_pn", CliVariant::PnfrecPn),
        ("pnfrec_pc", CliVariant::PnfrecPc),
        ("sasrec_p", CliVariant::SasrecP),
        ("sasrec", CliVariant::Sasrec),
        ("sasrec_c", CliVariant::SasrecC),
    ];

    pub fn model(self) -> ModelVariant {
        match self {
            CliVariant::Pnfrec | CliVariant::PnfrecPn | CliVariant::PnfrecPc => {
                ModelVariant::PnfRec
            }
            CliVariant::SasrecP => ModelVariant::SasRecP,
            CliVariant::Sasrec => ModelVariant::SasRec,
            CliVariant::SasrecC => ModelVariant::SasRecC,
        }
    }

    /// Which of (α, β) the variant accepts.
    fn accepts(self) -> (bool, bool) {
        match self {
            CliVariant::Pnfrec | CliVariant::PnfrecPn | CliVariant::PnfrecPc => (true, true),
            CliVariant::SasrecC => (false, true),
            CliVariant::SasrecP | CliVariant::Sasrec => (false, false),
        }
    }

    /// Applies defaults (α = 0.2, β = 0.1) and the variant's constraints.
    pub fn weights(self, alpha: Option<f64>, beta: Option<f64>) -> Result<LossWeights, CliError> {
        let (takes_alpha, takes_beta) = self.accepts();
        if alpha.is_some() && !takes_alpha {
            return Err(CliError::Usage(format!(
                "--alpha is meaningless for {self}"
            )));
        }
        if beta.is_some() && !takes_beta {
            return Err(CliError::Usage(format!("--beta is meaningless for {self}")));
        }
        let (a, b) = match self {
            CliVariant::Pnfrec => (alpha.unwrap_or(0.2), beta.unwrap_or(0.1)),
            CliVariant::PnfrecPn => (alpha.unwrap_or(0.2), beta.unwrap_or(0.0)),
            CliVariant::PnfrecPc => (alpha.unwrap_or(0.0), beta.unwrap_or(0.1)),
            CliVariant::SasrecC => (0.0, beta.unwrap_or(0.1)),
            CliVariant::SasrecP | CliVariant::Sasrec => (0.0, 0.0),
        };
        if self == CliVariant::PnfrecPn && b != 0.0 {
            return Err(CliError::Usage("pnfrec_pn requires --beta 0".into()));
        }
        if self == CliVariant::PnfrecPc && a != 0.0 {
            return Err(CliError::Usage("pnfrec_pc requires --alpha 0".into()));
        }
        LossWeights::new(a, b).map_err(|e| CliError::Usage(e.to_string()))
    }
}

impl FromStr for CliVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|&(_, v)| v)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::NAMES.iter().map(|(n, _)| *n).collect();
                format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                )
            })
    }
}

impl fmt::Display for CliVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = Self::NAMES.iter().find(|(_, v)| v == self).unwrap().0;
        f.write_str(name)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "pnfrec",
    version,
    about = "Sequential recommendation from positive and negative feedback"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic interaction log with planted like/dislike clusters.
    Generate(GenerateArgs),
    /// Filter, label and split an interaction log.
    Prepare(PrepareArgs),
    /// Train one model variant on a prepared split.
    Train(TrainArgs),
    /// Score a checkpoint on the held-out users of a split.
    Evaluate(EvaluateArgs),
    /// Tune the loss coefficients: alpha with beta = 0, then beta at the best alpha.
    Tune(TuneArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key=value settings file (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent directory of run directories [default: runs]
    #[arg(long, env = "PNFREC_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Run directory name [default: <command>-<unix time>-seed<seed>]
    #[arg(long)]
    run_name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    per_user: Option<usize>,
    #[arg(long)]
    like_in: Option<f64>,
    #[arg(long)]
    like_off: Option<f64>,
    #[arg(long)]
    stickiness: Option<f64>,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Interaction file with user_id, item_id, value, timestamp columns
    #[arg(long)]
    input: Option<String>,
    /// Values at or above this are positive feedback [default: 4]
    #[arg(long)]
    threshold: Option<f64>,
    /// Maximum sequence length l [default: 50]
    #[arg(long)]
    max_len: Option<usize>,
    /// Share of interactions before the temporal boundary [default: 0.9]
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Minimum interactions per user and item [default: 5]
    #[arg(long)]
    kcore: Option<usize>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Exclude already-seen items from recommendations (default)
    #[arg(long, overrides_with = "no_filter_seen")]
    filter_seen: bool,
    #[arg(long, overrides_with = "filter_seen")]
    no_filter_seen: bool,
}

impl FilterArgs {
    fn flag(&self) -> Option<bool> {
        if self.filter_seen {
            Some(true)
        } else if self.no_filter_seen {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Directory written by `prepare`
    #[arg(long)]
    input: Option<String>,
    /// [default: the split's l]
    #[arg(long)]
    max_len: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    d: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    blocks: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    heads: Option<usize>,
    /// [default: 0.2]
    #[arg(long)]
    dropout: Option<f64>,
    /// [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 128]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    max_epochs: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    patience: Option<usize>,
    /// Cutoff of the validation NDCG_p used for early stopping [default: 10]
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// pnfrec, pnfrec_pn, pnfrec_pc, sasrec_p, sasrec or sasrec_c [default: pnfrec]
    #[arg(long)]
    variant: Option<CliVariant>,
    /// Negative CE coefficient [default: 0.2 where applicable]
    #[arg(long)]
    alpha: Option<f64>,
    /// Contrastive coefficient [default: 0.1 where applicable]
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory written by `prepare`
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    /// One or more cutoffs, comma separated [default: 10]
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Which held-out users to score: test or val [default: test]
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated alpha values [default: 0,0.05,...,1]
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    /// Comma-separated beta values [default: 0,0.05,...,1]
    #[arg(long, value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    /// Grid points trained concurrently [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
}

/// Process entry point used by the `pnfrec` binary.
pub fn main() -> ExitCode {
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(e.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Tune(a) => cmd_tune(&a),
    }
}

fn run_dir(run: &RunArgs, command: &str, seed: u64) -> Result<PathBuf, CliError> {
    let name = match &run.run_name {
        Some(n) => n.clone(),
        None => {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            format!("{command}-{secs}-seed{seed}")
        }
    };
    let dir = run
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(name);
    std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let mut r = Resolver::load(a.run.config.as_deref())?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_users: r.value("users", a.users, d.n_users)?,
        n_items: r.value("items", a.items, d.n_items)?,
        n_clusters: r.value("clusters", a.clusters, d.n_clusters)?,
        interactions_per_user: r.value("per-user", a.per_user, d.interactions_per_user)?,
        like_prob_in_cluster: r.value("like-in", a.like_in, d.like_prob_in_cluster)?,
        like_prob_off_cluster: r.value("like-off", a.like_off, d.like_prob_off_cluster)?,
        stickiness: r.value("stickiness", a.stickiness, d.stickiness)?,
        seed: r.value("seed", a.run.seed, 0)?,
    };
    let resolved = r.finish()?;
    let data = generate(&cfg)?;
    let dir = run_dir(&a.run, "generate", cfg.seed)?;
    crate::data::write_interactions(&dir.join(INTERACTIONS_FILE), &data.log, b'\t')?;
    write_clusters(&dir.join(CLUSTERS_FILE), &data)?;
    let mut m = RunManifest::new("generate", resolved);
    m.add_artifact(&dir, INTERACTIONS_FILE)?;
    m.add_artifact(&dir, CLUSTERS_FILE)?;
    m.write(&dir)?;
    let negative = data.log.records().iter().filter(|r| r.value < 3.0).count();
    println!(
        "wrote {} interactions ({} users, {} items, {:.1}% negative, {:.1}% expected with unexhausted clusters) to {}",
        data.log.len(),
        data.log.num_users(),
        data.log.num_items(),
        100.0 * negative as f64 / data.log.len() as f64,
        100.0 * cfg.expected_negative_share(),
        dir.display()
    );
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> Result<(), CliError> {
    let mut r = Resolver::load(a.run.config.as_deref())?;
    let input: String = r.required("input", a.input.clone())?;
    let threshold = r.value("threshold", a.threshold, 4.0)?;
    let max_len = r.value("max-len", a.max_len, 50usize)?;
    let fraction = r.value("train-fraction", a.train_fraction, 0.9)?;
    let kcore = r.value("kcore", a.kcore, 5usize)?;
    let seed = r.value("seed", a.run.seed, 0u64)?;
    let resolved = r.finish()?;
    if max_len == 0 {
        return Err(CliError::Usage("--max-len must be at least 1".into()));
    }
    let input_path = PathBuf::from(&input);
    let raw = load_interactions(&input_path, Delimiter::Auto)?;
    let log = kcore_filter(&raw, kcore)?;
    let labeled = assign_feedback(&log, threshold)?;
    let bundle = temporal_split(&labeled, fraction, seed)?;
    let dir = run_dir(&a.run, "prepare", seed)?;
    write_split(&dir, &bundle, max_len)?;
    let mut m = RunManifest::new("prepare", resolved);
    m.add_input("interactions", &input_path)?;
    for f in SPLIT_FILES {
        m.add_artifact(&dir, f)?;
    }
    m.write(&dir)?;
    print_split_summary(&raw.len(), &labeled, &bundle);
    println!("split written to {}", dir.display());
    Ok(())
}

fn print_split_summary(raw_len: &usize, labeled: &crate::data::LabeledLog, b: &SplitBundle) {
    let count = |cases: &[crate::data::EvalCase], pos: bool| {
        cases.iter().filter(|c| c.target_positive == pos).count()
    };
    println!("interactions read      {raw_len}");
    println!(
        "after k-core           {} ({} users, {} items)",
        labeled.log.len(),
        labeled.log.num_users(),
        labeled.log.num_items()
    );
    println!(
        "negative feedback      {:.2}%",
        100.0 * labeled.negative_share()
    );
    println!("temporal boundary      {}", b.boundary_timestamp);
    println!("training interactions  {}", b.train.log.len());
    println!(
        "validation users       {} ({} positive, {} negative)",
        b.val.len(),
        count(&b.val, true),
        count(&b.val, false)
    );
    println!(
        "test users             {} ({} positive, {} negative)",
        b.test.len(),
        count(&b.test, true),
        count(&b.test, false)
    );
}

fn resolve_train_config(
    r: &mut Resolver,
    m: &ModelArgs,
    split_max_len: usize,
    variant: ModelVariant,
    weights: LossWeights,
    seed: u64,
) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let e = EncoderConfig::default();
    Ok(TrainConfig {
        encoder: EncoderConfig {
            max_len: r.value("max-len", m.max_len, split_max_len)?,
            d: r.value("d", m.d, e.d)?,
            num_blocks: r.value("blocks", m.blocks, e.num_blocks)?,
            num_heads: r.value("heads", m.heads, e.num_heads)?,
            dropout: r.value("dropout", m.dropout, e.dropout)?,
        },
        variant,
        weights,
        lr: r.value("lr", m.lr, d.lr)?,
        batch_size: r.value("batch-size", m.batch_size, d.batch_size)?,
        max_epochs: r.value("max-epochs", m.max_epochs, d.max_epochs)?,
        patience: r.value("patience", m.patience, d.patience)?,
        eval_k: r.value("k", m.k, d.eval_k)?,
        filter_seen: r.value("filter-seen", m.filter.flag(), d.filter_seen)?,
        seed,
    })
}

fn load_split(input: &str, m: &mut RunManifest) -> Result<(PathBuf, SplitBundle, usize), CliError> {
    let dir = PathBuf::from(input);
    let (bundle, meta) = read_split(&dir)?;
    for f in SPLIT_FILES {
        m.add_input(f, &dir.join(f))?;
    }
    Ok((dir, bundle, meta.max_len))
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let mut r = Resolver::load(a.run.config.as_deref())?;
    let input: String = r.required("input", a.model.input.clone())?;
    let variant: CliVariant = r.value("variant", a.variant, CliVariant::Pnfrec)?;
    let alpha = r.optional("alpha", a.alpha)?;
    let beta = r.optional("beta", a.beta)?;
    let weights = variant.weights(alpha, beta)?;
    let (takes_alpha, takes_beta) = variant.accepts();
    if takes_alpha {
        r.record("alpha", weights.alpha);
    }
    if takes_beta {
        r.record("beta", weights.beta);
    }
    let seed = r.value("seed", a.run.seed, 0u64)?;
    let mut m = RunManifest::default();
    let (_, bundle, split_l) = load_split(&input, &mut m)?;
    let cfg = resolve_train_config(&mut r, &a.model, split_l, variant.model(), weights, seed)?;
    m.command = "train".into();
    m.config = r.finish()?;
    cfg.validate()?;

    let dir = run_dir(&a.run, "train", seed)?;
    println!(
        "training {variant} ({} users with held-out items in validation)",
        bundle.val.len()
    );
    let run = crate::training::train_with(&bundle, &cfg, |e| {
        println!(
            "epoch {:>4}  L {:.5}  val NDCG_p@{} {:.5}",
            e.epoch, e.loss, cfg.eval_k, e.val_ndcg
        )
    })?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &run.model)?;
    write_file(&dir, TRAIN_LOG_FILE, &run.log_tsv(cfg.eval_k))?;
    write_file(&dir, TRAIN_TIMING_FILE, &run.timing_tsv())?;
    m.add_artifact(&dir, CHECKPOINT_FILE)?;
    m.add_artifact(&dir, TRAIN_LOG_FILE)?;
    m.timing.push(TRAIN_TIMING_FILE.into());
    m.write(&dir)?;
    println!(
        "best epoch {} (val NDCG_p@{} {:.5}); checkpoint in {}",
        run.best_epoch,
        cfg.eval_k,
        run.best_val_ndcg,
        dir.display()
    );
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let mut r = Resolver::load(a.run.config.as_deref())?;
    let input: String = r.required("input", a.input.clone())?;
    let checkpoint: String = r.required("checkpoint", a.checkpoint.clone())?;
    let ks = r.list("k", a.k.clone(), vec![10usize])?;
    let which = r.value("split", a.split.clone(), "test".to_string())?;
    let filter_seen = r.value("filter-seen", a.filter.flag(), true)?;
    let seed = r.value("seed", a.run.seed, 0u64)?;
    let resolved = r.finish()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage("every cutoff k must be at least 1".into()));
    }
    let mut m = RunManifest::new("evaluate", resolved);
    let (_, bundle, _) = load_split(&input, &mut m)?;
    let cases = match which.as_str() {
        "test" => &bundle.test,
        "val" => &bundle.val,
        other => {
            return Err(CliError::Usage(format!(
                "--split must be test or val, got {other:?}"
            )))
        }
    };
    let ckpt_path = PathBuf::from(&checkpoint);
    let model = load_checkpoint(&ckpt_path)?;
    m.add_input("checkpoint", &ckpt_path)?;
    if model.num_items != bundle.num_items() {
        return Err(CliError::Data(format!(
            "checkpoint scores {} items but the split has {}",
            model.num_items,
            bundle.num_items()
        )));
    }
    let reports = evaluate(&model, cases, &ks, filter_seen)?;
    let mut tsv = format!("{REPORT_HEADER}\n");
    let mut table = format!("{} on {} {which} users\n", model.variant, cases.len());
    for rep in &reports {
        for line in rep.to_tsv().lines().skip(1) {
            tsv.push_str(line);
            tsv.push('\n');
        }
        table.push_str(&rep.to_table());
    }
    let dir = run_dir(&a.run, "evaluate", seed)?;
    write_file(&dir, REPORT_FILE, &tsv)?;
    write_file(&dir, REPORT_TABLE_FILE, &table)?;
    m.add_artifact(&dir, REPORT_FILE)?;
    m.add_artifact(&dir, REPORT_TABLE_FILE)?;
    m.write(&dir)?;
    print!("{table}");
    Ok(())
}

fn cmd_tune(a: &TuneArgs) -> Result<(), CliError> {
    let mut r = Resolver::load(a.run.config.as_deref())?;
    let input: String = r.required("input", a.model.input.clone())?;
    let full = TuneGrid::full();
    let alphas = r.list("alpha-grid", a.alpha_grid.clone(), full.alpha_values)?;
    let betas = r.list("beta-grid", a.beta_grid.clone(), full.beta_values)?;
    let jobs = r.value("jobs", a.jobs, 1usize)?;
    let seed = r.value("seed", a.run.seed, 0u64)?;
    let mut m = RunManifest::default();
    let (_, bundle, split_l) = load_split(&input, &mut m)?;
    let base = resolve_train_config(
        &mut r,
        &a.model,
        split_l,
        ModelVariant::PnfRec,
        LossWeights::default(),
        seed,
    )?;
    m.command = "tune".into();
    m.config = r.finish()?;
    base.validate()?;
    let grid = TuneGrid::new(&alphas, &betas)?;
    println!(
        "tuning over {} alpha and {} beta values with {jobs} job(s)",
        grid.alpha_values.len(),
        grid.beta_values.len()
    );
    let outcome = tune_incremental(&bundle, &base, &grid, jobs)?;
    let dir = run_dir(&a.run, "tune", seed)?;
    let k = base.eval_k;
    write_file(&dir, SWEEP_FILE, &outcome.table_tsv(k))?;
    write_file(
        &dir,
        BEST_FILE,
        &format!(
            "alpha={}\nbeta={}\nval_NDCG_p@{k}={:.8}\n",
            outcome.alpha, outcome.beta, outcome.best.best_val_ndcg
        ),
    )?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &outcome.best.model)?;
    write_file(&dir, TRAIN_LOG_FILE, &outcome.best.log_tsv(k))?;
    for f in [BEST_FILE, CHECKPOINT_FILE, TRAIN_LOG_FILE] {
        m.add_artifact(&dir, f)?;
    }
    m.timing.push(SWEEP_FILE.into());
    m.write(&dir)?;
    print!("{}", outcome.table_tsv(k));
    println!(
        "selected alpha={} beta={} (val NDCG_p@{k} {:.5}); results in {}",
        outcome.alpha,
        outcome.beta,
        outcome.best.best_val_ndcg,
        dir.display()
    );
    Ok(())
}
