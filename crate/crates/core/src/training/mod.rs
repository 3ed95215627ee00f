//! Mini-batch training with early stopping on validation NDCG_p, evaluation
//! of held-out users, and the two-phase (α, β) tuner.

mod tune;

pub use tune::{tune_incremental, SweepRow, TuneGrid, TuneOutcome};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{EvalCase, LabeledLog, SplitBundle};
use crate::losses::{self, ContrastGroup, LossError, LossParts, LossWeights};
use crate::metrics::{target_rank, EvalReport, MetricError};
use crate::model::{Bound, Branch, EncoderConfig, ModelError, ModelVariant, SeqModel};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Real, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("no user has enough interactions to form a training example")]
    NoTrainingData,
    #[error("no validation user has a positive ground truth")]
    NoValidation,
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub variant: ModelVariant,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Cutoff of the validation NDCG_p used for model selection.
    pub eval_k: usize,
    pub filter_seen: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            variant: ModelVariant::PnfRec,
            weights: LossWeights::default(),
            batch_size: 128,
            lr: 1e-3,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            eval_k: 10,
            filter_seen: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let LossWeights { alpha, beta } = self.weights;
        LossWeights::new(alpha, beta)?;
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if self.eval_k == 0 {
            return fail("eval_k must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("learning rate must be positive");
        }
        match self.variant {
            ModelVariant::SasRecP | ModelVariant::SasRec if alpha != 0.0 || beta != 0.0 => {
                fail("this variant has no negative-feedback loss terms")
            }
            ModelVariant::SasRecC if alpha != 0.0 => fail("sasrec_c has no negative CE term"),
            _ => Ok(()),
        }
    }
}

/// Next-item prediction material for one user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainingExample {
    pub user: usize,
    /// Encoder input (S^p, or the full sequence for full-sequence variants).
    pub input: Vec<usize>,
    /// `targets[t]` is the item following `input[t]`.
    pub targets: Vec<usize>,
    pub target_positive: Vec<bool>,
    pub neg_input: Vec<usize>,
    pub neg_targets: Vec<usize>,
    /// Most recent negative items, used by the contrastive term.
    pub negatives: Vec<usize>,
}

/// Last `max_len + 1` entries split into (input, next-item targets).
fn shifted<T: Copy>(seq: &[T], max_len: usize) -> (Vec<T>, Vec<T>) {
    let w = &seq[seq.len().saturating_sub(max_len + 1)..];
    if w.len() < 2 {
        return (Vec::new(), Vec::new());
    }
    (w[..w.len() - 1].to_vec(), w[1..].to_vec())
}

/// One example per user whose encoder sequence has at least two items.
pub fn build_examples(
    train: &LabeledLog,
    variant: ModelVariant,
    max_len: usize,
) -> Vec<TrainingExample> {
    let mut full: Vec<Vec<(usize, bool)>> = vec![Vec::new(); train.log.num_users()];
    for (r, &p) in train.log.records().iter().zip(&train.positive) {
        full[r.user].push((r.item, p));
    }
    let mut out = Vec::new();
    for (user, seq) in full.into_iter().enumerate() {
        let main: Vec<(usize, bool)> = if variant.reads_full_sequence() {
            seq.clone()
        } else {
            seq.iter().copied().filter(|&(_, p)| p).collect()
        };
        let (input, targets) = shifted(&main, max_len);
        if input.is_empty() {
            continue;
        }
        let neg_items: Vec<usize> = seq.iter().filter(|&&(_, p)| !p).map(|&(i, _)| i).collect();
        let (neg_input, neg_targets) = if variant.has_negative_encoder() {
            shifted(&neg_items, max_len)
        } else {
            (Vec::new(), Vec::new())
        };
        let negatives = match variant {
            ModelVariant::PnfRec | ModelVariant::SasRecC => {
                neg_items[neg_items.len().saturating_sub(max_len)..].to_vec()
            }
            _ => Vec::new(),
        };
        out.push(TrainingExample {
            user,
            input: input.iter().map(|&(i, _)| i).collect(),
            target_positive: targets.iter().map(|&(_, p)| p).collect(),
            targets: targets.iter().map(|&(i, _)| i).collect(),
            neg_input,
            neg_targets,
            negatives,
        });
    }
    out
}

/// Dropout streams, one per encoder, so the positive branch draws the same
/// masks whether or not a negative encoder exists.
#[derive(Clone, Debug)]
pub struct DropoutRngs {
    pub positive: ChaCha8Rng,
    pub negative: ChaCha8Rng,
}

const STREAM_SHUFFLE: u64 = 1 << 32;
const STREAM_DROPOUT_POS: u64 = (1 << 32) + 1;
const STREAM_DROPOUT_NEG: u64 = (1 << 32) + 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl DropoutRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            positive: stream_rng(seed, STREAM_DROPOUT_POS),
            negative: stream_rng(seed, STREAM_DROPOUT_NEG),
        }
    }
}

/// Graph handles of one batch's loss and its terms.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub parts: LossParts,
}

/// Builds the variant's training loss for a batch on `g`.
///
/// Every term the variant defines is computed (so it can be logged); only
/// terms with non-zero weight enter `total`.
pub fn batch_loss<T: Real>(
    g: &mut Graph<T>,
    model: &SeqModel<T>,
    bound: &Bound,
    batch: &[&TrainingExample],
    weights: LossWeights,
    mut rngs: Option<&mut DropoutRngs>,
) -> Result<BatchLoss> {
    let inputs: Vec<&[usize]> = batch.iter().map(|e| e.input.as_slice()).collect();
    let enc = model.encode(
        g,
        bound,
        Branch::Positive,
        &inputs,
        rngs.as_deref_mut().map(|r| &mut r.positive),
    )?;
    let logits = model.score(g, bound, enc.hidden)?;
    let targets: Vec<usize> = batch
        .iter()
        .flat_map(|e| e.targets.iter().copied())
        .collect();
    let ce_positive = losses::cross_entropy(g, logits, &targets, "L_CE_p")?;

    let mut ce_negative = None;
    if model.variant.has_negative_encoder() {
        let neg: Vec<&TrainingExample> = batch
            .iter()
            .copied()
            .filter(|e| !e.neg_input.is_empty())
            .collect();
        if !neg.is_empty() {
            let inputs: Vec<&[usize]> = neg.iter().map(|e| e.neg_input.as_slice()).collect();
            let enc = model.encode(
                g,
                bound,
                Branch::Negative,
                &inputs,
                rngs.as_mut().map(|r| &mut r.negative),
            )?;
            let logits = model.score(g, bound, enc.hidden)?;
            let targets: Vec<usize> = neg
                .iter()
                .flat_map(|e| e.neg_targets.iter().copied())
                .collect();
            ce_negative = Some(losses::cross_entropy(g, logits, &targets, "L_CE_n")?);
        }
    }

    let mut contrastive = None;
    if matches!(model.variant, ModelVariant::PnfRec | ModelVariant::SasRecC) {
        let only_positive_targets = model.variant == ModelVariant::SasRecC;
        let mut groups = Vec::new();
        for (e, seg) in batch.iter().zip(&enc.segments) {
            for (t, (&target, &pos)) in e.targets.iter().zip(&e.target_positive).enumerate() {
                if only_positive_targets && !pos {
                    continue;
                }
                groups.push(ContrastGroup {
                    row: seg.start + t,
                    target,
                    negatives: e.negatives.clone(),
                });
            }
        }
        if !groups.is_empty() {
            contrastive = Some(losses::contrastive(g, enc.hidden, bound.vars[0], &groups)?);
        }
    }

    let parts = LossParts {
        ce_positive,
        ce_negative,
        contrastive,
    };
    let total = losses::composite(g, &parts, weights)?;
    Ok(BatchLoss { total, parts })
}

/// Encoder input for a held-out user: the positive history, or the whole
/// history for full-sequence variants, truncated to the last `max_len` items.
pub fn model_input(variant: ModelVariant, case: &EvalCase, max_len: usize) -> Vec<usize> {
    let items = if variant.reads_full_sequence() {
        case.all_items()
    } else {
        case.positive_items()
    };
    items[items.len().saturating_sub(max_len)..].to_vec()
}

const EVAL_BATCH: usize = 256;

/// 1-based rank of every case's ground truth (`None` if it was filtered out).
pub fn rank_cases(
    model: &SeqModel<f32>,
    cases: &[EvalCase],
    filter_seen: bool,
) -> Result<Vec<Option<usize>>> {
    let mut ranks = Vec::with_capacity(cases.len());
    let mut excluded = vec![false; model.num_items];
    for chunk in cases.chunks(EVAL_BATCH) {
        let inputs: Vec<Vec<usize>> = chunk
            .iter()
            .map(|c| model_input(model.variant, c, model.config.max_len))
            .collect();
        let refs: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let scores = model.score_last(&refs)?;
        for (i, case) in chunk.iter().enumerate() {
            if filter_seen {
                case.history.iter().for_each(|r| excluded[r.item] = true);
            }
            ranks.push(target_rank(scores.row(i), case.target.item, &excluded));
            case.history.iter().for_each(|r| excluded[r.item] = false);
        }
    }
    Ok(ranks)
}

/// Polarity-split metrics at each cutoff in `ks`.
pub fn evaluate(
    model: &SeqModel<f32>,
    cases: &[EvalCase],
    ks: &[usize],
    filter_seen: bool,
) -> Result<Vec<EvalReport>> {
    let ranks = rank_cases(model, cases, filter_seen)?;
    let positive: Vec<bool> = cases.iter().map(|c| c.target_positive).collect();
    ks.iter()
        .map(|&k| Ok(EvalReport::from_ranks(&ranks, &positive, k)?))
        .collect()
}

/// Patience-based stopping on a metric that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records an epoch; returns `(improved, stop)`. Only a strict increase counts.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(_, b)| metric > b);
        if improved {
            self.best = Some((epoch, metric));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best >= self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ce_positive: f64,
    /// `None` for variants without the term.
    pub ce_negative: Option<f64>,
    pub contrastive: Option<f64>,
    pub val_ndcg: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: SeqModel<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    /// Wall-clock seconds per epoch; kept apart from `log`, which is deterministic.
    pub epoch_seconds: Vec<f64>,
}

impl TrainOutcome {
    /// Tab-separated log with a header; byte-identical for identical inputs.
    pub fn log_tsv(&self, k: usize) -> String {
        let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.8}"));
        let mut out = format!("epoch\tL\tL_CE_p\tL_CE_n\tL_c\tval_NDCG_p@{k}\n");
        for r in &self.log {
            let _ = writeln!(
                out,
                "{}\t{:.8}\t{:.8}\t{}\t{}\t{:.8}",
                r.epoch,
                r.loss,
                r.ce_positive,
                na(r.ce_negative),
                na(r.contrastive),
                r.val_ndcg
            );
        }
        out
    }

    pub fn timing_tsv(&self) -> String {
        let mut out = String::from("epoch\tseconds\n");
        for (i, s) in self.epoch_seconds.iter().enumerate() {
            let _ = writeln!(out, "{}\t{s:.3}", i + 1);
        }
        out
    }
}

#[derive(Default)]
struct TermMeans {
    sums: [f64; 4],
    counts: [usize; 4],
}

impl TermMeans {
    fn add(&mut self, i: usize, v: Option<f64>) {
        if let Some(v) = v {
            self.sums[i] += v;
            self.counts[i] += 1;
        }
    }

    fn mean(&self, i: usize) -> f64 {
        if self.counts[i] == 0 {
            0.0
        } else {
            self.sums[i] / self.counts[i] as f64
        }
    }
}

/// Trains `cfg.variant` on the training part of `data`.
pub fn train(data: &SplitBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    data: &SplitBundle,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let examples = build_examples(&data.train, cfg.variant, cfg.encoder.max_len);
    if examples.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    let val: Vec<EvalCase> = data
        .val
        .iter()
        .filter(|c| c.target_positive)
        .cloned()
        .collect();
    if val.is_empty() {
        return Err(TrainError::NoValidation);
    }
    let mut model = SeqModel::<f32>::new(cfg.encoder, cfg.variant, data.num_items(), cfg.seed)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(model.params(), adam_cfg);
    let mut shuffle = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut rngs = DropoutRngs::new(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_model = model.clone();
    let mut log = Vec::new();
    let mut epoch_seconds = Vec::new();
    let has_neg_term = cfg.variant.has_negative_encoder();
    let has_con_term = matches!(cfg.variant, ModelVariant::PnfRec | ModelVariant::SasRecC);

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut shuffle);
        let mut means = TermMeans::default();
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut g = Graph::<f32>::new();
            let bound = model.bind(&mut g, true)?;
            let diverged = |detail: String| TrainError::Diverged {
                epoch,
                batch: bi,
                detail,
            };
            let loss = batch_loss(&mut g, &model, &bound, &batch, cfg.weights, Some(&mut rngs))
                .map_err(|e| match e {
                    TrainError::Loss(e @ LossError::NonFinite { .. }) => diverged(e.to_string()),
                    other => other,
                })?;
            let value = |v: Var| f64::from(g.scalar(v));
            let total = value(loss.total);
            if !total.is_finite() {
                return Err(diverged(format!("total loss {total}")));
            }
            means.add(0, Some(total));
            means.add(1, Some(value(loss.parts.ce_positive)));
            means.add(2, loss.parts.ce_negative.map(value));
            means.add(3, loss.parts.contrastive.map(value));
            let grads = g.backward(loss.total)?;
            let gs: Vec<Option<&[f32]>> = bound.vars.iter().map(|&v| grads.get(v)).collect();
            adam_step(model.params_mut(), &gs, &mut adam)?;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                detail: "non-finite parameters after update".into(),
            });
        }
        let report = evaluate(&model, &val, &[cfg.eval_k], cfg.filter_seen)?;
        let record = EpochRecord {
            epoch,
            loss: means.mean(0),
            ce_positive: means.mean(1),
            ce_negative: has_neg_term.then(|| means.mean(2)),
            contrastive: has_con_term.then(|| means.mean(3)),
            val_ndcg: report[0].ndcg_p,
        };
        epoch_seconds.push(started.elapsed().as_secs_f64());
        on_epoch(&record);
        let (improved, stop) = stopper.observe(epoch, record.val_ndcg);
        log.push(record);
        if improved {
            best_model = model.clone();
        }
        if stop {
            break;
        }
    }
    let (best_epoch, best_val_ndcg) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: best_model,
        log,
        best_epoch,
        best_val_ndcg,
        epoch_seconds,
    })
}
