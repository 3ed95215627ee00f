//! Causal self-attention encoders and the dual-encoder assembly.
//!
//! Sequences are ragged: every non-empty sequence contributes exactly as many
//! rows as it has items, stacked into one `R×d` matrix. Positional slots are
//! assigned as if the sequence were left-padded to `max_len`, so the most
//! recent item always sits in slot `max_len - 1`.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Graph, Real, Segment, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("inference error: {0}")]
    Inference(String),
    #[error("checkpoint i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Shape of one transformer encoder stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub d: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            num_blocks: 2,
            num_heads: 1,
            max_len: 50,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.num_heads == 0 || !self.d.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config(format!(
                "d = {} must be a positive multiple of num_heads = {}",
                self.d, self.num_heads
            )));
        }
        if self.max_len == 0 {
            return Err(ModelError::Config("max_len must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Which encoders exist and which sequence each one reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// Positive and negative encoders over a shared item table.
    PnfRec,
    /// One encoder over the positive subsequence.
    SasRecP,
    /// One encoder over the full interleaved sequence.
    SasRec,
    /// As [`ModelVariant::SasRec`], trained with an added contrastive term.
    SasRecC,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [Self::PnfRec, Self::SasRecP, Self::SasRec, Self::SasRecC];

    pub fn name(self) -> &'static str {
        match self {
            Self::PnfRec => "pnfrec",
            Self::SasRecP => "sasrec_p",
            Self::SasRec => "sasrec",
            Self::SasRecC => "sasrec_c",
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Self::PnfRec => 0,
            Self::SasRecP => 1,
            Self::SasRec => 2,
            Self::SasRecC => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn has_negative_encoder(self) -> bool {
        self == Self::PnfRec
    }

    /// Whether the (single) encoder reads the full sequence rather than S^p.
    pub fn reads_full_sequence(self) -> bool {
        matches!(self, Self::SasRec | Self::SasRecC)
    }

    pub fn num_encoders(self) -> usize {
        if self.has_negative_encoder() {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Positive,
    Negative,
}

impl Branch {
    fn index(self) -> usize {
        match self {
            Branch::Positive => 0,
            Branch::Negative => 1,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Branch::Positive => "pos",
            Branch::Negative => "neg",
        }
    }
}

const BLOCK_TENSORS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w",
    "ff2_b", "ln2_g", "ln2_b",
];

const LN_EPS: f64 = 1e-6;

/// `(N+1)·d + E·(l·d + B·(6d² + 10d))` for `E` encoders.
pub fn parameter_count(config: &EncoderConfig, variant: ModelVariant, num_items: usize) -> usize {
    let d = config.d;
    let per_encoder = config.max_len * d + config.num_blocks * (6 * d * d + 10 * d);
    (num_items + 1) * d + variant.num_encoders() * per_encoder
}

fn tensor_layout(
    config: &EncoderConfig,
    variant: ModelVariant,
    num_items: usize,
) -> Vec<(String, Vec<usize>)> {
    let d = config.d;
    let mut out = vec![("item_emb".to_string(), vec![num_items + 1, d])];
    let branches = [Branch::Positive, Branch::Negative];
    for branch in &branches[..variant.num_encoders()] {
        let p = branch.prefix();
        out.push((format!("{p}.pos_emb"), vec![config.max_len, d]));
        for b in 0..config.num_blocks {
            for name in BLOCK_TENSORS {
                let shape = if name.starts_with('w') || name.ends_with("_w") {
                    vec![d, d]
                } else {
                    vec![d]
                };
                out.push((format!("{p}.block{b}.{name}"), shape));
            }
        }
    }
    out
}

fn init_tensor<T: Real>(name: &str, shape: &[usize], seed: u64, stream: u64) -> Tensor<T> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if leaf.ends_with("_g") {
        return Tensor::filled(shape, T::one());
    }
    if shape.len() == 1 {
        return Tensor::zeros(shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64_lossy(rng.gen_range(-limit..limit));
    }
    if name == "item_emb" {
        t.data_mut()[..shape[1]]
            .iter_mut()
            .for_each(|v| *v = T::zero());
    }
    t
}

/// Parameters of one model variant over a catalog of `num_items` items.
///
/// Tensor order (also the checkpoint order): `item_emb`, then for each encoder
/// (positive first) its `pos_emb` followed by every block's
/// `wq bq wk bk wv bv wo bo ln1_g ln1_b ff1_w ff1_b ff2_w ff2_b ln2_g ln2_b`.
/// Single-encoder variants use the positive encoder's names.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqModel<T> {
    pub config: EncoderConfig,
    pub variant: ModelVariant,
    pub num_items: usize,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Graph handles of a model's parameters for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
    /// `E[1..=N]`, the scoring matrix shared by every head.
    pub items: Var,
}

/// Output of [`SeqModel::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub hidden: Var,
    /// One entry per input sequence; empty sequences get `len == 0`.
    pub segments: Vec<Segment>,
}

impl Encoded {
    /// Row of the most recent item of each non-empty sequence.
    pub fn last_rows(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.len > 0)
            .map(|s| s.start + s.len - 1)
            .collect()
    }
}

impl<T: Real> SeqModel<T> {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains, zero padding row.
    ///
    /// Each tensor draws from its own stream of `seed`, keyed by its position in
    /// the layout, so variants that share a prefix of the layout share its values.
    pub fn new(
        config: EncoderConfig,
        variant: ModelVariant,
        num_items: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if num_items == 0 {
            return Err(ModelError::Config("catalog is empty".into()));
        }
        let layout = tensor_layout(&config, variant, num_items);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (i, (name, shape)) in layout.into_iter().enumerate() {
            params.push(init_tensor(&name, &shape, seed, i as u64));
            names.push(name);
        }
        Ok(Self {
            config,
            variant,
            num_items,
            names,
            params,
        })
    }

    pub(crate) fn from_params(
        config: EncoderConfig,
        variant: ModelVariant,
        num_items: usize,
        params: Vec<Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = tensor_layout(&config, variant, num_items);
        if layout.len() != params.len() {
            return Err(ModelError::Format(format!(
                "expected {} tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(ModelError::Format(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            config,
            variant,
            num_items,
            names: layout.into_iter().map(|(n, _)| n).collect(),
            params,
        })
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    /// Indices (into [`SeqModel::params`]) of the tensors owned by one encoder.
    pub fn encoder_param_range(&self, branch: Branch) -> Option<std::ops::Range<usize>> {
        if branch.index() >= self.variant.num_encoders() {
            return None;
        }
        let per = 1 + self.config.num_blocks * BLOCK_TENSORS.len();
        let start = 1 + branch.index() * per;
        Some(start..start + per)
    }

    pub fn cast<U: Real>(&self) -> SeqModel<U> {
        SeqModel {
            config: self.config,
            variant: self.variant,
            num_items: self.num_items,
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records every parameter on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        let rows: Vec<usize> = (1..=self.num_items).collect();
        let items = g.gather_rows(vars[0], &rows)?;
        Ok(Bound { vars, items })
    }

    /// Encodes a ragged batch of item-index sequences (0-based item indices,
    /// oldest first). Dropout is active iff `rng` is given.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        branch: Branch,
        seqs: &[&[usize]],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded> {
        let range = self.encoder_param_range(branch).ok_or_else(|| {
            ModelError::Config(format!("{} has no {:?} encoder", self.variant, branch))
        })?;
        let l = self.config.max_len;
        let mut item_rows = Vec::new();
        let mut slots = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if seq.len() > l {
                return Err(ModelError::Inference(format!(
                    "sequence of length {} exceeds max_len {l}",
                    seq.len()
                )));
            }
            segments.push(Segment {
                start: item_rows.len(),
                len: seq.len(),
            });
            for (t, &item) in seq.iter().enumerate() {
                if item >= self.num_items {
                    return Err(ModelError::Inference(format!(
                        "item index {item} outside catalog of {}",
                        self.num_items
                    )));
                }
                item_rows.push(item + 1);
                slots.push(l - seq.len() + t);
            }
        }
        if item_rows.is_empty() {
            return Err(ModelError::Inference("every sequence is empty".into()));
        }
        let attn_segments: Vec<Segment> = segments.iter().copied().filter(|s| s.len > 0).collect();
        let rate = self.config.dropout;
        let p = &bound.vars[range];
        let emb = g.gather_rows(bound.vars[0], &item_rows)?;
        let pos = g.gather_rows(p[0], &slots)?;
        let mut x = g.add(emb, pos)?;
        if let Some(r) = rng.as_deref_mut() {
            x = g.dropout(x, rate, r);
        }
        let eps = T::from_f64_lossy(LN_EPS);
        for w in p[1..].chunks(BLOCK_TENSORS.len()) {
            let affine = |g: &mut Graph<T>, x: Var, wi: usize| -> Result<Var> {
                let y = g.matmul(x, w[wi])?;
                Ok(g.add_row(y, w[wi + 1])?)
            };
            let q = affine(g, x, 0)?;
            let k = affine(g, x, 2)?;
            let v = affine(g, x, 4)?;
            let a = g.causal_attention(q, k, v, &attn_segments, self.config.num_heads)?;
            let mut o = affine(g, a, 6)?;
            if let Some(r) = rng.as_deref_mut() {
                o = g.dropout(o, rate, r);
            }
            let res = g.add(x, o)?;
            x = g.layer_norm(res, w[8], w[9], eps)?;
            let h = affine(g, x, 10)?;
            let mut h = g.relu(h);
            if let Some(r) = rng.as_deref_mut() {
                h = g.dropout(h, rate, r);
            }
            let mut f = affine(g, h, 12)?;
            if let Some(r) = rng.as_deref_mut() {
                f = g.dropout(f, rate, r);
            }
            let res = g.add(x, f)?;
            x = g.layer_norm(res, w[14], w[15], eps)?;
        }
        Ok(Encoded {
            hidden: x,
            segments,
        })
    }

    /// Logits over the whole catalog for every row of `hidden` (tied to `E`).
    pub fn score(&self, g: &mut Graph<T>, bound: &Bound, hidden: Var) -> Result<Var> {
        Ok(g.matmul_nt(hidden, bound.items)?)
    }

    /// Catalog logits at the last position of each sequence, without dropout.
    /// Row `i` of the result belongs to `seqs[i]`; every sequence must be non-empty.
    pub fn score_last(&self, seqs: &[&[usize]]) -> Result<Tensor<T>> {
        if let Some(i) = seqs.iter().position(|s| s.is_empty()) {
            return Err(ModelError::Inference(format!("sequence {i} is empty")));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let enc = self.encode(&mut g, &bound, Branch::Positive, seqs, None)?;
        let last = g.gather_rows(enc.hidden, &enc.last_rows())?;
        let logits = self.score(&mut g, &bound, last)?;
        Ok(g.value(logits).clone())
    }

    /// Top-`k` items for one user, scored from the positive encoder's final position.
    ///
    /// `history` is the encoder input (truncated here to the last `max_len`);
    /// `seen` lists the items removed from the candidates when `filter_seen` is set.
    /// Ties go to the smaller item index.
    pub fn predict_topk(
        &self,
        history: &[usize],
        seen: &[usize],
        k: usize,
        filter_seen: bool,
    ) -> Result<Vec<usize>> {
        if history.is_empty() {
            return Err(ModelError::Inference("empty input history".into()));
        }
        if k == 0 {
            return Err(ModelError::Inference("k must be at least 1".into()));
        }
        let input = &history[history.len().saturating_sub(self.config.max_len)..];
        let logits = self.score_last(&[input])?;
        let mut excluded = vec![false; self.num_items];
        if filter_seen {
            for &i in seen {
                if i < self.num_items {
                    excluded[i] = true;
                }
            }
        }
        let ranked = rank_items(logits.row(0), &excluded, k);
        if ranked.is_empty() {
            return Err(ModelError::Inference("no candidate items remain".into()));
        }
        Ok(ranked)
    }
}

/// Plain dot-product scores of one hidden vector against `E[1..=N]`.
pub fn score_items<T: Real>(hidden: &[T], item_emb: &Tensor<T>) -> Vec<T> {
    let (rows, d) = item_emb.rows_cols();
    (1..rows)
        .map(|r| {
            item_emb.data()[r * d..(r + 1) * d]
                .iter()
                .zip(hidden)
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect()
}

/// Indices of the `k` best non-excluded scores, descending, ties by ascending index.
pub fn rank_items<T: Real>(scores: &[T], excluded: &[bool], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| !excluded.get(i).copied().unwrap_or(false))
        .collect();
    let cmp = |&a: &usize, &b: &usize| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    };
    if idx.len() > k {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(d: usize, blocks: usize, variant: ModelVariant) -> SeqModel<f64> {
        let cfg = EncoderConfig {
            d,
            num_blocks: blocks,
            num_heads: 1,
            max_len: 4,
            dropout: 0.0,
        };
        SeqModel::new(cfg, variant, 3, 11).unwrap()
    }

    #[test]
    fn layout_matches_closed_form_count() {
        for variant in ModelVariant::ALL {
            for (d, blocks) in [(2, 0), (4, 1), (8, 3)] {
                let m = tiny(d, blocks, variant);
                assert_eq!(
                    m.num_parameters(),
                    parameter_count(&m.config, variant, 3),
                    "{variant} d={d} blocks={blocks}"
                );
            }
        }
        let pnf = tiny(4, 2, ModelVariant::PnfRec);
        assert_eq!(pnf.param_names()[0], "item_emb");
        assert_eq!(pnf.param_names()[1], "pos.pos_emb");
        assert_eq!(pnf.param_names()[2], "pos.block0.wq");
        assert_eq!(pnf.param_names()[34], "neg.pos_emb");
    }

    #[test]
    fn init_is_deterministic_and_prefix_shared() {
        let a = tiny(4, 1, ModelVariant::PnfRec);
        let b = tiny(4, 1, ModelVariant::SasRecP);
        assert_eq!(&a.params()[..b.params().len()], b.params());
        assert!(a
            .tensor("item_emb")
            .unwrap()
            .row(0)
            .iter()
            .all(|&v| v == 0.0));
        assert!(a
            .tensor("pos.block0.ln1_g")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(a
            .tensor("neg.block0.bq")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn zero_blocks_is_embedding_plus_position() {
        // d=2, one item, no blocks: hidden = E[item+1] + P[l-1]
        let mut m = tiny(2, 0, ModelVariant::SasRecP);
        *m.tensor_mut("item_emb").unwrap() = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 2.0],
            vec![-1.0, 0.5],
            vec![3.0, 3.0],
        ])
        .unwrap();
        let mut pos = Tensor::zeros(&[4, 2]);
        pos.data_mut()[6..].copy_from_slice(&[0.25, -0.5]);
        *m.tensor_mut("pos.pos_emb").unwrap() = pos;
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false).unwrap();
        let enc = m
            .encode(&mut g, &bound, Branch::Positive, &[&[1]], None)
            .unwrap();
        assert_eq!(g.value(enc.hidden).data(), &[-0.75, 0.0]);
        // logits: (-0.75, 0)·(1,2) = -0.75, ·(-1, .5) = 0.75, ·(3,3) = -2.25
        let logits = m.score(&mut g, &bound, enc.hidden).unwrap();
        assert_eq!(g.value(logits).data(), &[-0.75, 0.75, -2.25]);
    }

    #[test]
    fn score_items_dot_products() {
        let e = Tensor::from_rows(&[
            vec![9.0, 9.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(score_items(&[2.0, -1.0], &e), vec![2.0, -1.0, 1.0]);
        assert_eq!(score_items(&[0.0, 0.0], &e), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn rank_items_ties_and_exclusions() {
        let s = [1.0, 3.0, 3.0, 0.5, 2.0];
        assert_eq!(rank_items(&s, &[], 3), vec![1, 2, 4]);
        assert_eq!(rank_items(&s, &[false, true], 2), vec![2, 4]);
        assert_eq!(rank_items(&s, &[true; 5], 2), Vec::<usize>::new());
        assert_eq!(rank_items(&s, &[], 10).len(), 5);
    }

    #[test]
    fn predict_topk_contract() {
        let m = tiny(4, 1, ModelVariant::SasRecP);
        assert!(m.predict_topk(&[], &[], 1, true).is_err());
        assert!(m.predict_topk(&[0, 1, 2], &[0, 1, 2], 1, true).is_err());
        let top = m.predict_topk(&[0], &[0], 5, true).unwrap();
        assert_eq!(top.len(), 2);
        assert!(!top.contains(&0));
        assert_eq!(m.predict_topk(&[0], &[0], 5, false).unwrap().len(), 3);
    }

    #[test]
    fn too_long_sequence_is_contract_error() {
        let m = tiny(2, 1, ModelVariant::SasRecP);
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false).unwrap();
        let long = [0usize; 5];
        assert!(m
            .encode(&mut g, &bound, Branch::Positive, &[&long], None)
            .is_err());
        assert!(m
            .encode(&mut g, &bound, Branch::Negative, &[&[0]], None)
            .is_err());
    }

    #[test]
    fn config_validation() {
        let bad = EncoderConfig {
            d: 6,
            num_heads: 4,
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            dropout: 1.0,
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
