//! Next-item cross-entropy, the contrastive term, and their weighted sum
//! `L = L_CE_p + α·L_CE_n + β·L_c`.
//!
//! Every term is a mean over its contributing pairs so that α and β keep the
//! same meaning across batch sizes.

use thiserror::Error;

use crate::tensor::{Graph, Real, TensorError, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0} has no unmasked positions")]
    NoPositions(&'static str),
    #[error("loss weights must be finite and non-negative, got alpha={alpha} beta={beta}")]
    Weights { alpha: f64, beta: f64 },
    #[error("non-finite {term} loss ({value})")]
    NonFinite { term: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Coefficients of the negative CE (`alpha`) and contrastive (`beta`) terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(alpha) || !ok(beta) {
            return Err(LossError::Weights { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }
}

/// Contrastive pairs of one hidden row: the next positive item first, then
/// every negative item of the user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastGroup {
    pub row: usize,
    pub target: usize,
    pub negatives: Vec<usize>,
}

/// Mean cross-entropy over rows of `logits` against catalog targets.
pub fn cross_entropy<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[usize],
    term: &'static str,
) -> Result<Var> {
    if targets.is_empty() {
        return Err(LossError::NoPositions(term));
    }
    Ok(g.cross_entropy(logits, targets)?)
}

/// Cosine-softmax contrastive loss.
///
/// For each group, with `f` the cosine similarity of L2-normalized vectors,
/// the term is `-log(exp f(h, i⁺) / (exp f(h, i⁺) + Σ_j exp f(h, j)))`; a group
/// without negatives contributes exactly zero. Returns the mean over groups.
/// Item indices are 0-based catalog indices, looked up at `E[i + 1]`.
pub fn contrastive<T: Real>(
    g: &mut Graph<T>,
    hidden: Var,
    item_emb: Var,
    groups: &[ContrastGroup],
) -> Result<Var> {
    if groups.is_empty() {
        return Err(LossError::NoPositions("contrastive"));
    }
    let eps = T::from_f64_lossy(1e-8);
    let mut rows = Vec::new();
    let mut items = Vec::new();
    let mut offsets = vec![0];
    for grp in groups {
        for item in std::iter::once(grp.target).chain(grp.negatives.iter().copied()) {
            rows.push(grp.row);
            items.push(item + 1);
        }
        offsets.push(rows.len());
    }
    let h = g.gather_rows(hidden, &rows)?;
    let e = g.gather_rows(item_emb, &items)?;
    let h = g.normalize_rows(h, eps);
    let e = g.normalize_rows(e, eps);
    let sims = g.row_dot(h, e)?;
    Ok(g.grouped_nll_first(sims, &offsets)?)
}

/// Term values of one composite loss, as graph handles.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub ce_positive: Var,
    pub ce_negative: Option<Var>,
    pub contrastive: Option<Var>,
}

/// `L_CE_p + α·L_CE_n + β·L_c`. Terms with weight zero (or absent) are left
/// out of the sum entirely, so no gradient reaches their branches.
pub fn composite<T: Real>(g: &mut Graph<T>, parts: &LossParts, w: LossWeights) -> Result<Var> {
    let named = [
        ("L_CE_p", Some(parts.ce_positive)),
        ("L_CE_n", parts.ce_negative),
        ("L_c", parts.contrastive),
    ];
    for (term, v) in named {
        if let Some(v) = v {
            let value = g.scalar(v).to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(LossError::NonFinite { term, value });
            }
        }
    }
    let mut terms = vec![(parts.ce_positive, T::one())];
    for (v, w) in [(parts.ce_negative, w.alpha), (parts.contrastive, w.beta)] {
        if let (Some(v), true) = (v, w != 0.0) {
            terms.push((v, T::from_f64_lossy(w)));
        }
    }
    Ok(g.weighted_sum(&terms)?)
}
