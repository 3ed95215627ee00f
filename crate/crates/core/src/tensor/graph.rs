use rand::Rng;

use super::{gemm, MatView, Real, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous block of rows belonging to one sequence in a ragged batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Relu {
        x: Var,
    },
    Mask {
        x: Var,
        mask: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    SoftmaxRows {
        x: Var,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    RowDot {
        a: Var,
        b: Var,
    },
    GroupedNll {
        scores: Var,
        offsets: Vec<usize>,
        probs: Vec<T>,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::RowDot { a, b } => vec![*a, *b],
            Op::AddRow { x, bias } => vec![*x, *bias],
            Op::Scale { x, .. }
            | Op::Relu { x }
            | Op::Mask { x, .. }
            | Op::SoftmaxRows { x }
            | Op::NormalizeRows { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
            Op::CausalAttention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::GroupedNll { scores, .. } => vec![*scores],
            Op::WeightedSum { terms } => terms.iter().map(|(v, _)| *v).collect(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`; `None` when `var` is not on any path to the loss.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Tape of recorded operations. Nodes are appended in execution order, which is
/// a topological order, so backward is a single reverse sweep.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn matrix_shape(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match t {
        [r, c] => Ok((*r, *c)),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected a matrix, got shape {t:?}"),
        }),
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Numerically stable log-sum-exp of a slice, returning `(max, lse)`.
fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First element of a node's value; intended for scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ bᵀ` with `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let dim_err = || TensorError::Dimension {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (m, k) = matrix_shape(op, &sa).map_err(|_| dim_err())?;
        let (br, bc) = matrix_shape(op, &sb).map_err(|_| dim_err())?;
        let bv = MatView::new(self.value(b).data(), br, bc);
        let (bv, n) = if trans_b { (bv.t(), br) } else { (bv, bc) };
        if bv.rows != k {
            return Err(dim_err());
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatView::new(self.value(a).data(), m, k),
            bv,
            T::zero(),
            &mut out,
            n,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        add_into(out.data_mut(), self.value(b).data());
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Adds a bias vector to every row of `x`; the only broadcast the kernel supports.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = matrix_shape("add_row", self.shape(x))?;
        if self.value(bias).numel() != cols {
            return Err(TensorError::Dimension {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(cols) {
            add_into(row, b);
        }
        Ok(self.push(out, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = v.max(T::zero()));
        self.push(out, Op::Relu { x })
    }

    /// Inverted dropout. Rate `0` records nothing and returns `x`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= *m;
        }
        self.push(out, Op::Mask { x, mask })
    }

    /// Per-row layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        for p in [gamma, beta] {
            if self.value(p).numel() != cols {
                return Err(TensorError::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let n = T::from_usize(cols).unwrap();
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = g[c] * h + b[c];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Row lookup; backward scatters additively into the table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).rows_cols();
        if indices.is_empty() {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: "no indices".into(),
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(vec![indices.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Alias of [`Graph::gather_rows`] for embedding tables.
    pub fn embedding_gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.gather_rows(table, indices)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.value(x).check_finite("softmax_rows")?;
        let (_, cols) = self.value(x).rows_cols();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        Ok(self.push(out, Op::SoftmaxRows { x }))
    }

    /// Causal multi-head scaled dot-product attention over a ragged batch.
    ///
    /// `q`, `k`, `v` are `R×d` with rows grouped into `segments`; each row attends
    /// only to rows of its own segment at or before its own position.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = matrix_shape("causal_attention", self.shape(q))?;
        for other in [k, v] {
            if self.shape(other) != self.shape(q) {
                return Err(TensorError::Dimension {
                    op: "causal_attention",
                    lhs: self.shape(q).to_vec(),
                    rhs: self.shape(other).to_vec(),
                });
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Invalid {
                op: "causal_attention",
                msg: format!("{d} columns not divisible into {heads} heads"),
            });
        }
        let mut covered = 0;
        for s in segments {
            if s.start != covered || s.len == 0 {
                return Err(TensorError::Invalid {
                    op: "causal_attention",
                    msg: "segments must tile the rows contiguously".into(),
                });
            }
            covered += s.len;
        }
        if covered != rows {
            return Err(TensorError::Invalid {
                op: "causal_attention",
                msg: format!("segments cover {covered} of {rows} rows"),
            });
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qs, ks, vs) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let total: usize = segments.iter().map(|s| s.len * s.len).sum::<usize>() * heads;
        let mut probs = vec![T::zero(); total];
        let mut out = vec![T::zero(); rows * d];
        let mut p_off = 0;
        for s in segments {
            let n = s.len;
            for h in 0..heads {
                let off = s.start * d + h * dh;
                let qv = head_view(qs, off, n, dh, d);
                let kv = head_view(ks, off, n, dh, d);
                let vv = head_view(vs, off, n, dh, d);
                let p = &mut probs[p_off..p_off + n * n];
                gemm(scale, qv, kv.t(), T::zero(), p, n);
                for i in 0..n {
                    let row = &mut p[i * n..(i + 1) * n];
                    softmax_in_place(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                gemm(
                    T::one(),
                    MatView::new(p, n, n),
                    vv,
                    T::zero(),
                    &mut out[off..],
                    d,
                );
                p_off += n * n;
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        Ok(self.push(
            value,
            Op::CausalAttention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, computed with log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, cols) = matrix_shape("cross_entropy", self.shape(logits))?;
        if targets.len() != rows || rows == 0 {
            return Err(TensorError::Dimension {
                op: "cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad,
                bound: cols,
            });
        }
        let xs = self.value(logits).data();
        let mut probs = xs.to_vec();
        let mut total = T::zero();
        for (r, row) in probs.chunks_mut(cols).enumerate() {
            let lse = log_sum_exp(row);
            total += lse - row[targets[r]];
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let loss = total / T::from_usize(rows).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// `x / (‖x‖ + eps)` per row.
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Var {
        let (_, cols) = self.value(x).rows_cols();
        let mut out = self.value(x).clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(cols) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(norm);
            let denom = norm + eps;
            row.iter_mut().for_each(|v| *v /= denom);
        }
        self.push(out, Op::NormalizeRows { x, norms, eps })
    }

    /// Row-wise dot products, producing an `m×1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension {
                op: "row_dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (rows, cols) = self.value(a).rows_cols();
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = (0..rows)
            .map(|r| {
                let range = r * cols..(r + 1) * cols;
                xa[range.clone()]
                    .iter()
                    .zip(&xb[range])
                    .map(|(&p, &q)| p * q)
                    .sum()
            })
            .collect();
        let value = Tensor::new(vec![rows, 1], out)?;
        Ok(self.push(value, Op::RowDot { a, b }))
    }

    /// Mean over groups of `-log softmax(group)[0]`.
    ///
    /// `scores` is a flat column; group `g` spans `offsets[g]..offsets[g + 1]` and its
    /// first entry is the target. A group with a single entry contributes exactly zero.
    pub fn grouped_nll_first(&mut self, scores: Var, offsets: &[usize]) -> Result<Var> {
        let total = self.value(scores).numel();
        let valid = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().unwrap() == total
            && offsets.windows(2).all(|w| w[1] > w[0]);
        if !valid {
            return Err(TensorError::Invalid {
                op: "grouped_nll_first",
                msg: "offsets must be strictly increasing from 0 to the score count".into(),
            });
        }
        let xs = self.value(scores).data();
        let mut probs = xs.to_vec();
        let mut sum = T::zero();
        for w in offsets.windows(2) {
            let group = &mut probs[w[0]..w[1]];
            if group.len() == 1 {
                group[0] = T::one();
                continue;
            }
            let lse = log_sum_exp(group);
            sum += lse - group[0];
            group.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let groups = T::from_usize(offsets.len() - 1).unwrap();
        Ok(self.push(
            Tensor::scalar(sum / groups),
            Op::GroupedNll {
                scores,
                offsets: offsets.to_vec(),
                probs,
            },
        ))
    }

    /// `Σ wᵢ·termᵢ` over single-element terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(TensorError::Invalid {
                op: "weighted_sum",
                msg: "no terms".into(),
            });
        }
        let mut total = T::zero();
        for &(v, w) in terms {
            if self.value(v).numel() != 1 {
                return Err(TensorError::NonScalarLoss(self.shape(v).to_vec()));
            }
            total += w * self.scalar(v);
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Cosine similarity of two equal-length vectors; each norm carries a `1e-8` guard.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(TensorError::Dimension {
                op: "cosine_similarity",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let eps = T::from_f64_lossy(1e-8);
        let na = self.normalize_rows(a, eps);
        let nb = self.normalize_rows(b, eps);
        self.row_dot(na, nb)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = va.rows_cols();
                let (br, bc) = vb.rows_cols();
                let n = if *trans_b { br } else { bc };
                let dc = MatView::new(g, m, n);
                let bview = MatView::new(vb.data(), br, bc);
                if let Some(da) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ  (or dC · B when b was already transposed)
                    let rhs = if *trans_b { bview } else { bview.t() };
                    gemm(T::one(), dc, rhs, T::one(), da, k);
                }
                if let Some(db) = self.slot(grads, *b) {
                    let aview = MatView::new(va.data(), m, k);
                    if *trans_b {
                        gemm(T::one(), dc.t(), aview, T::one(), db, k);
                    } else {
                        gemm(T::one(), aview.t(), dc, T::one(), db, n);
                    }
                }
            }
            Op::Add { a, b } => {
                for p in [*a, *b] {
                    if let Some(d) = self.slot(grads, p) {
                        add_into(d, g);
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(d) = self.slot(grads, *x) {
                    add_into(d, g);
                }
                let cols = self.value(*bias).numel();
                if let Some(d) = self.slot(grads, *bias) {
                    for row in g.chunks(cols) {
                        add_into(d, row);
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(d) = self.slot(grads, *x) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d += gv * *factor;
                    }
                }
            }
            Op::Relu { x } => {
                let out = node.value.data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(out) {
                        if o > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Mask { x, mask } => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                if let Some(d) = self.slot(grads, *gamma) {
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            d[c] += gr[c] * hr[c];
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *beta) {
                    for gr in g.chunks(cols) {
                        add_into(d, gr);
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    let n = T::from_usize(cols).unwrap();
                    let mut dxhat = vec![T::zero(); cols];
                    for (r, (gr, hr)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for c in 0..cols {
                            dxhat[c] = gr[c] * gam[c];
                            mean_d += dxhat[c];
                            mean_dh += dxhat[c] * hr[c];
                        }
                        mean_d /= n;
                        mean_dh /= n;
                        let dr = &mut d[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dr[c] += inv_std[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let cols = self.value(*table).rows_cols().1;
                if let Some(d) = self.slot(grads, *table) {
                    for (row, &idx) in g.chunks(cols).zip(indices) {
                        add_into(&mut d[idx * cols..(idx + 1) * cols], row);
                    }
                }
            }
            Op::SoftmaxRows { x } => {
                let cols = node.value.rows_cols().1;
                let y = node.value.data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                    {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            dr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::CausalAttention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => self.attention_backward(g, grads, (*q, *k, *v), segments, *heads, probs),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let cols = self.value(*logits).rows_cols().1;
                let scale = g[0] / T::from_usize(targets.len()).unwrap();
                if let Some(d) = self.slot(grads, *logits) {
                    for (r, (dr, pr)) in d.chunks_mut(cols).zip(probs.chunks(cols)).enumerate() {
                        for c in 0..cols {
                            dr[c] += scale * pr[c];
                        }
                        dr[targets[r]] -= scale;
                    }
                }
            }
            Op::NormalizeRows { x, norms, eps } => {
                let xv = self.value(*x);
                let cols = xv.rows_cols().1;
                if let Some(d) = self.slot(grads, *x) {
                    for (r, ((dr, gr), xr)) in d
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(xv.data().chunks(cols))
                        .enumerate()
                    {
                        let n = norms[r];
                        let denom = n + *eps;
                        let coef = if n > T::zero() {
                            let dot: T = xr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            dot / (n * denom * denom)
                        } else {
                            T::zero()
                        };
                        for c in 0..cols {
                            dr[c] += gr[c] / denom - xr[c] * coef;
                        }
                    }
                }
            }
            Op::RowDot { a, b } => {
                let cols = self.value(*a).rows_cols().1;
                for (target, other) in [(*a, *b), (*b, *a)] {
                    let ov = self.value(other).data();
                    if let Some(d) = self.slot(grads, target) {
                        for (r, (dr, orow)) in d.chunks_mut(cols).zip(ov.chunks(cols)).enumerate() {
                            for c in 0..cols {
                                dr[c] += g[r] * orow[c];
                            }
                        }
                    }
                }
            }
            Op::GroupedNll {
                scores,
                offsets,
                probs,
            } => {
                let scale = g[0] / T::from_usize(offsets.len() - 1).unwrap();
                if let Some(d) = self.slot(grads, *scores) {
                    for w in offsets.windows(2) {
                        if w[1] - w[0] == 1 {
                            continue;
                        }
                        for j in w[0]..w[1] {
                            d[j] += scale * probs[j];
                        }
                        d[w[0]] -= scale;
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    if let Some(d) = self.slot(grads, v) {
                        d[0] += g[0] * w;
                    }
                }
            }
        }
    }

    fn attention_backward(
        &self,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        (q, k, v): (Var, Var, Var),
        segments: &[Segment],
        heads: usize,
        probs: &[T],
    ) {
        let (rows, d) = self.value(q).rows_cols();
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qs, ks, vs) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let need = |x: Var| self.nodes[x.0].requires_grad;
        let (need_q, need_k, need_v) = (need(q), need(k), need(v));
        let mut dq = vec![T::zero(); if need_q { rows * d } else { 0 }];
        let mut dk = vec![T::zero(); if need_k { rows * d } else { 0 }];
        let mut dv = vec![T::zero(); if need_v { rows * d } else { 0 }];
        let max_len = segments.iter().map(|s| s.len).max().unwrap_or(0);
        let mut dp = vec![T::zero(); max_len * max_len];
        let mut p_off = 0;
        for s in segments {
            let n = s.len;
            for h in 0..heads {
                let off = s.start * d + h * dh;
                let p = &probs[p_off..p_off + n * n];
                p_off += n * n;
                let pv = MatView::new(p, n, n);
                let dov = head_view(g, off, n, dh, d);
                if need_v {
                    gemm(T::one(), pv.t(), dov, T::one(), &mut dv[off..], d);
                }
                if !(need_q || need_k) {
                    continue;
                }
                let ds = &mut dp[..n * n];
                gemm(
                    T::one(),
                    dov,
                    head_view(vs, off, n, dh, d).t(),
                    T::zero(),
                    ds,
                    n,
                );
                for i in 0..n {
                    let pr = &p[i * n..(i + 1) * n];
                    let dr = &mut ds[i * n..(i + 1) * n];
                    let dot: T = (0..=i).map(|j| pr[j] * dr[j]).sum();
                    for j in 0..n {
                        dr[j] = if j <= i {
                            pr[j] * (dr[j] - dot)
                        } else {
                            T::zero()
                        };
                    }
                }
                let dsv = MatView::new(&*ds, n, n);
                if need_q {
                    gemm(
                        scale,
                        dsv,
                        head_view(ks, off, n, dh, d),
                        T::one(),
                        &mut dq[off..],
                        d,
                    );
                }
                if need_k {
                    gemm(
                        scale,
                        dsv.t(),
                        head_view(qs, off, n, dh, d),
                        T::one(),
                        &mut dk[off..],
                        d,
                    );
                }
            }
        }
        for (var, local) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(slot) = self.slot(grads, var) {
                add_into(slot, &local);
            }
        }
    }
}

fn head_view<T>(data: &[T], off: usize, rows: usize, cols: usize, stride: usize) -> MatView<'_, T> {
    MatView {
        data: &data[off..],
        rows,
        cols,
        rs: stride,
        cs: 1,
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}
