//! One finite-difference case per differentiable op, plus the full composite
//! loss; each returns the relative gradient error for one seed.

use pnfrec::losses::LossWeights;
use pnfrec::model::{EncoderConfig, ModelVariant, SeqModel};
use pnfrec::tensor::{Graph, Segment};
use pnfrec::training::{batch_loss, TrainingExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, project, random_tensor};

pub type Case = fn(u64) -> f64;

pub const ALL: [(&str, Case); 15] = [
    ("matmul", matmul),
    ("matmul_nt", matmul_nt),
    ("add_bias_scale_relu", add_bias_scale_relu),
    ("dropout", dropout),
    ("softmax_rows", softmax_rows),
    ("layer_norm", layer_norm),
    ("embedding_gather", embedding_gather),
    ("gather_rows", gather_rows),
    ("causal_attention", causal_attention),
    ("cross_entropy", cross_entropy),
    ("cosine_similarity", cosine_similarity),
    ("normalize_rows", normalize_rows),
    ("row_dot_grouped_nll", row_dot_grouped_nll),
    ("weighted_sum", weighted_sum),
    ("composite_loss", composite_loss),
];

fn dims(seed: u64) -> (usize, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1e5);
    (
        rng.gen_range(1..=8),
        rng.gen_range(1..=8),
        rng.gen_range(1..=8),
    )
}

pub fn matmul(seed: u64) -> f64 {
    let (m, k, n) = dims(seed);
    let inputs = vec![
        random_tensor(&[m, k], seed, 1.0),
        random_tensor(&[k, n], seed + 100, 1.0),
    ];
    check_gradients(seed, inputs, |g, v| {
        let out = g.matmul(v[0], v[1]).unwrap();
        project(g, out, seed)
    })
}

pub fn matmul_nt(seed: u64) -> f64 {
    let (m, k, n) = dims(seed);
    let inputs = vec![
        random_tensor(&[m, k], seed, 1.0),
        random_tensor(&[n, k], seed + 100, 1.0),
    ];
    check_gradients(seed, inputs, |g, v| {
        let out = g.matmul_nt(v[0], v[1]).unwrap();
        project(g, out, seed)
    })
}

pub fn add_bias_scale_relu(seed: u64) -> f64 {
    let (m, n, _) = dims(seed);
    let inputs = vec![
        random_tensor(&[m, n], seed, 1.0),
        random_tensor(&[m, n], seed + 1, 1.0),
        random_tensor(&[n], seed + 2, 1.0),
    ];
    check_gradients(seed, inputs, |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let b = g.add_row(s, v[2]).unwrap();
        let c = g.scale(b, 0.7);
        let r = g.relu(c);
        project(g, r, seed)
    })
}

pub fn dropout(seed: u64) -> f64 {
    let (m, n, _) = dims(seed);
    let inputs = vec![random_tensor(&[m, n], seed, 1.0)];
    check_gradients(seed, inputs, |g, v| {
        // identical mask on every re-evaluation
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = g.dropout(v[0], 0.3, &mut rng);
        project(g, d, seed)
    })
}

pub fn softmax_rows(seed: u64) -> f64 {
    let (m, n, _) = dims(seed);
    let inputs = vec![random_tensor(&[m, n], seed, 2.0)];
    check_gradients(seed, inputs, |g, v| {
        let s = g.softmax_rows(v[0]).unwrap();
        project(g, s, seed)
    })
}

pub fn layer_norm(seed: u64) -> f64 {
    let (m, n, _) = dims(seed);
    let n = n.max(2);
    let inputs = vec![
        random_tensor(&[m, n], seed, 1.5),
        random_tensor(&[n], seed + 1, 1.0),
        random_tensor(&[n], seed + 2, 1.0),
    ];
    check_gradients(seed, inputs, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        project(g, y, seed)
    })
}

fn random_indices(seed: u64, rows: usize, count: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen_range(0..rows)).collect()
}

pub fn embedding_gather(seed: u64) -> f64 {
    let (rows, cols, count) = dims(seed);
    let idx = random_indices(seed, rows, count);
    let inputs = vec![random_tensor(&[rows, cols], seed, 1.0)];
    check_gradients(seed, inputs, |g, v| {
        let e = g.embedding_gather(v[0], &idx).unwrap();
        project(g, e, seed)
    })
}

pub fn gather_rows(seed: u64) -> f64 {
    let (rows, cols, count) = dims(seed);
    let idx = random_indices(seed ^ 0x77, rows, count);
    let inputs = vec![random_tensor(&[rows, cols], seed, 1.0)];
    check_gradients(seed, inputs, |g, v| {
        let e = g.gather_rows(v[0], &idx).unwrap();
        project(g, e, seed)
    })
}

pub fn causal_attention(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = [1, 2][rng.gen_range(0..2)];
    let d = heads * rng.gen_range(1..=4);
    let lens: Vec<usize> = (0..rng.gen_range(1..=3))
        .map(|_| rng.gen_range(1..=4))
        .collect();
    let mut segs = Vec::new();
    let mut start = 0;
    for &len in &lens {
        segs.push(Segment { start, len });
        start += len;
    }
    let inputs = (0..3)
        .map(|i| random_tensor(&[start, d], seed * 3 + i, 1.0))
        .collect();
    check_gradients(seed, inputs, |g, v| {
        let a = g.causal_attention(v[0], v[1], v[2], &segs, heads).unwrap();
        project(g, a, seed)
    })
}

pub fn cross_entropy(seed: u64) -> f64 {
    let (m, n, _) = dims(seed);
    let targets = random_indices(seed, n, m);
    let inputs = vec![random_tensor(&[m, n], seed, 2.0)];
    check_gradients(seed, inputs, |g, v| {
        g.cross_entropy(v[0], &targets).unwrap()
    })
}

pub fn cosine_similarity(seed: u64) -> f64 {
    // one column makes the cosine a constant ±1
    let n = dims(seed).1.max(2);
    let inputs = vec![
        random_tensor(&[n], seed, 1.0),
        random_tensor(&[n], seed + 9, 1.0),
    ];
    check_gradients(seed, inputs, |g, v| {
        g.cosine_similarity(v[0], v[1]).unwrap()
    })
}

pub fn normalize_rows(seed: u64) -> f64 {
    let (m, n, _) = dims(seed);
    let n = n.max(2);
    let inputs = vec![random_tensor(&[m, n], seed, 1.0)];
    check_gradients(seed, inputs, |g, v| {
        let y = g.normalize_rows(v[0], 1e-8);
        project(g, y, seed)
    })
}

pub fn row_dot_grouped_nll(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = (0..rng.gen_range(1..=4))
        .map(|_| rng.gen_range(1..=4))
        .collect();
    let mut offsets = vec![0];
    for s in &sizes {
        offsets.push(offsets.last().unwrap() + s);
    }
    let total = *offsets.last().unwrap();
    let cols = rng.gen_range(1..=6);
    let inputs = vec![
        random_tensor(&[total, cols], seed, 1.0),
        random_tensor(&[total, cols], seed + 5, 1.0),
    ];
    check_gradients(seed, inputs, |g, v| {
        let s = g.row_dot(v[0], v[1]).unwrap();
        g.grouped_nll_first(s, &offsets).unwrap()
    })
}

pub fn weighted_sum(seed: u64) -> f64 {
    let (m, n, _) = dims(seed);
    let inputs = vec![
        random_tensor(&[m, n], seed, 1.0),
        random_tensor(&[m, n], seed + 3, 1.0),
    ];
    check_gradients(seed, inputs, |g, v| {
        let a = g.cross_entropy(v[0], &vec![0; m]).unwrap();
        let b = g.cross_entropy(v[1], &vec![n - 1; m]).unwrap();
        g.weighted_sum(&[(a, 1.0), (b, 0.35)]).unwrap()
    })
}

/// Two users over five items, both encoders and all three loss terms.
pub fn toy_batch() -> Vec<TrainingExample> {
    vec![
        TrainingExample {
            user: 0,
            input: vec![0, 1, 2],
            targets: vec![1, 2, 3],
            target_positive: vec![true; 3],
            neg_input: vec![4],
            neg_targets: vec![1],
            negatives: vec![4, 1],
        },
        TrainingExample {
            user: 1,
            input: vec![2, 4],
            targets: vec![4, 0],
            target_positive: vec![true; 2],
            neg_input: vec![1, 3],
            neg_targets: vec![3, 0],
            negatives: vec![1, 3, 0],
        },
    ]
}

/// Dropout-free toy model with every tensor moved off its initial value.
pub fn toy_model(seed: u64) -> SeqModel<f64> {
    let cfg = EncoderConfig {
        d: 4,
        num_blocks: 1,
        num_heads: 2,
        max_len: 3,
        dropout: 0.0,
    };
    let mut m = SeqModel::<f64>::new(cfg, ModelVariant::PnfRec, 5, seed).unwrap();
    for (i, p) in m.params_mut().iter_mut().enumerate() {
        let noise = random_tensor(p.shape(), seed * 1000 + i as u64, 0.2);
        for (x, n) in p.data_mut().iter_mut().zip(noise.data()) {
            *x += n;
        }
    }
    m
}

pub fn toy_loss(model: &SeqModel<f64>, w: LossWeights) -> f64 {
    let batch = toy_batch();
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false).unwrap();
    let loss = batch_loss(&mut g, model, &bound, &refs, w, None).unwrap();
    g.scalar(loss.total)
}

/// Relative error over the whole flattened parameter gradient. Per-tensor
/// ratios are meaningless here: the key bias is exactly invariant under the
/// attention softmax, so its gradient is zero and its finite difference is
/// pure round-off.
pub fn composite_loss(seed: u64) -> f64 {
    let w = LossWeights::new(0.3, 0.2).unwrap();
    let model = toy_model(seed);
    let batch = toy_batch();
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true).unwrap();
    let loss = batch_loss(&mut g, &model, &bound, &refs, w, None).unwrap();
    let grads = g.backward(loss.total).unwrap();
    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (pi, &var) in bound.vars.iter().enumerate() {
        let n = model.params()[pi].numel();
        analytic.extend(grads.get(var).map_or(vec![0.0; n], <[f64]>::to_vec));
        for j in 0..n {
            let mut plus = model.clone();
            plus.params_mut()[pi].data_mut()[j] += h;
            let mut minus = model.clone();
            minus.params_mut()[pi].data_mut()[j] -= h;
            numeric.push((toy_loss(&plus, w) - toy_loss(&minus, w)) / (2.0 * h));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric))
}
