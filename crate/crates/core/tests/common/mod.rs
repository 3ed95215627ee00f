#![allow(dead_code)]

pub mod gradcases;

use pnfrec::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;

pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9) ^ 0x5eed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any matrix to a scalar through a fixed random weighting.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.shape(out).to_vec();
    let (rows, _) = g.value(out).rows_cols();
    let w = g.constant(random_tensor(&shape, seed ^ 0xabcdef, 1.0));
    let dots = g.row_dot(out, w).unwrap();
    let ones = g.constant(Tensor::filled(&[1, rows], 1.0));
    g.matmul(ones, dots).unwrap()
}

/// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6) over the gradients
/// of all inputs flattened together. A per-input ratio would flag inputs whose
/// true gradient is ~0 (e.g. `x` of a two-column layer norm), where the finite
/// difference is only round-off.
pub fn check_gradients<F>(_seed: u64, inputs: Vec<Tensor<f64>>, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.scalar(loss)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();

    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, var) in vars.iter().enumerate() {
        let n = inputs[i].numel();
        analytic.extend(grads.get(*var).map_or(vec![0.0; n], <[f64]>::to_vec));
        for j in 0..n {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * h));
        }
    }
    if std::env::var("GRADCHECK_DEBUG").is_ok() {
        eprintln!("analytic {analytic:?}\nnumeric  {numeric:?}");
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    // floor keeps round-off (~1e-10) on an all-but-vanishing gradient from counting as error
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-6)
}

use pnfrec::data::{assign_feedback, temporal_split, SplitBundle};
use pnfrec::losses::LossWeights;
use pnfrec::model::{EncoderConfig, ModelVariant};
use pnfrec::synth::{generate, SynthConfig, SYNTH_THRESHOLD};
use pnfrec::training::TrainConfig;

/// A few hundred users, small enough to train in well under a second per epoch.
pub fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_users: 200,
        n_items: 80,
        n_clusters: 4,
        interactions_per_user: 20,
        seed,
        ..SynthConfig::default()
    }
}

pub fn synth_split(cfg: &SynthConfig) -> SplitBundle {
    let data = generate(cfg).unwrap();
    let labeled = assign_feedback(&data.log, SYNTH_THRESHOLD).unwrap();
    temporal_split(&labeled, 0.9, cfg.seed).unwrap()
}

pub fn tiny_train_config(variant: ModelVariant, alpha: f64, beta: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig {
            d: 8,
            num_blocks: 1,
            num_heads: 1,
            max_len: 10,
            dropout: 0.2,
        },
        variant,
        weights: LossWeights::new(alpha, beta).unwrap(),
        batch_size: 32,
        max_epochs: 3,
        patience: 2,
        seed,
        ..TrainConfig::default()
    }
}
