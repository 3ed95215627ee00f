//! Checks reverse-mode gradients of a small attention stack against central
//! finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use pnfrec::tensor::{Graph, Segment, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Attention over one length-4 sequence, layer-normed, then a cross-entropy head.
fn loss(g: &mut Graph<f64>, inputs: &[Tensor<f64>]) -> (f64, Vec<Vec<f64>>) {
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let (x, wq, wk, wv, gamma, beta, out) = (
        vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], vars[6],
    );
    let q = g.matmul(x, wq).unwrap();
    let k = g.matmul(x, wk).unwrap();
    let v = g.matmul(x, wv).unwrap();
    let seg = [Segment { start: 0, len: 4 }];
    let a = g.causal_attention(q, k, v, &seg, 2).unwrap();
    let n = g.layer_norm(a, gamma, beta, 1e-6).unwrap();
    let logits = g.matmul(n, out).unwrap();
    let l = g.cross_entropy(logits, &[1, 0, 3, 2]).unwrap();
    let grads = g.backward(l).unwrap();
    let value = g.scalar(l);
    (
        value,
        vars.iter()
            .map(|&v| grads.get(v).unwrap().to_vec())
            .collect(),
    )
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = 6;
    let inputs = vec![
        random(&mut rng, &[4, d]),
        random(&mut rng, &[d, d]),
        random(&mut rng, &[d, d]),
        random(&mut rng, &[d, d]),
        random(&mut rng, &[d]),
        random(&mut rng, &[d]),
        random(&mut rng, &[d, 5]),
    ];
    let (_, analytic) = loss(&mut Graph::new(), &inputs);
    let names = ["x", "W_Q", "W_K", "W_V", "gamma", "beta", "W_out"];
    for (i, (name, grad)) in names.iter().zip(&analytic).enumerate() {
        let mut worst: f64 = 0.0;
        for (j, a) in grad.iter().enumerate() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let fd =
                (loss(&mut Graph::new(), &plus).0 - loss(&mut Graph::new(), &minus).0) / (2.0 * H);
            worst = worst.max((fd - a).abs());
        }
        println!("{name:>6}: max |analytic - numeric| = {worst:.2e}");
    }
}
