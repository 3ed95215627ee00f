mod common;

use common::gradcases::{toy_batch, toy_loss, toy_model};
use pnfrec::losses::{self, ContrastGroup, LossError, LossParts, LossWeights};
use pnfrec::tensor::{Graph, Tensor};
use pnfrec::training::{batch_loss, TrainingExample};

/// `-ln(e^{f⁺} / (e^{f⁺} + Σ e^{f⁻}))` evaluated directly.
fn direct_term(f_pos: f64, f_neg: &[f64]) -> f64 {
    let denom = f_pos.exp() + f_neg.iter().map(|f| f.exp()).sum::<f64>();
    -(f_pos.exp() / denom).ln()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Contrastive value for one hidden matrix and an item table with a padding row.
fn contrast(hidden: &[Vec<f64>], table: &[Vec<f64>], groups: &[ContrastGroup]) -> f64 {
    let mut g = Graph::<f64>::new();
    let h = g.constant(Tensor::from_rows(hidden).unwrap());
    let e = g.constant(Tensor::from_rows(table).unwrap());
    let l = losses::contrastive(&mut g, h, e, groups).unwrap();
    g.scalar(l)
}

fn group(row: usize, target: usize, negatives: &[usize]) -> ContrastGroup {
    ContrastGroup {
        row,
        target,
        negatives: negatives.to_vec(),
    }
}

#[test]
fn contrastive_closed_forms() {
    let pad = vec![0.0, 0.0];
    // item 0 along the hidden state, items 1 and 2 opposite to it
    let table = vec![pad, vec![2.0, 0.0], vec![-1.0, 0.0], vec![-3.0, 0.0]];
    let hidden = vec![vec![0.5, 0.0]];
    assert_eq!(contrast(&hidden, &table, &[group(0, 0, &[])]), 0.0);
    let hand = contrast(&hidden, &table, &[group(0, 0, &[1, 2])]);
    assert!((hand - 0.23954).abs() < 1e-5, "{hand}");
    assert!((hand - direct_term(1.0, &[-1.0, -1.0])).abs() < 1e-7);

    for m in 1..=6 {
        let same = vec![vec![0.0, 0.0]; m + 2];
        let same: Vec<Vec<f64>> = same
            .into_iter()
            .enumerate()
            .map(|(i, _)| {
                if i == 0 {
                    vec![0.0, 0.0]
                } else {
                    vec![0.3, -0.7]
                }
            })
            .collect();
        let negatives: Vec<usize> = (1..=m).collect();
        let v = contrast(&[vec![1.0, 2.0]], &same, &[group(0, 0, &negatives)]);
        assert!((v - ((1 + m) as f64).ln()).abs() < 1e-6, "m = {m}: {v}");
    }
}

#[test]
fn contrastive_matches_direct_formula_and_averages_groups() {
    for seed in 0..common::SEEDS {
        let h = common::random_tensor(&[3, 5], seed, 1.0);
        let e = common::random_tensor(&[7, 5], seed + 100, 1.0);
        let hidden: Vec<Vec<f64>> = (0..3).map(|r| h.row(r).to_vec()).collect();
        let table: Vec<Vec<f64>> = (0..7).map(|r| e.row(r).to_vec()).collect();
        let groups = vec![group(0, 1, &[2, 3]), group(2, 5, &[0]), group(1, 4, &[])];
        let f = |row: usize, item: usize| cosine(&hidden[row], &table[item + 1]);
        let expected =
            (direct_term(f(0, 1), &[f(0, 2), f(0, 3)]) + direct_term(f(2, 5), &[f(2, 0)]) + 0.0)
                / 3.0;
        let got = contrast(&hidden, &table, &groups);
        assert!((got - expected).abs() < 1e-7, "seed {seed}");
        assert!(contrast(&hidden, &table, &groups[..1]) > 0.0);
    }
}

#[test]
fn contrastive_moves_the_right_way() {
    let hidden = vec![vec![0.6, -0.2, 0.4]];
    let base = vec![
        vec![0.0; 3],
        vec![0.1, 0.5, -0.3],
        vec![-0.4, 0.2, 0.9],
        vec![0.7, 0.1, 0.2],
    ];
    let groups = [group(0, 0, &[1, 2])];
    let v0 = contrast(&hidden, &base, &groups);
    let nudge = |row: usize, sign: f64| {
        let mut t = base.clone();
        for (x, h) in t[row].iter_mut().zip(&hidden[0]) {
            *x += sign * 0.1 * h;
        }
        contrast(&hidden, &t, &groups)
    };
    // target more similar: lower; a negative more similar: higher
    assert!(nudge(1, 1.0) < v0);
    assert!(nudge(1, -1.0) > v0);
    assert!(nudge(2, 1.0) > v0);
    assert!(nudge(3, 1.0) > v0);
}

#[test]
fn alpha_derivative_is_the_negative_ce() {
    let model = toy_model(7);
    let batch = toy_batch();
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false).unwrap();
    let parts = batch_loss(&mut g, &model, &bound, &refs, LossWeights::default(), None)
        .unwrap()
        .parts;
    let ce_n = g.scalar(parts.ce_negative.unwrap());
    let (a, b, h) = (0.4, 0.1, 1e-4);
    let up = toy_loss(&model, LossWeights::new(a + h, b).unwrap());
    let down = toy_loss(&model, LossWeights::new(a - h, b).unwrap());
    assert!(((up - down) / (2.0 * h) - ce_n).abs() < 1e-8);
}

#[test]
fn zero_weights_cut_their_branches_off() {
    let model = toy_model(3);
    let batch = toy_batch();
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true).unwrap();
    let loss = batch_loss(
        &mut g,
        &model,
        &bound,
        &refs,
        LossWeights::new(0.0, 0.5).unwrap(),
        None,
    )
    .unwrap();
    let grads = g.backward(loss.total).unwrap();
    let neg = model
        .encoder_param_range(pnfrec::model::Branch::Negative)
        .unwrap();
    for &v in &bound.vars[neg] {
        assert!(grads.get(v).is_none_or(|gr| gr.iter().all(|&x| x == 0.0)));
    }

    let mut g = Graph::new();
    let bound = model.bind(&mut g, false).unwrap();
    let loss = batch_loss(&mut g, &model, &bound, &refs, LossWeights::default(), None).unwrap();
    assert_eq!(g.scalar(loss.total), g.scalar(loss.parts.ce_positive));
    assert!(loss.parts.ce_negative.is_some() && loss.parts.contrastive.is_some());
}

#[test]
fn users_without_negatives_leave_the_negative_term_out() {
    let model = toy_model(5);
    let mut batch = toy_batch();
    for e in &mut batch {
        e.neg_input.clear();
        e.neg_targets.clear();
        e.negatives.clear();
    }
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false).unwrap();
    let w = LossWeights::new(0.5, 0.5).unwrap();
    let loss = batch_loss(&mut g, &model, &bound, &refs, w, None).unwrap();
    assert!(loss.parts.ce_negative.is_none());
    assert_eq!(g.scalar(loss.parts.contrastive.unwrap()), 0.0);
    assert_eq!(g.scalar(loss.total), g.scalar(loss.parts.ce_positive));
}

#[test]
fn non_finite_terms_are_named() {
    let mut g = Graph::<f64>::new();
    let ok = g.constant(Tensor::scalar(1.0));
    let bad = g.constant(Tensor::scalar(f64::NAN));
    let parts = LossParts {
        ce_positive: ok,
        ce_negative: Some(ok),
        contrastive: Some(bad),
    };
    match losses::composite(&mut g, &parts, LossWeights::new(0.1, 0.1).unwrap()) {
        Err(LossError::NonFinite { term, .. }) => assert_eq!(term, "L_c"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}
