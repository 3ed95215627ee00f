use pnfrec::metrics::{split_eval, target_rank, EvalReport};
use pnfrec::model::rank_items;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Brute {
    hr: [f64; 2],
    ndcg: [f64; 2],
    n: [usize; 2],
}

/// Per-user loop straight from the definitions: find the truth in the list,
/// score it, then average within each polarity group in user order.
fn brute_force(lists: &[Vec<usize>], truths: &[(usize, bool)], k: usize) -> Brute {
    let mut b = Brute {
        hr: [0.0; 2],
        ndcg: [0.0; 2],
        n: [0; 2],
    };
    for (list, &(truth, positive)) in lists.iter().zip(truths) {
        let g = if positive { 0 } else { 1 };
        b.n[g] += 1;
        for (i, &item) in list.iter().take(k).enumerate() {
            if item == truth {
                b.hr[g] += 1.0;
                b.ndcg[g] += 1.0 / ((i + 2) as f64).log2();
            }
        }
    }
    for g in 0..2 {
        if b.n[g] > 0 {
            b.hr[g] /= b.n[g] as f64;
            b.ndcg[g] /= b.n[g] as f64;
        }
    }
    b
}

fn random_users(
    rng: &mut ChaCha8Rng,
    users: usize,
    n_items: usize,
) -> (Vec<Vec<usize>>, Vec<(usize, bool)>) {
    let mut lists = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..users {
        let mut items: Vec<usize> = (0..n_items).collect();
        items.shuffle(rng);
        items.truncate(rng.gen_range(1..=n_items));
        lists.push(items);
        truths.push((rng.gen_range(0..n_items), rng.gen_bool(0.6)));
    }
    (lists, truths)
}

#[test]
fn split_eval_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let (lists, truths) = random_users(&mut rng, 50, 30);
        for k in [1, 5, 10, 20] {
            let r = split_eval(&lists, &truths, k).unwrap();
            let b = brute_force(&lists, &truths, k);
            assert_eq!((r.hr_p, r.hr_n), (b.hr[0], b.hr[1]));
            assert_eq!((r.ndcg_p, r.ndcg_n), (b.ndcg[0], b.ndcg[1]));
            assert_eq!((r.n_users_p, r.n_users_n), (b.n[0], b.n[1]));
            assert_eq!(r.delta_hr, b.hr[0] - b.hr[1]);
            assert_eq!(r.delta_ndcg, b.ndcg[0] - b.ndcg[1]);
        }
    }
}

#[test]
fn split_eval_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (lists, truths) = random_users(&mut rng, 60, 25);
    let a = split_eval(&lists, &truths, 10).unwrap();
    let mut order: Vec<usize> = (0..lists.len()).collect();
    order.shuffle(&mut rng);
    let pl: Vec<Vec<usize>> = order.iter().map(|&i| lists[i].clone()).collect();
    let pt: Vec<(usize, bool)> = order.iter().map(|&i| truths[i]).collect();
    let b = split_eval(&pl, &pt, 10).unwrap();
    for (x, y) in [
        (a.hr_p, b.hr_p),
        (a.hr_n, b.hr_n),
        (a.ndcg_p, b.ndcg_p),
        (a.ndcg_n, b.ndcg_n),
    ] {
        assert!((x - y).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&x));
    }
}

#[test]
fn score_rank_agrees_with_full_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(2..40);
        // coarse scores so ties are common
        let scores: Vec<f32> = (0..n).map(|_| f32::from(rng.gen_range(0u8..6))).collect();
        let excluded: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
        let truth = rng.gen_range(0..n);
        let full = rank_items(&scores, &excluded, n);
        let expected = full.iter().position(|&i| i == truth).map(|p| p + 1);
        assert_eq!(target_rank(&scores, truth, &excluded), expected);
    }
}

#[test]
fn random_ranking_hits_at_k_over_n() {
    let (n_items, k, users) = (100usize, 10usize, 10_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ranks = Vec::with_capacity(users);
    let mut positive = Vec::with_capacity(users);
    for _ in 0..users {
        let scores: Vec<f32> = (0..n_items).map(|_| rng.gen()).collect();
        let truth = rng.gen_range(0..n_items);
        ranks.push(target_rank(&scores, truth, &[]));
        positive.push(rng.gen_bool(0.5));
    }
    let r = EvalReport::from_ranks(&ranks, &positive, k).unwrap();
    let p = k as f64 / n_items as f64;
    for (hr, n) in [(r.hr_p, r.n_users_p), (r.hr_n, r.n_users_n)] {
        let half_width = 2.576 * (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (hr - p).abs() < half_width,
            "HR {hr} outside {p} ± {half_width}"
        );
    }
}
