use pnfrec::data::kcore_filter;
use pnfrec::synth::{generate, SynthConfig, SynthData, LIKE_VALUE};

/// Per-user share of interactions drawn from the user's preferred cluster.
fn in_cluster_shares(data: &SynthData) -> Vec<f64> {
    data.log
        .by_user()
        .iter()
        .map(|rows| {
            let u: usize = data.log.users().external(rows[0].user)[1..]
                .parse()
                .unwrap();
            let hits = rows
                .iter()
                .filter(|r| {
                    let j: usize = data.log.items().external(r.item)[1..].parse().unwrap();
                    data.item_cluster[j] == data.user_cluster[u]
                })
                .count();
            hits as f64 / rows.len() as f64
        })
        .collect()
}

/// Variance of the time-average of a stationary two-state chain with
/// stationary probability `pi` and second eigenvalue `lambda` over `t` steps.
fn two_state_mean_variance(pi: f64, lambda: f64, t: usize) -> f64 {
    let t = t as f64;
    let sum_corr = (1.0 + lambda) / (1.0 - lambda)
        - 2.0 * lambda * (1.0 - lambda.powf(t)) / (t * (1.0 - lambda).powi(2));
    pi * (1.0 - pi) / t * sum_corr
}

#[test]
fn in_cluster_share_matches_the_lumped_chain() {
    let cfg = SynthConfig::default();
    let data = generate(&cfg).unwrap();
    let shares = in_cluster_shares(&data);
    // Lumped to {preferred, other}: leave with (1-s)^2, return with (1-s)s,
    // so pi = s and lambda = 1 - (1-s) = s.
    let s = cfg.stickiness;
    let var = two_state_mean_variance(s, s, cfg.interactions_per_user);
    let n = shares.len() as f64;
    let mean = shares.iter().sum::<f64>() / n;
    let sigma = (var / n).sqrt();
    assert!(
        (mean - s).abs() < 3.0 * sigma,
        "mean {mean} vs {s} ± 3·{sigma}"
    );
    let sample_var = shares.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(
        (sample_var / var - 1.0).abs() < 0.2,
        "variance {sample_var} vs {var}"
    );
}

#[test]
fn default_negative_share_is_about_26_percent() {
    let data = generate(&SynthConfig::default()).unwrap();
    let neg = data
        .log
        .records()
        .iter()
        .filter(|r| r.value != LIKE_VALUE)
        .count();
    let share = neg as f64 / data.log.len() as f64;
    assert!((share - 0.26).abs() < 0.02, "{share}");
}

#[test]
fn defaults_survive_five_core() {
    let cfg = SynthConfig::default();
    let data = generate(&cfg).unwrap();
    let kept = kcore_filter(&data.log, 5).unwrap();
    assert!(kept.num_users() as f64 > 0.95 * cfg.n_users as f64);
}

#[test]
fn equal_like_probabilities_decouple_polarity_from_clusters() {
    let cfg = SynthConfig {
        like_prob_in_cluster: 0.7,
        like_prob_off_cluster: 0.7,
        seed: 4,
        ..SynthConfig::default()
    };
    let data = generate(&cfg).unwrap();
    let mut liked = [0usize; 2];
    let mut total = [0usize; 2];
    for r in data.log.records() {
        let u: usize = data.log.users().external(r.user)[1..].parse().unwrap();
        let j: usize = data.log.items().external(r.item)[1..].parse().unwrap();
        let g = usize::from(data.item_cluster[j] != data.user_cluster[u]);
        total[g] += 1;
        liked[g] += usize::from(r.value == LIKE_VALUE);
    }
    let p = [0, 1].map(|g| liked[g] as f64 / total[g] as f64);
    let se = (0.21 / total[0] as f64 + 0.21 / total[1] as f64).sqrt();
    assert!((p[0] - p[1]).abs() < 3.0 * se, "{p:?}");
}

#[test]
fn thread_count_does_not_change_the_log() {
    let cfg = SynthConfig {
        n_users: 300,
        seed: 8,
        ..SynthConfig::default()
    };
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| generate(&cfg).unwrap());
    let b = four.install(|| generate(&cfg).unwrap());
    assert_eq!(a.log, b.log);
    assert_eq!(a.user_cluster, b.user_cluster);
}
