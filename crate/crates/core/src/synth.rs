//! Synthetic interaction logs with planted like/dislike structure.
//!
//! Items are split into contiguous, near-equal clusters and every user has one
//! preferred cluster. A user's history is a sticky walk over clusters: with
//! probability `stickiness` the next item comes from the current cluster,
//! otherwise the cluster is redrawn from the user's affinity distribution
//! (preferred cluster with probability `stickiness`, the rest uniform). The
//! first cluster is drawn from the same distribution, so the chain starts in
//! its stationary state and the expected in-cluster share is `stickiness` at
//! every step.
//!
//! Items are drawn uniformly without replacement. A liked item gets value 5 and
//! a disliked one value 1, so a threshold of 3 recovers the draw exactly.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{io_err, DataError, InteractionLog, RawInteraction, Result};

pub const LIKE_VALUE: f64 = 5.0;
pub const DISLIKE_VALUE: f64 = 1.0;
pub const SYNTH_THRESHOLD: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub interactions_per_user: usize,
    pub like_prob_in_cluster: f64,
    pub like_prob_off_cluster: f64,
    pub stickiness: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 500,
            n_clusters: 10,
            interactions_per_user: 40,
            like_prob_in_cluster: 0.9,
            like_prob_off_cluster: 0.1,
            stickiness: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DataError::Invalid(msg));
        if self.n_users == 0 || self.n_clusters == 0 {
            return bad("need at least one user and one cluster".into());
        }
        if self.n_clusters > self.n_items {
            return bad(format!(
                "{} clusters cannot partition {} items",
                self.n_clusters, self.n_items
            ));
        }
        if self.interactions_per_user > self.n_items {
            return bad(format!(
                "{} interactions per user exceed the {} distinct items",
                self.interactions_per_user, self.n_items
            ));
        }
        for (name, p) in [
            ("like_prob_in_cluster", self.like_prob_in_cluster),
            ("like_prob_off_cluster", self.like_prob_off_cluster),
            ("stickiness", self.stickiness),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        Ok(())
    }

    /// Expected share of a user's interactions that fall in the preferred cluster.
    pub fn stationary_in_cluster(&self) -> f64 {
        if self.n_clusters == 1 {
            1.0
        } else {
            self.stickiness
        }
    }

    /// Expected share of disliked interactions. Items are drawn without
    /// replacement, so this holds only while a user's preferred cluster has
    /// items left; small catalogs push the realized share up.
    pub fn expected_negative_share(&self) -> f64 {
        let pi = self.stationary_in_cluster();
        pi * (1.0 - self.like_prob_in_cluster) + (1.0 - pi) * (1.0 - self.like_prob_off_cluster)
    }
}

/// A generated log plus the hidden cluster assignment behind it.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub log: InteractionLog,
    /// Preferred cluster of user `u{i}`.
    pub user_cluster: Vec<usize>,
    /// Cluster of item `i{j}`.
    pub item_cluster: Vec<usize>,
}

/// Cluster of item `j` when `n_items` items are split into `n_clusters` blocks.
pub fn item_cluster(j: usize, n_items: usize, n_clusters: usize) -> usize {
    j * n_clusters / n_items
}

struct UserDraw {
    cluster: usize,
    rows: Vec<RawInteraction>,
}

fn generate_user(cfg: &SynthConfig, u: usize, members: &[Vec<usize>]) -> UserDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u as u64);
    let c = cfg.n_clusters;
    let preferred = rng.gen_range(0..c);
    let affinity = |rng: &mut ChaCha8Rng| {
        if c == 1 || rng.gen::<f64>() < cfg.stickiness {
            preferred
        } else {
            // uniform over the other c - 1 clusters
            let o = rng.gen_range(0..c - 1);
            o + usize::from(o >= preferred)
        }
    };
    let mut remaining: Vec<Vec<usize>> = members.to_vec();
    let mut cluster = affinity(&mut rng);
    let mut ts: i64 = rng.gen_range(0..100);
    let mut rows = Vec::with_capacity(cfg.interactions_per_user);
    for step in 0..cfg.interactions_per_user {
        if step > 0 {
            ts += rng.gen_range(1..=20);
            if rng.gen::<f64>() >= cfg.stickiness {
                cluster = affinity(&mut rng);
            }
        }
        if remaining[cluster].is_empty() {
            let open: Vec<usize> = (0..c).filter(|&k| !remaining[k].is_empty()).collect();
            cluster = open[rng.gen_range(0..open.len())];
        }
        let pool = &mut remaining[cluster];
        let item = pool.swap_remove(rng.gen_range(0..pool.len()));
        let p_like = if cluster == preferred {
            cfg.like_prob_in_cluster
        } else {
            cfg.like_prob_off_cluster
        };
        let value = if rng.gen::<f64>() < p_like {
            LIKE_VALUE
        } else {
            DISLIKE_VALUE
        };
        rows.push(RawInteraction {
            user: format!("u{u}"),
            item: format!("i{item}"),
            value,
            timestamp: ts,
        });
    }
    UserDraw {
        cluster: preferred,
        rows,
    }
}

/// Draws a log; identical configs give identical logs regardless of thread count.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let item_cluster: Vec<usize> = (0..cfg.n_items)
        .map(|j| item_cluster(j, cfg.n_items, cfg.n_clusters))
        .collect();
    let mut members = vec![Vec::new(); cfg.n_clusters];
    for (j, &k) in item_cluster.iter().enumerate() {
        members[k].push(j);
    }
    let users: Vec<UserDraw> = (0..cfg.n_users)
        .into_par_iter()
        .map(|u| generate_user(cfg, u, &members))
        .collect();
    let user_cluster = users.iter().map(|d| d.cluster).collect();
    let log = InteractionLog::from_raw(users.into_iter().flat_map(|d| d.rows));
    Ok(SynthData {
        log,
        user_cluster,
        item_cluster,
    })
}

/// Writes `kind<TAB>id<TAB>cluster` for every user and item.
pub fn write_clusters(path: &Path, data: &SynthData) -> Result<()> {
    let mut out = String::from("kind\tid\tcluster\n");
    for (u, c) in data.user_cluster.iter().enumerate() {
        out.push_str(&format!("user\tu{u}\t{c}\n"));
    }
    for (j, c) in data.item_cluster.iter().enumerate() {
        out.push_str(&format!("item\ti{j}\t{c}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}
