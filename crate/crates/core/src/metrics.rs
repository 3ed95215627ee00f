//! Hit rate and NDCG at a cutoff, reported separately for users whose held-out
//! item was liked and users whose held-out item was disliked.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("cutoff k must be at least 1")]
    ZeroK,
    #[error("no users to evaluate")]
    NoUsers,
    #[error("{lists} ranked lists for {truths} ground truths")]
    Length { lists: usize, truths: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn position(ranked: &[usize], truth: usize) -> Option<usize> {
    ranked.iter().position(|&i| i == truth).map(|p| p + 1)
}

/// 1 iff `truth` is among the first `k` entries of `ranked`.
pub fn hr_at_k(ranked: &[usize], truth: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(hr_from_rank(position(ranked, truth), k))
}

/// `1 / log2(rank + 1)` for a 1-based rank within the cutoff, else 0.
pub fn ndcg_at_k(ranked: &[usize], truth: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(ndcg_from_rank(position(ranked, truth), k))
}

pub fn hr_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// 1-based rank of `truth` among the non-excluded entries of `scores`, ordered
/// by descending score with ties to the smaller index. `None` when `truth`
/// itself is excluded.
pub fn target_rank(scores: &[f32], truth: usize, excluded: &[bool]) -> Option<usize> {
    if excluded.get(truth).copied().unwrap_or(false) {
        return None;
    }
    let s = scores[truth];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| {
            !excluded.get(i).copied().unwrap_or(false) && (x > s || (x == s && i < truth))
        })
        .count();
    Some(ahead + 1)
}

/// Polarity-split metrics at one cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub hr_p: f64,
    pub hr_n: f64,
    pub ndcg_p: f64,
    pub ndcg_n: f64,
    pub delta_hr: f64,
    pub delta_ndcg: f64,
    pub n_users_p: usize,
    pub n_users_n: usize,
    /// Set when one of the two groups is empty and its metrics are zero by convention.
    pub empty_group_warning: bool,
}

impl EvalReport {
    /// Aggregates per-user ranks; `positive[u]` is the polarity of user `u`'s ground truth.
    pub fn from_ranks(ranks: &[Option<usize>], positive: &[bool], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(MetricError::ZeroK);
        }
        if ranks.len() != positive.len() {
            return Err(MetricError::Length {
                lists: ranks.len(),
                truths: positive.len(),
            });
        }
        if ranks.is_empty() {
            return Err(MetricError::NoUsers);
        }
        let mut sums = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for (&rank, &pos) in ranks.iter().zip(positive) {
            let g = usize::from(!pos);
            counts[g] += 1;
            sums[g][0] += hr_from_rank(rank, k);
            sums[g][1] += ndcg_from_rank(rank, k);
        }
        let mean = |g: usize, m: usize| {
            if counts[g] == 0 {
                0.0
            } else {
                sums[g][m] / counts[g] as f64
            }
        };
        let (hr_p, ndcg_p, hr_n, ndcg_n) = (mean(0, 0), mean(0, 1), mean(1, 0), mean(1, 1));
        Ok(Self {
            k,
            hr_p,
            hr_n,
            ndcg_p,
            ndcg_n,
            delta_hr: hr_p - hr_n,
            delta_ndcg: ndcg_p - ndcg_n,
            n_users_p: counts[0],
            n_users_n: counts[1],
            empty_group_warning: counts.contains(&0),
        })
    }

    /// Delimited `metric<TAB>value<TAB>group_size` rows, header included.
    pub fn to_tsv(&self) -> String {
        let k = self.k;
        let total = self.n_users_p + self.n_users_n;
        let rows = [
            (format!("HR_p@{k}"), self.hr_p, self.n_users_p),
            (format!("HR_n@{k}"), self.hr_n, self.n_users_n),
            (format!("NDCG_p@{k}"), self.ndcg_p, self.n_users_p),
            (format!("NDCG_n@{k}"), self.ndcg_n, self.n_users_n),
            (format!("dHR@{k}"), self.delta_hr, total),
            (format!("dNDCG@{k}"), self.delta_ndcg, total),
        ];
        let mut out = format!("{REPORT_HEADER}\n");
        for (name, value, n) in rows {
            let _ = writeln!(out, "{name}\t{value:.6}\t{n}");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let k = self.k;
        let mut out = format!(
            "k = {k}   positive users: {}   negative users: {}\n",
            self.n_users_p, self.n_users_n
        );
        let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10}", "", "pos", "neg", "delta");
        let _ = writeln!(
            out,
            "{:<10}{:>10.4}{:>10.4}{:>10.4}",
            format!("HR@{k}"),
            self.hr_p,
            self.hr_n,
            self.delta_hr
        );
        let _ = writeln!(
            out,
            "{:<10}{:>10.4}{:>10.4}{:>10.4}",
            format!("NDCG@{k}"),
            self.ndcg_p,
            self.ndcg_n,
            self.delta_ndcg
        );
        if self.empty_group_warning {
            out.push_str("warning: one polarity group is empty; its metrics are reported as 0\n");
        }
        out
    }
}

/// Metrics from explicit per-user recommendation lists.
pub fn split_eval(ranked: &[Vec<usize>], truths: &[(usize, bool)], k: usize) -> Result<EvalReport> {
    if ranked.len() != truths.len() {
        return Err(MetricError::Length {
            lists: ranked.len(),
            truths: truths.len(),
        });
    }
    let ranks: Vec<Option<usize>> = ranked
        .iter()
        .zip(truths)
        .map(|(list, &(t, _))| position(list, t))
        .collect();
    let polarity: Vec<bool> = truths.iter().map(|&(_, p)| p).collect();
    EvalReport::from_ranks(&ranks, &polarity, k)
}

/// Header line for [`EvalReport::to_tsv`] output.
pub const REPORT_HEADER: &str = "metric\tvalue\tgroup_size";
