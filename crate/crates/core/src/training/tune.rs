use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::{train, Result, TrainConfig, TrainError, TrainOutcome};
use crate::data::SplitBundle;
use crate::losses::LossWeights;
use crate::model::ModelVariant;

/// Candidate coefficients for the two tuning phases.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneGrid {
    pub alpha_values: Vec<f64>,
    pub beta_values: Vec<f64>,
}

fn normalize(values: &[f64], name: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(TrainError::Config(format!("{name} grid is empty")));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(TrainError::Config(format!(
            "{name} value {v} outside [0, 1]"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

impl TuneGrid {
    /// Sorted, de-duplicated grid; values must lie in `[0, 1]`.
    pub fn new(alpha_values: &[f64], beta_values: &[f64]) -> Result<Self> {
        Ok(Self {
            alpha_values: normalize(alpha_values, "alpha")?,
            beta_values: normalize(beta_values, "beta")?,
        })
    }

    /// `{0, 0.05, …, 1}` for both coefficients.
    pub fn full() -> Self {
        let steps: Vec<f64> = (0..=20).map(|i| f64::from(i) / 20.0).collect();
        Self {
            alpha_values: steps.clone(),
            beta_values: steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// 1 for the α sweep, 2 for the β sweep.
    pub phase: u8,
    pub alpha: f64,
    pub beta: f64,
    pub val_ndcg: f64,
    pub best_epoch: usize,
    /// Seconds since the sweep started when the row was recorded.
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub alpha: f64,
    pub beta: f64,
    pub rows: Vec<SweepRow>,
    /// Training run at the selected coefficients.
    pub best: TrainOutcome,
}

impl TuneOutcome {
    pub fn table_tsv(&self, k: usize) -> String {
        let mut out = format!("phase\talpha\tbeta\tval_NDCG_p@{k}\tbest_epoch\twall_clock_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.8}\t{}\t{:.3}",
                r.phase, r.alpha, r.beta, r.val_ndcg, r.best_epoch, r.elapsed_seconds
            );
        }
        out
    }
}

fn run_points(
    data: &SplitBundle,
    base: &TrainConfig,
    points: &[(f64, f64)],
    pool: &rayon::ThreadPool,
) -> Result<Vec<TrainOutcome>> {
    pool.install(|| {
        points
            .par_iter()
            .map(|&(alpha, beta)| {
                let cfg = TrainConfig {
                    weights: LossWeights::new(alpha, beta)?,
                    ..*base
                };
                train(data, &cfg)
            })
            .collect()
    })
}

/// First index of the maximum; grids are ascending, so ties go to the smaller value.
fn argmax(runs: &[TrainOutcome]) -> usize {
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.best_val_ndcg > runs[best].best_val_ndcg {
            best = i;
        }
    }
    best
}

/// Sweeps α with β = 0, then β at the chosen α, each by validation NDCG_p.
///
/// Every grid point trains from the same seed, so the (α*, 0) point of the
/// first phase is reused rather than retrained. `jobs` independent runs may
/// execute at once; results do not depend on it.
pub fn tune_incremental(
    data: &SplitBundle,
    base: &TrainConfig,
    grid: &TuneGrid,
    jobs: usize,
) -> Result<TuneOutcome> {
    if base.variant != ModelVariant::PnfRec {
        return Err(TrainError::Config(
            "tuning applies to the pnfrec variant".into(),
        ));
    }
    let grid = TuneGrid::new(&grid.alpha_values, &grid.beta_values)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut record = |phase: u8, alpha: f64, beta: f64, run: &TrainOutcome| {
        rows.push(SweepRow {
            phase,
            alpha,
            beta,
            val_ndcg: run.best_val_ndcg,
            best_epoch: run.best_epoch,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        });
    };

    let phase1: Vec<(f64, f64)> = grid.alpha_values.iter().map(|&a| (a, 0.0)).collect();
    let mut runs1 = run_points(data, base, &phase1, &pool)?;
    for (&(a, b), run) in phase1.iter().zip(&runs1) {
        record(1, a, b, run);
    }
    let ia = argmax(&runs1);
    let alpha = grid.alpha_values[ia];
    let reused = runs1.swap_remove(ia);

    let phase2: Vec<(f64, f64)> = grid
        .beta_values
        .iter()
        .filter(|&&b| b != 0.0)
        .map(|&b| (alpha, b))
        .collect();
    let fresh = run_points(data, base, &phase2, &pool)?;
    let mut runs2 = Vec::with_capacity(grid.beta_values.len());
    let mut fresh = fresh.into_iter();
    let mut reused = Some(reused);
    for &b in &grid.beta_values {
        let run = if b == 0.0 {
            reused.take().expect("β = 0 appears once")
        } else {
            let run = fresh.next().expect("one run per β");
            record(2, alpha, b, &run);
            run
        };
        runs2.push(run);
    }
    let ib = argmax(&runs2);
    let beta = grid.beta_values[ib];
    Ok(TuneOutcome {
        alpha,
        beta,
        rows,
        best: runs2.swap_remove(ib),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_sorted_and_checked() {
        let g = TuneGrid::new(&[0.5, 0.0, 0.5, 0.25], &[0.1]).unwrap();
        assert_eq!(g.alpha_values, vec![0.0, 0.25, 0.5]);
        assert!(TuneGrid::new(&[], &[0.0]).is_err());
        assert!(TuneGrid::new(&[1.5], &[0.0]).is_err());
        let full = TuneGrid::full();
        assert_eq!(full.alpha_values.len(), 21);
        assert_eq!(full.alpha_values[20], 1.0);
    }
}
