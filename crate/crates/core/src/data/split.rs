use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Interaction, InteractionLog, Result};

/// A log whose records carry a positive/negative polarity.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledLog {
    pub log: InteractionLog,
    /// `positive[i]` is the polarity of `log.records()[i]`.
    pub positive: Vec<bool>,
    pub threshold: f64,
}

impl LabeledLog {
    pub fn negative_share(&self) -> f64 {
        if self.positive.is_empty() {
            return 0.0;
        }
        self.positive.iter().filter(|&&p| !p).count() as f64 / self.positive.len() as f64
    }
}

/// Labels every record: positive iff `value >= threshold`.
pub fn assign_feedback(log: &InteractionLog, threshold: f64) -> Result<LabeledLog> {
    if !threshold.is_finite() {
        return Err(DataError::Invalid(format!(
            "threshold {threshold} is not finite"
        )));
    }
    Ok(LabeledLog {
        positive: log.records().iter().map(|r| r.value >= threshold).collect(),
        log: log.clone(),
        threshold,
    })
}

/// One user's chronological history and its polarity subsequences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserSequence {
    /// Every interacted item with its polarity, oldest first.
    pub full: Vec<(usize, bool)>,
    /// Most recent `l` positive items.
    pub positive: Vec<usize>,
    /// Most recent `l` negative items.
    pub negative: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequences {
    pub max_len: usize,
    pub users: Vec<UserSequence>,
}

fn last_n<T: Clone>(v: &[T], n: usize) -> Vec<T> {
    v[v.len().saturating_sub(n)..].to_vec()
}

/// Splits each user's history into positive and negative subsequences, keeping
/// the most recent `max_len` of each.
pub fn build_sequences(log: &LabeledLog, max_len: usize) -> Result<UserSequences> {
    if max_len == 0 {
        return Err(DataError::Invalid(
            "max sequence length must be at least 1".into(),
        ));
    }
    let mut users = vec![UserSequence::default(); log.log.num_users()];
    for (r, &pos) in log.log.records().iter().zip(&log.positive) {
        users[r.user].full.push((r.item, pos));
    }
    for u in &mut users {
        let pos: Vec<usize> = u.full.iter().filter(|(_, p)| *p).map(|(i, _)| *i).collect();
        let neg: Vec<usize> = u
            .full
            .iter()
            .filter(|(_, p)| !*p)
            .map(|(i, _)| *i)
            .collect();
        u.positive = last_n(&pos, max_len);
        u.negative = last_n(&neg, max_len);
    }
    Ok(UserSequences { max_len, users })
}

/// A held-out user: the final interaction is the ground truth, everything
/// strictly before it is the model input.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub user: usize,
    pub history: Vec<Interaction>,
    pub history_positive: Vec<bool>,
    pub target: Interaction,
    pub target_positive: bool,
}

impl EvalCase {
    pub fn positive_items(&self) -> Vec<usize> {
        self.history
            .iter()
            .zip(&self.history_positive)
            .filter(|(_, &p)| p)
            .map(|(r, _)| r.item)
            .collect()
    }

    pub fn all_items(&self) -> Vec<usize> {
        self.history.iter().map(|r| r.item).collect()
    }
}

/// Training records before the global temporal boundary plus validation and
/// test users drawn from the interactions after it.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitBundle {
    pub train: LabeledLog,
    pub val: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
    pub boundary_timestamp: i64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitBundle {
    pub fn num_users(&self) -> usize {
        self.train.log.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.log.num_items()
    }
}

/// Smallest timestamp `b` such that at least `fraction` of the records have
/// timestamp `< b`. `None` when no record sits at or after such a boundary.
fn temporal_boundary(log: &InteractionLog, fraction: f64) -> Option<i64> {
    let mut ts: Vec<i64> = log.records().iter().map(|r| r.timestamp).collect();
    ts.sort_unstable();
    // tolerance keeps e.g. 0.9 * 10 from rounding up to 10
    let needed = (fraction * ts.len() as f64 - 1e-9).ceil() as usize;
    // first index i with ts[i] > ts[i-1] (a candidate boundary) and i >= needed
    (needed.max(1)..ts.len())
        .find(|&i| ts[i] > ts[i - 1])
        .map(|i| ts[i])
}

/// Global temporal boundary at `train_fraction` of the interactions, then
/// leave-one-out on every user active after it.
///
/// Post-boundary users whose input has no positive item are dropped; the rest
/// are shuffled with `seed` and dealt alternately into validation and test.
pub fn temporal_split(log: &LabeledLog, train_fraction: f64, seed: u64) -> Result<SplitBundle> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let boundary = temporal_boundary(&log.log, train_fraction)
        .ok_or_else(|| DataError::Split("no interactions after the temporal boundary".into()))?;

    let mut train_records = Vec::new();
    let mut train_positive = Vec::new();
    for (r, &p) in log.log.records().iter().zip(&log.positive) {
        if r.timestamp < boundary {
            train_records.push(*r);
            train_positive.push(p);
        }
    }

    let mut cases = Vec::new();
    let mut offset = 0;
    for records in log.log.by_user() {
        let labels = &log.positive[offset..offset + records.len()];
        offset += records.len();
        let Some(last) = records.last() else { continue };
        if last.timestamp < boundary {
            continue;
        }
        let n = records.len() - 1;
        if !labels[..n].iter().any(|&p| p) {
            continue;
        }
        cases.push(EvalCase {
            user: last.user,
            history: records[..n].to_vec(),
            history_positive: labels[..n].to_vec(),
            target: *last,
            target_positive: labels[n],
        });
    }
    if cases.is_empty() {
        return Err(DataError::Split(
            "no post-boundary user has a positive interaction in their input".into(),
        ));
    }
    cases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = Vec::with_capacity(cases.len() / 2 + 1);
    let mut test = Vec::with_capacity(cases.len() / 2 + 1);
    for (i, c) in cases.into_iter().enumerate() {
        if i % 2 == 0 {
            val.push(c);
        } else {
            test.push(c);
        }
    }
    val.sort_by_key(|c| c.user);
    test.sort_by_key(|c| c.user);

    let train = InteractionLog::from_parts(
        train_records,
        log.log.users().clone(),
        log.log.items().clone(),
    );
    Ok(SplitBundle {
        train: LabeledLog {
            log: train,
            positive: train_positive,
            threshold: log.threshold,
        },
        val,
        test,
        boundary_timestamp: boundary,
        train_fraction,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawInteraction;

    fn raw(user: &str, item: &str, value: f64, ts: i64) -> RawInteraction {
        RawInteraction {
            user: user.into(),
            item: item.into(),
            value,
            timestamp: ts,
        }
    }

    #[test]
    fn rating_threshold_four() {
        let log = InteractionLog::from_raw(
            (1..=5).map(|v| raw("u", &format!("i{v}"), v as f64, v as i64)),
        );
        let labeled = assign_feedback(&log, 4.0).unwrap();
        assert_eq!(labeled.positive, vec![false, false, false, true, true]);
        let only_five = assign_feedback(&log, 5.0).unwrap();
        assert_eq!(only_five.positive, vec![false, false, false, false, true]);
        let all = assign_feedback(&log, 0.0).unwrap();
        assert!(all.positive.iter().all(|&p| p));
        assert!(assign_feedback(&log, f64::NAN).is_err());
    }

    #[test]
    fn sequences_hand_trace() {
        // A+ B- C+ D- E+
        let vals = [5.0, 1.0, 5.0, 1.0, 5.0];
        let log = InteractionLog::from_raw(
            ["A", "B", "C", "D", "E"]
                .iter()
                .zip(vals)
                .enumerate()
                .map(|(t, (item, v))| raw("u", item, v, t as i64)),
        );
        let labeled = assign_feedback(&log, 3.0).unwrap();
        let seqs = build_sequences(&labeled, 2).unwrap();
        let names = |ix: &[usize]| -> Vec<String> {
            ix.iter()
                .map(|&i| log.items().external(i).to_string())
                .collect()
        };
        assert_eq!(names(&seqs.users[0].positive), vec!["C", "E"]);
        assert_eq!(names(&seqs.users[0].negative), vec!["B", "D"]);

        let one = build_sequences(&labeled, 1).unwrap();
        assert_eq!(names(&one.users[0].positive), vec!["E"]);
        assert_eq!(names(&one.users[0].negative), vec!["D"]);
        assert!(build_sequences(&labeled, 0).is_err());
    }

    #[test]
    fn all_positive_user_has_empty_negative_sequence() {
        let log = InteractionLog::from_raw(vec![raw("u", "a", 5.0, 1), raw("u", "b", 4.0, 2)]);
        let seqs = build_sequences(&assign_feedback(&log, 3.0).unwrap(), 10).unwrap();
        assert!(seqs.users[0].negative.is_empty());
        assert_eq!(seqs.users[0].positive.len(), 2);
    }

    #[test]
    fn boundary_hand_trace() {
        // 10 records at timestamps 1..10 over two users; u2 owns the last one
        let mut rows: Vec<RawInteraction> = (1..=5)
            .map(|t| raw("u1", &format!("i{t}"), 5.0, t))
            .collect();
        rows.extend((6..=10).map(|t| raw("u2", &format!("i{t}"), 5.0, t)));
        let labeled = assign_feedback(&InteractionLog::from_raw(rows), 3.0).unwrap();
        let split = temporal_split(&labeled, 0.9, 7).unwrap();
        assert_eq!(split.boundary_timestamp, 10);
        assert_eq!(split.train.log.len(), 9);
        let cases: Vec<&EvalCase> = split.val.iter().chain(&split.test).collect();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].target.timestamp, 10);
        assert_eq!(cases[0].history.len(), 4);
    }

    #[test]
    fn negative_ground_truth_and_dropped_users() {
        let rows = vec![
            raw("a", "x", 5.0, 1),
            raw("a", "y", 5.0, 2),
            raw("a", "z", 1.0, 20),
            raw("b", "x", 5.0, 3),
            raw("b", "y", 5.0, 4),
            raw("b", "w", 5.0, 5),
            raw("b", "v", 5.0, 6),
            raw("b", "u", 5.0, 7),
            raw("b", "t", 5.0, 8),
            // c lives entirely after the boundary with a single interaction
            raw("c", "x", 5.0, 30),
        ];
        let labeled = assign_feedback(&InteractionLog::from_raw(rows), 3.0).unwrap();
        let split = temporal_split(&labeled, 0.8, 1).unwrap();
        let cases: Vec<&EvalCase> = split.val.iter().chain(&split.test).collect();
        assert_eq!(cases.len(), 1);
        assert_eq!(labeled.log.users().external(cases[0].user), "a");
        assert!(!cases[0].target_positive);
    }

    #[test]
    fn no_post_boundary_records_is_split_error() {
        let rows = vec![raw("a", "x", 5.0, 1), raw("a", "y", 5.0, 1)];
        let labeled = assign_feedback(&InteractionLog::from_raw(rows), 3.0).unwrap();
        assert!(matches!(
            temporal_split(&labeled, 0.5, 0),
            Err(DataError::Split(_))
        ));
        assert!(temporal_split(&labeled, 1.0, 0).is_err());
    }
}
