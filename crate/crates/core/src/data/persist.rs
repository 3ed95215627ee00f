//! On-disk layout of a prepared split.
//!
//! ```text
//! <dir>/train.tsv     user_id  item_id  value  timestamp
//! <dir>/val.tsv       user_id  item_id  value  timestamp  role   (role: input | target)
//! <dir>/test.tsv      same as val.tsv
//! <dir>/metadata.txt  key=value lines
//! <dir>/users.txt     external user IDs, one per line, in internal-index order
//! <dir>/items.txt     external item IDs, one per line, in internal-index order
//! ```
//!
//! The two ID lists pin the internal indexing so a reloaded split is identical
//! to the one that was written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::split::{EvalCase, LabeledLog, SplitBundle};
use super::{
    column_index, format_value, io_err, parse_field, read_delimited, DataError, Delimiter, IdMap,
    Interaction, InteractionLog, Result, REQUIRED_COLUMNS,
};

pub const TRAIN_FILE: &str = "train.tsv";
pub const VAL_FILE: &str = "val.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const METADATA_FILE: &str = "metadata.txt";
pub const USERS_FILE: &str = "users.txt";
pub const ITEMS_FILE: &str = "items.txt";

/// Contents of `metadata.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMetadata {
    pub boundary_timestamp: i64,
    pub threshold: f64,
    pub max_len: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl SplitMetadata {
    pub fn for_bundle(bundle: &SplitBundle, max_len: usize) -> Self {
        Self {
            boundary_timestamp: bundle.boundary_timestamp,
            threshold: bundle.train.threshold,
            max_len,
            num_users: bundle.num_users(),
            num_items: bundle.num_items(),
            seed: bundle.seed,
            train_fraction: bundle.train_fraction,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "boundary_timestamp={}\nthreshold={}\nl={}\nU={}\nN={}\nseed={}\ntrain_fraction={}\n",
            self.boundary_timestamp,
            format_value(self.threshold),
            self.max_len,
            self.num_users,
            self.num_items,
            self.seed,
            format_value(self.train_fraction),
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| DataError::Parse {
                    line: 0,
                    msg: format!("metadata missing key {k:?}"),
                })
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| DataError::Parse {
                line: 0,
                msg: format!("metadata key {k:?} is not a number"),
            })
        };
        let int = |k: &str| -> Result<i64> {
            get(k)?.parse().map_err(|_| DataError::Parse {
                line: 0,
                msg: format!("metadata key {k:?} is not an integer"),
            })
        };
        Ok(Self {
            boundary_timestamp: int("boundary_timestamp")?,
            threshold: num("threshold")?,
            max_len: int("l")? as usize,
            num_users: int("U")? as usize,
            num_items: int("N")? as usize,
            seed: int("seed")? as u64,
            train_fraction: num("train_fraction")?,
        })
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DataError::Parse {
            line: n as u64 + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn push_row(out: &mut String, log: &InteractionLog, r: &Interaction, role: Option<&str>) {
    let _ = write!(
        out,
        "{}\t{}\t{}\t{}",
        log.users().external(r.user),
        log.items().external(r.item),
        format_value(r.value),
        r.timestamp
    );
    if let Some(role) = role {
        let _ = write!(out, "\t{role}");
    }
    out.push('\n');
}

fn render_cases(log: &InteractionLog, cases: &[EvalCase]) -> String {
    let mut out = format!("{}\trole\n", REQUIRED_COLUMNS.join("\t"));
    for c in cases {
        for r in &c.history {
            push_row(&mut out, log, r, Some("input"));
        }
        push_row(&mut out, log, &c.target, Some("target"));
    }
    out
}

fn check_id(id: &str, what: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(DataError::Invalid(format!(
            "{what} id {id:?} cannot be written to a tab-separated file"
        )));
    }
    Ok(())
}

/// Persists a split; output bytes depend only on the bundle and `max_len`.
pub fn write_split(dir: &Path, bundle: &SplitBundle, max_len: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let log = &bundle.train.log;
    for id in log.users().externals() {
        check_id(id, "user")?;
    }
    for id in log.items().externals() {
        check_id(id, "item")?;
    }
    let mut train = format!("{}\n", REQUIRED_COLUMNS.join("\t"));
    for r in log.records() {
        push_row(&mut train, log, r, None);
    }
    write_text(&dir.join(TRAIN_FILE), &train)?;
    write_text(&dir.join(VAL_FILE), &render_cases(log, &bundle.val))?;
    write_text(&dir.join(TEST_FILE), &render_cases(log, &bundle.test))?;
    write_text(
        &dir.join(METADATA_FILE),
        &SplitMetadata::for_bundle(bundle, max_len).render(),
    )?;
    let lines = |ids: &[String]| ids.iter().map(|s| format!("{s}\n")).collect::<String>();
    write_text(&dir.join(USERS_FILE), &lines(log.users().externals()))?;
    write_text(&dir.join(ITEMS_FILE), &lines(log.items().externals()))?;
    Ok(())
}

fn read_ids(path: &Path) -> Result<IdMap> {
    let ids = read_text(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    IdMap::from_external(ids)
}

struct FileRow {
    record: Interaction,
    role: Option<String>,
    line: u64,
}

fn read_rows(path: &Path, users: &IdMap, items: &IdMap, with_role: bool) -> Result<Vec<FileRow>> {
    let table = read_delimited(&read_text(path)?, Delimiter::Tab)?;
    let idx: Vec<usize> = REQUIRED_COLUMNS
        .iter()
        .map(|c| column_index(&table.columns, c))
        .collect::<Result<_>>()?;
    let role_col = if with_role {
        Some(column_index(&table.columns, "role")?)
    } else {
        None
    };
    let lookup = |map: &IdMap, rec: &csv::StringRecord, col: usize, line: u64, what: &str| {
        let raw = rec.get(col).unwrap_or("");
        map.get(raw).ok_or_else(|| DataError::Parse {
            line,
            msg: format!("unknown {what} {raw:?}"),
        })
    };
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            Ok(FileRow {
                record: Interaction {
                    user: lookup(users, rec, idx[0], *line, "user")?,
                    item: lookup(items, rec, idx[1], *line, "item")?,
                    value: parse_field(rec, idx[2], *line, "value")?,
                    timestamp: parse_field(rec, idx[3], *line, "timestamp")?,
                },
                role: role_col.map(|c| rec.get(c).unwrap_or("").to_string()),
                line: *line,
            })
        })
        .collect()
}

fn read_cases(path: &Path, users: &IdMap, items: &IdMap, threshold: f64) -> Result<Vec<EvalCase>> {
    let rows = read_rows(path, users, items, true)?;
    let mut cases = Vec::new();
    let mut history: Vec<Interaction> = Vec::new();
    for row in rows {
        if let Some(prev) = history.last() {
            if prev.user != row.record.user {
                return Err(DataError::Parse {
                    line: row.line,
                    msg: "input rows of a user must end with its target row".into(),
                });
            }
        }
        match row.role.as_deref() {
            Some("input") => history.push(row.record),
            Some("target") => {
                let history = std::mem::take(&mut history);
                cases.push(EvalCase {
                    user: row.record.user,
                    history_positive: history.iter().map(|r| r.value >= threshold).collect(),
                    history,
                    target: row.record,
                    target_positive: row.record.value >= threshold,
                });
            }
            other => {
                return Err(DataError::Parse {
                    line: row.line,
                    msg: format!("unknown role {other:?}"),
                })
            }
        }
    }
    if !history.is_empty() {
        return Err(DataError::Parse {
            line: 0,
            msg: format!("{} has input rows without a target", path.display()),
        });
    }
    Ok(cases)
}

/// Loads a split written by [`write_split`].
pub fn read_split(dir: &Path) -> Result<(SplitBundle, SplitMetadata)> {
    let meta = SplitMetadata::parse(&read_text(&dir.join(METADATA_FILE))?)?;
    let users = read_ids(&dir.join(USERS_FILE))?;
    let items = read_ids(&dir.join(ITEMS_FILE))?;
    if users.len() != meta.num_users || items.len() != meta.num_items {
        return Err(DataError::Invalid(format!(
            "id lists ({} users, {} items) disagree with metadata ({}, {})",
            users.len(),
            items.len(),
            meta.num_users,
            meta.num_items
        )));
    }
    let train_rows = read_rows(&dir.join(TRAIN_FILE), &users, &items, false)?;
    let records: Vec<Interaction> = train_rows.into_iter().map(|r| r.record).collect();
    let val = read_cases(&dir.join(VAL_FILE), &users, &items, meta.threshold)?;
    let test = read_cases(&dir.join(TEST_FILE), &users, &items, meta.threshold)?;
    let log = InteractionLog::from_parts(records, users, items);
    let positive = log
        .records()
        .iter()
        .map(|r| r.value >= meta.threshold)
        .collect();
    let bundle = SplitBundle {
        train: LabeledLog {
            log,
            positive,
            threshold: meta.threshold,
        },
        val,
        test,
        boundary_timestamp: meta.boundary_timestamp,
        train_fraction: meta.train_fraction,
        seed: meta.seed,
    };
    Ok((bundle, meta))
}
