//! Interaction logs: ingestion, k-core filtering, feedback labeling, per-user
//! sequences, and the global-temporal + leave-one-out split.

mod persist;
mod split;

pub use persist::{
    parse_key_values, read_split, write_split, SplitMetadata, ITEMS_FILE, METADATA_FILE, TEST_FILE,
    TRAIN_FILE, USERS_FILE, VAL_FILE,
};
pub use split::{
    assign_feedback, build_sequences, temporal_split, EvalCase, LabeledLog, SplitBundle,
    UserSequence, UserSequences,
};

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("input contains no interactions")]
    EmptyInput,
    #[error("filtering removed every interaction")]
    EmptyResult,
    #[error("split error: {0}")]
    Split(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One (user, item, feedback value, time) record with dense internal IDs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub value: f64,
    pub timestamp: i64,
}

/// Bijection between external string IDs and dense internal indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_external(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(DataError::Invalid(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self {
            external: ids,
            index,
        })
    }

    /// Returns the internal index for `id`, assigning the next one on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.external.len();
        self.external.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn external(&self, i: usize) -> &str {
        &self.external[i]
    }

    pub fn externals(&self) -> &[String] {
        &self.external
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }
}

/// A record as it appears in a file, before ID assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub value: f64,
    pub timestamp: i64,
}

/// Timestamped interactions sorted by (user, timestamp), ties kept in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
    users: IdMap,
    items: IdMap,
}

impl InteractionLog {
    /// Assigns dense IDs in first-appearance order and stably sorts the records.
    pub fn from_raw<I: IntoIterator<Item = RawInteraction>>(rows: I) -> Self {
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let records = rows
            .into_iter()
            .map(|r| Interaction {
                user: users.intern(&r.user),
                item: items.intern(&r.item),
                value: r.value,
                timestamp: r.timestamp,
            })
            .collect();
        Self::from_parts(records, users, items)
    }

    /// Builds a log over existing ID maps; records are stably re-sorted.
    pub fn from_parts(mut records: Vec<Interaction>, users: IdMap, items: IdMap) -> Self {
        records.sort_by_key(|r| (r.user, r.timestamp));
        Self {
            records,
            users,
            items,
        }
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of each user as contiguous slices, indexed by user.
    pub fn by_user(&self) -> Vec<&[Interaction]> {
        let mut out = vec![&self.records[..0]; self.num_users()];
        let mut start = 0;
        while start < self.records.len() {
            let user = self.records[start].user;
            let end = start + self.records[start..].partition_point(|r| r.user == user);
            out[user] = &self.records[start..end];
            start = end;
        }
        out
    }

    pub fn to_raw(&self) -> Vec<RawInteraction> {
        self.records
            .iter()
            .map(|r| RawInteraction {
                user: self.users.external(r.user).to_string(),
                item: self.items.external(r.item).to_string(),
                value: r.value,
                timestamp: r.timestamp,
            })
            .collect()
    }
}

/// Field delimiter of an interaction file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Delimiter {
    /// Tab if the header line contains one, comma otherwise.
    #[default]
    Auto,
    Comma,
    Tab,
}

impl Delimiter {
    fn resolve(self, header: &str) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
            Delimiter::Auto if header.contains('\t') => b'\t',
            Delimiter::Auto => b',',
        }
    }
}

pub const REQUIRED_COLUMNS: [&str; 4] = ["user_id", "item_id", "value", "timestamp"];

/// Parsed delimited rows, with named columns resolved from the header.
pub(crate) struct DelimitedRows {
    pub columns: Vec<String>,
    pub rows: Vec<(u64, csv::StringRecord)>,
}

pub(crate) fn read_delimited(text: &str, delimiter: Delimiter) -> Result<DelimitedRows> {
    let header = text.lines().next().unwrap_or("");
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter.resolve(header))
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let columns = reader
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec));
    }
    Ok(DelimitedRows { columns, rows })
}

pub(crate) fn column_index(columns: &[String], name: &str) -> Result<usize> {
    columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| DataError::Parse {
            line: 1,
            msg: format!("missing required column {name:?}"),
        })
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    col: usize,
    line: u64,
    name: &str,
) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| DataError::Parse {
        line,
        msg: format!("invalid {name} {raw:?}"),
    })
}

/// Parses `user_id, item_id, value, timestamp` rows from delimited text.
pub fn parse_interactions(text: &str, delimiter: Delimiter) -> Result<Vec<RawInteraction>> {
    let table = read_delimited(text, delimiter)?;
    let idx: Vec<usize> = REQUIRED_COLUMNS
        .iter()
        .map(|c| column_index(&table.columns, c))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let value: f64 = parse_field(rec, idx[2], *line, "value")?;
        if !value.is_finite() {
            return Err(DataError::Parse {
                line: *line,
                msg: "non-finite value".into(),
            });
        }
        out.push(RawInteraction {
            user: rec.get(idx[0]).unwrap_or("").to_string(),
            item: rec.get(idx[1]).unwrap_or("").to_string(),
            value,
            timestamp: parse_field(rec, idx[3], *line, "timestamp")?,
        });
    }
    Ok(out)
}

/// Reads an interaction file. A header row naming the four required columns is
/// mandatory; other columns are ignored.
pub fn load_interactions(path: &Path, delimiter: Delimiter) -> Result<InteractionLog> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    if text.trim().is_empty() {
        return Err(DataError::EmptyInput);
    }
    let rows = parse_interactions(&text, delimiter)?;
    if rows.is_empty() {
        return Err(DataError::EmptyInput);
    }
    Ok(InteractionLog::from_raw(rows))
}

/// Writes a log in the same delimited format [`load_interactions`] reads.
pub fn write_interactions(path: &Path, log: &InteractionLog, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
    let fail = |e: csv::Error| DataError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(REQUIRED_COLUMNS).map_err(fail)?;
    for r in log.to_raw() {
        w.write_record([
            r.user.as_str(),
            r.item.as_str(),
            &format_value(r.value),
            &r.timestamp.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(io_err(path))
}

/// Shortest round-tripping decimal form.
pub(crate) fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// nothing changes, then re-densifies IDs preserving their relative order.
pub fn kcore_filter(log: &InteractionLog, k: usize) -> Result<InteractionLog> {
    if k == 0 {
        return Err(DataError::Invalid("k must be at least 1".into()));
    }
    let mut alive = vec![true; log.len()];
    loop {
        let mut user_count = vec![0usize; log.num_users()];
        let mut item_count = vec![0usize; log.num_items()];
        for (r, _) in log.records.iter().zip(&alive).filter(|(_, &a)| a) {
            user_count[r.user] += 1;
            item_count[r.item] += 1;
        }
        let mut changed = false;
        for (r, a) in log.records.iter().zip(alive.iter_mut()) {
            if *a && (user_count[r.user] < k || item_count[r.item] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<Interaction> = log
        .records
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(r, _)| *r)
        .collect();
    if kept.is_empty() {
        return Err(DataError::EmptyResult);
    }
    let remap = |n: usize, ids: &IdMap, pick: fn(&Interaction) -> usize| {
        let mut used = vec![false; n];
        kept.iter().for_each(|r| used[pick(r)] = true);
        let mut new_index = vec![usize::MAX; n];
        let mut external = Vec::new();
        for (old, _) in used.iter().enumerate().filter(|(_, &u)| u) {
            new_index[old] = external.len();
            external.push(ids.external(old).to_string());
        }
        (
            new_index,
            IdMap::from_external(external).expect("ids stay unique"),
        )
    };
    let (user_ix, users) = remap(log.num_users(), &log.users, |r| r.user);
    let (item_ix, items) = remap(log.num_items(), &log.items, |r| r.item);
    let records = kept
        .into_iter()
        .map(|r| Interaction {
            user: user_ix[r.user],
            item: item_ix[r.item],
            ..r
        })
        .collect();
    Ok(InteractionLog::from_parts(records, users, items))
}
