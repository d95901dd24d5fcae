//! Reading statistics and id lists; serialising sets.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{IndexSet, PreparedStats, RawEntry, RawStats};

/// Reads CSV with an `id,w` header.
pub fn read_stats_csv<R: Read>(reader: R) -> Result<RawStats> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing `{name}` column in header")))
    };
    let (id_col, w_col) = (col("id")?, col("w")?);
    let mut entries = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let id = record.get(id_col).unwrap_or_default().to_string();
        let raw = record.get(w_col).unwrap_or_default();
        let w = raw
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("row {}: `{raw}` is not a number", line + 2)))?;
        entries.push(RawEntry { id, w });
    }
    RawStats::new(entries)
}

/// Reads a JSON array of `{id, w}` objects. Numeric ids are accepted.
pub fn read_stats_json(text: &str) -> Result<RawStats> {
    #[derive(Deserialize)]
    struct Entry {
        id: serde_json::Value,
        w: f64,
    }
    let parsed: Vec<Entry> = serde_json::from_str(text)?;
    let entries = parsed
        .into_iter()
        .map(|e| RawEntry {
            id: json_label(&e.id),
            w: e.w,
        })
        .collect();
    RawStats::new(entries)
}

/// Dispatches on extension: `.json` is JSON, anything else CSV.
pub fn read_stats_path(path: &Path) -> Result<RawStats> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        read_stats_json(&fs::read_to_string(path)?)
    } else {
        read_stats_csv(fs::File::open(path)?)
    }
}

/// Parses an id list: a JSON array, or ids separated by commas, whitespace
/// or newlines. `#` starts a comment line.
pub fn parse_id_list(text: &str) -> Result<Vec<String>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let values: Vec<serde_json::Value> = serde_json::from_str(trimmed)?;
        return Ok(values.iter().map(json_label).collect());
    }
    Ok(text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

/// One id list per non-empty line (batch mode).
pub fn parse_id_batches(text: &str) -> Result<Vec<Vec<String>>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_id_list)
        .collect()
}

fn json_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// A set as seen from outside: ids and positions, both in position order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetView {
    pub ids: Vec<String>,
    pub positions: Vec<usize>,
}

impl SetView {
    pub fn new(set: &IndexSet, stats: &PreparedStats) -> Self {
        Self {
            ids: set.ids(stats).into_iter().map(str::to_string).collect(),
            positions: set.members().to_vec(),
        }
    }
}
