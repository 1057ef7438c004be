//! Line-delimited serialization for trajectories and stage-2 replay logs.
//! Each line is one JSON object; replay files start with a header line that
//! tags the payload kind and carries the episode frame (budget, horizon).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Transition;

/// One serialized trajectory line: `(t, s, a, r, cost, s', done)` plus the
/// collection-round tag when the record belongs to a tagged dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordLine {
    pub t: u32,
    pub s: [f64; 3],
    pub a: f64,
    pub r: f64,
    pub cost: f64,
    pub s2: [f64; 3],
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl RecordLine {
    pub fn from_transition(tr: &Transition, tag: Option<&str>) -> Self {
        RecordLine {
            t: tr.t,
            s: tr.state.features(),
            a: tr.action,
            r: tr.reward,
            cost: tr.cost,
            s2: tr.next_state.features(),
            done: tr.done,
            tag: tag.map(str::to_string),
        }
    }
}

pub fn write_trajectory(path: &Path, transitions: &[Transition], tag: Option<&str>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for tr in transitions {
        let line = serde_json::to_string(&RecordLine::from_transition(tr, tag))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<RecordLine>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Header line for stage-2 replay log files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub kind: String,
    pub budget: f64,
    pub horizon: u32,
}

pub const STAGE2_LOG_KIND: &str = "stage2-log";

pub fn write_header_jsonl<T: Serialize>(path: &Path, header: &ReplayHeader, lines: impl Iterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", serde_json::to_string(header)?)?;
    for item in lines {
        writeln!(w, "{}", serde_json::to_string(&item)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_header_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, expect_kind: &str) -> Result<(ReplayHeader, Vec<T>)> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header: ReplayHeader = serde_json::from_str(first.trim())
        .map_err(|e| Error::Format(format!("bad header line: {e}")))?;
    if header.kind != expect_kind {
        return Err(Error::Format(format!("expected {expect_kind} file, found {}", header.kind)));
    }
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok((header, out))
}
