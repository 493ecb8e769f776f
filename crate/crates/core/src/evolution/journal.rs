//! Newline-delimited JSON journal of candidate evaluations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Outcome of one training attempt or of a candidate as a whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Status {
    Ok,
    /// Succeeded after this many extra attempts.
    Retried(u32),
    Failed,
}

impl From<Status> for String {
    fn from(s: Status) -> String {
        match s {
            Status::Ok => "OK".into(),
            Status::Retried(n) => format!("RETRIED_{n}"),
            Status::Failed => "FAILED".into(),
        }
    }
}

impl TryFrom<String> for Status {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "OK" => Ok(Status::Ok),
            "FAILED" => Ok(Status::Failed),
            other => other
                .strip_prefix("RETRIED_")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n > 0)
                .map(Status::Retried)
                .ok_or_else(|| format!("unknown status `{other}`")),
        }
    }
}

/// One training attempt of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub gen: usize,
    pub idx: usize,
    pub attempt: u32,
    pub genome: Vec<f64>,
    pub seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub metrics: Option<BTreeMap<String, Option<f64>>>,
    pub fitness: Option<f64>,
    pub ms: Option<u64>,
}

impl CandidateRecord {
    pub fn succeeded(&self) -> bool {
        self.status != Status::Failed
    }
}

/// A run-level failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub gen: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JournalLine {
    Candidate(CandidateRecord),
    Error(ErrorRecord),
}

/// Append-only journal, optionally backed by a file.
#[derive(Debug, Default)]
pub struct Journal {
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
    lines: Vec<JournalLine>,
}

impl Journal {
    /// In-memory journal.
    pub fn memory() -> Self {
        Self::default()
    }

    /// Start a fresh journal file, replacing any existing one.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        Ok(Self { path: Some(path.to_path_buf()), writer: Some(BufWriter::new(file)), lines: Vec::new() })
    }

    /// Reopen an existing journal for appending, keeping only its first
    /// `keep` lines (a partially written generation is dropped).
    pub fn reopen(path: &Path, keep: usize) -> Result<Self> {
        let mut lines = read_journal(path)?;
        lines.truncate(keep);
        let mut journal = Self::create(path)?;
        journal.append(&lines)?;
        Ok(journal)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn lines(&self) -> &[JournalLine] {
        &self.lines
    }

    pub fn records(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.lines.iter().filter_map(|l| match l {
            JournalLine::Candidate(c) => Some(c),
            JournalLine::Error(_) => None,
        })
    }

    /// Append lines and flush them to disk.
    pub fn append(&mut self, lines: &[JournalLine]) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            for line in lines {
                serde_json::to_writer(&mut *w, line)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        self.lines.extend_from_slice(lines);
        Ok(())
    }
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalLine>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(l) => out.push(l),
            // a torn final line from an interrupted write
            Err(_) => break,
        }
    }
    Ok(out)
}

/// Best successful record in a journal.
pub fn best_record<'a>(records: impl IntoIterator<Item = &'a CandidateRecord>) -> Option<&'a CandidateRecord> {
    records
        .into_iter()
        .filter(|r| r.succeeded())
        .filter(|r| r.fitness.is_some_and(f64::is_finite))
        .fold(None, |best: Option<&CandidateRecord>, r| match best {
            Some(b) if b.fitness >= r.fitness => Some(b),
            _ => Some(r),
        })
}
