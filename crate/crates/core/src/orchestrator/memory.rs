//! Shared append-only working memory. Entries are never edited or removed;
//! every counter is derived from the entries themselves.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::VerdictKind;
use crate::fuzz::{merge_coverage, CoverageMap};
use crate::graph::NodeId;
use crate::harness::RepairAttempt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum ExecutionFailure {
    Repair(RepairAttempt),
    RunFailed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MemoryEntry {
    CoverageRecord {
        semantic: NodeId,
        coverage: CoverageMap,
    },
    ExecutionFailure {
        pair: String,
        #[serde(flatten)]
        failure: ExecutionFailure,
    },
    ReflectionFeedback {
        pair: String,
        verdict: VerdictKind,
        reasoning: String,
    },
    SpecAttempt {
        pair: String,
        version: u32,
    },
    /// The pair was abandoned; `stage` names where.
    PairBlocked {
        pair: String,
        stage: String,
        reason: String,
    },
}

impl MemoryEntry {
    pub fn pair(&self) -> Option<&str> {
        match self {
            MemoryEntry::CoverageRecord { .. } => None,
            MemoryEntry::ExecutionFailure { pair, .. }
            | MemoryEntry::ReflectionFeedback { pair, .. }
            | MemoryEntry::SpecAttempt { pair, .. }
            | MemoryEntry::PairBlocked { pair, .. } => Some(pair),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MemoryEntry::CoverageRecord { .. } => "CoverageRecord",
            MemoryEntry::ExecutionFailure { .. } => "ExecutionFailure",
            MemoryEntry::ReflectionFeedback { .. } => "ReflectionFeedback",
            MemoryEntry::SpecAttempt { .. } => "SpecAttempt",
            MemoryEntry::PairBlocked { .. } => "PairBlocked",
        }
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    seq: usize,
    #[serde(flatten)]
    entry: &'a MemoryEntry,
}

#[derive(Debug, Default)]
pub struct WorkingMemory {
    entries: Vec<MemoryEntry>,
    log: Option<PathBuf>,
}

impl WorkingMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Memory that also writes each entry as one JSON line to `path`.
    /// An existing file is truncated.
    pub fn with_log(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        std::fs::write(&path, "")?;
        Ok(WorkingMemory {
            entries: Vec::new(),
            log: Some(path),
        })
    }

    /// Appends an entry and returns its sequence number.
    pub fn append(&mut self, entry: MemoryEntry) -> usize {
        let seq = self.entries.len();
        if let Some(path) = &self.log {
            let line = serde_json::to_string(&LogLine { seq, entry: &entry }).expect("memory entry serializes");
            let written = OpenOptions::new()
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                tracing::warn!(path = %path.display(), error = %e, "cannot write memory log");
            }
        }
        self.entries.push(entry);
        seq
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of every coverage record for `semantic`.
    pub fn coverage(&self, semantic: NodeId) -> Option<CoverageMap> {
        let mut acc: Option<CoverageMap> = None;
        for e in &self.entries {
            if let MemoryEntry::CoverageRecord { semantic: s, coverage } = e {
                if *s == semantic {
                    acc = Some(match acc {
                        None => coverage.clone(),
                        Some(prev) => merge_coverage(&prev, coverage).unwrap_or(prev),
                    });
                }
            }
        }
        acc
    }

    /// Cumulative coverage ratio for `semantic`; 0 when never fuzzed.
    pub fn coverage_ratio(&self, semantic: NodeId) -> f64 {
        self.coverage(semantic).map(|c| c.ratio()).unwrap_or(0.0)
    }

    /// Reflection feedback recorded for `pair`, oldest first, as
    /// `<verdict>: <reasoning>` lines.
    pub fn feedback(&self, pair: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                MemoryEntry::ReflectionFeedback { pair: p, verdict, reasoning } if p == pair => {
                    Some(format!("{verdict}: {reasoning}"))
                }
                _ => None,
            })
            .collect()
    }

    fn count(&self, pair: &str, kind: &str) -> usize {
        self.entries.iter().filter(|e| e.pair() == Some(pair) && e.kind_name() == kind).count()
    }

    pub fn spec_attempts(&self, pair: &str) -> usize {
        self.count(pair, "SpecAttempt")
    }

    pub fn execution_failures(&self, pair: &str) -> usize {
        self.count(pair, "ExecutionFailure")
    }

    pub fn repair_attempts(&self, pair: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, MemoryEntry::ExecutionFailure { pair: p, failure: ExecutionFailure::Repair(_) } if p == pair))
            .count()
    }

    pub fn is_blocked(&self, pair: &str) -> bool {
        self.count(pair, "PairBlocked") > 0
    }

    /// Per-pair entry counts by kind.
    pub fn counters(&self) -> BTreeMap<(String, &'static str), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            if let Some(p) = e.pair() {
                *out.entry((p.to_string(), e.kind_name())).or_insert(0) += 1;
            }
        }
        out
    }
}
