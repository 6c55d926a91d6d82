//! Loading project trees and audit reports.
//!
//! A project is a plain directory. Solidity sources, tests, README files and
//! anything under `docs/` are picked up; build output and vendored
//! dependencies are skipped. Reports are JSON lines, one finding per line.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::taxonomy::Severity;

/// Default chunk size in characters.
pub const DEFAULT_MAX_CHUNK_UNITS: usize = 32_000;

const SKIPPED_DIRS: &[&str] = &["lib", "node_modules", "out", "cache", "broadcast", "target"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("no Solidity sources found under {0}")]
    EmptyProject(PathBuf),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DocumentKind {
    Source,
    Readme,
    Doc,
    Test,
}

impl fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// Path relative to the project root, `/`-separated.
    pub path: String,
    pub kind: DocumentKind,
    /// Text with line endings normalized to `\n`.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectCorpus {
    pub name: String,
    pub root: PathBuf,
    /// README files first, then everything else in path order.
    pub documents: Vec<Document>,
    /// Text of README sections whose heading mentions scope.
    pub scope_notes: String,
}

impl ProjectCorpus {
    pub fn sources(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(|d| d.kind == DocumentKind::Source)
    }

    /// Builds a corpus from in-memory documents. Fails when no document is a
    /// Solidity source or when two documents share a path.
    pub fn from_documents(
        name: impl Into<String>,
        root: impl Into<PathBuf>,
        mut documents: Vec<Document>,
    ) -> Result<Self, IngestError> {
        let root = root.into();
        let mut seen = BTreeSet::new();
        for d in &documents {
            if !seen.insert(d.path.clone()) {
                return Err(IngestError::Parse {
                    path: root.join(&d.path),
                    line: 0,
                    message: "duplicate document path".into(),
                });
            }
        }
        if !documents.iter().any(|d| d.kind == DocumentKind::Source) {
            return Err(IngestError::EmptyProject(root));
        }
        documents.sort_by(|a, b| {
            (a.kind != DocumentKind::Readme, &a.path).cmp(&(b.kind != DocumentKind::Readme, &b.path))
        });
        let scope_notes = documents
            .iter()
            .filter(|d| d.kind == DocumentKind::Readme)
            .map(|d| extract_scope_notes(&d.text))
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n");
        Ok(ProjectCorpus {
            name: name.into(),
            root,
            documents,
            scope_notes,
        })
    }
}

fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

fn classify(rel: &Path) -> Option<DocumentKind> {
    let file_name = rel.file_name()?.to_str()?;
    let components: Vec<&str> = rel
        .parent()
        .map(|p| p.iter().filter_map(|c| c.to_str()).collect())
        .unwrap_or_default();
    let in_dir = |names: &[&str]| {
        components
            .iter()
            .any(|c| names.iter().any(|n| c.eq_ignore_ascii_case(n)))
    };
    if file_name.ends_with(".sol") {
        if file_name.ends_with(".t.sol") || in_dir(&["test", "tests"]) {
            return Some(DocumentKind::Test);
        }
        return Some(DocumentKind::Source);
    }
    if file_name.to_ascii_lowercase().starts_with("readme") {
        return Some(DocumentKind::Readme);
    }
    let is_text = rel
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "md" | "txt" | "rst" | "markdown"))
        .unwrap_or(false);
    if is_text && in_dir(&["docs", "doc"]) {
        return Some(DocumentKind::Doc);
    }
    None
}

/// Walks a project directory into a [`ProjectCorpus`].
pub fn load_project(path: impl AsRef<Path>) -> Result<ProjectCorpus, IngestError> {
    let root = path.as_ref();
    if !root.is_dir() {
        return Err(IngestError::NotADirectory(root.to_path_buf()));
    }
    let mut documents = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0
                || !(e.file_type().is_dir()
                    && e.file_name()
                        .to_str()
                        .map(|n| n.starts_with('.') || SKIPPED_DIRS.contains(&n))
                        .unwrap_or(true))
        });
    for entry in walker {
        let entry = entry.map_err(|e| IngestError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let Some(kind) = classify(rel) else { continue };
        let bytes = std::fs::read(entry.path()).map_err(io_err(entry.path()))?;
        let text = normalize_newlines(&String::from_utf8_lossy(&bytes));
        let path = rel
            .iter()
            .filter_map(|c| c.to_str())
            .collect::<Vec<_>>()
            .join("/");
        documents.push(Document { path, kind, text });
    }
    let name = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("project")
        .to_string();
    ProjectCorpus::from_documents(name, root, documents)
}

/// Collects README sections whose heading mentions "scope", such as
/// "Scope", "Out of scope" or "In Scope". A section runs until the next
/// heading of the same or a higher level.
pub fn extract_scope_notes(readme: &str) -> String {
    let mut sections = Vec::new();
    let mut current: Option<(usize, Vec<&str>)> = None;
    for line in readme.lines() {
        let heading = markdown_heading(line);
        if let Some((level, title)) = heading {
            if let Some((open_level, body)) = current.take() {
                if level > open_level {
                    let mut body = body;
                    body.push(line);
                    current = Some((open_level, body));
                    continue;
                }
                sections.push(body.join("\n").trim_end().to_string());
            }
            if title.to_lowercase().contains("scope") {
                current = Some((level, vec![line]));
            }
            continue;
        }
        if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((_, body)) = current {
        sections.push(body.join("\n").trim_end().to_string());
    }
    sections.join("\n\n")
}

fn markdown_heading(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start();
    let level = trimmed.bytes().take_while(|b| *b == b'#').count();
    if level == 0 || level > 6 {
        return None;
    }
    let rest = &trimmed[level..];
    if !rest.is_empty() && !rest.starts_with(' ') {
        return None;
    }
    Some((level, rest.trim()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub origin: String,
    pub index: usize,
    pub text: String,
}

/// Splits every document into chunks of at most `max_chunk_units`
/// characters. Splits land on line boundaries where possible; a single line
/// longer than the limit is cut at character boundaries. Chunks never span
/// two documents, and empty documents produce no chunks.
pub fn chunk_corpus(corpus: &ProjectCorpus, max_chunk_units: usize) -> Vec<Chunk> {
    assert!(max_chunk_units > 0, "max_chunk_units must be positive");
    corpus
        .documents
        .iter()
        .flat_map(|d| {
            chunk_text(&d.text, max_chunk_units)
                .into_iter()
                .enumerate()
                .map(|(index, text)| Chunk {
                    origin: d.path.clone(),
                    index,
                    text,
                })
        })
        .collect()
}

fn chunk_text(text: &str, max: usize) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_len = 0usize;
    for line in text.split_inclusive('\n') {
        let line_len = line.chars().count();
        if current_len + line_len <= max {
            current.push_str(line);
            current_len += line_len;
            continue;
        }
        if current_len > 0 {
            chunks.push(std::mem::take(&mut current));
            current_len = 0;
        }
        if line_len <= max {
            current.push_str(line);
            current_len = line_len;
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut pieces = chars.chunks(max).peekable();
        while let Some(piece) = pieces.next() {
            let s: String = piece.iter().collect();
            if pieces.peek().is_some() {
                chunks.push(s);
            } else {
                current_len = piece.len();
                current = s;
            }
        }
    }
    if current_len > 0 {
        chunks.push(current);
    }
    chunks
}

/// Packs chunks into prompt-sized batches of at most `max_units` characters.
/// Unlike chunking, a batch may hold pieces of several documents.
pub fn batch_chunks(chunks: &[Chunk], max_units: usize) -> Vec<Vec<&Chunk>> {
    let mut batches: Vec<Vec<&Chunk>> = Vec::new();
    let mut used = 0usize;
    for c in chunks {
        let len = c.text.chars().count();
        match batches.last_mut() {
            Some(batch) if used + len <= max_units => {
                batch.push(c);
                used += len;
            }
            _ => {
                batches.push(vec![c]);
                used = len;
            }
        }
    }
    batches
}

/// Renders a batch for inclusion in a prompt, one fenced block per chunk.
pub fn render_batch(batch: &[&Chunk]) -> String {
    batch
        .iter()
        .map(|c| format!("=== {} (part {}) ===\n{}", c.origin, c.index + 1, c.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders as much of the corpus as fits in `max_units` characters for a
/// prompt: README first, then documents in path order, split the same way
/// as [`chunk_corpus`]. Chunks that do not fit are left out.
pub fn render_corpus(corpus: &ProjectCorpus, max_units: usize) -> String {
    let chunks = chunk_corpus(corpus, max_units);
    batch_chunks(&chunks, max_units)
        .first()
        .map(|b| render_batch(b))
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFinding {
    pub title: String,
    pub severity: Severity,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub project_name: String,
    pub findings: Vec<ReportFinding>,
}

#[derive(Deserialize)]
struct RawFinding {
    title: String,
    severity: String,
    body: String,
}

/// Reads a JSON-lines findings file, keeping High and Medium findings in file
/// order and dropping quality-assurance entries. Blank lines are ignored.
pub fn load_report(path: impl AsRef<Path>) -> Result<AuditReport, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let project_name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .to_string();
    parse_report(&project_name, &text).map_err(|(line, message)| IngestError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

/// In-memory counterpart of [`load_report`]. Errors carry the 1-based line.
pub fn parse_report(project_name: &str, text: &str) -> Result<AuditReport, (usize, String)> {
    let mut findings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFinding =
            serde_json::from_str(line).map_err(|e| (i + 1, format!("invalid finding record: {e}")))?;
        let severity = match raw.severity.trim().to_ascii_lowercase().as_str() {
            "high" => Some(Severity::High),
            "medium" => Some(Severity::Medium),
            "qa" => None,
            _ => {
                return Err((
                    i + 1,
                    format!(
                        "finding `{}` has unknown severity `{}`",
                        raw.title, raw.severity
                    ),
                ))
            }
        };
        if let Some(severity) = severity {
            findings.push(ReportFinding {
                title: raw.title,
                severity,
                body: raw.body,
            });
        }
    }
    Ok(AuditReport {
        project_name: project_name.to_string(),
        findings,
    })
}
