//! Fuzzing harness synthesis and the compile/repair loop.
//!
//! A harness is a set of Solidity files under `test/`. Its `setUp` encodes
//! the initial state, its handlers drive the semantic, and every pre- and
//! post-vulnerability invariant becomes exactly one `require` whose message
//! is `"oracle:<invariant id>"`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::{self, ProjectCorpus};
use crate::llm::{render_prompt, slot, Bindings, Call, LlmError, LlmGateway, Role, StructuredOutput, TemplateId};
use crate::orchestrator::memory::{ExecutionFailure, MemoryEntry, WorkingMemory};
use crate::specification::AuditSpecification;

/// Compile attempts before a pair is blocked.
pub const DEFAULT_MAX_REPAIR_ATTEMPTS: u32 = 5;

/// Wall-clock limit for one `forge build`.
pub const DEFAULT_BUILD_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessFile {
    /// Relative to the project root.
    pub path: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessSource {
    pub files: Vec<HarnessFile>,
    /// The test contract `forge test --match-contract` selects.
    pub entry_contract: String,
    pub handler_names: Vec<String>,
}

impl HarnessSource {
    /// sha256 over the files in path order.
    pub fn content_hash(&self) -> String {
        let mut files: Vec<&HarnessFile> = self.files.iter().collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut h = Sha256::new();
        for f in files {
            h.update(f.path.as_bytes());
            h.update([0]);
            h.update(f.source.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "Entry contract: {}\nHandlers: {}\n",
            self.entry_contract,
            self.handler_names.join(", ")
        );
        for f in &self.files {
            out.push_str(&format!("\n// file: {}\n{}\n", f.path, f.source));
        }
        out
    }

    fn all_text(&self) -> String {
        self.files.iter().map(|f| f.source.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HarnessReply {
    pub files: Vec<HarnessFile>,
    pub entry_contract: String,
    pub handler_names: Vec<String>,
    #[serde(default)]
    pub patch_summary: Option<String>,
}

impl StructuredOutput for HarnessReply {
    const FORMAT: &'static str = r#"{
  "files": [{"path": "test/<Name>.t.sol", "source": "<complete Solidity file>"}],
  "entry_contract": "<test contract name>",
  "handler_names": ["<handler function>"],
  "patch_summary": "<one sentence, repairs only>"
}"#;

    fn validate(&self) -> Result<(), String> {
        if self.files.is_empty() {
            return Err("no files".into());
        }
        if self.entry_contract.trim().is_empty() {
            return Err("entry_contract is empty".into());
        }
        if self.files.iter().any(|f| f.source.trim().is_empty()) {
            return Err("a file has no source".into());
        }
        Ok(())
    }
}

impl HarnessReply {
    fn into_source(self) -> (HarnessSource, String) {
        (
            HarnessSource {
                files: self.files,
                entry_contract: self.entry_contract,
                handler_names: self.handler_names,
            },
            self.patch_summary.unwrap_or_default(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HarnessProblem {
    BadPath(String),
    MissingSetUp,
    MissingOracle(String),
    DuplicateOracle { id: String, count: usize },
    ForeignOracle(String),
    NoHandlers,
    MissingHandler(String),
    MissingDeployment(String),
    UnfundedAccount(String),
    MissingEntryContract(String),
}

impl fmt::Display for HarnessProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessProblem::BadPath(p) => write!(f, "file `{p}` must be a relative path under test/"),
            HarnessProblem::MissingSetUp => write!(f, "no `setUp` function"),
            HarnessProblem::MissingOracle(id) => write!(f, "invariant {id} has no `\"oracle:{id}\"` require"),
            HarnessProblem::DuplicateOracle { id, count } => {
                write!(f, "invariant {id} is asserted {count} times; expected exactly one require")
            }
            HarnessProblem::ForeignOracle(id) => write!(f, "oracle `{id}` is not an invariant of the specification"),
            HarnessProblem::NoHandlers => write!(f, "no handlers listed"),
            HarnessProblem::MissingHandler(h) => write!(f, "handler `{h}` is not defined"),
            HarnessProblem::MissingDeployment(c) => write!(f, "setUp never deploys `{c}`"),
            HarnessProblem::UnfundedAccount(a) => write!(f, "funded account `{a}` never appears"),
            HarnessProblem::MissingEntryContract(c) => write!(f, "entry contract `{c}` is not declared"),
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn has_word(text: &str, word: &str) -> bool {
    text.match_indices(word).any(|(i, _)| {
        let before = text[..i].chars().next_back().map_or(true, |c| !is_ident_char(c));
        let after = text[i + word.len()..].chars().next().map_or(true, |c| !is_ident_char(c));
        before && after
    })
}

/// Oracle ids referenced as `"oracle:<id>"` string literals, with counts.
fn oracle_literals(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (i, _) in text.match_indices("\"oracle:") {
        let rest = &text[i + 8..];
        if let Some(end) = rest.find('"') {
            *out.entry(rest[..end].to_string()).or_insert(0) += 1;
        }
    }
    out
}

fn path_ok(path: &str) -> bool {
    let p = Path::new(path);
    path.starts_with("test/")
        && !p.is_absolute()
        && p.components().all(|c| matches!(c, std::path::Component::Normal(_)))
}

/// Structural checks that need no compiler.
pub fn structural_check(harness: &HarnessSource, spec: &AuditSpecification) -> Result<(), Vec<HarnessProblem>> {
    let mut problems = Vec::new();
    for f in &harness.files {
        if !path_ok(&f.path) {
            problems.push(HarnessProblem::BadPath(f.path.clone()));
        }
    }
    let text = harness.all_text();
    if !text.contains("function setUp(") {
        problems.push(HarnessProblem::MissingSetUp);
    }
    let found = oracle_literals(&text);
    let expected: BTreeSet<&str> = spec.oracle_ids().into_iter().collect();
    for id in &expected {
        match found.get(*id) {
            None => problems.push(HarnessProblem::MissingOracle(id.to_string())),
            Some(1) => {}
            Some(&count) => problems.push(HarnessProblem::DuplicateOracle { id: id.to_string(), count }),
        }
    }
    for id in found.keys() {
        if !expected.contains(id.as_str()) {
            problems.push(HarnessProblem::ForeignOracle(id.clone()));
        }
    }
    if harness.handler_names.is_empty() {
        problems.push(HarnessProblem::NoHandlers);
    }
    for h in &harness.handler_names {
        if !text.contains(&format!("function {h}(")) {
            problems.push(HarnessProblem::MissingHandler(h.clone()));
        }
    }
    for d in &spec.initial_state.deploy {
        if !text.contains(&format!("new {}(", d.contract)) {
            problems.push(HarnessProblem::MissingDeployment(d.contract.clone()));
        }
    }
    for f in &spec.initial_state.fund {
        if !has_word(&text, &f.account) {
            problems.push(HarnessProblem::UnfundedAccount(f.account.clone()));
        }
    }
    if !text.contains(&format!("contract {}", harness.entry_contract)) || !has_word(&text, &harness.entry_contract) {
        problems.push(HarnessProblem::MissingEntryContract(harness.entry_contract.clone()));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

fn join(problems: &[HarnessProblem]) -> String {
    problems.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("specification {0} has an empty initial state")]
    EmptyInitialState(String),
    #[error("harness failed structural checks:\n{}", join(.0))]
    Structural(Vec<HarnessProblem>),
    #[error("harness still fails to compile after {attempts} attempts")]
    Blocked { attempts: u32 },
    #[error("toolchain error: {0}")]
    Toolchain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn is_budget(&self) -> bool {
        matches!(self, HarnessError::Llm(e) if e.is_budget())
    }
}

/// Drafts a harness for `spec`. A draft that fails the structural checks
/// gets one guided retry.
pub fn synthesize_harness(
    llm: &LlmGateway,
    spec: &AuditSpecification,
    corpus: &ProjectCorpus,
    max_source_units: usize,
) -> Result<HarnessSource, HarnessError> {
    if spec.initial_state.is_empty() {
        return Err(HarnessError::EmptyInitialState(spec.pair_id.clone()));
    }
    let bindings: Bindings = [
        (slot::SPECIFICATION, spec.render()),
        (slot::INPUTS, ingest::render_corpus(corpus, max_source_units)),
    ]
    .into_iter()
    .collect();
    let base = render_prompt(TemplateId::HarnessSynthesis, &bindings)?;
    let purpose = format!("audit:{}:harness-v{}", spec.pair_id, spec.version);
    let mut prompt = base.clone();
    for attempt in 0..2 {
        let reply = llm.complete::<HarnessReply>(Call::new(
            Role::Synthesis,
            TemplateId::HarnessSynthesis,
            prompt.clone(),
            purpose.clone(),
        ))?;
        let (source, _) = reply.parsed.into_source();
        match structural_check(&source, spec) {
            Ok(()) => return Ok(source),
            Err(problems) if attempt == 0 => {
                prompt = format!(
                    "{base}\n## Structural Problems\nThe previous harness was rejected:\n{}\nFix every problem and reply again.\n",
                    join(&problems)
                );
            }
            Err(problems) => return Err(HarnessError::Structural(problems)),
        }
    }
    unreachable!("loop returns on the second attempt")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildResult {
    pub success: bool,
    pub diagnostics: String,
}

impl BuildResult {
    pub fn ok() -> Self {
        BuildResult {
            success: true,
            diagnostics: String::new(),
        }
    }

    pub fn failed(diagnostics: impl Into<String>) -> Self {
        BuildResult {
            success: false,
            diagnostics: diagnostics.into(),
        }
    }
}

pub trait Toolchain: Send + Sync {
    fn build(&self, workspace: &Path) -> Result<BuildResult, HarnessError>;
}

pub struct ForgeToolchain {
    pub forge: String,
    pub timeout: Duration,
}

impl Default for ForgeToolchain {
    fn default() -> Self {
        ForgeToolchain {
            forge: "forge".into(),
            timeout: DEFAULT_BUILD_TIMEOUT,
        }
    }
}

impl Toolchain for ForgeToolchain {
    fn build(&self, workspace: &Path) -> Result<BuildResult, HarnessError> {
        let mut cmd = Command::new(&self.forge);
        cmd.arg("build");
        let out = crate::fuzz::forge::run_with_timeout(cmd, workspace, self.timeout)
            .map_err(|e| HarnessError::Toolchain(format!("cannot run {}: {e}", self.forge)))?;
        if out.timed_out {
            return Ok(BuildResult::failed(format!("forge build timed out after {:?}", self.timeout)));
        }
        let success = out.status.map(|s| s.success()).unwrap_or(false);
        let diagnostics = if success {
            String::new()
        } else {
            format!("{}{}", out.stderr, out.stdout)
        };
        Ok(BuildResult { success, diagnostics })
    }
}

/// Scripted toolchain. Results are used in order; the last one repeats.
pub struct MockToolchain {
    script: Mutex<VecDeque<BuildResult>>,
    last: Mutex<BuildResult>,
    builds: Mutex<Vec<PathBuf>>,
}

impl MockToolchain {
    pub fn new(results: Vec<BuildResult>) -> Self {
        MockToolchain {
            script: Mutex::new(results.into()),
            last: Mutex::new(BuildResult::ok()),
            builds: Mutex::new(Vec::new()),
        }
    }

    /// A toolchain where everything compiles.
    pub fn always_ok() -> Self {
        Self::new(Vec::new())
    }

    pub fn builds(&self) -> usize {
        self.builds.lock().unwrap().len()
    }
}

impl Toolchain for MockToolchain {
    fn build(&self, workspace: &Path) -> Result<BuildResult, HarnessError> {
        self.builds.lock().unwrap().push(workspace.to_path_buf());
        let mut last = self.last.lock().unwrap();
        if let Some(next) = self.script.lock().unwrap().pop_front() {
            *last = next;
        }
        Ok(last.clone())
    }
}

/// One failed compile attempt and the repair issued in response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAttempt {
    pub attempt: u32,
    pub diagnostics: String,
    /// Empty when no repair followed.
    pub patch_summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledHarness {
    pub workspace: PathBuf,
    pub source: HarnessSource,
    pub content_hash: String,
    /// Compile attempts used, including the successful one.
    pub attempts: u32,
}

const SKIPPED_DIRS: [&str; 4] = ["out", "cache", "broadcast", ".git"];

const DEFAULT_FOUNDRY_TOML: &str = "[profile.default]\nsrc = \"src\"\ntest = \"test\"\nlibs = [\"lib\"]\n";

/// Copies the project into `dest` so harness files never touch the
/// original tree. Build outputs are skipped; a minimal `foundry.toml` is
/// written when the project has none.
pub fn prepare_workspace(project_root: &Path, dest: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dest)?;
    let walker = walkdir::WalkDir::new(project_root).into_iter().filter_entry(|e| {
        e.depth() != 1 || !SKIPPED_DIRS.iter().any(|s| e.file_name() == *s)
    });
    for entry in walker {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(project_root).expect("walk stays under root");
        if rel.as_os_str().is_empty() {
            continue;
        }
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    let toml = dest.join("foundry.toml");
    if !toml.exists() {
        std::fs::write(toml, DEFAULT_FOUNDRY_TOML)?;
    }
    Ok(())
}

fn write_files(workspace: &Path, harness: &HarnessSource, previous: &[String]) -> std::io::Result<Vec<String>> {
    for old in previous {
        let _ = std::fs::remove_file(workspace.join(old));
    }
    let mut written = Vec::new();
    for f in &harness.files {
        if !path_ok(&f.path) {
            continue;
        }
        let path = workspace.join(&f.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, &f.source)?;
        written.push(f.path.clone());
    }
    Ok(written)
}

/// Settings for [`compile_and_repair`].
pub struct RepairLoop<'a> {
    pub llm: &'a LlmGateway,
    pub toolchain: &'a dyn Toolchain,
    pub spec: &'a AuditSpecification,
    /// A prepared overlay workspace.
    pub workspace: &'a Path,
    pub max_attempts: u32,
}

/// Writes the harness, compiles it and feeds diagnostics back for repair
/// until it builds or `max_attempts` compile attempts have failed. Each
/// failed attempt is appended to `memory` as an execution failure.
pub fn compile_and_repair(
    cfg: &RepairLoop<'_>,
    harness: HarnessSource,
    memory: &mut WorkingMemory,
) -> Result<CompiledHarness, HarnessError> {
    let pair = cfg.spec.pair_id.as_str();
    let mut current = harness;
    let mut written: Vec<String> = Vec::new();
    for attempt in 1..=cfg.max_attempts {
        written = write_files(cfg.workspace, &current, &written)?;
        let result = match structural_check(&current, cfg.spec) {
            Err(problems) => BuildResult::failed(format!("structural problems:\n{}", join(&problems))),
            Ok(()) => cfg.toolchain.build(cfg.workspace)?,
        };
        if result.success {
            return Ok(CompiledHarness {
                workspace: cfg.workspace.to_path_buf(),
                content_hash: current.content_hash(),
                source: current,
                attempts: attempt,
            });
        }
        tracing::debug!(pair, attempt, "harness does not compile");
        let mut record = RepairAttempt {
            attempt,
            diagnostics: result.diagnostics.clone(),
            patch_summary: String::new(),
        };
        let repaired = if attempt < cfg.max_attempts {
            let bindings: Bindings = [
                (slot::SPECIFICATION, cfg.spec.render()),
                (slot::HARNESS, current.render()),
                (slot::DIAGNOSTICS, result.diagnostics),
            ]
            .into_iter()
            .collect();
            let prompt = render_prompt(TemplateId::HarnessRepair, &bindings)?;
            let reply = cfg.llm.complete::<HarnessReply>(Call::new(
                Role::Synthesis,
                TemplateId::HarnessRepair,
                prompt,
                format!("audit:{pair}:repair-{attempt}"),
            ));
            match reply {
                Ok(r) => {
                    let (source, summary) = r.parsed.into_source();
                    record.patch_summary = summary;
                    Some(source)
                }
                Err(e) => {
                    memory.append(MemoryEntry::ExecutionFailure {
                        pair: pair.to_string(),
                        failure: ExecutionFailure::Repair(record),
                    });
                    return Err(e.into());
                }
            }
        } else {
            None
        };
        memory.append(MemoryEntry::ExecutionFailure {
            pair: pair.to_string(),
            failure: ExecutionFailure::Repair(record),
        });
        if let Some(next) = repaired {
            current = next;
        }
    }
    Err(HarnessError::Blocked {
        attempts: cfg.max_attempts,
    })
}

#[cfg(test)]
mod tests;
