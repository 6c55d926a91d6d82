//! The audit loop: map the project onto the graph, schedule
//! semantic/pattern pairs, and for each pair generate a specification,
//! synthesize and repair a harness, fuzz it and reflect on violations.

pub mod memory;
mod report;

#[cfg(test)]
mod tests;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use memory::{ExecutionFailure, MemoryEntry, WorkingMemory};
pub use report::{AuditReportOut, CoverageLine, LedgerSummary, PairStatus, PairSummary, ReportedFinding};

use crate::builder::{BuilderConfig, CategoryBank, GraphBuilder};
use crate::fuzz::{Executor, RunConfig, Violation, DEFAULT_FUZZ_TIMEOUT};
use crate::graph::{EdgeKind, GraphError, KnowledgeGraph, NewFinding, NewNode, NodeId, NodeKind};
use crate::harness::{self, RepairLoop, Toolchain, DEFAULT_MAX_REPAIR_ATTEMPTS};
use crate::ingest::{self, ProjectCorpus, DEFAULT_MAX_CHUNK_UNITS};
use crate::llm::{render_prompt, slot, Bindings, Call, LlmError, LlmGateway, Role, StructuredOutput, TemplateId, Usd};
use crate::specification::{generate_specification, AuditSpecification, SpecRequest};
use crate::taxonomy::Severity;

/// Spec regenerations allowed per pair after the first version.
pub const DEFAULT_REGENERATION_CAP: u32 = 2;

/// General rules for the scope review, used when no rules file is given.
pub const DEFAULT_GENERAL_RULES: &str = include_str!("../../config/general_rules.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    TrueFinding,
    ExpectedBehavior,
    ProblematicSpecOrHarness,
    OutOfScope,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub reasoning: String,
    /// Set for true findings.
    pub title: Option<String>,
    /// Advisory severity for true findings.
    pub severity: Option<Severity>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticVulnPair {
    pub id: String,
    pub semantic: NodeId,
    pub pattern: NodeId,
    pub rationale: String,
}

impl SemanticVulnPair {
    pub fn new(semantic: NodeId, pattern: NodeId, rationale: impl Into<String>) -> Self {
        SemanticVulnPair {
            id: format!("{semantic}_{pattern}"),
            semantic,
            pattern,
            rationale: rationale.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub max_source_units: usize,
    pub max_repair_attempts: u32,
    pub regeneration_cap: u32,
    pub fuzz_timeout: std::time::Duration,
    pub seed: Option<u64>,
    pub general_rules: String,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            max_source_units: DEFAULT_MAX_CHUNK_UNITS,
            max_repair_attempts: DEFAULT_MAX_REPAIR_ATTEMPTS,
            regeneration_cap: DEFAULT_REGENERATION_CAP,
            fuzz_timeout: DEFAULT_FUZZ_TIMEOUT,
            seed: None,
            general_rules: DEFAULT_GENERAL_RULES.to_string(),
        }
    }
}

/// Directory layout of one audit.
#[derive(Debug, Clone)]
pub struct AuditWorkspace {
    pub root: PathBuf,
}

impl AuditWorkspace {
    pub fn create(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let ws = AuditWorkspace { root: root.into() };
        for dir in [ws.specs_dir(), ws.harnesses_dir(), ws.runs_dir()] {
            std::fs::create_dir_all(dir)?;
        }
        Ok(ws)
    }

    pub fn specs_dir(&self) -> PathBuf {
        self.root.join("specs")
    }

    pub fn harnesses_dir(&self) -> PathBuf {
        self.root.join("harnesses")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn memory_log(&self) -> PathBuf {
        self.root.join("memory.log")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }

    /// The graph after findings were ingested.
    pub fn graph_path(&self) -> PathBuf {
        self.root.join("kg.json")
    }

    pub fn spec_path(&self, pair: &str, version: u32) -> PathBuf {
        self.specs_dir().join(format!("{pair}-v{version}.json"))
    }

    pub fn harness_dir(&self, pair: &str, version: u32) -> PathBuf {
        self.harnesses_dir().join(format!("{pair}-v{version}"))
    }

    pub fn run_path(&self, pair: &str, version: u32) -> PathBuf {
        self.runs_dir().join(format!("{pair}-v{version}.json"))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)
}

/// Orders pairs by the cumulative coverage ratio of their semantic, least
/// covered first. The sort is stable, so ties keep their input order.
pub fn schedule_pairs(pairs: &[SemanticVulnPair], memory: &WorkingMemory) -> Vec<SemanticVulnPair> {
    let mut keyed: Vec<(f64, &SemanticVulnPair)> =
        pairs.iter().map(|p| (memory.coverage_ratio(p.semantic), p)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, p)| p.clone()).collect()
}

// ---- knowledge mapping ----

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct MappingReply {
    pub matches: Vec<SemanticMatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct SemanticMatch {
    pub project_semantic: String,
    pub graph_semantic: String,
    pub reasoning: String,
}

impl StructuredOutput for MappingReply {
    const FORMAT: &'static str = r#"{"matches": [{"project_semantic": "<title from the project list>", "graph_semantic": "<stored id such as sem-000001>", "reasoning": "..."}]}"#;
}

// ---- reflection ----

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ReflectionReply {
    /// Whether the trace and state changes reproduce the specified attack.
    pub matches_specification: bool,
    pub verdict: VerdictKind,
    pub reasoning: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub severity: Option<Severity>,
}

impl StructuredOutput for ReflectionReply {
    const FORMAT: &'static str = r#"{"matches_specification": true, "verdict": "TrueFinding|ExpectedBehavior|ProblematicSpecOrHarness|OutOfScope", "reasoning": "...", "title": "<confirmed findings only>", "severity": "High|Medium"}"#;

    fn validate(&self) -> Result<(), String> {
        use VerdictKind::*;
        match (self.matches_specification, self.verdict) {
            (true, TrueFinding | OutOfScope) | (false, ExpectedBehavior | ProblematicSpecOrHarness) => {}
            (m, v) => return Err(format!("verdict {v} contradicts matches_specification={m}")),
        }
        if self.verdict == TrueFinding {
            if self.title.as_deref().map_or(true, |t| t.trim().is_empty()) {
                return Err("a TrueFinding needs a title".into());
            }
            if self.severity.is_none() {
                return Err("a TrueFinding needs a severity".into());
            }
        }
        Ok(())
    }
}

/// Judges a violation against the specification and the scope rules and
/// appends the verdict to memory. An unusable reply is treated as a
/// problematic specification or harness; budget errors propagate.
pub fn reflect_finding(
    llm: &LlmGateway,
    violation: &Violation,
    spec: &AuditSpecification,
    scope_notes: &str,
    general_rules: &str,
    memory: &mut WorkingMemory,
) -> Result<Verdict, LlmError> {
    let bindings: Bindings = [
        (slot::SPECIFICATION, spec.render()),
        (slot::VIOLATION, violation.render()),
        (slot::SCOPE_NOTES, scope_notes.to_string()),
        (slot::GENERAL_RULES, general_rules.to_string()),
    ]
    .into_iter()
    .collect();
    let prompt = render_prompt(TemplateId::Reflection, &bindings)?;
    let call = Call::new(
        Role::Reasoning,
        TemplateId::Reflection,
        prompt,
        format!("audit:{}:reflect-v{}", spec.pair_id, spec.version),
    );
    let verdict = match llm.complete::<ReflectionReply>(call) {
        Ok(r) => Verdict {
            kind: r.parsed.verdict,
            reasoning: r.parsed.reasoning,
            title: r.parsed.title,
            severity: r.parsed.severity,
        },
        Err(e @ LlmError::BudgetExhausted { .. }) => return Err(e),
        Err(e) => Verdict {
            kind: VerdictKind::ProblematicSpecOrHarness,
            reasoning: format!("reflection reply unusable: {e}"),
            title: None,
            severity: None,
        },
    };
    memory.append(MemoryEntry::ReflectionFeedback {
        pair: spec.pair_id.clone(),
        verdict: verdict.kind,
        reasoning: verdict.reasoning.clone(),
    });
    Ok(verdict)
}

// ---- graph feedback ----

#[derive(Debug, thiserror::Error)]
pub enum IngestFindingError {
    #[error("only TrueFinding verdicts are ingested, got {0}")]
    NotConfirmed(VerdictKind),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingIngest {
    pub finding: NodeId,
    pub added: bool,
    pub new_edges: usize,
}

/// Adds a confirmed finding under `project` with its `Has`,
/// `ContributesTo` and `Involves` edges. Nothing is written unless every
/// step succeeds. A finding already present for the project is a no-op.
pub fn ingest_finding(
    graph: &mut KnowledgeGraph,
    finding: &ReportedFinding,
    project: NodeId,
) -> Result<FindingIngest, IngestFindingError> {
    if finding.verdict.kind != VerdictKind::TrueFinding {
        return Err(IngestFindingError::NotConfirmed(finding.verdict.kind));
    }
    let body = finding.body();
    if let Some(existing) = graph.find_project_finding(project, &finding.title, &body) {
        return Ok(FindingIngest {
            finding: existing,
            added: false,
            new_edges: 0,
        });
    }
    if graph.pattern(finding.pattern).is_none() {
        return Err(GraphError::NotFound(finding.pattern).into());
    }
    let mut staged = graph.clone();
    let before = staged.edge_count();
    let id = staged.add_finding(
        project,
        NewFinding {
            title: finding.title.clone(),
            severity: finding.severity,
            body,
        },
    )?;
    staged.add_edge(EdgeKind::ContributesTo, finding.pattern, id, Some(finding.pair.clone()))?;
    for attack in staged.attack_types_of_pattern(finding.pattern) {
        staged.add_edge(EdgeKind::Involves, id, attack, None)?;
    }
    let new_edges = staged.edge_count() - before;
    *graph = staged;
    Ok(FindingIngest {
        finding: id,
        added: true,
        new_edges,
    })
}

// ---- the loop ----

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("the audit budget must be positive")]
    ZeroBudget,
    #[error("workspace error: {0}")]
    Workspace(#[from] std::io::Error),
}

/// How processing one pair ended, or why the whole loop must stop.
enum Step {
    Done(PairStatus),
    Halt(PairStatus, String),
}

/// Everything the loop runs against.
pub struct Auditor<'a> {
    pub llm: &'a LlmGateway,
    pub bank: &'a CategoryBank,
    pub toolchain: &'a dyn Toolchain,
    pub executor: &'a dyn Executor,
    pub config: AuditConfig,
}

impl<'a> Auditor<'a> {
    fn builder(&self) -> GraphBuilder<'_> {
        GraphBuilder::new(
            self.llm,
            self.bank,
            BuilderConfig {
                max_chunk_units: self.config.max_source_units,
                ..BuilderConfig::default()
            },
        )
    }

    /// Classifies the project, extracts its semantics, matches them against
    /// the stored semantics of the same business types, and expands each
    /// match into its linked patterns. Failures yield no pairs.
    pub fn map_knowledge(&self, corpus: &ProjectCorpus, graph: &KnowledgeGraph) -> Vec<SemanticVulnPair> {
        match self.try_map(corpus, graph) {
            Ok(pairs) => pairs,
            Err(cause) => {
                tracing::warn!(project = %corpus.name, %cause, "knowledge mapping failed");
                Vec::new()
            }
        }
    }

    fn try_map(&self, corpus: &ProjectCorpus, graph: &KnowledgeGraph) -> Result<Vec<SemanticVulnPair>, String> {
        if graph.semantics().next().is_none() {
            return Ok(Vec::new());
        }
        let builder = self.builder();
        let chunks = ingest::chunk_corpus(corpus, self.config.max_source_units);
        let tag = |stage: &str| format!("audit:{}:{stage}", corpus.name);
        let classified = builder
            .classify_business_types(&chunks, &tag("classify"))
            .map_err(|e| e.to_string())?;
        let found = builder
            .extract_semantics(&chunks, &classified.types, &[], &tag("semantics"))
            .map_err(|e| e.to_string())?;
        let scoped = graph.query_semantics_by_business(&classified.types);
        if found.is_empty() || scoped.is_empty() {
            return Ok(Vec::new());
        }
        let project_list = found
            .iter()
            .map(|c| format!("- {}: {}", c.title, c.description))
            .collect::<Vec<_>>()
            .join("\n");
        let bindings: Bindings = [
            (slot::PROJECT_SEMANTICS, project_list),
            (slot::GRAPH_SEMANTICS, crate::builder::render_nodes(&scoped)),
        ]
        .into_iter()
        .collect();
        let prompt = render_prompt(TemplateId::Mapping, &bindings).map_err(|e| e.to_string())?;
        let reply = self
            .llm
            .complete::<MappingReply>(Call::new(Role::Reasoning, TemplateId::Mapping, prompt, tag("map")))
            .map_err(|e| e.to_string())?;
        let allowed: BTreeSet<NodeId> = scoped.iter().map(|n| n.id).collect();
        let mut matched: Vec<(NodeId, String)> = Vec::new();
        for m in reply.parsed.matches {
            match m.graph_semantic.parse::<NodeId>() {
                Ok(id) if allowed.contains(&id) => {
                    if !matched.iter().any(|(s, _)| *s == id) {
                        matched.push((id, m.reasoning));
                    }
                }
                _ => tracing::warn!(id = %m.graph_semantic, "ignoring match outside the scoped semantics"),
            }
        }
        let mut pairs: Vec<SemanticVulnPair> = Vec::new();
        for (sem, reasoning) in matched {
            for (pat, link) in graph.linked_patterns(sem).map_err(|e| e.to_string())? {
                if pairs.iter().any(|p| p.semantic == sem && p.pattern == pat.id) {
                    continue;
                }
                let rationale = match link {
                    Some(l) => format!("{reasoning}\n{l}"),
                    None => reasoning.clone(),
                };
                pairs.push(SemanticVulnPair::new(sem, pat.id, rationale));
            }
        }
        Ok(pairs)
    }

    /// Runs the full loop and writes `report.json`, `report.md`,
    /// `memory.log` and `kg.json` into the workspace. Component failures
    /// become skipped pairs; running out of budget stops the loop.
    pub fn run_audit(
        &self,
        corpus: &ProjectCorpus,
        graph: &mut KnowledgeGraph,
        budget: Usd,
        workspace: &AuditWorkspace,
    ) -> Result<AuditReportOut, AuditError> {
        self.run_audit_with_memory(corpus, graph, budget, workspace).map(|(report, _)| report)
    }

    /// [`Self::run_audit`], also returning the working memory.
    pub fn run_audit_with_memory(
        &self,
        corpus: &ProjectCorpus,
        graph: &mut KnowledgeGraph,
        budget: Usd,
        workspace: &AuditWorkspace,
    ) -> Result<(AuditReportOut, WorkingMemory), AuditError> {
        if budget == Usd::ZERO {
            return Err(AuditError::ZeroBudget);
        }
        let llm = self.llm.clone().with_budget(budget);
        let auditor = Auditor {
            llm: &llm,
            bank: self.bank,
            toolchain: self.toolchain,
            executor: self.executor,
            config: self.config.clone(),
        };
        let mut memory = WorkingMemory::with_log(workspace.memory_log())?;
        let mut report = AuditReportOut::new(&corpus.name);

        let pairs = auditor.map_knowledge(corpus, graph);
        report.pairs_mapped = pairs.len();
        let mut pending = pairs;
        if llm.exhausted() {
            report.halted = Some("budget exhausted during knowledge mapping".into());
        }
        while report.halted.is_none() && !pending.is_empty() {
            let next = schedule_pairs(&pending, &memory).remove(0);
            pending.retain(|p| p.id != next.id);
            let step = auditor.audit_pair(&next, corpus, graph, workspace, &mut memory, &mut report)?;
            let status = match step {
                Step::Done(status) => status,
                Step::Halt(status, reason) => {
                    report.halted = Some(reason);
                    status
                }
            };
            report.pairs.push(PairSummary {
                pair: next.id.clone(),
                semantic: next.semantic,
                pattern: next.pattern,
                spec_versions: memory.spec_attempts(&next.id) as u32,
                status,
            });
        }
        for p in pending {
            report.pairs.push(PairSummary {
                pair: p.id,
                semantic: p.semantic,
                pattern: p.pattern,
                spec_versions: 0,
                status: PairStatus::NotReached,
            });
        }
        report.finish(&llm, &memory);
        write_json(&workspace.report_json(), &report)?;
        std::fs::write(workspace.report_md(), report.render_markdown())?;
        graph
            .save(workspace.graph_path())
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok((report, memory))
    }

    fn audit_pair(
        &self,
        pair: &SemanticVulnPair,
        corpus: &ProjectCorpus,
        graph: &mut KnowledgeGraph,
        ws: &AuditWorkspace,
        memory: &mut WorkingMemory,
        report: &mut AuditReportOut,
    ) -> Result<Step, std::io::Error> {
        let (Some(semantic), Some(pattern)) = (graph.semantic(pair.semantic).cloned(), graph.pattern(pair.pattern).cloned())
        else {
            return Ok(Step::Done(self.block(memory, pair, "mapping", "pair refers to a missing node".into())));
        };
        let budget_halt = |status: PairStatus| Step::Halt(status, format!("budget exhausted while auditing {}", pair.id));
        let mut previous: Option<AuditSpecification> = None;
        for version in 1..=1 + self.config.regeneration_cap {
            memory.append(MemoryEntry::SpecAttempt {
                pair: pair.id.clone(),
                version,
            });
            let feedback = memory.feedback(&pair.id);
            let req = SpecRequest {
                pair_id: &pair.id,
                semantic: &semantic,
                pattern: &pattern,
                corpus,
                feedback: &feedback,
                previous: previous.as_ref(),
                version,
                max_source_units: self.config.max_source_units,
            };
            let spec = match generate_specification(self.llm, &req) {
                Ok(s) => s,
                Err(e) if e.is_budget() => return Ok(budget_halt(PairStatus::Incomplete)),
                Err(e) => return Ok(Step::Done(self.block(memory, pair, "specification", e.to_string()))),
            };
            write_json(&ws.spec_path(&pair.id, version), &spec)?;

            let draft = match harness::synthesize_harness(self.llm, &spec, corpus, self.config.max_source_units) {
                Ok(h) => h,
                Err(e) if e.is_budget() => return Ok(budget_halt(PairStatus::Incomplete)),
                Err(e) => return Ok(Step::Done(self.block(memory, pair, "harness", e.to_string()))),
            };
            let dir = ws.harness_dir(&pair.id, version);
            harness::prepare_workspace(&corpus.root, &dir)?;
            let repair = RepairLoop {
                llm: self.llm,
                toolchain: self.toolchain,
                spec: &spec,
                workspace: &dir,
                max_attempts: self.config.max_repair_attempts,
            };
            let compiled = match harness::compile_and_repair(&repair, draft, memory) {
                Ok(c) => c,
                Err(e) if e.is_budget() => return Ok(budget_halt(PairStatus::Incomplete)),
                Err(e) => return Ok(Step::Done(self.block(memory, pair, "compile", e.to_string()))),
            };

            let run = RunConfig {
                timeout: self.config.fuzz_timeout,
                seed: self.config.seed,
                attribution: pair.semantic.to_string(),
            };
            let outcome = match self.executor.run(&compiled, &run) {
                Ok(o) => o,
                Err(e) => {
                    memory.append(MemoryEntry::ExecutionFailure {
                        pair: pair.id.clone(),
                        failure: ExecutionFailure::RunFailed { message: e.to_string() },
                    });
                    return Ok(Step::Done(self.block(memory, pair, "fuzz", e.to_string())));
                }
            };
            memory.append(MemoryEntry::CoverageRecord {
                semantic: pair.semantic,
                coverage: outcome.coverage.clone(),
            });
            write_json(&ws.run_path(&pair.id, version), &outcome)?;

            let Some(violation) = outcome.violation.clone() else {
                return Ok(Step::Done(PairStatus::Clean));
            };
            let verdict = match reflect_finding(self.llm, &violation, &spec, &corpus.scope_notes, &self.config.general_rules, memory) {
                Ok(v) => v,
                Err(e) if e.is_budget() => return Ok(budget_halt(PairStatus::Incomplete)),
                Err(e) => return Ok(Step::Done(self.block(memory, pair, "reflection", e.to_string()))),
            };
            match verdict.kind {
                VerdictKind::TrueFinding => {
                    let mut finding = ReportedFinding {
                        title: verdict.title.clone().unwrap_or_else(|| pattern.title.clone()),
                        severity: verdict.severity.unwrap_or(Severity::Medium),
                        pair: pair.id.clone(),
                        semantic: pair.semantic,
                        pattern: pair.pattern,
                        spec_version: version,
                        specification: spec,
                        violation,
                        run_id: outcome.run_id.clone(),
                        verdict,
                        graph_node: None,
                    };
                    let project = project_node(graph, corpus);
                    match project.map_err(IngestFindingError::from).and_then(|p| ingest_finding(graph, &finding, p)) {
                        Ok(ingested) => finding.graph_node = Some(ingested.finding),
                        Err(e) => tracing::warn!(pair = %pair.id, error = %e, "finding not added to the graph"),
                    }
                    report.findings.push(finding);
                    return Ok(Step::Done(PairStatus::Finding));
                }
                VerdictKind::ExpectedBehavior => return Ok(Step::Done(PairStatus::ExpectedBehavior)),
                VerdictKind::OutOfScope => return Ok(Step::Done(PairStatus::OutOfScope)),
                VerdictKind::ProblematicSpecOrHarness => previous = Some(spec),
            }
        }
        Ok(Step::Done(self.block(
            memory,
            pair,
            "reflection",
            format!("regeneration cap of {} reached", self.config.regeneration_cap),
        )))
    }

    fn block(&self, memory: &mut WorkingMemory, pair: &SemanticVulnPair, stage: &str, reason: String) -> PairStatus {
        tracing::warn!(pair = %pair.id, stage, %reason, "pair blocked");
        memory.append(MemoryEntry::PairBlocked {
            pair: pair.id.clone(),
            stage: stage.to_string(),
            reason: reason.clone(),
        });
        PairStatus::Blocked {
            stage: stage.to_string(),
            reason,
        }
    }
}

/// The graph node of the audited project, added on first use.
fn project_node(graph: &mut KnowledgeGraph, corpus: &ProjectCorpus) -> Result<NodeId, GraphError> {
    if let Some(p) = graph.project_by_name(&corpus.name) {
        return Ok(p.id);
    }
    let id = graph
        .add_node(NewNode::Project {
            name: corpus.name.clone(),
            source_ref: corpus.root.display().to_string(),
        })?
        .id();
    debug_assert_eq!(id.kind(), NodeKind::Project);
    Ok(id)
}
