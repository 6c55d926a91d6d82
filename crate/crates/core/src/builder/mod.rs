//! Knowledge graph construction from project/report pairs.
//!
//! Each project goes through three stages in order: business classification
//! and semantic extraction, per-finding attack classification and pattern
//! extraction, and finally linking semantics to patterns of the same
//! project. Deduplication against earlier projects is decided by the model;
//! the only mechanical shortcut is the graph's exact fingerprint check.

mod categories;

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use categories::{BankError, CategoryBank, CategoryEntry};

use crate::graph::{
    Abstraction, AbstractionNode, EdgeKind, GraphError, KnowledgeGraph, NewFinding, NewNode, NodeId,
};
use crate::ingest::{self, AuditReport, Chunk, IngestError, ProjectCorpus, ReportFinding};
use crate::llm::{render_prompt, slot, Bindings, Call, LlmError, LlmGateway, Role, StructuredOutput, TemplateId};
use crate::taxonomy::{AttackType, BusinessType};

/// Prior-knowledge lists shown to the model are cut to this many nodes.
pub const DEFAULT_PRIOR_CAP: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("classification returned no category")]
    ClassificationEmpty,
    #[error("merge target `{0}` was not among the presented prior nodes")]
    DanglingMergeTarget(String),
    #[error("nothing to classify: no chunks")]
    NoChunks,
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl BuildError {
    pub fn is_budget(&self) -> bool {
        matches!(self, BuildError::Llm(e) if e.is_budget())
    }
}

// ---- model reply shapes ----

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(bound = "C: DeserializeOwned")]
pub struct ClassificationReply<C> {
    pub categories: Vec<CategoryVerdict<C>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(bound = "C: DeserializeOwned")]
pub struct CategoryVerdict<C> {
    pub category: C,
    #[serde(default)]
    pub reasoning: String,
}

impl<C: DeserializeOwned> StructuredOutput for ClassificationReply<C> {
    const FORMAT: &'static str =
        r#"{"categories": [{"category": "<category name>", "reasoning": "<why it applies>"}]}"#;
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct CandidateReply {
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub merge_target: Option<String>,
    #[serde(default)]
    pub reasoning: String,
}

impl CandidateReply {
    fn check(&self) -> Result<(), String> {
        if self.title.trim().is_empty() {
            return Err("candidate title is empty".into());
        }
        if self.description.trim().is_empty() {
            return Err(format!("candidate `{}` has an empty description", self.title));
        }
        if let Some(t) = &self.merge_target {
            t.parse::<NodeId>().map_err(|e| format!("merge_target: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct SemanticExtractionReply {
    pub semantics: Vec<CandidateReply>,
}

impl StructuredOutput for SemanticExtractionReply {
    const FORMAT: &'static str = r#"{"semantics": [{"title": "...", "description": "...", "merge_target": "sem-000001 or null", "reasoning": "..."}]}"#;

    fn validate(&self) -> Result<(), String> {
        self.semantics.iter().try_for_each(CandidateReply::check)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PatternExtractionReply {
    pub pattern: CandidateReply,
}

impl StructuredOutput for PatternExtractionReply {
    const FORMAT: &'static str = r#"{"pattern": {"title": "...", "description": "...", "merge_target": "pat-000001 or null", "reasoning": "..."}}"#;

    fn validate(&self) -> Result<(), String> {
        self.pattern.check()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct LinkReply {
    pub links: Vec<ProposedLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ProposedLink {
    pub semantic: String,
    pub pattern: String,
    #[serde(default)]
    pub reasoning: String,
}

impl StructuredOutput for LinkReply {
    const FORMAT: &'static str =
        r#"{"links": [{"semantic": "sem-000001", "pattern": "pat-000001", "reasoning": "..."}]}"#;

    fn validate(&self) -> Result<(), String> {
        for l in &self.links {
            l.semantic.parse::<NodeId>().map_err(|e| format!("link semantic: {e}"))?;
            l.pattern.parse::<NodeId>().map_err(|e| format!("link pattern: {e}"))?;
        }
        Ok(())
    }
}

// ---- pipeline types ----

/// Classification result with the model's reasoning per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classified<C> {
    pub types: BTreeSet<C>,
    pub reasoning: Vec<(C, String)>,
}

/// A semantic or pattern proposed by the model, either novel or folded into
/// an existing node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub title: String,
    pub description: String,
    pub merge_target: Option<NodeId>,
    pub reasoning: String,
}

pub type CandidateSemantic = Candidate;
pub type CandidatePattern = Candidate;

impl Candidate {
    pub fn novel(title: impl Into<String>, description: impl Into<String>) -> Self {
        Candidate {
            title: title.into(),
            description: description.into(),
            merge_target: None,
            reasoning: String::new(),
        }
    }

    pub fn merged(target: NodeId, title: impl Into<String>, description: impl Into<String>) -> Self {
        Candidate {
            merge_target: Some(target),
            ..Candidate::novel(title, description)
        }
    }

    pub fn abstraction(&self) -> Abstraction {
        Abstraction::new(self.title.clone(), self.description.clone())
    }
}

/// Node ids touched by applying candidates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChangeSummary {
    pub added: Vec<NodeId>,
    pub merged: Vec<NodeId>,
}

impl ChangeSummary {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.merged.is_empty()
    }
}

/// The semantics and patterns of one project, the universe for linking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectReportPair {
    pub project_id: NodeId,
    pub semantics: Vec<NodeId>,
    pub patterns: Vec<NodeId>,
}

impl ProjectReportPair {
    pub fn from_graph(graph: &KnowledgeGraph, project_id: NodeId) -> Self {
        ProjectReportPair {
            project_id,
            semantics: graph.project_semantics(project_id),
            patterns: graph.project_patterns(project_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub semantic: NodeId,
    pub pattern: NodeId,
    pub rationale: String,
}

/// A proposed link whose endpoints fall outside the pair's universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkOutOfScope {
    pub semantic: String,
    pub pattern: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkResult {
    pub links: Vec<Link>,
    pub rejected: Vec<LinkOutOfScope>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectSummary {
    pub name: String,
    pub project_id: NodeId,
    pub business_types: BTreeSet<BusinessType>,
    pub semantics: ChangeSummary,
    pub patterns: ChangeSummary,
    pub findings: Vec<NodeId>,
    pub skipped_findings: Vec<String>,
    pub links: usize,
    pub rejected_links: usize,
}

#[derive(Debug, Serialize)]
pub enum ProjectOutcome {
    Built(ProjectSummary),
    Skipped { name: String, reason: String },
}

#[derive(Debug)]
pub struct BuildReport {
    pub graph: KnowledgeGraph,
    pub projects: Vec<ProjectOutcome>,
    /// Set when the budget ran out; later projects were not attempted.
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuilderConfig {
    pub max_chunk_units: usize,
    pub prior_cap: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig {
            max_chunk_units: ingest::DEFAULT_MAX_CHUNK_UNITS,
            prior_cap: DEFAULT_PRIOR_CAP,
        }
    }
}

/// Most recently created or merged first, cut to `cap`.
pub fn cap_prior<'g>(mut nodes: Vec<&'g AbstractionNode>, cap: usize) -> Vec<&'g AbstractionNode> {
    nodes.sort_by(|a, b| b.revision.cmp(&a.revision).then(a.id.cmp(&b.id)));
    nodes.truncate(cap);
    nodes
}

pub fn render_nodes(nodes: &[&AbstractionNode]) -> String {
    nodes
        .iter()
        .map(|n| format!("- [{}] {}: {}", n.id, n.title, n.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_finding(f: &ReportFinding) -> String {
    format!("### {} (severity {})\n{}", f.title, f.severity, f.body)
}

fn bindings(pairs: impl IntoIterator<Item = (&'static str, String)>) -> Bindings {
    pairs.into_iter().collect()
}

fn convert_candidates(
    replies: Vec<CandidateReply>,
    prior: &[&AbstractionNode],
) -> Result<Vec<Candidate>, BuildError> {
    let allowed: BTreeSet<NodeId> = prior.iter().map(|n| n.id).collect();
    replies
        .into_iter()
        .map(|r| {
            let merge_target = match r.merge_target.as_deref().map(str::trim) {
                None | Some("") => None,
                Some(t) => {
                    let id: NodeId = t.parse().map_err(|_| BuildError::DanglingMergeTarget(t.to_string()))?;
                    if !allowed.contains(&id) {
                        return Err(BuildError::DanglingMergeTarget(t.to_string()));
                    }
                    Some(id)
                }
            };
            Ok(Candidate {
                title: r.title,
                description: r.description,
                merge_target,
                reasoning: r.reasoning,
            })
        })
        .collect()
}

/// Drives the model calls of the three stages. Graph mutation goes through
/// the free functions [`apply_candidates`], [`apply_pattern`] and
/// [`apply_links`] so that they can be tested without a model.
pub struct GraphBuilder<'a> {
    llm: &'a LlmGateway,
    bank: &'a CategoryBank,
    config: BuilderConfig,
}

impl<'a> GraphBuilder<'a> {
    pub fn new(llm: &'a LlmGateway, bank: &'a CategoryBank, config: BuilderConfig) -> Self {
        GraphBuilder { llm, bank, config }
    }

    pub fn config(&self) -> &BuilderConfig {
        &self.config
    }

    fn classify<C>(&self, categories: String, inputs: Vec<String>, item_kind: &str, purpose: &str) -> Result<Classified<C>, BuildError>
    where
        C: DeserializeOwned + Ord + Copy,
    {
        let mut types = BTreeSet::new();
        let mut reasoning = Vec::new();
        for input in inputs {
            let prompt = render_prompt(
                TemplateId::Classification,
                &bindings([
                    (slot::CATEGORIES, categories.clone()),
                    (slot::INPUTS, input),
                    (slot::ITEM_KIND, item_kind.to_string()),
                ]),
            )?;
            let reply = self.llm.complete::<ClassificationReply<C>>(Call::new(
                Role::Reasoning,
                TemplateId::Classification,
                prompt,
                purpose,
            ))?;
            for v in reply.parsed.categories {
                if types.insert(v.category) {
                    reasoning.push((v.category, v.reasoning));
                }
            }
        }
        if types.is_empty() {
            return Err(BuildError::ClassificationEmpty);
        }
        Ok(Classified { types, reasoning })
    }

    fn batches(&self, chunks: &[Chunk]) -> Vec<String> {
        ingest::batch_chunks(chunks, self.config.max_chunk_units)
            .iter()
            .map(|b| ingest::render_batch(b))
            .collect()
    }

    /// One classification call per prompt-sized batch; the verdicts are
    /// united.
    pub fn classify_business_types(&self, chunks: &[Chunk], purpose: &str) -> Result<Classified<BusinessType>, BuildError> {
        if chunks.is_empty() {
            return Err(BuildError::NoChunks);
        }
        self.classify(self.bank.render_business(None), self.batches(chunks), "function", purpose)
    }

    pub fn classify_attack_types(&self, finding: &ReportFinding, purpose: &str) -> Result<Classified<AttackType>, BuildError> {
        self.classify(self.bank.render_attack(None), vec![render_finding(finding)], "finding", purpose)
    }

    /// `prior` should be the business-scoped semantics, already capped.
    /// A merge target outside `prior` is rejected.
    pub fn extract_semantics(
        &self,
        chunks: &[Chunk],
        business_types: &BTreeSet<BusinessType>,
        prior: &[&AbstractionNode],
        purpose: &str,
    ) -> Result<Vec<CandidateSemantic>, BuildError> {
        let mut out = Vec::new();
        for input in self.batches(chunks) {
            let prompt = render_prompt(
                TemplateId::Extraction,
                &bindings([
                    (slot::TARGET_KIND, "DeFi semantics".to_string()),
                    (slot::CATEGORIES, self.bank.render_business(Some(business_types))),
                    (slot::INPUTS, input),
                    (slot::PRIOR, render_nodes(prior)),
                    (slot::ITEM_KIND, "function or contract".to_string()),
                ]),
            )?;
            let reply = self.llm.complete::<SemanticExtractionReply>(Call::new(
                Role::Reasoning,
                TemplateId::Extraction,
                prompt,
                purpose,
            ))?;
            out.extend(convert_candidates(reply.parsed.semantics, prior)?);
        }
        Ok(out)
    }

    /// Abstracts one finding into a pattern. `prior` should be the
    /// attack-scoped patterns, already capped.
    pub fn extract_pattern(
        &self,
        finding: &ReportFinding,
        attack_types: &BTreeSet<AttackType>,
        prior: &[&AbstractionNode],
        purpose: &str,
    ) -> Result<CandidatePattern, BuildError> {
        let prompt = render_prompt(
            TemplateId::Extraction,
            &bindings([
                (slot::TARGET_KIND, "vulnerability patterns".to_string()),
                (slot::CATEGORIES, self.bank.render_attack(Some(attack_types))),
                (slot::INPUTS, render_finding(finding)),
                (slot::PRIOR, render_nodes(prior)),
                (slot::ITEM_KIND, "finding".to_string()),
            ]),
        )?;
        let reply = self.llm.complete::<PatternExtractionReply>(Call::new(
            Role::Reasoning,
            TemplateId::Extraction,
            prompt,
            purpose,
        ))?;
        Ok(convert_candidates(vec![reply.parsed.pattern], prior)?.remove(0))
    }

    /// Asks the model which semantics of the pair may introduce which
    /// patterns. Links outside the pair's universe are dropped and reported.
    pub fn link_pair(&self, graph: &KnowledgeGraph, pair: &ProjectReportPair, purpose: &str) -> Result<LinkResult, BuildError> {
        if pair.semantics.is_empty() || pair.patterns.is_empty() {
            return Ok(LinkResult::default());
        }
        let sems: Vec<&AbstractionNode> = pair.semantics.iter().filter_map(|id| graph.semantic(*id)).collect();
        let pats: Vec<&AbstractionNode> = pair.patterns.iter().filter_map(|id| graph.pattern(*id)).collect();
        let prompt = render_prompt(
            TemplateId::Linking,
            &bindings([
                (slot::DEFI_SEMANTICS, render_nodes(&sems)),
                (slot::VULNERABILITY_PATTERNS, render_nodes(&pats)),
            ]),
        )?;
        let reply = self
            .llm
            .complete::<LinkReply>(Call::new(Role::Reasoning, TemplateId::Linking, prompt, purpose))?;
        let mut result = LinkResult::default();
        for l in reply.parsed.links {
            let sem = l.semantic.parse::<NodeId>().ok().filter(|id| pair.semantics.contains(id));
            let pat = l.pattern.parse::<NodeId>().ok().filter(|id| pair.patterns.contains(id));
            match (sem, pat) {
                (Some(semantic), Some(pattern)) => result.links.push(Link {
                    semantic,
                    pattern,
                    rationale: l.reasoning,
                }),
                _ => {
                    tracing::warn!(semantic = %l.semantic, pattern = %l.pattern, "dropping link outside the project universe");
                    result.rejected.push(LinkOutOfScope {
                        semantic: l.semantic,
                        pattern: l.pattern,
                    });
                }
            }
        }
        Ok(result)
    }

    /// Runs all three stages for one project, mutating `graph` in place.
    /// On error the graph may hold a partial project; [`Self::build_graph`]
    /// restores a snapshot in that case.
    pub fn build_project(
        &self,
        graph: &mut KnowledgeGraph,
        corpus: &ProjectCorpus,
        report: &AuditReport,
    ) -> Result<ProjectSummary, BuildError> {
        let tag = |stage: &str| format!("build:{}:{stage}", corpus.name);
        let chunks = ingest::chunk_corpus(corpus, self.config.max_chunk_units);

        // Stage I
        let business = self.classify_business_types(&chunks, &tag("classify"))?;
        let prior = cap_prior(graph.query_semantics_by_business(&business.types), self.config.prior_cap);
        let candidates = self.extract_semantics(&chunks, &business.types, &prior, &tag("semantics"))?;
        let project_id = graph
            .add_node(NewNode::Project {
                name: corpus.name.clone(),
                source_ref: corpus.root.to_string_lossy().replace('\\', "/"),
            })?
            .id();
        for b in &business.types {
            graph.add_edge(EdgeKind::BelongsTo, project_id, *b, None)?;
        }
        let semantics = apply_candidates(graph, project_id, &business.types, &candidates)?;

        // Stage II
        let mut patterns = ChangeSummary::default();
        let mut findings = Vec::new();
        let mut skipped_findings = Vec::new();
        for (n, finding) in report.findings.iter().enumerate() {
            let attacks = match self.classify_attack_types(finding, &tag(&format!("finding-{}:classify", n + 1))) {
                Ok(c) => c,
                Err(BuildError::ClassificationEmpty) => {
                    tracing::warn!(project = %corpus.name, finding = %finding.title, "finding has no attack type; skipped");
                    skipped_findings.push(finding.title.clone());
                    continue;
                }
                Err(e) => return Err(e),
            };
            let prior = cap_prior(graph.query_patterns_by_attack(&attacks.types), self.config.prior_cap);
            let candidate =
                self.extract_pattern(finding, &attacks.types, &prior, &tag(&format!("finding-{}:pattern", n + 1)))?;
            let finding_id = graph.add_finding(
                project_id,
                NewFinding {
                    title: finding.title.clone(),
                    severity: finding.severity,
                    body: finding.body.clone(),
                },
            )?;
            for a in &attacks.types {
                graph.add_edge(EdgeKind::Involves, finding_id, *a, None)?;
            }
            let change = apply_pattern(graph, finding_id, &attacks.types, &candidate)?;
            patterns.added.extend(change.added);
            patterns.merged.extend(change.merged);
            findings.push(finding_id);
        }

        // Stage III
        let pair = ProjectReportPair::from_graph(graph, project_id);
        let linked = self.link_pair(graph, &pair, &tag("link"))?;
        let links = apply_links(graph, &linked.links)?;

        Ok(ProjectSummary {
            name: corpus.name.clone(),
            project_id,
            business_types: business.types,
            semantics,
            patterns,
            findings,
            skipped_findings,
            links,
            rejected_links: linked.rejected.len(),
        })
    }

    /// Builds a graph from scratch. See [`Self::extend_graph`].
    pub fn build_graph(&self, inputs: &[(ProjectCorpus, AuditReport)]) -> BuildReport {
        self.extend_graph(KnowledgeGraph::new(), inputs)
    }

    /// Processes projects in input order. A failing project is logged and
    /// rolled back without touching the rest of the graph. Running out of
    /// budget stops the build.
    pub fn extend_graph(&self, mut graph: KnowledgeGraph, inputs: &[(ProjectCorpus, AuditReport)]) -> BuildReport {
        let mut projects = Vec::new();
        let mut halted = false;
        for (corpus, report) in inputs {
            if halted {
                projects.push(ProjectOutcome::Skipped {
                    name: corpus.name.clone(),
                    reason: "budget exhausted".into(),
                });
                continue;
            }
            let snapshot = graph.clone();
            match self.build_project(&mut graph, corpus, report) {
                Ok(summary) => {
                    debug_assert!(graph.validate().is_ok());
                    tracing::info!(project = %corpus.name, "project added to graph");
                    projects.push(ProjectOutcome::Built(summary));
                }
                Err(e) => {
                    graph = snapshot;
                    halted = e.is_budget();
                    tracing::warn!(project = %corpus.name, error = %e, "project skipped");
                    projects.push(ProjectOutcome::Skipped {
                        name: corpus.name.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        BuildReport { graph, projects, halted }
    }
}

/// Adds novel semantics, folds merged ones into their targets, and connects
/// every touched node to the project (`Contains`) and to each business type
/// (`Underlies`, united with any the node already had).
pub fn apply_candidates(
    graph: &mut KnowledgeGraph,
    project_id: NodeId,
    business_types: &BTreeSet<BusinessType>,
    candidates: &[CandidateSemantic],
) -> Result<ChangeSummary, GraphError> {
    let mut summary = ChangeSummary::default();
    for c in candidates {
        let id = match c.merge_target {
            Some(target) => {
                let id = graph.merge_semantics(target, &c.abstraction(), &c.description)?;
                summary.merged.push(id);
                id
            }
            None => {
                let outcome = graph.add_node(NewNode::Semantic(c.abstraction()))?;
                if outcome.is_new() {
                    summary.added.push(outcome.id());
                } else {
                    summary.merged.push(outcome.id());
                }
                outcome.id()
            }
        };
        graph.add_edge(EdgeKind::Contains, project_id, id, None)?;
        for b in business_types {
            graph.add_edge(EdgeKind::Underlies, id, *b, None)?;
        }
    }
    Ok(summary)
}

/// Pattern counterpart of [`apply_candidates`] for a single finding:
/// `ContributesTo` into the finding and `Poses` to each attack type.
pub fn apply_pattern(
    graph: &mut KnowledgeGraph,
    finding_id: NodeId,
    attack_types: &BTreeSet<AttackType>,
    candidate: &CandidatePattern,
) -> Result<ChangeSummary, GraphError> {
    let mut summary = ChangeSummary::default();
    let id = match candidate.merge_target {
        Some(target) => {
            let id = graph.merge_patterns(target, &candidate.abstraction(), &candidate.description)?;
            summary.merged.push(id);
            id
        }
        None => {
            let outcome = graph.add_node(NewNode::Pattern(candidate.abstraction()))?;
            if outcome.is_new() {
                summary.added.push(outcome.id());
            } else {
                summary.merged.push(outcome.id());
            }
            outcome.id()
        }
    };
    graph.add_edge(EdgeKind::ContributesTo, id, finding_id, None)?;
    for a in attack_types {
        graph.add_edge(EdgeKind::Poses, id, *a, None)?;
    }
    Ok(summary)
}

/// Stores links as `MayIntroduce` edges and returns how many were new.
pub fn apply_links(graph: &mut KnowledgeGraph, links: &[Link]) -> Result<usize, GraphError> {
    let before = graph.edge_count();
    for l in links {
        let rationale = (!l.rationale.trim().is_empty()).then(|| l.rationale.clone());
        graph.add_edge(EdgeKind::MayIntroduce, l.semantic, l.pattern, rationale)?;
    }
    Ok(graph.edge_count() - before)
}

// ---- manifest ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub project_dir: String,
    pub findings_file: String,
}

fn manifest_err(path: &Path, message: impl Display) -> BuildError {
    BuildError::Manifest {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, BuildError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| manifest_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| manifest_err(path, e))
}

/// Loads every project and report named by a manifest. Relative paths are
/// resolved against the manifest's directory; the stored source reference
/// keeps the path as written so builds are reproducible across checkouts.
pub fn load_inputs(manifest: impl AsRef<Path>) -> Result<Vec<(ProjectCorpus, AuditReport)>, BuildError> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    load_manifest(manifest)?
        .into_iter()
        .map(|entry| {
            let mut corpus = ingest::load_project(base.join(&entry.project_dir))?;
            corpus.root = PathBuf::from(&entry.project_dir);
            let report = ingest::load_report(base.join(&entry.findings_file))?;
            Ok((corpus, report))
        })
        .collect()
}
