//! The bipartite auditing knowledge graph.
//!
//! The DeFi side holds projects, semantics and (implicitly) business types; the
//! vulnerability side holds findings, patterns and (implicitly) attack types.
//! Only `Has` and `MayIntroduce` edges cross between the two sides.
//!
//! Nodes are never deleted. Deduplication happens by merging a candidate into
//! an existing node, which rewrites the description in place and keeps the
//! node id, so every edge that pointed at the node remains valid.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taxonomy::{AttackType, BusinessType, Severity};

/// Persistence format version written by [`KnowledgeGraph::save`].
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("{id} is not a {expected} node")]
    KindMismatch { id: NodeId, expected: NodeKind },
    #[error("node {0} not found")]
    NotFound(NodeId),
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("unsupported graph format version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u32 },
    #[error("malformed graph document at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Project,
    Semantic,
    Pattern,
    Finding,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [
        NodeKind::Project,
        NodeKind::Semantic,
        NodeKind::Pattern,
        NodeKind::Finding,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            NodeKind::Project => "proj",
            NodeKind::Semantic => "sem",
            NodeKind::Pattern => "pat",
            NodeKind::Finding => "find",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            NodeKind::Project => "project",
            NodeKind::Semantic => "semantic",
            NodeKind::Pattern => "pattern",
            NodeKind::Finding => "finding",
        };
        f.write_str(name)
    }
}

/// Sequential, kind-prefixed node identifier such as `sem-000042`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId {
    kind: NodeKind,
    seq: u64,
}

impl NodeId {
    pub fn new(kind: NodeKind, seq: u64) -> Self {
        NodeId { kind, seq }
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:06}", self.kind.prefix(), self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid identifier `{0}`")]
pub struct BadId(pub String);

impl FromStr for NodeId {
    type Err = BadId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (prefix, digits) = s.split_once('-').ok_or_else(|| BadId(s.to_string()))?;
        let kind = NodeKind::ALL
            .into_iter()
            .find(|k| k.prefix() == prefix)
            .ok_or_else(|| BadId(s.to_string()))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(BadId(s.to_string()));
        }
        let seq = digits.parse().map_err(|_| BadId(s.to_string()))?;
        Ok(NodeId { kind, seq })
    }
}

impl TryFrom<String> for NodeId {
    type Error = BadId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EdgeId(u64);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "edge-{:06}", self.0)
    }
}

impl TryFrom<String> for EdgeId {
    type Error = BadId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.strip_prefix("edge-")
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse().ok())
            .map(EdgeId)
            .ok_or(BadId(s))
    }
}

impl From<EdgeId> for String {
    fn from(id: EdgeId) -> String {
        id.to_string()
    }
}

/// Either end of an edge: a stored node or one of the schema-level categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Endpoint {
    Node(NodeId),
    Business(BusinessType),
    Attack(AttackType),
}

impl Endpoint {
    fn kind(&self) -> EndpointKind {
        match self {
            Endpoint::Node(id) => EndpointKind::Node(id.kind()),
            Endpoint::Business(_) => EndpointKind::Business,
            Endpoint::Attack(_) => EndpointKind::Attack,
        }
    }

    pub fn as_node(&self) -> Option<NodeId> {
        match self {
            Endpoint::Node(id) => Some(*id),
            _ => None,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Node(id) => id.fmt(f),
            Endpoint::Business(b) => write!(f, "business:{}", b.label()),
            Endpoint::Attack(a) => write!(f, "attack:{}", a.label()),
        }
    }
}

impl TryFrom<String> for Endpoint {
    type Error = BadId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        if let Some(label) = s.strip_prefix("business:") {
            return label.parse().map(Endpoint::Business).map_err(|_| BadId(s.clone()));
        }
        if let Some(label) = s.strip_prefix("attack:") {
            return label.parse().map(Endpoint::Attack).map_err(|_| BadId(s.clone()));
        }
        s.parse().map(Endpoint::Node)
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl From<NodeId> for Endpoint {
    fn from(id: NodeId) -> Self {
        Endpoint::Node(id)
    }
}

impl From<BusinessType> for Endpoint {
    fn from(b: BusinessType) -> Self {
        Endpoint::Business(b)
    }
}

impl From<AttackType> for Endpoint {
    fn from(a: AttackType) -> Self {
        Endpoint::Attack(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EndpointKind {
    Node(NodeKind),
    Business,
    Attack,
}

impl fmt::Display for EndpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointKind::Node(k) => k.fmt(f),
            EndpointKind::Business => f.write_str("business type"),
            EndpointKind::Attack => f.write_str("attack type"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    BelongsTo,
    Contains,
    Underlies,
    ContributesTo,
    Poses,
    Involves,
    Has,
    MayIntroduce,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 8] = [
        EdgeKind::BelongsTo,
        EdgeKind::Contains,
        EdgeKind::Underlies,
        EdgeKind::ContributesTo,
        EdgeKind::Poses,
        EdgeKind::Involves,
        EdgeKind::Has,
        EdgeKind::MayIntroduce,
    ];

    fn endpoint_kinds(self) -> (EndpointKind, EndpointKind) {
        use EndpointKind::*;
        match self {
            EdgeKind::BelongsTo => (Node(NodeKind::Project), Business),
            EdgeKind::Contains => (Node(NodeKind::Project), Node(NodeKind::Semantic)),
            EdgeKind::Underlies => (Node(NodeKind::Semantic), Business),
            EdgeKind::ContributesTo => (Node(NodeKind::Pattern), Node(NodeKind::Finding)),
            EdgeKind::Poses => (Node(NodeKind::Pattern), Attack),
            EdgeKind::Involves => (Node(NodeKind::Finding), Attack),
            EdgeKind::Has => (Node(NodeKind::Project), Node(NodeKind::Finding)),
            EdgeKind::MayIntroduce => (Node(NodeKind::Semantic), Node(NodeKind::Pattern)),
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub kind: EdgeKind,
    pub from: Endpoint,
    pub to: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Hash of the normalized (lowercased, whitespace-collapsed) title and
/// description. Used only to reject exact duplicates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(String);

impl Fingerprint {
    pub fn of(title: &str, description: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(normalize(title).as_bytes());
        hasher.update(b"\n");
        hasher.update(normalize(description).as_bytes());
        Fingerprint(hex::encode(hasher.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectNode {
    pub id: NodeId,
    pub name: String,
    pub source_ref: String,
}

/// Shape shared by DeFi semantics and vulnerability patterns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionNode {
    pub id: NodeId,
    pub title: String,
    pub description: String,
    /// Fingerprints of every candidate folded into this node, starting with
    /// the one that created it. One entry is appended per merge.
    pub merged_from: Vec<Fingerprint>,
    /// Graph-wide counter value at creation or last merge.
    pub revision: u64,
}

pub type DefiSemanticNode = AbstractionNode;
pub type VulnerabilityPatternNode = AbstractionNode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFindingNode {
    pub id: NodeId,
    pub title: String,
    pub severity: Severity,
    pub body: String,
}

/// Title and description of a semantic or pattern that is not stored yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abstraction {
    pub title: String,
    pub description: String,
}

impl Abstraction {
    pub fn new(title: impl Into<String>, description: impl Into<String>) -> Self {
        Abstraction {
            title: title.into(),
            description: description.into(),
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.title, &self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NewNode {
    Project { name: String, source_ref: String },
    Semantic(Abstraction),
    Pattern(Abstraction),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewFinding {
    pub title: String,
    pub severity: Severity,
    pub body: String,
}

/// Result of an insertion: either a fresh node or the node that already had
/// the same fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Added(NodeId),
    Existing(NodeId),
}

impl AddOutcome {
    pub fn id(self) -> NodeId {
        match self {
            AddOutcome::Added(id) | AddOutcome::Existing(id) => id,
        }
    }

    pub fn is_new(self) -> bool {
        matches!(self, AddOutcome::Added(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct GraphStats {
    pub projects: usize,
    pub semantics: usize,
    pub patterns: usize,
    pub findings: usize,
    pub edges: BTreeMap<EdgeKind, usize>,
}

impl GraphStats {
    pub fn links(&self) -> usize {
        self.edges.get(&EdgeKind::MayIntroduce).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    projects: BTreeMap<NodeId, ProjectNode>,
    semantics: BTreeMap<NodeId, AbstractionNode>,
    patterns: BTreeMap<NodeId, AbstractionNode>,
    findings: BTreeMap<NodeId, AuditFindingNode>,
    edges: BTreeMap<EdgeId, Edge>,

    edge_index: HashMap<(EdgeKind, Endpoint, Endpoint), EdgeId>,
    fingerprints: HashMap<(NodeKind, Fingerprint), NodeId>,
    finding_owner: HashMap<NodeId, NodeId>,
    next_seq: [u64; 4],
    next_edge: u64,
    revision: u64,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.projects == other.projects
            && self.semantics == other.semantics
            && self.patterns == other.patterns
            && self.findings == other.findings
            && self.edges == other.edges
    }
}

impl Eq for KnowledgeGraph {}

impl KnowledgeGraph {
    pub fn new() -> Self {
        KnowledgeGraph {
            next_seq: [1; 4],
            next_edge: 1,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0
    }

    pub fn node_count(&self) -> usize {
        self.projects.len() + self.semantics.len() + self.patterns.len() + self.findings.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        match id.kind() {
            NodeKind::Project => self.projects.contains_key(&id),
            NodeKind::Semantic => self.semantics.contains_key(&id),
            NodeKind::Pattern => self.patterns.contains_key(&id),
            NodeKind::Finding => self.findings.contains_key(&id),
        }
    }

    fn next_id(&mut self, kind: NodeKind) -> NodeId {
        let slot = &mut self.next_seq[kind.index()];
        let id = NodeId::new(kind, *slot);
        *slot += 1;
        id
    }

    fn bump_revision(&mut self) -> u64 {
        self.revision += 1;
        self.revision
    }

    /// Stores a project, semantic or pattern node.
    ///
    /// Semantics and patterns whose fingerprint is already known are not
    /// stored again; the existing id comes back as [`AddOutcome::Existing`].
    pub fn add_node(&mut self, node: NewNode) -> Result<AddOutcome, GraphError> {
        match node {
            NewNode::Project { name, source_ref } => {
                if name.trim().is_empty() {
                    return Err(GraphError::EmptyField("name"));
                }
                let id = self.next_id(NodeKind::Project);
                self.projects.insert(id, ProjectNode { id, name, source_ref });
                Ok(AddOutcome::Added(id))
            }
            NewNode::Semantic(a) => self.add_abstraction(NodeKind::Semantic, a),
            NewNode::Pattern(a) => self.add_abstraction(NodeKind::Pattern, a),
        }
    }

    fn add_abstraction(
        &mut self,
        kind: NodeKind,
        candidate: Abstraction,
    ) -> Result<AddOutcome, GraphError> {
        if candidate.title.trim().is_empty() {
            return Err(GraphError::EmptyField("title"));
        }
        let fp = candidate.fingerprint();
        if let Some(existing) = self.fingerprints.get(&(kind, fp.clone())) {
            return Ok(AddOutcome::Existing(*existing));
        }
        let id = self.next_id(kind);
        let revision = self.bump_revision();
        let node = AbstractionNode {
            id,
            title: candidate.title,
            description: candidate.description,
            merged_from: vec![fp.clone()],
            revision,
        };
        self.fingerprints.insert((kind, fp), id);
        self.store_mut(kind).insert(id, node);
        Ok(AddOutcome::Added(id))
    }

    fn store_mut(&mut self, kind: NodeKind) -> &mut BTreeMap<NodeId, AbstractionNode> {
        match kind {
            NodeKind::Semantic => &mut self.semantics,
            NodeKind::Pattern => &mut self.patterns,
            _ => unreachable!("only semantics and patterns are abstraction nodes"),
        }
    }

    /// Stores a finding together with its single `Has` edge from `project`.
    pub fn add_finding(
        &mut self,
        project: NodeId,
        finding: NewFinding,
    ) -> Result<NodeId, GraphError> {
        if finding.title.trim().is_empty() {
            return Err(GraphError::EmptyField("title"));
        }
        self.expect_kind(project, NodeKind::Project)?;
        let id = self.next_id(NodeKind::Finding);
        self.findings.insert(
            id,
            AuditFindingNode {
                id,
                title: finding.title,
                severity: finding.severity,
                body: finding.body,
            },
        );
        self.add_edge(EdgeKind::Has, project, id, None)?;
        Ok(id)
    }

    fn expect_kind(&self, id: NodeId, kind: NodeKind) -> Result<(), GraphError> {
        if id.kind() != kind {
            return Err(GraphError::KindMismatch { id, expected: kind });
        }
        if !self.contains_node(id) {
            return Err(GraphError::NotFound(id));
        }
        Ok(())
    }

    /// Adds a typed edge. Re-adding an existing `(kind, from, to)` triple
    /// returns the stored edge id and changes nothing.
    pub fn add_edge(
        &mut self,
        kind: EdgeKind,
        from: impl Into<Endpoint>,
        to: impl Into<Endpoint>,
        rationale: Option<String>,
    ) -> Result<EdgeId, GraphError> {
        let (from, to) = (from.into(), to.into());
        let (want_from, want_to) = kind.endpoint_kinds();
        if from.kind() != want_from || to.kind() != want_to {
            return Err(GraphError::SchemaViolation(format!(
                "{kind} expects {want_from} -> {want_to}, got {from} -> {to}"
            )));
        }
        for end in [from, to] {
            if let Endpoint::Node(id) = end {
                if !self.contains_node(id) {
                    return Err(GraphError::SchemaViolation(format!(
                        "{kind} endpoint {id} does not exist"
                    )));
                }
            }
        }
        if let Some(existing) = self.edge_index.get(&(kind, from, to)) {
            return Ok(*existing);
        }
        if kind == EdgeKind::Has {
            let finding = to.as_node().expect("checked above");
            if let Some(owner) = self.finding_owner.get(&finding) {
                return Err(GraphError::SchemaViolation(format!(
                    "finding {finding} already belongs to {owner}"
                )));
            }
            self.finding_owner
                .insert(finding, from.as_node().expect("checked above"));
        }
        let id = EdgeId(self.next_edge);
        self.next_edge += 1;
        self.edge_index.insert((kind, from, to), id);
        self.edges.insert(
            id,
            Edge {
                id,
                kind,
                from,
                to,
                rationale,
            },
        );
        Ok(id)
    }

    /// Folds `candidate` into the semantic `existing`: the description is
    /// replaced by `synthesized_description`, the candidate's fingerprint is
    /// appended to `merged_from`, and every edge is left untouched.
    pub fn merge_semantics(
        &mut self,
        existing: NodeId,
        candidate: &Abstraction,
        synthesized_description: &str,
    ) -> Result<NodeId, GraphError> {
        self.merge_abstraction(NodeKind::Semantic, existing, candidate, synthesized_description)
    }

    /// Pattern counterpart of [`Self::merge_semantics`].
    pub fn merge_patterns(
        &mut self,
        existing: NodeId,
        candidate: &Abstraction,
        synthesized_description: &str,
    ) -> Result<NodeId, GraphError> {
        self.merge_abstraction(NodeKind::Pattern, existing, candidate, synthesized_description)
    }

    fn merge_abstraction(
        &mut self,
        kind: NodeKind,
        existing: NodeId,
        candidate: &Abstraction,
        synthesized_description: &str,
    ) -> Result<NodeId, GraphError> {
        self.expect_kind(existing, kind)?;
        if synthesized_description.trim().is_empty() {
            return Err(GraphError::EmptyField("description"));
        }
        let fp = candidate.fingerprint();
        let revision = self.bump_revision();
        let node = self
            .store_mut(kind)
            .get_mut(&existing)
            .expect("presence checked above");
        node.description = synthesized_description.to_string();
        node.merged_from.push(fp.clone());
        node.revision = revision;
        self.fingerprints.entry((kind, fp)).or_insert(existing);
        Ok(existing)
    }

    pub fn project(&self, id: NodeId) -> Option<&ProjectNode> {
        self.projects.get(&id)
    }

    pub fn semantic(&self, id: NodeId) -> Option<&DefiSemanticNode> {
        self.semantics.get(&id)
    }

    pub fn pattern(&self, id: NodeId) -> Option<&VulnerabilityPatternNode> {
        self.patterns.get(&id)
    }

    pub fn finding(&self, id: NodeId) -> Option<&AuditFindingNode> {
        self.findings.get(&id)
    }

    pub fn projects(&self) -> impl Iterator<Item = &ProjectNode> {
        self.projects.values()
    }

    pub fn semantics(&self) -> impl Iterator<Item = &DefiSemanticNode> {
        self.semantics.values()
    }

    pub fn patterns(&self) -> impl Iterator<Item = &VulnerabilityPatternNode> {
        self.patterns.values()
    }

    pub fn findings(&self) -> impl Iterator<Item = &AuditFindingNode> {
        self.findings.values()
    }

    /// All edges in id order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    /// Number of edges incident to `node` in either direction.
    pub fn degree(&self, node: NodeId) -> usize {
        let end = Endpoint::Node(node);
        self.edges
            .values()
            .filter(|e| e.from == end || e.to == end)
            .count()
    }

    fn targets(&self, kind: EdgeKind, from: Endpoint) -> impl Iterator<Item = &Edge> + '_ {
        self.edges
            .values()
            .filter(move |e| e.kind == kind && e.from == from)
    }

    pub fn project_by_name(&self, name: &str) -> Option<&ProjectNode> {
        self.projects.values().find(|p| p.name == name)
    }

    /// Semantics with an `Underlies` edge to any of `business_types`, by id.
    pub fn query_semantics_by_business(
        &self,
        business_types: &BTreeSet<BusinessType>,
    ) -> Vec<&DefiSemanticNode> {
        let ids: BTreeSet<NodeId> = self
            .edges
            .values()
            .filter(|e| e.kind == EdgeKind::Underlies)
            .filter(|e| matches!(e.to, Endpoint::Business(b) if business_types.contains(&b)))
            .filter_map(|e| e.from.as_node())
            .collect();
        ids.into_iter().filter_map(|id| self.semantics.get(&id)).collect()
    }

    /// Patterns with a `Poses` edge to any of `attack_types`, by id.
    pub fn query_patterns_by_attack(
        &self,
        attack_types: &BTreeSet<AttackType>,
    ) -> Vec<&VulnerabilityPatternNode> {
        let ids: BTreeSet<NodeId> = self
            .edges
            .values()
            .filter(|e| e.kind == EdgeKind::Poses)
            .filter(|e| matches!(e.to, Endpoint::Attack(a) if attack_types.contains(&a)))
            .filter_map(|e| e.from.as_node())
            .collect();
        ids.into_iter().filter_map(|id| self.patterns.get(&id)).collect()
    }

    /// Patterns reachable from `semantic` over `MayIntroduce`, with the link
    /// rationale, ordered by pattern id.
    pub fn linked_patterns(
        &self,
        semantic: NodeId,
    ) -> Result<Vec<(&VulnerabilityPatternNode, Option<&str>)>, GraphError> {
        self.expect_kind(semantic, NodeKind::Semantic)?;
        let mut out: Vec<_> = self
            .targets(EdgeKind::MayIntroduce, semantic.into())
            .filter_map(|e| {
                let id = e.to.as_node()?;
                Some((self.patterns.get(&id)?, e.rationale.as_deref()))
            })
            .collect();
        out.sort_by_key(|(p, _)| p.id);
        Ok(out)
    }

    /// Business types a project belongs to.
    pub fn business_types_of_project(&self, project: NodeId) -> BTreeSet<BusinessType> {
        self.targets(EdgeKind::BelongsTo, project.into())
            .filter_map(|e| match e.to {
                Endpoint::Business(b) => Some(b),
                _ => None,
            })
            .collect()
    }

    pub fn business_types_of_semantic(&self, semantic: NodeId) -> BTreeSet<BusinessType> {
        self.targets(EdgeKind::Underlies, semantic.into())
            .filter_map(|e| match e.to {
                Endpoint::Business(b) => Some(b),
                _ => None,
            })
            .collect()
    }

    pub fn attack_types_of_pattern(&self, pattern: NodeId) -> BTreeSet<AttackType> {
        self.targets(EdgeKind::Poses, pattern.into())
            .filter_map(|e| match e.to {
                Endpoint::Attack(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    /// Semantics a project `Contains`, by id.
    pub fn project_semantics(&self, project: NodeId) -> Vec<NodeId> {
        let ids: BTreeSet<NodeId> = self
            .targets(EdgeKind::Contains, project.into())
            .filter_map(|e| e.to.as_node())
            .collect();
        ids.into_iter().collect()
    }

    /// Findings owned by a project through its `Has` edges, by id.
    pub fn project_findings(&self, project: NodeId) -> Vec<NodeId> {
        let ids: BTreeSet<NodeId> = self
            .targets(EdgeKind::Has, project.into())
            .filter_map(|e| e.to.as_node())
            .collect();
        ids.into_iter().collect()
    }

    /// Patterns that contribute to any finding of `project`, by id.
    pub fn project_patterns(&self, project: NodeId) -> Vec<NodeId> {
        let findings: BTreeSet<Endpoint> = self
            .project_findings(project)
            .into_iter()
            .map(Endpoint::Node)
            .collect();
        let ids: BTreeSet<NodeId> = self
            .edges
            .values()
            .filter(|e| e.kind == EdgeKind::ContributesTo && findings.contains(&e.to))
            .filter_map(|e| e.from.as_node())
            .collect();
        ids.into_iter().collect()
    }

    /// The project that owns `finding`, if it has been linked.
    pub fn finding_owner(&self, finding: NodeId) -> Option<NodeId> {
        self.finding_owner.get(&finding).copied()
    }

    /// A finding of `project` whose normalized title and body match.
    pub fn find_project_finding(&self, project: NodeId, title: &str, body: &str) -> Option<NodeId> {
        let want = Fingerprint::of(title, body);
        self.project_findings(project).into_iter().find(|id| {
            self.findings
                .get(id)
                .map(|f| Fingerprint::of(&f.title, &f.body) == want)
                .unwrap_or(false)
        })
    }

    pub fn stats(&self) -> GraphStats {
        let mut edges: BTreeMap<EdgeKind, usize> =
            EdgeKind::ALL.into_iter().map(|k| (k, 0)).collect();
        for e in self.edges.values() {
            *edges.entry(e.kind).or_default() += 1;
        }
        GraphStats {
            projects: self.projects.len(),
            semantics: self.semantics.len(),
            patterns: self.patterns.len(),
            findings: self.findings.len(),
            edges,
        }
    }

    /// Full schema check. Returns every problem found rather than the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut issues = Vec::new();
        let mut seen = BTreeSet::new();
        let mut has_count: BTreeMap<NodeId, usize> =
            self.findings.keys().map(|id| (*id, 0)).collect();
        for e in self.edges.values() {
            let (want_from, want_to) = e.kind.endpoint_kinds();
            if e.from.kind() != want_from || e.to.kind() != want_to {
                issues.push(format!("{}: {} has wrong endpoint kinds", e.id, e.kind));
            }
            for end in [e.from, e.to] {
                if let Endpoint::Node(id) = end {
                    if !self.contains_node(id) {
                        issues.push(format!("{}: dangling endpoint {id}", e.id));
                    }
                }
            }
            if !seen.insert((e.kind, e.from, e.to)) {
                issues.push(format!("{}: duplicate {} {} -> {}", e.id, e.kind, e.from, e.to));
            }
            if e.kind == EdgeKind::Has {
                if let Some(count) = e.to.as_node().and_then(|f| has_count.get_mut(&f)) {
                    *count += 1;
                }
            }
        }
        for (finding, count) in has_count {
            if count != 1 {
                issues.push(format!("{finding} has {count} incoming Has edges"));
            }
        }
        for (id, node) in self.semantics.iter().chain(self.patterns.iter()) {
            if node.id != *id || node.title.trim().is_empty() || node.merged_from.is_empty() {
                issues.push(format!("{id}: malformed abstraction node"));
            }
        }
        for (id, node) in &self.projects {
            if node.id != *id || node.name.trim().is_empty() {
                issues.push(format!("{id}: malformed project node"));
            }
        }
        for (id, node) in &self.findings {
            if node.id != *id {
                issues.push(format!("{id}: malformed finding node"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// Canonical JSON document. Identical graphs always render to identical
    /// bytes.
    pub fn to_json(&self) -> String {
        let doc = Document {
            version: FORMAT_VERSION as u64,
            nodes: Nodes {
                projects: self.projects.values().cloned().collect(),
                semantics: self.semantics.values().cloned().collect(),
                patterns: self.patterns.values().cloned().collect(),
                findings: self.findings.values().cloned().collect(),
            },
            edges: self.edges.values().cloned().collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("graph serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| GraphError::Parse {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let found = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| GraphError::Parse {
                offset: 0,
                message: "missing numeric `version`".into(),
            })?;
        if found != FORMAT_VERSION as u64 {
            return Err(GraphError::UnsupportedVersion {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let doc: Document = serde_json::from_value(value).map_err(|e| GraphError::Parse {
            offset: 0,
            message: e.to_string(),
        })?;
        Self::from_document(doc)
    }

    fn from_document(doc: Document) -> Result<Self, GraphError> {
        let mut g = KnowledgeGraph::new();
        let duplicate = |id: &dyn fmt::Display| GraphError::Parse {
            offset: 0,
            message: format!("duplicate id {id}"),
        };
        let wrong_kind = |id: NodeId, kind: NodeKind| GraphError::Parse {
            offset: 0,
            message: format!("{id} listed among {kind} nodes"),
        };
        for p in doc.nodes.projects {
            if p.id.kind() != NodeKind::Project {
                return Err(wrong_kind(p.id, NodeKind::Project));
            }
            if g.projects.insert(p.id, p.clone()).is_some() {
                return Err(duplicate(&p.id));
            }
        }
        for (kind, list) in [
            (NodeKind::Semantic, doc.nodes.semantics),
            (NodeKind::Pattern, doc.nodes.patterns),
        ] {
            for n in list {
                if n.id.kind() != kind {
                    return Err(wrong_kind(n.id, kind));
                }
                for fp in &n.merged_from {
                    g.fingerprints.entry((kind, fp.clone())).or_insert(n.id);
                }
                g.revision = g.revision.max(n.revision);
                if g.store_mut(kind).insert(n.id, n.clone()).is_some() {
                    return Err(duplicate(&n.id));
                }
            }
        }
        for f in doc.nodes.findings {
            if f.id.kind() != NodeKind::Finding {
                return Err(wrong_kind(f.id, NodeKind::Finding));
            }
            if g.findings.insert(f.id, f.clone()).is_some() {
                return Err(duplicate(&f.id));
            }
        }
        for kind in NodeKind::ALL {
            let max = match kind {
                NodeKind::Project => g.projects.keys().last(),
                NodeKind::Semantic => g.semantics.keys().last(),
                NodeKind::Pattern => g.patterns.keys().last(),
                NodeKind::Finding => g.findings.keys().last(),
            };
            g.next_seq[kind.index()] = max.map_or(1, |id| id.seq() + 1);
        }
        for e in doc.edges {
            if g.edges.contains_key(&e.id) {
                return Err(duplicate(&e.id));
            }
            g.next_edge = g.next_edge.max(e.id.0 + 1);
            if e.kind == EdgeKind::Has {
                if let (Some(p), Some(f)) = (e.from.as_node(), e.to.as_node()) {
                    g.finding_owner.insert(f, p);
                }
            }
            g.edge_index.insert((e.kind, e.from, e.to), e.id);
            g.edges.insert(e.id, e);
        }
        g.validate().map_err(|issues| GraphError::SchemaViolation(issues.join("; ")))?;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u64,
    nodes: Nodes,
    edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Nodes {
    projects: Vec<ProjectNode>,
    semantics: Vec<AbstractionNode>,
    patterns: Vec<AbstractionNode>,
    findings: Vec<AuditFindingNode>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project(g: &mut KnowledgeGraph, name: &str) -> NodeId {
        g.add_node(NewNode::Project {
            name: name.into(),
            source_ref: format!("corpus/{name}"),
        })
        .unwrap()
        .id()
    }

    fn semantic(g: &mut KnowledgeGraph, title: &str) -> NodeId {
        g.add_node(NewNode::Semantic(Abstraction::new(title, format!("{title} mechanism"))))
            .unwrap()
            .id()
    }

    fn pattern(g: &mut KnowledgeGraph, title: &str) -> NodeId {
        g.add_node(NewNode::Pattern(Abstraction::new(title, format!("{title} root cause"))))
            .unwrap()
            .id()
    }

    fn finding(g: &mut KnowledgeGraph, project: NodeId, title: &str) -> NodeId {
        g.add_finding(
            project,
            NewFinding {
                title: title.into(),
                severity: Severity::High,
                body: "body".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn first_project_gets_sequential_id() {
        let mut g = KnowledgeGraph::new();
        let id = project(&mut g, "alpha");
        assert_eq!(id.to_string(), "proj-000001");
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn duplicate_fingerprint_returns_existing() {
        let mut g = KnowledgeGraph::new();
        let first = semantic(&mut g, "Swap token X to token Y");
        let again = g
            .add_node(NewNode::Semantic(Abstraction::new(
                "  swap TOKEN x to token y ",
                "Swap token X to token Y   mechanism",
            )))
            .unwrap();
        assert_eq!(again, AddOutcome::Existing(first));
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn distinct_semantics_get_increasing_ids() {
        let mut g = KnowledgeGraph::new();
        let titles = ["a", "b", "c"];
        let mut oracle = std::collections::HashSet::new();
        let ids: Vec<_> = titles
            .iter()
            .map(|t| {
                oracle.insert(*t);
                semantic(&mut g, t)
            })
            .collect();
        assert_eq!(g.semantics().count(), oracle.len());
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_title_rejected() {
        let mut g = KnowledgeGraph::new();
        let err = g
            .add_node(NewNode::Semantic(Abstraction::new(" ", "x")))
            .unwrap_err();
        assert!(matches!(err, GraphError::EmptyField("title")));
        assert!(matches!(
            g.add_node(NewNode::Project { name: "".into(), source_ref: "".into() }),
            Err(GraphError::EmptyField("name"))
        ));
    }

    #[test]
    fn second_has_edge_is_schema_violation() {
        let mut g = KnowledgeGraph::new();
        let p1 = project(&mut g, "one");
        let p2 = project(&mut g, "two");
        let f = finding(&mut g, p1, "drain");
        let err = g.add_edge(EdgeKind::Has, p2, f, None).unwrap_err();
        assert!(matches!(err, GraphError::SchemaViolation(_)));
        // re-adding the original is a no-op
        let before = g.edge_count();
        g.add_edge(EdgeKind::Has, p1, f, None).unwrap();
        assert_eq!(g.edge_count(), before);
        assert_eq!(g.finding_owner(f), Some(p1));
    }

    #[test]
    fn duplicate_edge_is_idempotent() {
        let mut g = KnowledgeGraph::new();
        let p = project(&mut g, "one");
        let s = semantic(&mut g, "swap");
        let e1 = g.add_edge(EdgeKind::Contains, p, s, None).unwrap();
        let e2 = g.add_edge(EdgeKind::Contains, p, s, None).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn endpoint_kind_mismatch() {
        let mut g = KnowledgeGraph::new();
        let p = project(&mut g, "one");
        let s = semantic(&mut g, "swap");
        let err = g.add_edge(EdgeKind::Contains, s, p, None).unwrap_err();
        assert!(matches!(err, GraphError::SchemaViolation(_)));
        let err = g
            .add_edge(EdgeKind::Poses, s, AttackType::Reentrancy, None)
            .unwrap_err();
        assert!(matches!(err, GraphError::SchemaViolation(_)));
        let ghost = NodeId::new(NodeKind::Semantic, 99);
        assert!(g.add_edge(EdgeKind::Contains, p, ghost, None).is_err());
    }

    #[test]
    fn may_introduce_visible_through_linked_patterns() {
        let mut g = KnowledgeGraph::new();
        let s = semantic(&mut g, "proportional shares");
        let p = pattern(&mut g, "first depositor inflation");
        g.add_edge(EdgeKind::MayIntroduce, s, p, Some("ratio can be inflated".into()))
            .unwrap();
        let linked = g.linked_patterns(s).unwrap();
        // oracle: filter the raw edge list
        let oracle: Vec<_> = g
            .edges()
            .filter(|e| e.kind == EdgeKind::MayIntroduce && e.from == Endpoint::Node(s))
            .map(|e| (e.to.as_node().unwrap(), e.rationale.clone()))
            .collect();
        assert_eq!(linked.len(), oracle.len());
        assert_eq!(linked[0].0.id, oracle[0].0);
        assert_eq!(linked[0].1, Some("ratio can be inflated"));
    }

    #[test]
    fn linked_patterns_ordering_and_errors() {
        let mut g = KnowledgeGraph::new();
        let s = semantic(&mut g, "s");
        let lonely = semantic(&mut g, "t");
        let pats: Vec<_> = ["p1", "p2", "p3"].iter().map(|t| pattern(&mut g, t)).collect();
        for p in pats.iter().rev() {
            g.add_edge(EdgeKind::MayIntroduce, s, *p, None).unwrap();
        }
        let got: Vec<_> = g.linked_patterns(s).unwrap().iter().map(|(p, _)| p.id).collect();
        assert_eq!(got, pats);
        assert!(g.linked_patterns(lonely).unwrap().is_empty());
        let missing = NodeId::new(NodeKind::Semantic, 77);
        assert!(matches!(g.linked_patterns(missing), Err(GraphError::NotFound(_))));
        assert!(matches!(
            g.linked_patterns(pats[0]),
            Err(GraphError::KindMismatch { .. })
        ));
    }

    #[test]
    fn query_by_business() {
        let mut g = KnowledgeGraph::new();
        assert!(g
            .query_semantics_by_business(&[BusinessType::Dexes].into())
            .is_empty());
        let s1 = semantic(&mut g, "swap");
        let s2 = semantic(&mut g, "borrow");
        g.add_edge(EdgeKind::Underlies, s1, BusinessType::Dexes, None).unwrap();
        g.add_edge(EdgeKind::Underlies, s2, BusinessType::Lending, None).unwrap();
        let got: Vec<_> = g
            .query_semantics_by_business(&[BusinessType::Dexes].into())
            .iter()
            .map(|n| n.id)
            .collect();
        assert_eq!(got, vec![s1]);

        g.add_edge(EdgeKind::Underlies, s1, BusinessType::Lending, None).unwrap();
        let got: Vec<_> = g
            .query_semantics_by_business(&[BusinessType::Dexes, BusinessType::Lending].into())
            .iter()
            .map(|n| n.id)
            .collect();
        assert_eq!(got, vec![s1, s2]);
    }

    #[test]
    fn merge_keeps_id_and_edges() {
        let mut g = KnowledgeGraph::new();
        let a = project(&mut g, "uniswap-v2");
        let b = project(&mut g, "uniswap-v3");
        let c = project(&mut g, "curve-tricrypto");
        let swap = g
            .add_node(NewNode::Semantic(Abstraction::new(
                "Swap token X to token Y",
                "Two-token swap priced by reserves",
            )))
            .unwrap()
            .id();
        g.add_edge(EdgeKind::Contains, a, swap, None).unwrap();
        g.add_edge(EdgeKind::Contains, b, swap, None).unwrap();
        let degree = g.degree(swap);
        let candidate = Abstraction::new(
            "Swap token X to token Y",
            "Two-token swap over concentrated liquidity ranges",
        );
        let merged = g
            .merge_semantics(
                swap,
                &candidate,
                "Two-token swap following the constant product model, with or without concentrated ranges",
            )
            .unwrap();
        assert_eq!(merged, swap);
        assert!(g.degree(swap) >= degree);
        let node = g.semantic(swap).unwrap();
        assert!(node.description.contains("constant product"));
        assert_eq!(node.merged_from.len(), 2);

        let tri = g
            .add_node(NewNode::Semantic(Abstraction::new(
                "Swap among three tokens",
                "Three-asset invariant swap",
            )))
            .unwrap();
        assert!(tri.is_new());
        g.add_edge(EdgeKind::Contains, c, swap, None).unwrap();
        let incoming = g
            .edges()
            .filter(|e| e.kind == EdgeKind::Contains && e.to == Endpoint::Node(swap))
            .count();
        assert_eq!(incoming, 3);
        assert_eq!(g.semantics().count(), 2);
    }

    #[test]
    fn merge_identity_grows_merged_from() {
        let mut g = KnowledgeGraph::new();
        let s = semantic(&mut g, "swap");
        let before = g.semantic(s).unwrap().clone();
        let same = Abstraction::new(before.title.clone(), before.description.clone());
        g.merge_semantics(s, &same, &before.description).unwrap();
        let after = g.semantic(s).unwrap();
        assert_eq!(after.description, before.description);
        assert_eq!(after.title, before.title);
        assert_eq!(after.merged_from.len(), before.merged_from.len() + 1);
    }

    #[test]
    fn merge_kind_mismatch() {
        let mut g = KnowledgeGraph::new();
        let p = pattern(&mut g, "p");
        let c = Abstraction::new("x", "y");
        assert!(matches!(
            g.merge_semantics(p, &c, "z"),
            Err(GraphError::KindMismatch { .. })
        ));
        assert!(g.merge_patterns(p, &c, "z").is_ok());
    }

    #[test]
    fn merged_fingerprint_is_recognized() {
        let mut g = KnowledgeGraph::new();
        let s = semantic(&mut g, "swap");
        let c = Abstraction::new("swap v3", "ranges");
        g.merge_semantics(s, &c, "merged").unwrap();
        assert_eq!(
            g.add_node(NewNode::Semantic(c)).unwrap(),
            AddOutcome::Existing(s)
        );
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let mut g = KnowledgeGraph::new();
        let p = project(&mut g, "vault");
        let s = semantic(&mut g, "shares");
        let pat = pattern(&mut g, "inflation");
        let f = finding(&mut g, p, "first depositor");
        g.add_edge(EdgeKind::BelongsTo, p, BusinessType::Yield, None).unwrap();
        g.add_edge(EdgeKind::Contains, p, s, None).unwrap();
        g.add_edge(EdgeKind::ContributesTo, pat, f, None).unwrap();
        g.add_edge(EdgeKind::Poses, pat, AttackType::Arithmetic, None).unwrap();
        g.add_edge(EdgeKind::MayIntroduce, s, pat, Some("why".into())).unwrap();
        let text = g.to_json();
        let back = KnowledgeGraph::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), text);
        // ids continue after reload
        let mut back = back;
        assert_eq!(project(&mut back, "next").to_string(), "proj-000002");
    }

    #[test]
    fn empty_round_trip() {
        let g = KnowledgeGraph::new();
        assert_eq!(KnowledgeGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn truncated_document_reports_offset() {
        let mut g = KnowledgeGraph::new();
        project(&mut g, "x");
        let text = g.to_json();
        let cut = &text[..text.len() - 20];
        match KnowledgeGraph::from_json(cut) {
            Err(GraphError::Parse { offset, .. }) => assert!(offset > 0 && offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = KnowledgeGraph::new().to_json().replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(
            KnowledgeGraph::from_json(&text),
            Err(GraphError::UnsupportedVersion { found: 7, .. })
        ));
    }

    #[test]
    fn dangling_edge_in_document_rejected() {
        let text = r#"{"version":1,"nodes":{"projects":[],"semantics":[],"patterns":[],"findings":[]},
            "edges":[{"id":"edge-000001","kind":"Contains","from":"proj-000001","to":"sem-000001"}]}"#;
        assert!(matches!(
            KnowledgeGraph::from_json(text),
            Err(GraphError::SchemaViolation(_))
        ));
    }

    #[test]
    fn endpoint_strings() {
        for s in ["sem-000003", "business:Cross Chain", "attack:Storage & Memory"] {
            let e = Endpoint::try_from(s.to_string()).unwrap();
            assert_eq!(e.to_string(), s);
        }
        assert!(Endpoint::try_from("foo-1".to_string()).is_err());
        assert!("sem-".parse::<NodeId>().is_err());
    }
}
