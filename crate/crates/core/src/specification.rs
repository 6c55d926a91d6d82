//! Auditing specifications: a three-state attack scenario expressed as
//! invariants over contract state, generated per semantic/pattern pair.
//!
//! Pre- and post-vulnerability invariants are the properties a harness
//! asserts. Post-vulnerability invariants are phrased as the safety property
//! the attack breaks, so an oracle failure witnesses the post-vulnerability
//! state.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::AbstractionNode;
use crate::ingest::{self, ProjectCorpus};
use crate::llm::{render_prompt, slot, Bindings, Call, LlmError, LlmGateway, Role, StructuredOutput, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateRef {
    pub contract: String,
    /// State variable or view function, optionally with call syntax such as
    /// `balanceOf(attacker)`; only the leading identifier is resolved.
    pub accessor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<String>,
}

impl StateRef {
    pub fn accessor_name(&self) -> &str {
        leading_identifier(&self.accessor)
    }
}

impl fmt::Display for StateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.contract, self.accessor)?;
        if let Some(q) = &self.qualifier {
            write!(f, "[{q}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
    /// `|subject - bound| <= tolerance * |bound|`
    Within,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Eq => "==",
            Relation::Neq => "!=",
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
            Relation::Within => "within",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Literal(String),
    State(StateRef),
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Literal(v) => f.write_str(v),
            Bound::State(r) => r.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateInvariant {
    /// Assigned after generation: `init-N`, `pre-N` or `post-N`.
    #[serde(default)]
    pub id: String,
    pub subject: StateRef,
    pub relation: Relation,
    pub bound: Bound,
    /// Relative tolerance, required for [`Relation::Within`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<String>,
    #[serde(default)]
    pub description: String,
}

impl fmt::Display for StateInvariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {} {} {}", self.id, self.subject, self.relation.symbol(), self.bound)?;
        if let Some(t) = &self.tolerance {
            write!(f, " (tolerance {t})")?;
        }
        if !self.description.is_empty() {
            write!(f, ": {}", self.description)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Deployment {
    pub contract: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Funding {
    /// Harness-side account label such as `attacker`.
    pub account: String,
    /// A deployed contract name, or `ETH`.
    pub token: String,
    pub amount: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InitialState {
    #[serde(default)]
    pub deploy: Vec<Deployment>,
    #[serde(default)]
    pub fund: Vec<Funding>,
    #[serde(default)]
    pub invariants: Vec<StateInvariant>,
}

impl InitialState {
    pub fn is_empty(&self) -> bool {
        self.deploy.is_empty() && self.invariants.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuditSpecification {
    pub pair_id: String,
    pub version: u32,
    pub initial_state: InitialState,
    pub pre_vuln_state: Vec<StateInvariant>,
    pub post_vuln_state: Vec<StateInvariant>,
    pub attack_narrative: String,
}

impl AuditSpecification {
    /// Invariants that become harness oracles, pre-vulnerability first.
    pub fn oracles(&self) -> impl Iterator<Item = &StateInvariant> {
        self.pre_vuln_state.iter().chain(&self.post_vuln_state)
    }

    pub fn oracle_ids(&self) -> Vec<&str> {
        self.oracles().map(|i| i.id.as_str()).collect()
    }

    /// True when every section matches `other`, ignoring pair and version.
    pub fn same_content(&self, other: &AuditSpecification) -> bool {
        self.initial_state == other.initial_state
            && self.pre_vuln_state == other.pre_vuln_state
            && self.post_vuln_state == other.post_vuln_state
            && self.attack_narrative == other.attack_narrative
    }

    /// Renumbers invariant ids by section and position.
    pub fn assign_ids(&mut self) {
        for (prefix, list) in [
            ("init", &mut self.initial_state.invariants),
            ("pre", &mut self.pre_vuln_state),
            ("post", &mut self.post_vuln_state),
        ] {
            for (i, inv) in list.iter_mut().enumerate() {
                inv.id = format!("{prefix}-{}", i + 1);
            }
        }
    }

    /// Plain-text rendering for prompts.
    pub fn render(&self) -> String {
        let mut out = format!("Pair {} version {}\n\nInitial state:\n", self.pair_id, self.version);
        for d in &self.initial_state.deploy {
            out.push_str(&format!("- deploy {}({})\n", d.contract, d.args.join(", ")));
        }
        for f in &self.initial_state.fund {
            out.push_str(&format!("- fund {} with {} {}\n", f.account, f.amount, f.token));
        }
        let section = |out: &mut String, title: &str, list: &[StateInvariant]| {
            out.push_str(title);
            for inv in list {
                out.push_str(&format!("- {inv}\n"));
            }
        };
        section(&mut out, "", &self.initial_state.invariants);
        section(&mut out, "\nPre-vulnerability state:\n", &self.pre_vuln_state);
        section(&mut out, "\nPost-vulnerability state:\n", &self.post_vuln_state);
        out.push_str(&format!("\nAttack narrative:\n{}\n", self.attack_narrative));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecViolation {
    EmptySection(&'static str),
    UnresolvableSubject { invariant: String, name: String },
    UnknownContract(String),
    UnknownFundingToken { account: String, token: String },
    MissingTolerance(String),
    IdenticalToPredecessor,
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::EmptySection(s) => write!(f, "section {s} is empty"),
            SpecViolation::UnresolvableSubject { invariant, name } => {
                write!(f, "unresolvable subject `{name}` in invariant {invariant}")
            }
            SpecViolation::UnknownContract(c) => write!(f, "deployment of unknown contract `{c}`"),
            SpecViolation::UnknownFundingToken { account, token } => {
                write!(f, "account {account} is funded with `{token}`, which is neither deployed nor ETH")
            }
            SpecViolation::MissingTolerance(id) => write!(f, "invariant {id} uses Within without a tolerance"),
            SpecViolation::IdenticalToPredecessor => {
                write!(f, "the regenerated specification is identical to the rejected one")
            }
        }
    }
}

fn leading_identifier(s: &str) -> &str {
    let s = s.trim();
    let end = s
        .char_indices()
        .find(|(i, c)| !(c.is_ascii_alphanumeric() || *c == '_' || *c == '$') || (*i == 0 && c.is_ascii_digit()))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    &s[..end]
}

/// Identifiers of the Solidity sources, plus the names they declare as
/// contracts, libraries or interfaces.
#[derive(Debug, Clone, Default)]
pub struct SourceIndex {
    pub identifiers: BTreeSet<String>,
    pub contracts: BTreeSet<String>,
}

impl SourceIndex {
    pub fn of(corpus: &ProjectCorpus) -> Self {
        let mut index = SourceIndex::default();
        for doc in corpus.sources() {
            let tokens = identifiers(&doc.text);
            for pair in tokens.windows(2) {
                if matches!(pair[0], "contract" | "library" | "interface") {
                    index.contracts.insert(pair[1].to_string());
                }
            }
            index.identifiers.extend(tokens.into_iter().map(str::to_string));
        }
        index
    }

    pub fn resolves(&self, name: &str) -> bool {
        !name.is_empty() && self.identifiers.contains(name)
    }
}

fn identifiers(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$') {
                i += 1;
            }
            out.push(&text[start..i]);
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Checks section presence and name resolution against the corpus sources.
/// All problems are returned, not just the first.
pub fn validate_specification(spec: &AuditSpecification, corpus: &ProjectCorpus) -> Result<(), Vec<SpecViolation>> {
    validate_against(spec, &SourceIndex::of(corpus))
}

pub fn validate_against(spec: &AuditSpecification, index: &SourceIndex) -> Result<(), Vec<SpecViolation>> {
    let mut out = Vec::new();
    if spec.initial_state.is_empty() {
        out.push(SpecViolation::EmptySection("initial_state"));
    }
    if spec.pre_vuln_state.is_empty() {
        out.push(SpecViolation::EmptySection("pre_vuln_state"));
    }
    if spec.post_vuln_state.is_empty() {
        out.push(SpecViolation::EmptySection("post_vuln_state"));
    }
    for d in &spec.initial_state.deploy {
        if !index.contracts.contains(&d.contract) {
            out.push(SpecViolation::UnknownContract(d.contract.clone()));
        }
    }
    let deployed: BTreeSet<&str> = spec.initial_state.deploy.iter().map(|d| d.contract.as_str()).collect();
    for f in &spec.initial_state.fund {
        if f.token != "ETH" && !deployed.contains(f.token.as_str()) {
            out.push(SpecViolation::UnknownFundingToken {
                account: f.account.clone(),
                token: f.token.clone(),
            });
        }
    }
    let all = spec.initial_state.invariants.iter().chain(spec.oracles());
    for inv in all {
        let mut refs = vec![&inv.subject];
        if let Bound::State(r) = &inv.bound {
            refs.push(r);
        }
        for r in refs {
            for name in [r.contract.as_str(), r.accessor_name()] {
                if !index.resolves(name) {
                    out.push(SpecViolation::UnresolvableSubject {
                        invariant: inv.id.clone(),
                        name: name.to_string(),
                    });
                }
            }
        }
        if inv.relation == Relation::Within && inv.tolerance.as_deref().map_or(true, |t| t.trim().is_empty()) {
            out.push(SpecViolation::MissingTolerance(inv.id.clone()));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

// ---- generation ----

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct SpecReply {
    pub initial_state: InitialState,
    pub pre_vuln_state: Vec<StateInvariant>,
    pub post_vuln_state: Vec<StateInvariant>,
    pub attack_narrative: String,
}

impl StructuredOutput for SpecReply {
    const FORMAT: &'static str = r#"{
  "initial_state": {
    "deploy": [{"contract": "<Contract>", "args": ["<constructor argument>"]}],
    "fund": [{"account": "<label>", "token": "<deployed Contract or ETH>", "amount": "<integer>"}],
    "invariants": [<invariant>]
  },
  "pre_vuln_state": [<invariant>],
  "post_vuln_state": [<invariant>],
  "attack_narrative": "..."
}
where <invariant> is {"subject": {"contract": "<Contract>", "accessor": "<variable or view function>", "qualifier": "<optional argument>"}, "relation": "Eq|Neq|Lt|Le|Gt|Ge|Within", "bound": {"literal": "<value>"} or {"state": <subject>}, "tolerance": "<relative, only for Within>", "description": "..."}"#;
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("specification failed validation: {}", join(.0))]
    ValidationFailed(Vec<SpecViolation>),
}

fn join(v: &[SpecViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl SpecError {
    pub fn is_budget(&self) -> bool {
        matches!(self, SpecError::Llm(e) if e.is_budget())
    }
}

/// Everything the generator needs for one pair.
pub struct SpecRequest<'a> {
    pub pair_id: &'a str,
    pub semantic: &'a AbstractionNode,
    pub pattern: &'a AbstractionNode,
    pub corpus: &'a ProjectCorpus,
    /// Reflection feedback from earlier attempts, included verbatim.
    pub feedback: &'a [String],
    /// The rejected specification this one replaces, if any.
    pub previous: Option<&'a AuditSpecification>,
    pub version: u32,
    pub max_source_units: usize,
}

fn describe(node: &AbstractionNode) -> String {
    format!("[{}] {}\n{}", node.id, node.title, node.description)
}

fn check(spec: &AuditSpecification, req: &SpecRequest<'_>, index: &SourceIndex) -> Result<(), Vec<SpecViolation>> {
    let mut problems = validate_against(spec, index).err().unwrap_or_default();
    if let Some(prev) = req.previous {
        if !req.feedback.is_empty() && spec.same_content(prev) {
            problems.push(SpecViolation::IdenticalToPredecessor);
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

/// Generates and validates a specification. A specification that fails
/// validation gets one guided retry listing the problems; a second failure
/// is [`SpecError::ValidationFailed`].
pub fn generate_specification(llm: &LlmGateway, req: &SpecRequest<'_>) -> Result<AuditSpecification, SpecError> {
    let feedback = req
        .feedback
        .iter()
        .enumerate()
        .map(|(i, f)| format!("Attempt {}: {f}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let bindings: Bindings = [
        (slot::SEMANTIC, describe(req.semantic)),
        (slot::PATTERN, describe(req.pattern)),
        (slot::INPUTS, ingest::render_corpus(req.corpus, req.max_source_units)),
        (slot::FEEDBACK, feedback),
    ]
    .into_iter()
    .collect();
    let base = render_prompt(TemplateId::SpecGeneration, &bindings)?;
    let index = SourceIndex::of(req.corpus);
    let purpose = format!("audit:{}:spec-v{}", req.pair_id, req.version);

    let mut prompt = base.clone();
    for attempt in 0..2 {
        let reply = llm.complete::<SpecReply>(Call::new(
            Role::Reasoning,
            TemplateId::SpecGeneration,
            prompt.clone(),
            purpose.clone(),
        ))?;
        let r = reply.parsed;
        let mut spec = AuditSpecification {
            pair_id: req.pair_id.to_string(),
            version: req.version,
            initial_state: r.initial_state,
            pre_vuln_state: r.pre_vuln_state,
            post_vuln_state: r.post_vuln_state,
            attack_narrative: r.attack_narrative,
        };
        spec.assign_ids();
        match check(&spec, req, &index) {
            Ok(()) => return Ok(spec),
            Err(problems) if attempt == 0 => {
                tracing::debug!(pair = req.pair_id, problems = %join(&problems), "retrying specification");
                prompt = format!(
                    "{base}\n## Validation Problems\nThe previous specification was rejected:\n{}\nFix every problem and reply again.\n",
                    problems.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
                );
            }
            Err(problems) => return Err(SpecError::ValidationFailed(problems)),
        }
    }
    unreachable!("loop returns on the second attempt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Abstraction, KnowledgeGraph, NewNode};
    use crate::ingest::{Document, DocumentKind};
    use crate::llm::{MockProvider, RoleTable};
    use proptest::prelude::*;
    use serde_json::json;
    use std::sync::Arc;

    const VAULT: &str = "contract ShareVault {\n  uint256 public totalShares;\n  mapping(address => uint256) public sharesOf;\n  function totalAssets() public view returns (uint256) {}\n}\ncontract MockToken { function balanceOf(address a) external view returns (uint256) {} }\n";

    fn corpus() -> ProjectCorpus {
        ProjectCorpus::from_documents(
            "vault",
            "vault",
            vec![Document {
                path: "src/ShareVault.sol".into(),
                kind: DocumentKind::Source,
                text: VAULT.into(),
            }],
        )
        .unwrap()
    }

    fn inv(contract: &str, accessor: &str, relation: Relation, bound: Bound) -> StateInvariant {
        StateInvariant {
            id: String::new(),
            subject: StateRef {
                contract: contract.into(),
                accessor: accessor.into(),
                qualifier: None,
            },
            relation,
            bound,
            tolerance: None,
            description: String::new(),
        }
    }

    fn good() -> AuditSpecification {
        let mut s = AuditSpecification {
            pair_id: "pair-1".into(),
            version: 1,
            initial_state: InitialState {
                deploy: vec![
                    Deployment { contract: "MockToken".into(), args: vec![] },
                    Deployment { contract: "ShareVault".into(), args: vec!["MockToken".into()] },
                ],
                fund: vec![Funding { account: "attacker".into(), token: "MockToken".into(), amount: "2000000".into() }],
                invariants: vec![inv("ShareVault", "totalShares", Relation::Eq, Bound::Literal("0".into()))],
            },
            pre_vuln_state: vec![inv(
                "ShareVault",
                "totalAssets()",
                Relation::Ge,
                Bound::State(StateRef { contract: "ShareVault".into(), accessor: "totalShares".into(), qualifier: None }),
            )],
            post_vuln_state: vec![inv("ShareVault", "sharesOf(victim)", Relation::Gt, Bound::Literal("0".into()))],
            attack_narrative: "seed, donate, victim rounds to zero".into(),
        };
        s.assign_ids();
        s
    }

    #[test]
    fn fixture_spec_is_valid() {
        assert_eq!(validate_specification(&good(), &corpus()), Ok(()));
        assert_eq!(good().oracle_ids(), vec!["pre-1", "post-1"]);
    }

    #[test]
    fn unknown_contract_and_empty_post() {
        let mut s = good();
        s.post_vuln_state.clear();
        s.pre_vuln_state[0].subject.contract = "Vault4626".into();
        s.initial_state.deploy.push(Deployment { contract: "Router".into(), args: vec![] });
        let v = validate_specification(&s, &corpus()).unwrap_err();
        assert!(v.contains(&SpecViolation::EmptySection("post_vuln_state")));
        assert!(v.contains(&SpecViolation::UnknownContract("Router".into())));
        assert!(v.iter().any(|x| matches!(x, SpecViolation::UnresolvableSubject { name, .. } if name == "Vault4626")));
    }

    #[test]
    fn within_needs_tolerance() {
        let mut s = good();
        s.post_vuln_state[0].relation = Relation::Within;
        let v = validate_specification(&s, &corpus()).unwrap_err();
        assert_eq!(v, vec![SpecViolation::MissingTolerance("post-1".into())]);
    }

    #[test]
    fn json_shape_round_trips() {
        let s = good();
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert!(text.contains("\"literal\": \"0\""));
        assert_eq!(serde_json::from_str::<AuditSpecification>(&text).unwrap(), s);
    }

    fn reply_of(spec: &AuditSpecification) -> serde_json::Value {
        json!({
            "initial_state": spec.initial_state,
            "pre_vuln_state": spec.pre_vuln_state,
            "post_vuln_state": spec.post_vuln_state,
            "attack_narrative": spec.attack_narrative,
        })
    }

    fn nodes() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.add_node(NewNode::Semantic(Abstraction::new("Proportional share accounting", "s = a*S/A"))).unwrap();
        g.add_node(NewNode::Pattern(Abstraction::new("First depositor inflation", "seed and donate"))).unwrap();
        g
    }

    #[test]
    fn regeneration_includes_feedback_and_rejects_identical_output() {
        let prev = good();
        let mut changed = good();
        changed.initial_state.fund.push(Funding { account: "victim".into(), token: "MockToken".into(), amount: "1000000".into() });
        let script = json!([
            {"template": "SpecGeneration", "index": 0, "reply": reply_of(&prev)},
            {"template": "SpecGeneration", "index": 1, "reply": reply_of(&changed)},
        ]);
        let mock = Arc::new(MockProvider::from_json(&script.to_string()).unwrap());
        let gw = LlmGateway::new(mock.clone(), RoleTable::free());
        let g = nodes();
        let feedback = vec!["setUp never funds the victim".to_string()];
        let corpus = corpus();
        let req = SpecRequest {
            pair_id: "pair-1",
            semantic: g.semantics().next().unwrap(),
            pattern: g.patterns().next().unwrap(),
            corpus: &corpus,
            feedback: &feedback,
            previous: Some(&prev),
            version: 2,
            max_source_units: 10_000,
        };
        let spec = generate_specification(&gw, &req).unwrap();
        assert_eq!(spec.version, 2);
        assert_ne!(spec.initial_state, prev.initial_state);
        let prompts = mock.prompts();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[0].1.contains("Attempt 1: setUp never funds the victim"));
        assert!(prompts[1].1.contains("identical to the rejected one"));
    }

    #[test]
    fn two_invalid_specs_fail_validation() {
        let mut bad = good();
        bad.post_vuln_state.clear();
        let script = json!([{"template": "SpecGeneration", "reply": reply_of(&bad)}]);
        let mock = Arc::new(MockProvider::from_json(&script.to_string()).unwrap());
        let gw = LlmGateway::new(mock.clone(), RoleTable::free());
        let g = nodes();
        let corpus = corpus();
        let req = SpecRequest {
            pair_id: "pair-1",
            semantic: g.semantics().next().unwrap(),
            pattern: g.patterns().next().unwrap(),
            corpus: &corpus,
            feedback: &[],
            previous: None,
            version: 1,
            max_source_units: 10_000,
        };
        assert!(matches!(generate_specification(&gw, &req), Err(SpecError::ValidationFailed(_))));
        assert_eq!(mock.calls(), 2);
    }

    proptest! {
        /// Corrupting a name to something absent from the sources is always
        /// caught, and a validating spec only names identifiers that occur
        /// in the sources.
        #[test]
        fn validated_specs_only_name_known_identifiers(
            which in 0usize..4,
            junk in "[A-Z][a-z]{3,8}Zq",
        ) {
            let mut s = good();
            match which {
                0 => s.pre_vuln_state[0].subject.contract = junk.clone(),
                1 => s.post_vuln_state[0].subject.accessor = junk.clone(),
                2 => s.initial_state.invariants[0].subject.accessor = format!("{junk}()"),
                _ => s.pre_vuln_state[0].bound = Bound::State(StateRef { contract: "ShareVault".into(), accessor: junk.clone(), qualifier: None }),
            }
            let c = corpus();
            prop_assert!(validate_specification(&s, &c).is_err());
            let ok = good();
            prop_assert!(validate_specification(&ok, &c).is_ok());
            let idx = SourceIndex::of(&c);
            for inv in ok.initial_state.invariants.iter().chain(ok.oracles()) {
                prop_assert!(VAULT.contains(&inv.subject.contract));
                prop_assert!(idx.resolves(inv.subject.accessor_name()));
            }
        }
    }
}
