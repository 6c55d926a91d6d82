use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::builder::{load_inputs, CategoryBank};
use crate::fuzz::{CoverageMap, FileCoverage, FuzzError, FuzzOutcome, RecordedExecutor};
use crate::graph::Abstraction;
use crate::harness::{CompiledHarness, MockToolchain};
use crate::ingest::{load_project, ProjectCorpus};
use crate::llm::{MockProvider, ModelProfile, RoleTable, ScriptEntry, UsagePolicy};
use crate::taxonomy::{AttackType, BusinessType};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn gateway(entries: Vec<ScriptEntry>) -> (Arc<MockProvider>, LlmGateway) {
    let mock = Arc::new(MockProvider::new(entries));
    let gw = LlmGateway::new(mock.clone(), RoleTable::free());
    (mock, gw)
}

fn script(path: PathBuf) -> Vec<ScriptEntry> {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn mini_graph() -> KnowledgeGraph {
    let (_, gw) = gateway(script(fixtures().join("mini-corpus/transcript.json")));
    let bank = CategoryBank::default();
    let inputs = load_inputs(fixtures().join("mini-corpus/manifest.json")).unwrap();
    let report = GraphBuilder::new(&gw, &bank, BuilderConfig::default()).build_graph(&inputs);
    assert!(!report.halted);
    report.graph
}

fn vault() -> ProjectCorpus {
    load_project(fixtures().join("first-depositor-vault")).unwrap()
}

/// The vault transcript with every entry answering any ordinal, and the
/// reflection entries replaced by `verdicts` in order.
fn vault_script(verdicts: &[VerdictKind]) -> Vec<ScriptEntry> {
    let mut entries: Vec<ScriptEntry> = script(fixtures().join("first-depositor-vault/transcript.json"))
        .into_iter()
        .filter(|e| e.template != TemplateId::Reflection || verdicts.is_empty())
        .map(|mut e| {
            e.index = None;
            e
        })
        .collect();
    // Regenerated specifications must differ from the rejected one.
    let spec = entries.iter().find(|e| e.template == TemplateId::SpecGeneration).unwrap().clone();
    for i in 1..40 {
        let mut revised = spec.clone();
        revised.index = Some(i);
        let narrative = revised.reply["attack_narrative"].as_str().unwrap().to_string();
        revised.reply["attack_narrative"] = json!(format!("{narrative} (revision {i})"));
        entries.push(revised);
    }
    for (i, v) in verdicts.iter().enumerate() {
        entries.push(ScriptEntry {
            template: TemplateId::Reflection,
            index: Some(i),
            reply: reflection(*v),
            prompt_tokens: None,
            completion_tokens: None,
        });
    }
    entries
}

fn reflection(kind: VerdictKind) -> serde_json::Value {
    let matches = matches!(kind, VerdictKind::TrueFinding | VerdictKind::OutOfScope);
    let mut reply = json!({
        "matches_specification": matches,
        "verdict": kind,
        "reasoning": format!("judged {kind}"),
    });
    if kind == VerdictKind::TrueFinding {
        reply["title"] = json!("Share inflation");
        reply["severity"] = json!("High");
    }
    reply
}

struct Run {
    report: AuditReportOut,
    memory: WorkingMemory,
    graph: KnowledgeGraph,
    mock: Arc<MockProvider>,
    ws: tempfile::TempDir,
}

fn run_vault(entries: Vec<ScriptEntry>, graph: KnowledgeGraph, executor: &dyn Executor, budget: Usd) -> Run {
    let (mock, gw) = gateway(entries);
    run_with(gw, mock, graph, executor, budget)
}

fn run_with(gw: LlmGateway, mock: Arc<MockProvider>, mut graph: KnowledgeGraph, executor: &dyn Executor, budget: Usd) -> Run {
    let bank = CategoryBank::default();
    let toolchain = MockToolchain::always_ok();
    let auditor = Auditor {
        llm: &gw,
        bank: &bank,
        toolchain: &toolchain,
        executor,
        config: AuditConfig {
            seed: Some(7),
            ..AuditConfig::default()
        },
    };
    let ws = tempfile::tempdir().unwrap();
    let workspace = AuditWorkspace::create(ws.path()).unwrap();
    let (report, memory) = auditor
        .run_audit_with_memory(&vault(), &mut graph, budget, &workspace)
        .unwrap();
    Run {
        report,
        memory,
        graph,
        mock,
        ws,
    }
}

fn recorded() -> RecordedExecutor {
    RecordedExecutor::new(fixtures().join("first-depositor-vault/recorded"))
}

/// Serves the given outcomes in order, repeating the last.
struct Scripted(Mutex<Vec<FuzzOutcome>>);

impl Executor for Scripted {
    fn run(&self, _: &CompiledHarness, config: &RunConfig) -> Result<FuzzOutcome, FuzzError> {
        let mut q = self.0.lock().unwrap();
        let mut next = if q.len() > 1 { q.remove(0) } else { q[0].clone() };
        next.coverage = next.coverage.attributed(config.attribution.clone());
        Ok(next)
    }
}

fn clean_outcome() -> FuzzOutcome {
    let mut cov = CoverageMap::empty("x");
    cov.files.insert(
        "src/ShareVault.sol".into(),
        FileCoverage {
            covered: [1, 2].into(),
            instrumentable: [1, 2, 3, 4].into(),
        },
    );
    FuzzOutcome {
        run_id: "clean-0".into(),
        coverage: cov,
        violation: None,
        wall_time_ms: 0,
    }
}

fn pair(sem: u64, pat: u64) -> SemanticVulnPair {
    SemanticVulnPair::new(NodeId::new(NodeKind::Semantic, sem), NodeId::new(NodeKind::Pattern, pat), "")
}

fn coverage(covered: u32, total: u32) -> CoverageMap {
    let mut cov = CoverageMap::empty("x");
    cov.files.insert(
        "src/A.sol".into(),
        FileCoverage {
            covered: (1..=covered).collect(),
            instrumentable: (1..=total).collect(),
        },
    );
    cov
}

// ---- scheduling ----

#[test]
fn schedule_puts_least_covered_first_and_keeps_ties() {
    let mut memory = WorkingMemory::new();
    memory.append(MemoryEntry::CoverageRecord {
        semantic: NodeId::new(NodeKind::Semantic, 1),
        coverage: coverage(3, 4),
    });
    memory.append(MemoryEntry::CoverageRecord {
        semantic: NodeId::new(NodeKind::Semantic, 2),
        coverage: coverage(1, 4),
    });
    let pairs = vec![pair(1, 1), pair(2, 1), pair(3, 1), pair(1, 2), pair(3, 2)];
    let order: Vec<String> = schedule_pairs(&pairs, &memory).into_iter().map(|p| p.id).collect();
    assert_eq!(
        order,
        [
            "sem-000003_pat-000001",
            "sem-000003_pat-000002",
            "sem-000002_pat-000001",
            "sem-000001_pat-000001",
            "sem-000001_pat-000002",
        ]
    );
}

proptest! {
    #[test]
    fn schedule_matches_insertion_sort(
        pairs in prop::collection::vec((1u64..5, 1u64..4), 0..12),
        covered in prop::collection::vec(0u32..=6, 4),
    ) {
        let mut memory = WorkingMemory::new();
        for (i, c) in covered.iter().enumerate() {
            memory.append(MemoryEntry::CoverageRecord {
                semantic: NodeId::new(NodeKind::Semantic, i as u64 + 1),
                coverage: coverage(*c, 6),
            });
        }
        let pairs: Vec<SemanticVulnPair> = pairs.into_iter().map(|(s, p)| pair(s, p)).collect();
        // Independent oracle: a hand-written stable insertion sort.
        let mut expected: Vec<SemanticVulnPair> = Vec::new();
        for p in &pairs {
            let key = memory.coverage_ratio(p.semantic);
            let at = expected
                .iter()
                .position(|q| memory.coverage_ratio(q.semantic) > key)
                .unwrap_or(expected.len());
            expected.insert(at, p.clone());
        }
        prop_assert_eq!(schedule_pairs(&pairs, &memory), expected);
    }
}

// ---- mapping ----

#[test]
fn empty_graph_maps_to_nothing_without_calls() {
    let (mock, gw) = gateway(vault_script(&[]));
    let bank = CategoryBank::default();
    let toolchain = MockToolchain::always_ok();
    let executor = recorded();
    let auditor = Auditor {
        llm: &gw,
        bank: &bank,
        toolchain: &toolchain,
        executor: &executor,
        config: AuditConfig::default(),
    };
    assert!(auditor.map_knowledge(&vault(), &KnowledgeGraph::new()).is_empty());
    assert_eq!(mock.calls(), 0);
}

fn scoped_graph() -> (KnowledgeGraph, [NodeId; 3], [NodeId; 3]) {
    let mut g = KnowledgeGraph::new();
    let sem = |g: &mut KnowledgeGraph, t: &str| g.add_node(NewNode::Semantic(Abstraction::new(t, "d"))).unwrap().id();
    let pat = |g: &mut KnowledgeGraph, t: &str| g.add_node(NewNode::Pattern(Abstraction::new(t, "d"))).unwrap().id();
    let s = [sem(&mut g, "Share minting"), sem(&mut g, "Share burning"), sem(&mut g, "Swap pricing")];
    let p = [pat(&mut g, "Donation inflation"), pat(&mut g, "Rounding to zero"), pat(&mut g, "Stale price")];
    g.add_edge(EdgeKind::Underlies, s[0], BusinessType::Lending, None).unwrap();
    g.add_edge(EdgeKind::Underlies, s[1], BusinessType::Lending, None).unwrap();
    g.add_edge(EdgeKind::Underlies, s[2], BusinessType::Dexes, None).unwrap();
    g.add_edge(EdgeKind::MayIntroduce, s[0], p[0], Some("donation".into())).unwrap();
    g.add_edge(EdgeKind::MayIntroduce, s[0], p[1], None).unwrap();
    g.add_edge(EdgeKind::MayIntroduce, s[1], p[1], None).unwrap();
    g.add_edge(EdgeKind::MayIntroduce, s[2], p[2], None).unwrap();
    (g, s, p)
}

#[test]
fn mapping_expands_scoped_matches_into_linked_patterns() {
    let (g, s, p) = scoped_graph();
    let mut entries = vault_script(&[]);
    entries.retain(|e| e.template != TemplateId::Mapping);
    entries.push(ScriptEntry {
        template: TemplateId::Mapping,
        index: None,
        reply: json!({"matches": [
            {"project_semantic": "a", "graph_semantic": s[0].to_string(), "reasoning": "r0"},
            {"project_semantic": "b", "graph_semantic": s[1].to_string(), "reasoning": "r1"},
            {"project_semantic": "c", "graph_semantic": s[0].to_string(), "reasoning": "again"},
            {"project_semantic": "d", "graph_semantic": s[2].to_string(), "reasoning": "not lending"},
            {"project_semantic": "e", "graph_semantic": "sem-000099", "reasoning": "unknown"},
        ]}),
        prompt_tokens: None,
        completion_tokens: None,
    });
    let (mock, gw) = gateway(entries);
    let bank = CategoryBank::default();
    let toolchain = MockToolchain::always_ok();
    let executor = recorded();
    let auditor = Auditor {
        llm: &gw,
        bank: &bank,
        toolchain: &toolchain,
        executor: &executor,
        config: AuditConfig::default(),
    };
    let pairs = auditor.map_knowledge(&vault(), &g);
    let ids: Vec<(NodeId, NodeId)> = pairs.iter().map(|q| (q.semantic, q.pattern)).collect();
    assert_eq!(ids, vec![(s[0], p[0]), (s[0], p[1]), (s[1], p[1])]);
    assert_eq!(pairs[0].rationale, "r0\ndonation");
    let map_prompt = &mock.prompts()[2].1;
    assert!(map_prompt.contains("Share burning"));
    assert!(!map_prompt.contains("Swap pricing"));
}

// ---- reflection ----

fn vault_spec() -> AuditSpecification {
    let entry = script(fixtures().join("first-depositor-vault/transcript.json"))
        .into_iter()
        .find(|e| e.template == TemplateId::SpecGeneration)
        .unwrap();
    let mut reply = entry.reply;
    reply["pair_id"] = json!("sem-000002_pat-000002");
    reply["version"] = json!(1);
    let mut spec: AuditSpecification = serde_json::from_value(reply).unwrap();
    spec.assign_ids();
    spec
}

fn vault_violation() -> Violation {
    let outcome = RecordedExecutor::new(fixtures().join("first-depositor-vault/recorded"))
        .load("b73ff027973c682629844a2158fbe77cd660055f2c301f7ba4726fd57254ecbd")
        .unwrap();
    outcome.violation.unwrap()
}

#[test]
fn reflection_prompt_carries_scope_and_rules() {
    let (mock, gw) = gateway(vec![ScriptEntry {
        template: TemplateId::Reflection,
        index: None,
        reply: reflection(VerdictKind::OutOfScope),
        prompt_tokens: None,
        completion_tokens: None,
    }]);
    let corpus = vault();
    let mut memory = WorkingMemory::new();
    let v = reflect_finding(&gw, &vault_violation(), &vault_spec(), &corpus.scope_notes, DEFAULT_GENERAL_RULES, &mut memory).unwrap();
    assert_eq!(v.kind, VerdictKind::OutOfScope);
    let prompt = &mock.prompts()[0].1;
    assert!(prompt.to_lowercase().contains("fee-on-transfer"));
    assert!(prompt.contains("oracle:post-1") || prompt.contains("post-1"));
    assert!(prompt.contains(DEFAULT_GENERAL_RULES.lines().next().unwrap()));
    assert_eq!(memory.feedback("sem-000002_pat-000002"), vec!["OutOfScope: judged OutOfScope".to_string()]);
}

#[test]
fn malformed_reflection_is_conservative() {
    let bad = json!({"matches_specification": false, "verdict": "TrueFinding", "reasoning": "x"});
    let (mock, gw) = gateway(vec![ScriptEntry {
        template: TemplateId::Reflection,
        index: None,
        reply: bad,
        prompt_tokens: None,
        completion_tokens: None,
    }]);
    let mut memory = WorkingMemory::new();
    let v = reflect_finding(&gw, &vault_violation(), &vault_spec(), "", DEFAULT_GENERAL_RULES, &mut memory).unwrap();
    assert_eq!(v.kind, VerdictKind::ProblematicSpecOrHarness);
    assert_eq!(mock.calls(), 2);
    assert_eq!(memory.len(), 1);
}

// ---- graph feedback ----

fn finding(verdict: VerdictKind, pattern: NodeId) -> ReportedFinding {
    ReportedFinding {
        title: "Share inflation".into(),
        severity: Severity::High,
        pair: "sem-000002_pat-000002".into(),
        semantic: NodeId::new(NodeKind::Semantic, 2),
        pattern,
        spec_version: 1,
        specification: vault_spec(),
        violation: vault_violation(),
        run_id: "r".into(),
        verdict: Verdict {
            kind: verdict,
            reasoning: "because".into(),
            title: None,
            severity: None,
        },
        graph_node: None,
    }
}

#[test]
fn ingest_adds_one_finding_and_its_edges_once() {
    let mut g = mini_graph();
    let pattern = NodeId::new(NodeKind::Pattern, 2);
    assert_eq!(g.attack_types_of_pattern(pattern), [AttackType::Arithmetic].into());
    let project = g.add_node(NewNode::Project { name: "vault".into(), source_ref: "v".into() }).unwrap().id();
    let (nodes, edges) = (g.node_count(), g.edge_count());

    let rejected = ingest_finding(&mut g, &finding(VerdictKind::ExpectedBehavior, pattern), project);
    assert!(matches!(rejected, Err(IngestFindingError::NotConfirmed(VerdictKind::ExpectedBehavior))));
    assert_eq!((g.node_count(), g.edge_count()), (nodes, edges));

    let f = finding(VerdictKind::TrueFinding, pattern);
    let first = ingest_finding(&mut g, &f, project).unwrap();
    assert!(first.added);
    assert_eq!(first.new_edges, 3);
    assert_eq!((g.node_count(), g.edge_count()), (nodes + 1, edges + 3));
    assert!(g.validate().is_ok());

    let again = ingest_finding(&mut g, &f, project).unwrap();
    assert_eq!(again, FindingIngest { finding: first.finding, added: false, new_edges: 0 });
    assert_eq!((g.node_count(), g.edge_count()), (nodes + 1, edges + 3));
}

#[test]
fn ingest_failure_leaves_graph_untouched() {
    let mut g = mini_graph();
    let project = g.project_by_name("pairswap").unwrap().id;
    let before = g.to_json();
    let missing = NodeId::new(NodeKind::Pattern, 42);
    assert!(ingest_finding(&mut g, &finding(VerdictKind::TrueFinding, missing), project).is_err());
    assert_eq!(g.to_json(), before);
}

// ---- the loop ----

#[test]
fn vault_audit_confirms_the_share_inflation() {
    let executor = recorded();
    let run = run_vault(vault_script(&[]), mini_graph(), &executor, Usd::from_cents(1000));
    assert_eq!(run.report.pairs_mapped, 1);
    assert_eq!(run.report.findings.len(), 1);
    let f = &run.report.findings[0];
    assert_eq!(f.pair, "sem-000002_pat-000002");
    assert_eq!(f.violation.oracle_id, "post-1");
    let node = f.graph_node.unwrap();
    let project = run.graph.project_by_name("first-depositor-vault").unwrap().id;
    assert_eq!(run.graph.finding_owner(node), Some(project));
    assert_eq!(run.report.pairs[0].status, PairStatus::Finding);
    assert!(run.report.coverage[0].ratio > 0.0);

    let ws = run.ws.path();
    for rel in ["specs/sem-000002_pat-000002-v1.json", "report.json", "report.md", "memory.log", "kg.json"] {
        assert!(ws.join(rel).is_file(), "{rel}");
    }
    let saved = KnowledgeGraph::load(ws.join("kg.json")).unwrap();
    assert_eq!(saved.to_json(), run.graph.to_json());
    assert_eq!(run.mock.calls(), 6);
}

#[test]
fn problematic_verdict_regenerates_once_with_feedback() {
    use VerdictKind::*;
    let executor = recorded();
    let run = run_vault(vault_script(&[ProblematicSpecOrHarness, TrueFinding]), mini_graph(), &executor, Usd::from_cents(1000));
    assert_eq!(run.mock.calls_for(TemplateId::SpecGeneration), 2);
    assert_eq!(run.memory.spec_attempts("sem-000002_pat-000002"), 2);
    assert_eq!(run.report.findings[0].spec_version, 2);
    let second = run
        .mock
        .prompts()
        .into_iter()
        .filter(|(t, _)| *t == TemplateId::SpecGeneration)
        .nth(1)
        .unwrap()
        .1;
    assert!(second.contains("ProblematicSpecOrHarness: judged ProblematicSpecOrHarness"));
}

#[test]
fn regeneration_is_capped() {
    let executor = recorded();
    let run = run_vault(
        vault_script(&[VerdictKind::ProblematicSpecOrHarness; 5]),
        mini_graph(),
        &executor,
        Usd::from_cents(1000),
    );
    assert_eq!(run.memory.spec_attempts("sem-000002_pat-000002"), 1 + DEFAULT_REGENERATION_CAP as usize);
    assert!(matches!(run.report.pairs[0].status, PairStatus::Blocked { .. }));
    assert!(run.report.findings.is_empty());
}

#[test]
fn clean_run_moves_on_and_records_coverage() {
    let executor = Scripted(Mutex::new(vec![clean_outcome()]));
    let run = run_vault(vault_script(&[]), mini_graph(), &executor, Usd::from_cents(1000));
    assert_eq!(run.report.pairs[0].status, PairStatus::Clean);
    assert_eq!(run.mock.calls_for(TemplateId::Reflection), 0);
    let sem = NodeId::new(NodeKind::Semantic, 2);
    assert_eq!(run.memory.coverage_ratio(sem), 0.5);
    assert_eq!(run.memory.coverage(sem).unwrap().attribution, sem.to_string());
}

#[test]
fn zero_budget_is_rejected() {
    let (_, gw) = gateway(vec![]);
    let bank = CategoryBank::default();
    let toolchain = MockToolchain::always_ok();
    let executor = recorded();
    let auditor = Auditor {
        llm: &gw,
        bank: &bank,
        toolchain: &toolchain,
        executor: &executor,
        config: AuditConfig::default(),
    };
    let dir = tempfile::tempdir().unwrap();
    let ws = AuditWorkspace::create(dir.path()).unwrap();
    let err = auditor.run_audit(&vault(), &mut mini_graph(), Usd::ZERO, &ws).unwrap_err();
    assert!(matches!(err, AuditError::ZeroBudget));
}

/// The mini-corpus graph with `extra` more patterns under the vault's
/// semantic, so the mapping yields `extra + 1` pairs.
fn wide_graph(extra: usize) -> KnowledgeGraph {
    let mut g = mini_graph();
    let sem = NodeId::new(NodeKind::Semantic, 2);
    for i in 0..extra {
        let p = g
            .add_node(NewNode::Pattern(Abstraction::new(format!("Pattern {i}"), "d")))
            .unwrap()
            .id();
        g.add_edge(EdgeKind::Poses, p, AttackType::Arithmetic, None).unwrap();
        g.add_edge(EdgeKind::MayIntroduce, sem, p, None).unwrap();
    }
    g
}

fn priced_gateway(entries: Vec<ScriptEntry>, per_call: Usd) -> (Arc<MockProvider>, LlmGateway) {
    let mock = Arc::new(MockProvider::new(entries).with_usage(UsagePolicy::Fixed {
        prompt_tokens: 1,
        completion_tokens: 0,
    }));
    let profile = |role, name: &str| ModelProfile {
        role,
        model_name: name.into(),
        input_cost_per_token: per_call,
        output_cost_per_token: Usd::ZERO,
    };
    let roles = RoleTable {
        reasoning: profile(Role::Reasoning, "r"),
        synthesis: profile(Role::Synthesis, "s"),
    };
    (mock.clone(), LlmGateway::new(mock, roles))
}

#[test]
fn budget_halts_the_loop_at_the_limit() {
    let (mock, gw) = priced_gateway(vault_script(&[VerdictKind::ProblematicSpecOrHarness; 64]), Usd::from_cents(50));
    let executor = recorded();
    let run = run_with(gw, mock, wide_graph(10), &executor, Usd::from_cents(1000));
    assert_eq!(run.mock.calls(), 20);
    assert_eq!(run.report.ledger.total, Usd::from_cents(1000));
    assert!(run.report.halted.is_some());
    assert!(run.report.pairs.iter().any(|p| p.status == PairStatus::Incomplete));
    assert!(run.report.pairs.iter().any(|p| p.status == PairStatus::NotReached));
    assert!(run.ws.path().join("report.json").is_file());
}

fn verdict_strategy() -> impl Strategy<Value = VerdictKind> {
    prop_oneof![
        Just(VerdictKind::TrueFinding),
        Just(VerdictKind::ExpectedBehavior),
        Just(VerdictKind::ProblematicSpecOrHarness),
        Just(VerdictKind::OutOfScope),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn memory_log_mirrors_an_append_only_history(
        verdicts in prop::collection::vec(verdict_strategy(), 1..10),
        extra in 0usize..3,
    ) {
        let executor = recorded();
        let run = run_vault(vault_script(&verdicts), wide_graph(extra), &executor, Usd::from_cents(1000));
        let log = std::fs::read_to_string(run.ws.path().join("memory.log")).unwrap();
        let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        prop_assert_eq!(lines.len(), run.memory.len());
        for (i, (line, entry)) in lines.iter().zip(run.memory.entries()).enumerate() {
            let mut line = line.clone();
            let seq = line.as_object_mut().unwrap().remove("seq").unwrap();
            prop_assert_eq!(seq, json!(i));
            prop_assert_eq!(line, serde_json::to_value(entry).unwrap());
        }
        for p in &run.report.pairs {
            prop_assert!(p.spec_versions <= 1 + DEFAULT_REGENERATION_CAP);
        }
        let confirmed = run.report.pairs.iter().filter(|p| p.status == PairStatus::Finding).count();
        prop_assert_eq!(confirmed, run.report.findings.len());
    }
}
