use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::ingest::{Document, DocumentKind};
use crate::llm::{MockProvider, RoleTable};
use crate::specification::{Bound, Deployment, Funding, InitialState, Relation, StateInvariant, StateRef};

fn inv(accessor: &str, relation: Relation, bound: &str) -> StateInvariant {
    StateInvariant {
        id: String::new(),
        subject: StateRef {
            contract: "Vault".into(),
            accessor: accessor.into(),
            qualifier: None,
        },
        relation,
        bound: Bound::Literal(bound.into()),
        tolerance: None,
        description: String::new(),
    }
}

fn spec() -> AuditSpecification {
    let mut s = AuditSpecification {
        pair_id: "p1".into(),
        version: 1,
        initial_state: InitialState {
            deploy: vec![Deployment {
                contract: "Vault".into(),
                args: vec![],
            }],
            fund: vec![Funding {
                account: "attacker".into(),
                token: "ETH".into(),
                amount: "1".into(),
            }],
            invariants: vec![],
        },
        pre_vuln_state: vec![inv("total", Relation::Ge, "0")],
        post_vuln_state: vec![inv("total", Relation::Lt, "100")],
        attack_narrative: "n".into(),
    };
    s.assign_ids();
    s
}

const GOOD: &str = r#"contract VaultTest {
    address attacker = address(0xa11);
    function setUp() public { vault = new Vault(); }
    function poke() public {}
    function invariant_a() public { require(vault.total() >= 0, "oracle:pre-1"); }
    function invariant_b() public { require(vault.total() < 100, "oracle:post-1"); }
}"#;

fn harness(src: &str) -> HarnessSource {
    HarnessSource {
        files: vec![HarnessFile {
            path: "test/VaultTest.t.sol".into(),
            source: src.into(),
        }],
        entry_contract: "VaultTest".into(),
        handler_names: vec!["poke".into()],
    }
}

fn reply(src: &str, summary: &str) -> serde_json::Value {
    json!({
        "files": [{"path": "test/VaultTest.t.sol", "source": src}],
        "entry_contract": "VaultTest",
        "handler_names": ["poke"],
        "patch_summary": summary,
    })
}

fn corpus() -> ProjectCorpus {
    ProjectCorpus::from_documents(
        "v",
        "v",
        vec![Document {
            path: "src/Vault.sol".into(),
            kind: DocumentKind::Source,
            text: "contract Vault { uint256 public total; }".into(),
        }],
    )
    .unwrap()
}

#[test]
fn good_harness_passes_structure() {
    assert_eq!(structural_check(&harness(GOOD), &spec()), Ok(()));
}

#[test]
fn structure_catches_oracle_mistakes() {
    let dup = GOOD.replace("\"oracle:post-1\"", "\"oracle:pre-1\"");
    let problems = structural_check(&harness(&dup), &spec()).unwrap_err();
    assert!(problems.contains(&HarnessProblem::MissingOracle("post-1".into())));
    assert!(problems.contains(&HarnessProblem::DuplicateOracle { id: "pre-1".into(), count: 2 }));

    let foreign = GOOD.replace("function poke() public {}", "function poke() public { require(true, \"oracle:post-9\"); }");
    let problems = structural_check(&harness(&foreign), &spec()).unwrap_err();
    assert_eq!(problems, vec![HarnessProblem::ForeignOracle("post-9".into())]);
}

#[test]
fn structure_catches_setup_and_paths() {
    let mut h = harness(&GOOD.replace("new Vault()", "Vault(address(0))").replace("attacker", "alice"));
    h.files[0].path = "../escape.sol".into();
    let problems = structural_check(&h, &spec()).unwrap_err();
    assert!(problems.contains(&HarnessProblem::BadPath("../escape.sol".into())));
    assert!(problems.contains(&HarnessProblem::MissingDeployment("Vault".into())));
    assert!(problems.contains(&HarnessProblem::UnfundedAccount("attacker".into())));
}

#[test]
fn content_hash_ignores_file_order() {
    let mut a = harness(GOOD);
    a.files.push(HarnessFile {
        path: "test/Handler.sol".into(),
        source: "contract H {}".into(),
    });
    let mut b = a.clone();
    b.files.reverse();
    assert_eq!(a.content_hash(), b.content_hash());
    b.files[0].source.push(' ');
    assert_ne!(a.content_hash(), b.content_hash());
}

#[test]
fn empty_initial_state_is_rejected_before_any_call() {
    let mut s = spec();
    s.initial_state = InitialState::default();
    let mock = Arc::new(MockProvider::new(vec![]));
    let gw = LlmGateway::new(mock.clone(), RoleTable::free());
    let err = synthesize_harness(&gw, &s, &corpus(), 10_000).unwrap_err();
    assert!(matches!(err, HarnessError::EmptyInitialState(_)));
    assert_eq!(mock.calls(), 0);
}

#[test]
fn synthesis_retries_once_with_problems() {
    let bad = GOOD.replace("\"oracle:post-1\"", "\"nope\"");
    let script = json!([
        {"template": "HarnessSynthesis", "index": 0, "reply": reply(&bad, "")},
        {"template": "HarnessSynthesis", "index": 1, "reply": reply(GOOD, "")},
    ]);
    let mock = Arc::new(MockProvider::from_json(&script.to_string()).unwrap());
    let gw = LlmGateway::new(mock.clone(), RoleTable::free());
    let h = synthesize_harness(&gw, &spec(), &corpus(), 10_000).unwrap();
    assert_eq!(h, harness(GOOD));
    let prompts = mock.prompts();
    assert!(prompts[1].1.contains("invariant post-1 has no"));
}

fn run_loop(builds: Vec<BuildResult>, repairs: usize) -> (Result<CompiledHarness, HarnessError>, WorkingMemory, usize, usize) {
    let script: Vec<serde_json::Value> = (0..repairs)
        .map(|i| json!({"template": "HarnessRepair", "index": i, "reply": reply(GOOD, &format!("fix {}", i + 1))}))
        .collect();
    let mock = Arc::new(MockProvider::from_json(&serde_json::Value::Array(script).to_string()).unwrap());
    let gw = LlmGateway::new(mock.clone(), RoleTable::free());
    let tool = MockToolchain::new(builds);
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let cfg = RepairLoop {
        llm: &gw,
        toolchain: &tool,
        spec: &s,
        workspace: dir.path(),
        max_attempts: DEFAULT_MAX_REPAIR_ATTEMPTS,
    };
    let mut memory = WorkingMemory::new();
    let out = compile_and_repair(&cfg, harness(GOOD), &mut memory);
    if let Ok(c) = &out {
        assert!(c.workspace.join("test/VaultTest.t.sol").is_file());
    }
    (out, memory, tool.builds(), mock.calls())
}

#[test]
fn repair_succeeds_after_two_failures() {
    let (out, memory, builds, calls) = run_loop(
        vec![BuildResult::failed("Error: a"), BuildResult::failed("Error: b"), BuildResult::ok()],
        5,
    );
    let compiled = out.unwrap();
    assert_eq!(compiled.attempts, 3);
    assert_eq!(builds, 3);
    assert_eq!(calls, 2);
    assert_eq!(memory.repair_attempts("p1"), 2);
    match &memory.entries()[1] {
        MemoryEntry::ExecutionFailure {
            failure: ExecutionFailure::Repair(r),
            ..
        } => {
            assert_eq!(r.attempt, 2);
            assert_eq!(r.diagnostics, "Error: b");
            assert_eq!(r.patch_summary, "fix 2");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn repair_blocks_after_max_attempts() {
    let (out, memory, builds, calls) = run_loop(vec![BuildResult::failed("Error: always")], 5);
    assert!(matches!(out, Err(HarnessError::Blocked { attempts: 5 })));
    assert_eq!(builds, 5);
    assert_eq!(calls, 4);
    assert_eq!(memory.repair_attempts("p1"), 5);
}

#[test]
fn workspace_overlay_skips_build_outputs() {
    let src = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(src.path().join("src")).unwrap();
    std::fs::create_dir_all(src.path().join("out/x")).unwrap();
    std::fs::create_dir_all(src.path().join("lib/forge-std/src")).unwrap();
    std::fs::write(src.path().join("src/A.sol"), "contract A {}").unwrap();
    std::fs::write(src.path().join("out/x/A.json"), "{}").unwrap();
    std::fs::write(src.path().join("lib/forge-std/src/Test.sol"), "").unwrap();
    let dest = tempfile::tempdir().unwrap();
    prepare_workspace(src.path(), dest.path()).unwrap();
    assert!(dest.path().join("src/A.sol").is_file());
    assert!(dest.path().join("lib/forge-std/src/Test.sol").is_file());
    assert!(!dest.path().join("out").exists());
    assert!(dest.path().join("foundry.toml").is_file());
}
