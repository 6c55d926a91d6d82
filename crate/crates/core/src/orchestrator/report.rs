use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Verdict, WorkingMemory};
use crate::fuzz::Violation;
use crate::graph::NodeId;
use crate::llm::{LlmGateway, Role, Usd};
use crate::specification::AuditSpecification;
use crate::taxonomy::Severity;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedFinding {
    pub title: String,
    /// Advisory; judged by the model.
    pub severity: Severity,
    pub pair: String,
    pub semantic: NodeId,
    pub pattern: NodeId,
    pub spec_version: u32,
    pub specification: AuditSpecification,
    pub violation: Violation,
    pub run_id: String,
    pub verdict: Verdict,
    /// Finding node in the graph once ingested.
    pub graph_node: Option<NodeId>,
}

impl ReportedFinding {
    /// Body stored on the graph node.
    pub fn body(&self) -> String {
        format!("{}\n\n{}", self.specification.attack_narrative, self.violation.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PairStatus {
    Finding,
    /// Fuzzing found no violation.
    Clean,
    ExpectedBehavior,
    OutOfScope,
    Blocked { stage: String, reason: String },
    /// Interrupted by the budget.
    Incomplete,
    NotReached,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSummary {
    pub pair: String,
    pub semantic: NodeId,
    pub pattern: NodeId,
    pub spec_versions: u32,
    #[serde(flatten)]
    pub status: PairStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub calls: usize,
    pub reasoning_calls: usize,
    pub synthesis_calls: usize,
    pub total: Usd,
    pub budget: Option<Usd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageLine {
    pub semantic: NodeId,
    pub covered: usize,
    pub instrumentable: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReportOut {
    pub project: String,
    pub findings: Vec<ReportedFinding>,
    pub pairs_mapped: usize,
    pub pairs: Vec<PairSummary>,
    pub ledger: LedgerSummary,
    pub coverage: Vec<CoverageLine>,
    /// Why the loop stopped early, if it did.
    pub halted: Option<String>,
}

impl AuditReportOut {
    pub fn new(project: &str) -> Self {
        AuditReportOut {
            project: project.to_string(),
            findings: Vec::new(),
            pairs_mapped: 0,
            pairs: Vec::new(),
            ledger: LedgerSummary::default(),
            coverage: Vec::new(),
            halted: None,
        }
    }

    pub(crate) fn finish(&mut self, llm: &LlmGateway, memory: &WorkingMemory) {
        let ledger = llm.ledger();
        let by_role = |role: Role| ledger.entries().iter().filter(|e| e.role == role).count();
        self.ledger = LedgerSummary {
            calls: ledger.len(),
            reasoning_calls: by_role(Role::Reasoning),
            synthesis_calls: by_role(Role::Synthesis),
            total: ledger.total(),
            budget: llm.budget(),
        };
        let semantics: BTreeSet<NodeId> = self.pairs.iter().map(|p| p.semantic).collect();
        self.coverage = semantics
            .into_iter()
            .map(|s| {
                let cov = memory.coverage(s).unwrap_or_default();
                CoverageLine {
                    semantic: s,
                    covered: cov.covered_lines(),
                    instrumentable: cov.instrumentable_lines(),
                    ratio: cov.ratio(),
                }
            })
            .collect();
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn render_markdown(&self) -> String {
        let mut out = format!("# Audit report: {}\n\n", self.project);
        if let Some(h) = &self.halted {
            out.push_str(&format!("The audit stopped early: {h}.\n\n"));
        }
        out.push_str(&format!("## Findings ({})\n\n", self.findings.len()));
        if self.findings.is_empty() {
            out.push_str("No confirmed findings.\n\n");
        }
        for (i, f) in self.findings.iter().enumerate() {
            out.push_str(&format!("### {}. {}\n\n", i + 1, f.title));
            out.push_str(&format!("- Severity (advisory): {}\n", f.severity));
            out.push_str(&format!("- Pair: {} (spec v{})\n", f.pair, f.spec_version));
            out.push_str(&format!("- Run: {}\n", f.run_id));
            if let Some(node) = f.graph_node {
                out.push_str(&format!("- Graph node: {node}\n"));
            }
            out.push_str(&format!("\n{}\n\n", f.verdict.reasoning));
            out.push_str(&format!("```text\n{}```\n\n", f.violation.render()));
        }
        out.push_str("## Pairs\n\n| pair | spec versions | status |\n|---|---|---|\n");
        for p in &self.pairs {
            let status = match &p.status {
                PairStatus::Blocked { stage, reason } => format!("blocked at {stage}: {}", reason.replace('\n', " ")),
                other => serde_json::to_value(other).expect("status")["status"].as_str().unwrap_or("").replace('_', " "),
            };
            out.push_str(&format!("| {} | {} | {} |\n", p.pair, p.spec_versions, status));
        }
        out.push_str("\n## Coverage\n\n| semantic | covered | instrumentable | ratio |\n|---|---|---|---|\n");
        for c in &self.coverage {
            out.push_str(&format!("| {} | {} | {} | {:.3} |\n", c.semantic, c.covered, c.instrumentable, c.ratio));
        }
        let budget = self.ledger.budget.map(|b| format!(" of ${b}")).unwrap_or_default();
        out.push_str(&format!(
            "\n## Spend\n\n{} model calls ({} reasoning, {} synthesis), ${}{}.\n",
            self.ledger.calls, self.ledger.reasoning_calls, self.ledger.synthesis_calls, self.ledger.total, budget
        ));
        out
    }
}
