//! Prompt templates with `{%NAME%}` placeholders.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    Classification,
    Extraction,
    Linking,
    SpecGeneration,
    HarnessSynthesis,
    HarnessRepair,
    Reflection,
    Mapping,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::Classification,
        TemplateId::Extraction,
        TemplateId::Linking,
        TemplateId::SpecGeneration,
        TemplateId::HarnessSynthesis,
        TemplateId::HarnessRepair,
        TemplateId::Reflection,
        TemplateId::Mapping,
    ];

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::Classification => CLASSIFICATION,
            TemplateId::Extraction => EXTRACTION,
            TemplateId::Linking => LINKING,
            TemplateId::SpecGeneration => SPEC_GENERATION,
            TemplateId::HarnessSynthesis => HARNESS_SYNTHESIS,
            TemplateId::HarnessRepair => HARNESS_REPAIR,
            TemplateId::Reflection => REFLECTION,
            TemplateId::Mapping => MAPPING,
        }
    }

    /// Placeholder names used by this template, in order of first use.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for (_, name, _) in scan(self.body()) {
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

pub mod slot {
    pub const CATEGORIES: &str = "CATEGORIES WITH EXAMPLES";
    pub const INPUTS: &str = "PROJECT SOURCE CODE/DOCUMENTS/REPORTS";
    pub const PRIOR: &str = "PREVIOUS SEMANTICS/VULNERABILITIES PATTERN";
    pub const ITEM_KIND: &str = "ITEM KIND";
    pub const TARGET_KIND: &str = "TARGET KIND";
    pub const DEFI_SEMANTICS: &str = "DEFI SEMANTICS";
    pub const VULNERABILITY_PATTERNS: &str = "VULNERABILITY PATTERNS";
    pub const PROJECT_SEMANTICS: &str = "PROJECT SEMANTICS";
    pub const GRAPH_SEMANTICS: &str = "GRAPH SEMANTICS";
    pub const SEMANTIC: &str = "DEFI SEMANTIC";
    pub const PATTERN: &str = "VULNERABILITY PATTERN";
    pub const FEEDBACK: &str = "REFLECTION FEEDBACK";
    pub const SPECIFICATION: &str = "AUDITING SPECIFICATION";
    pub const HARNESS: &str = "HARNESS SOURCE";
    pub const DIAGNOSTICS: &str = "COMPILER DIAGNOSTICS";
    pub const VIOLATION: &str = "VIOLATION EVIDENCE";
    pub const SCOPE_NOTES: &str = "SCOPE NOTES";
    pub const GENERAL_RULES: &str = "GENERAL RULES";
}

/// Text substituted for a binding that is present but empty.
pub const EMPTY_BINDING: &str = "(none)";

pub type Bindings = BTreeMap<&'static str, String>;

/// Yields `(start, name, end)` for every `{%NAME%}` marker.
fn scan(body: &'static str) -> Vec<(usize, &'static str, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(open) = body[pos..].find("{%") {
        let start = pos + open;
        let Some(close) = body[start + 2..].find("%}") else { break };
        let name = &body[start + 2..start + 2 + close];
        let end = start + 2 + close + 2;
        out.push((start, name, end));
        pos = end;
    }
    out
}

/// Substitutes every placeholder in one pass. Values are inserted literally
/// and never rescanned.
pub fn render_prompt(template: TemplateId, bindings: &Bindings) -> Result<String, LlmError> {
    let body = template.body();
    let mut out = String::with_capacity(body.len());
    let mut pos = 0;
    for (start, name, end) in scan(body) {
        let value = bindings
            .get(name)
            .ok_or_else(|| LlmError::UnboundPlaceholder(name.to_string()))?;
        out.push_str(&body[pos..start]);
        if value.trim().is_empty() {
            out.push_str(EMPTY_BINDING);
        } else {
            out.push_str(value);
        }
        pos = end;
    }
    out.push_str(&body[pos..]);
    Ok(out)
}

const CLASSIFICATION: &str = r#"## Task Definition
Given the inputs below, classify them into one or more of the following categories.

{%CATEGORIES WITH EXAMPLES%}

## Inputs
{%PROJECT SOURCE CODE/DOCUMENTS/REPORTS%}

## Step-by-step Instructions
Read all of the inputs first. Then take each {%ITEM KIND%} and weigh it against every category definition and its examples, ignoring branding and other project-specific details. For every category, write out the technical reasoning for why the inputs fit or do not fit before you give a verdict for that category. Only after the reasoning for all categories is written, give the final verdicts.
"#;

const EXTRACTION: &str = r#"## Task Definition
Summarize the inputs below into abstract {%TARGET KIND%} of the following categories.

{%CATEGORIES WITH EXAMPLES%}

## Inputs
{%PROJECT SOURCE CODE/DOCUMENTS/REPORTS%}

## Existing Knowledge
{%PREVIOUS SEMANTICS/VULNERABILITIES PATTERN%}

## Step-by-step Instructions
1. Review all of the inputs. For each {%ITEM KIND%}, describe its core mechanics and intent as a general model, dropping implementation details, in the style of the examples.
2. Compare every model you wrote against the existing knowledge above. Look only at the abstract logic.
3. Before deciding, write down your reasoning: which mechanical aspects overlap with an existing entry, or why nothing there captures the logic.
4. If the model is novel, emit it with no merge target. If it overlaps an existing entry, set the merge target to that entry's id and write a single updated description that covers both the existing entry and the new variation.
"#;

const LINKING: &str = r#"## Task Definition
Below are DeFi semantics and vulnerability patterns observed in the same project and its audit. Link each vulnerability pattern to the DeFi semantics that can introduce it.

## DeFi Semantics
{%DEFI SEMANTICS%}

## Vulnerability Patterns
{%VULNERABILITY PATTERNS%}

## Step-by-step Instructions
Take the vulnerability patterns one at a time. For each one, go through every DeFi semantic and explain whether the semantic is prone to that vulnerability. Emit a link only when you are confident the semantic is closely related to the pattern, and give your reasoning with the link. Use only the ids listed above.
"#;

const MAPPING: &str = r#"## Task Definition
Match the DeFi semantics found in a new project against the DeFi semantics already stored in the knowledge graph.

## Semantics Found In The Project
{%PROJECT SEMANTICS%}

## Semantics In The Knowledge Graph
{%GRAPH SEMANTICS%}

## Step-by-step Instructions
For each project semantic, review the stored semantics and explain which of them describe the same economic mechanism, ignoring naming and implementation differences. Report a match only when the mechanisms agree. Use only the stored ids listed above.
"#;

const SPEC_GENERATION: &str = r#"## Task Definition
Turn the abstract auditing knowledge below into a concrete auditing specification for this project. The specification describes one attack scenario through invariants over the project's state variables, in three states:
- Initial state: the state right after setup and before any function call. List the contracts to deploy and the accounts to fund, plus invariants that must hold after setup.
- Pre-vulnerability state: the state just before the attack, for example a pool that holds liquidity.
- Post-vulnerability state: the state once the vulnerability has been triggered, for example a drained pool or a price moved far outside a reasonable range.

## DeFi Semantic
{%DEFI SEMANTIC%}

## Vulnerability Pattern
{%VULNERABILITY PATTERN%}

## Project Sources
{%PROJECT SOURCE CODE/DOCUMENTS/REPORTS%}

## Feedback On Earlier Attempts
{%REFLECTION FEEDBACK%}

## Step-by-step Instructions
Identify the contracts, functions and state variables of the project that implement the semantic. Explain how the vulnerability pattern could apply to them. Then write the specification. Every invariant subject must name a real contract and a real state variable or accessor from the sources. Relations are one of Eq, Neq, Lt, Le, Gt, Ge, Within; Within compares against the bound with the given tolerance. If feedback is present, address every point it raises.
"#;

const HARNESS_SYNTHESIS: &str = r#"## Task Definition
Write a Foundry fuzzing harness for the auditing specification below.

## Auditing Specification
{%AUDITING SPECIFICATION%}

## Project Sources
{%PROJECT SOURCE CODE/DOCUMENTS/REPORTS%}

## Step-by-step Instructions
1. Encode the initial state as a `setUp` function that deploys the listed contracts and funds the listed accounts.
2. Write handlers as thin wrappers around a few external calls that exercise the DeFi semantic. Put all handlers in one handler contract and register it as the fuzz target.
3. Translate every pre-vulnerability and post-vulnerability invariant into exactly one `require` statement whose message is `"oracle:<invariant id>"`. Do not emit any other statement carrying an oracle message.
4. In each invariant function, log the spec-relevant state with `console.log` lines of the form `STATE <Contract>.<variable> <before> <after>`.
Keep paths relative to the project root and place every file under `test/`.
"#;

const HARNESS_REPAIR: &str = r#"## Task Definition
The Foundry harness below fails to compile. Fix it.

## Auditing Specification
{%AUDITING SPECIFICATION%}

## Current Harness
{%HARNESS SOURCE%}

## Compiler Diagnostics
{%COMPILER DIAGNOSTICS%}

## Step-by-step Instructions
Read every diagnostic and explain its cause. Then return the complete corrected harness. Keep the `setUp` function, the handlers and one `require` per invariant with its `"oracle:<invariant id>"` message. Summarize the fix in one sentence.
"#;

const REFLECTION: &str = r#"## Task Definition
A fuzzing oracle derived from the auditing specification below has failed. Decide whether the violation is a real vulnerability.

## Auditing Specification
{%AUDITING SPECIFICATION%}

## Violation Evidence
{%VIOLATION EVIDENCE%}

## Project Scope Notes
{%SCOPE NOTES%}

## General Rules
{%GENERAL RULES%}

## Step-by-step Instructions
1. Compare the execution trace and state changes with the attack narrative and the post-vulnerability invariants. Explain whether the violation reproduces the described vulnerability.
2. If it does not, decide why. Reverts from intended guards such as owner-only checks are expected behavior. Oracle failures caused by the harness or the specification, such as a contract that setUp never deployed or a wrong assumption about the initial state, are a problematic specification or harness.
3. If it does, check the project scope notes and the general rules. A finding that relies on something the project excludes, such as fee-on-transfer tokens when the README rules them out, is out of scope.
4. For a confirmed finding, give a short title and an advisory severity of High or Medium.
"#;
