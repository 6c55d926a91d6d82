//! Provider-agnostic LLM access.
//!
//! Every call goes through [`LlmGateway::complete`], which checks the budget
//! before contacting the provider, records usage in the ledger, extracts the
//! trailing JSON verdict from the reply and validates it. A reply that fails
//! to parse or validate gets exactly one repair retry.

mod http;
mod mock;
mod template;
mod usage;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use http::{HttpProvider, HttpSettings};
pub use mock::{MockProvider, ScriptEntry, UsagePolicy};
pub use template::{render_prompt, slot, Bindings, TemplateId, EMPTY_BINDING};
pub use usage::{ledger_total, BadAmount, ModelProfile, UsageEntry, UsageLedger, Usd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Classification, extraction, linking, mapping, specs and reflection.
    Reasoning,
    /// Harness synthesis and repair.
    Synthesis,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("template placeholder `{0}` is unbound")]
    UnboundPlaceholder(String),
    #[error("budget exhausted: spent {spent} of {limit}")]
    BudgetExhausted { spent: Usd, limit: Usd },
    #[error("malformed model output after retry: {0}")]
    MalformedOutput(String),
    #[error("provider error: {0}")]
    Provider(String),
}

impl LlmError {
    pub fn is_budget(&self) -> bool {
        matches!(self, LlmError::BudgetExhausted { .. })
    }
}

pub struct ProviderRequest<'a> {
    pub role: Role,
    pub model: &'a str,
    pub template: TemplateId,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<ProviderResponse, LlmError>;
}

/// A typed reply contract. Deserialization is the schema check; `validate`
/// adds the checks serde cannot express.
pub trait StructuredOutput: DeserializeOwned {
    /// Example JSON shown to the model after the prompt.
    const FORMAT: &'static str;

    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredReply<T> {
    pub raw: String,
    pub parsed: T,
    /// Free text preceding the JSON verdict.
    pub reasoning: String,
}

/// Splits a reply into the reasoning text and the last top-level JSON object.
pub fn split_reply(raw: &str) -> Option<(String, serde_json::Value)> {
    let mut found: Option<(usize, serde_json::Value)> = None;
    let mut pos = 0;
    while let Some(off) = raw[pos..].find('{') {
        let start = pos + off;
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(value)) if value.is_object() => {
                let end = start + stream.byte_offset();
                found = Some((start, value));
                pos = end;
            }
            _ => pos = start + 1,
        }
    }
    let (start, value) = found?;
    let mut reasoning = raw[..start].trim_end();
    for fence in ["```json", "```JSON", "```"] {
        if let Some(stripped) = reasoning.strip_suffix(fence) {
            reasoning = stripped.trim_end();
            break;
        }
    }
    Some((reasoning.trim().to_string(), value))
}

fn parse_reply<T: StructuredOutput>(raw: &str) -> Result<StructuredReply<T>, String> {
    let (reasoning, value) = split_reply(raw).ok_or("reply contains no JSON object")?;
    let parsed: T = serde_json::from_value(value).map_err(|e| format!("schema mismatch: {e}"))?;
    parsed.validate()?;
    Ok(StructuredReply {
        raw: raw.to_string(),
        parsed,
        reasoning,
    })
}

/// One model call as seen by pipeline code.
#[derive(Debug, Clone)]
pub struct Call {
    pub role: Role,
    pub template: TemplateId,
    pub prompt: String,
    /// Ledger tag, e.g. `build:uniswap-v2:stage1:classify`.
    pub purpose: String,
}

impl Call {
    pub fn new(role: Role, template: TemplateId, prompt: String, purpose: impl Into<String>) -> Self {
        Call {
            role,
            template,
            prompt,
            purpose: purpose.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleTable {
    pub reasoning: ModelProfile,
    pub synthesis: ModelProfile,
}

impl RoleTable {
    pub fn profile(&self, role: Role) -> &ModelProfile {
        match role {
            Role::Reasoning => &self.reasoning,
            Role::Synthesis => &self.synthesis,
        }
    }

    /// Zero-cost placeholder roles, handy with the mock provider.
    pub fn free() -> Self {
        let profile = |role, name: &str| ModelProfile {
            role,
            model_name: name.into(),
            input_cost_per_token: Usd::ZERO,
            output_cost_per_token: Usd::ZERO,
        };
        RoleTable {
            reasoning: profile(Role::Reasoning, "mock-reasoning"),
            synthesis: profile(Role::Synthesis, "mock-synthesis"),
        }
    }
}

/// Shared entry point for all model calls. Cheap to clone; clones share the
/// ledger and budget.
#[derive(Clone)]
pub struct LlmGateway {
    provider: Arc<dyn Provider>,
    roles: RoleTable,
    ledger: Arc<Mutex<UsageLedger>>,
    budget: Option<Usd>,
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn Provider>, roles: RoleTable) -> Self {
        LlmGateway {
            provider,
            roles,
            ledger: Arc::new(Mutex::new(UsageLedger::new())),
            budget: None,
        }
    }

    /// Caps total spend. Calls are refused once the ledger total reaches the
    /// limit.
    pub fn with_budget(mut self, limit: Usd) -> Self {
        self.budget = Some(limit);
        self
    }

    pub fn budget(&self) -> Option<Usd> {
        self.budget
    }

    pub fn roles(&self) -> &RoleTable {
        &self.roles
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn total_cost(&self) -> Usd {
        self.ledger.lock().expect("ledger lock").total()
    }

    /// Remaining budget, or `None` when unlimited.
    pub fn remaining(&self) -> Option<Usd> {
        self.budget.map(|limit| limit.saturating_sub(self.total_cost()))
    }

    pub fn exhausted(&self) -> bool {
        self.remaining() == Some(Usd::ZERO)
    }

    fn guard(&self) -> Result<(), LlmError> {
        if let Some(limit) = self.budget {
            let spent = self.total_cost();
            if spent >= limit {
                return Err(LlmError::BudgetExhausted { spent, limit });
            }
        }
        Ok(())
    }

    fn raw_call(&self, call: &Call, prompt: &str) -> Result<String, LlmError> {
        self.guard()?;
        let profile = self.roles.profile(call.role);
        let request = ProviderRequest {
            role: call.role,
            model: &profile.model_name,
            template: call.template,
            prompt,
        };
        let response = self.provider.complete(&request)?;
        let entry = UsageEntry {
            role: call.role,
            model: profile.model_name.clone(),
            template: call.template,
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            cost: profile.cost(response.prompt_tokens, response.completion_tokens),
            purpose: call.purpose.clone(),
        };
        self.ledger.lock().expect("ledger lock").append(entry);
        Ok(response.text)
    }

    /// Runs one structured call with at most one repair retry.
    pub fn complete<T: StructuredOutput>(&self, call: Call) -> Result<StructuredReply<T>, LlmError> {
        let prompt = format!(
            "{}\n## Output Format\nWrite your reasoning first. End the reply with a single JSON object shaped like:\n{}\n",
            call.prompt,
            T::FORMAT
        );
        let raw = self.raw_call(&call, &prompt)?;
        let problem = match parse_reply::<T>(&raw) {
            Ok(reply) => return Ok(reply),
            Err(problem) => problem,
        };
        tracing::debug!(template = %call.template, %problem, "retrying malformed reply");
        let repair = format!(
            "{prompt}\n## Repair\nYour previous reply could not be used: {problem}\nReply again with your reasoning followed by one JSON object in the output format above.\n"
        );
        let raw = self.raw_call(&call, &repair)?;
        parse_reply::<T>(&raw).map_err(LlmError::MalformedOutput)
    }
}
