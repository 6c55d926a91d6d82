//! Scripted provider for offline runs.
//!
//! A script is a JSON array of `{template, index, reply}` objects. The n-th
//! call for a template gets the entry with `index == n`; an entry without an
//! index answers any call that has no exact entry. Object replies are
//! serialized to JSON text before being returned.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{LlmError, Provider, ProviderRequest, ProviderResponse, TemplateId};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScriptEntry {
    pub template: TemplateId,
    #[serde(default)]
    pub index: Option<usize>,
    pub reply: serde_json::Value,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

impl ScriptEntry {
    fn text(&self) -> String {
        match &self.reply {
            serde_json::Value::String(s) => s.clone(),
            other => serde_json::to_string_pretty(other).expect("json value serializes"),
        }
    }
}

/// How the mock reports token usage when an entry does not say.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UsagePolicy {
    /// One token per four characters, rounded up.
    Estimated,
    Fixed { prompt_tokens: u64, completion_tokens: u64 },
}

#[derive(Default)]
struct State {
    counters: BTreeMap<TemplateId, usize>,
    prompts: Vec<(TemplateId, String)>,
}

pub struct MockProvider {
    exact: BTreeMap<(TemplateId, usize), ScriptEntry>,
    fallback: BTreeMap<TemplateId, ScriptEntry>,
    usage: UsagePolicy,
    state: Mutex<State>,
}

fn estimate(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

impl MockProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let mut exact = BTreeMap::new();
        let mut fallback = BTreeMap::new();
        for e in entries {
            match e.index {
                Some(i) => {
                    exact.insert((e.template, i), e);
                }
                None => {
                    fallback.insert(e.template, e);
                }
            }
        }
        MockProvider {
            exact,
            fallback,
            usage: UsagePolicy::Estimated,
            state: Mutex::new(State::default()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| LlmError::Provider(format!("bad mock script: {e}")))?;
        Ok(Self::new(entries))
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Provider(format!("cannot read mock script {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_usage(mut self, usage: UsagePolicy) -> Self {
        self.usage = usage;
        self
    }

    /// Total number of calls served or attempted.
    pub fn calls(&self) -> usize {
        self.state.lock().expect("mock lock").prompts.len()
    }

    pub fn calls_for(&self, template: TemplateId) -> usize {
        self.state.lock().expect("mock lock").counters.get(&template).copied().unwrap_or(0)
    }

    /// Every prompt received, in call order.
    pub fn prompts(&self) -> Vec<(TemplateId, String)> {
        self.state.lock().expect("mock lock").prompts.clone()
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<ProviderResponse, LlmError> {
        let ordinal = {
            let mut state = self.state.lock().expect("mock lock");
            state.prompts.push((request.template, request.prompt.to_string()));
            let counter = state.counters.entry(request.template).or_insert(0);
            let n = *counter;
            *counter += 1;
            n
        };
        let entry = self
            .exact
            .get(&(request.template, ordinal))
            .or_else(|| self.fallback.get(&request.template))
            .ok_or_else(|| LlmError::Provider(format!("mock script has no reply for {} #{ordinal}", request.template)))?;
        let text = entry.text();
        let (default_prompt, default_completion) = match self.usage {
            UsagePolicy::Estimated => (estimate(request.prompt), estimate(&text)),
            UsagePolicy::Fixed {
                prompt_tokens,
                completion_tokens,
            } => (prompt_tokens, completion_tokens),
        };
        Ok(ProviderResponse {
            prompt_tokens: entry.prompt_tokens.unwrap_or(default_prompt),
            completion_tokens: entry.completion_tokens.unwrap_or(default_completion),
            text,
        })
    }
}
