//! Settings for one invocation, layered as flags over environment over
//! config file over defaults.
//!
//! Every key can be set in the TOML file, or in the environment as
//! `KNOWDIT_<KEY>` (upper case), e.g. `KNOWDIT_BUDGET=25`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use kgaudit::llm::{ModelProfile, Role, RoleTable, Usd};
use serde::Deserialize;
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "KNOWDIT_";
/// Names the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "KNOWDIT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Text,
    Int,
    Bool,
    Amount,
    Path,
}

const KEYS: &[(&str, Kind)] = &[
    ("base_url", Kind::Text),
    ("api_key", Kind::Text),
    ("reasoning_model", Kind::Text),
    ("synthesis_model", Kind::Text),
    ("reasoning_input_cost", Kind::Amount),
    ("reasoning_output_cost", Kind::Amount),
    ("synthesis_input_cost", Kind::Amount),
    ("synthesis_output_cost", Kind::Amount),
    ("request_timeout_secs", Kind::Int),
    ("chunk_units", Kind::Int),
    ("prior_cap", Kind::Int),
    ("fuzz_timeout_secs", Kind::Int),
    ("build_timeout_secs", Kind::Int),
    ("max_repair_attempts", Kind::Int),
    ("regeneration_cap", Kind::Int),
    ("budget", Kind::Amount),
    ("workspace", Kind::Path),
    ("seed", Kind::Int),
    ("mock_llm", Kind::Path),
    ("mock_fuzz", Kind::Path),
    ("mock_toolchain", Kind::Bool),
    ("forge", Kind::Text),
    ("general_rules", Kind::Path),
    ("categories", Kind::Path),
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub base_url: String,
    pub api_key: Option<String>,
    pub reasoning_model: String,
    pub synthesis_model: String,
    /// USD per token.
    pub reasoning_input_cost: Usd,
    pub reasoning_output_cost: Usd,
    pub synthesis_input_cost: Usd,
    pub synthesis_output_cost: Usd,
    pub request_timeout_secs: u64,
    /// Source units per model call.
    pub chunk_units: usize,
    pub prior_cap: usize,
    pub fuzz_timeout_secs: u64,
    pub build_timeout_secs: u64,
    pub max_repair_attempts: u32,
    pub regeneration_cap: u32,
    /// Default audit budget in USD.
    pub budget: Usd,
    pub workspace: Option<PathBuf>,
    pub seed: u64,
    /// Mock provider script; replaces the HTTP provider.
    pub mock_llm: Option<PathBuf>,
    /// Store of recorded fuzz outcomes; replaces forge for fuzzing.
    pub mock_fuzz: Option<PathBuf>,
    /// Treat every harness build as successful.
    pub mock_toolchain: bool,
    pub forge: String,
    pub general_rules: Option<PathBuf>,
    pub categories: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let usd = |s: &str| s.parse::<Usd>().expect("valid default amount");
        Config {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            reasoning_model: "gpt-5.1".into(),
            synthesis_model: "gpt-5-mini".into(),
            reasoning_input_cost: usd("0.00000125"),
            reasoning_output_cost: usd("0.00001"),
            synthesis_input_cost: usd("0.00000025"),
            synthesis_output_cost: usd("0.000002"),
            request_timeout_secs: 600,
            chunk_units: kgaudit::ingest::DEFAULT_MAX_CHUNK_UNITS,
            prior_cap: kgaudit::builder::DEFAULT_PRIOR_CAP,
            fuzz_timeout_secs: kgaudit::fuzz::DEFAULT_FUZZ_TIMEOUT.as_secs(),
            build_timeout_secs: kgaudit::harness::DEFAULT_BUILD_TIMEOUT.as_secs(),
            max_repair_attempts: kgaudit::harness::DEFAULT_MAX_REPAIR_ATTEMPTS,
            regeneration_cap: kgaudit::orchestrator::DEFAULT_REGENERATION_CAP,
            budget: usd("100"),
            workspace: None,
            seed: 0,
            mock_llm: None,
            mock_fuzz: None,
            mock_toolchain: false,
            forge: "forge".into(),
            general_rules: None,
            categories: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{origin}: unknown setting `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: bad value for `{key}`: {message}")]
    BadValue { origin: String, key: String, message: String },
    #[error("`{0}` must be positive")]
    NotPositive(&'static str),
}

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, kind)| *kind)
}

/// One source of settings, already checked against the known keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layer {
    values: Table,
}

impl Layer {
    fn bad(origin: &str, key: &str, message: impl ToString) -> ConfigError {
        ConfigError::BadValue {
            origin: origin.to_string(),
            key: key.to_string(),
            message: message.to_string(),
        }
    }

    /// Parses a string the way it would be written on a command line or
    /// in an environment variable.
    fn parse_text(origin: &str, key: &str, raw: &str) -> Result<Value, ConfigError> {
        let kind = kind_of(key).ok_or_else(|| ConfigError::UnknownKey {
            origin: origin.to_string(),
            key: key.to_string(),
        })?;
        Ok(match kind {
            Kind::Text | Kind::Path | Kind::Amount => Value::String(raw.to_string()),
            Kind::Int => Value::Integer(raw.trim().parse::<i64>().map_err(|e| Self::bad(origin, key, e))?),
            Kind::Bool => match raw.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Value::Boolean(true),
                "0" | "false" | "no" | "off" | "" => Value::Boolean(false),
                other => return Err(Self::bad(origin, key, format!("`{other}` is not a boolean"))),
            },
        })
    }

    /// Settings given as `key -> text`, e.g. from command-line flags.
    pub fn from_pairs<'a>(origin: &str, pairs: impl IntoIterator<Item = (&'a str, String)>) -> Result<Self, ConfigError> {
        let mut values = Table::new();
        for (key, raw) in pairs {
            values.insert(key.to_string(), Self::parse_text(origin, key, &raw)?);
        }
        Ok(Layer { values })
    }

    /// `KNOWDIT_*` variables. Unrelated variables are ignored; an unknown
    /// `KNOWDIT_` name is an error so typos do not pass silently.
    pub fn from_env(env: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut values = Table::new();
        for (name, raw) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            if name == CONFIG_ENV || name == "KNOWDIT_LOG" {
                continue;
            }
            let key = rest.to_ascii_lowercase();
            values.insert(key.clone(), Self::parse_text(name, &key, raw)?);
        }
        Ok(Layer { values })
    }

    /// A TOML document. Relative paths are taken relative to `base`.
    pub fn from_toml(origin: &str, text: &str, base: &Path) -> Result<Self, ConfigError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Read {
            path: PathBuf::from(origin),
            message: e.message().to_string(),
        })?;
        let mut values = Table::new();
        for (key, value) in table {
            let kind = kind_of(&key).ok_or_else(|| ConfigError::UnknownKey {
                origin: origin.to_string(),
                key: key.clone(),
            })?;
            let value = match (kind, value) {
                (Kind::Amount, Value::Integer(i)) => Value::String(i.to_string()),
                (Kind::Amount, Value::Float(f)) => Value::String(f.to_string()),
                (Kind::Path, Value::String(p)) => Value::String(base.join(p).display().to_string()),
                (_, v) => v,
            };
            values.insert(key, value);
        }
        Ok(Layer { values })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&path.display().to_string(), &text, path.parent().unwrap_or(Path::new("")))
    }
}

impl Config {
    /// Resolves layers given lowest precedence first.
    pub fn resolve(layers: &[Layer]) -> Result<Self, ConfigError> {
        let mut merged = Table::new();
        for layer in layers {
            for (k, v) in &layer.values {
                merged.insert(k.clone(), v.clone());
            }
        }
        let config: Config = Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::BadValue {
            origin: "configuration".into(),
            key: String::new(),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks: [(&'static str, bool); 8] = [
            ("request_timeout_secs", self.request_timeout_secs > 0),
            ("chunk_units", self.chunk_units > 0),
            ("prior_cap", self.prior_cap > 0),
            ("fuzz_timeout_secs", self.fuzz_timeout_secs > 0),
            ("build_timeout_secs", self.build_timeout_secs > 0),
            ("max_repair_attempts", self.max_repair_attempts > 0),
            ("regeneration_cap", self.regeneration_cap > 0),
            ("budget", self.budget > Usd::ZERO),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(ConfigError::NotPositive(name)),
            None => Ok(()),
        }
    }

    pub fn roles(&self) -> RoleTable {
        RoleTable {
            reasoning: ModelProfile {
                role: Role::Reasoning,
                model_name: self.reasoning_model.clone(),
                input_cost_per_token: self.reasoning_input_cost,
                output_cost_per_token: self.reasoning_output_cost,
            },
            synthesis: ModelProfile {
                role: Role::Synthesis,
                model_name: self.synthesis_model.clone(),
                input_cost_per_token: self.synthesis_input_cost,
                output_cost_per_token: self.synthesis_output_cost,
            },
        }
    }

    pub fn fuzz_timeout(&self) -> Duration {
        Duration::from_secs(self.fuzz_timeout_secs)
    }
}
