//! Record/replay executors. Outcomes are stored as `<content-hash>.json`,
//! keyed by the hash of the harness sources, so the full loop can run
//! without the toolchain.

use std::path::{Path, PathBuf};

use super::{check_run, Executor, FuzzError, FuzzOutcome, RunConfig};
use crate::harness::CompiledHarness;

pub struct RecordedExecutor {
    store: PathBuf,
}

impl RecordedExecutor {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        RecordedExecutor { store: store.into() }
    }

    pub fn path_for(&self, content_hash: &str) -> PathBuf {
        self.store.join(format!("{content_hash}.json"))
    }

    pub fn load(&self, content_hash: &str) -> Result<FuzzOutcome, FuzzError> {
        let path = self.path_for(content_hash);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => FuzzError::NotRecorded(content_hash.to_string()),
            _ => FuzzError::Io(e),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| FuzzError::RunFailed(format!("recorded outcome {} is unreadable: {e}", path.display())))
    }
}

/// Writes an outcome in the store format.
pub fn store_outcome(store: &Path, content_hash: &str, outcome: &FuzzOutcome) -> Result<PathBuf, FuzzError> {
    std::fs::create_dir_all(store)?;
    let path = store.join(format!("{content_hash}.json"));
    let mut text = serde_json::to_string_pretty(outcome).expect("outcome serializes");
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

impl Executor for RecordedExecutor {
    /// The timeout is checked for validity but never waited on.
    fn run(&self, compiled: &CompiledHarness, config: &RunConfig) -> Result<FuzzOutcome, FuzzError> {
        check_run(compiled, config)?;
        let outcome = self.load(&compiled.content_hash)?;
        if outcome.coverage.attribution == config.attribution {
            Ok(outcome)
        } else {
            let coverage = outcome.coverage.attributed(config.attribution.clone());
            Ok(FuzzOutcome { coverage, ..outcome })
        }
    }
}

/// Runs a real executor and stores every completed outcome for replay.
pub struct RecordingExecutor<E> {
    inner: E,
    store: PathBuf,
}

impl<E: Executor> RecordingExecutor<E> {
    pub fn new(inner: E, store: impl Into<PathBuf>) -> Self {
        RecordingExecutor {
            inner,
            store: store.into(),
        }
    }
}

impl<E: Executor> Executor for RecordingExecutor<E> {
    fn run(&self, compiled: &CompiledHarness, config: &RunConfig) -> Result<FuzzOutcome, FuzzError> {
        let outcome = self.inner.run(compiled, config)?;
        store_outcome(&self.store, &compiled.content_hash, &outcome)?;
        Ok(outcome)
    }
}
