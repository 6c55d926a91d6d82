//! Fuzz execution: coverage maps, violations, and the executors that
//! produce them.

pub(crate) mod forge;
mod lcov;
mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use forge::{parse_forge_output, ForgeExecutor, ForgeReport};
pub use lcov::parse_coverage;
pub use replay::{store_outcome, RecordedExecutor, RecordingExecutor};

use crate::harness::CompiledHarness;

/// Default wall-clock limit for one fuzz run.
pub const DEFAULT_FUZZ_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error("coverage parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot merge coverage attributed to `{left}` with `{right}`")]
    AttributionMismatch { left: String, right: String },
    #[error("toolchain crashed: {0}")]
    ToolchainCrash(String),
    #[error("run failed: {0}")]
    RunFailed(String),
    #[error("no recorded outcome for harness {0}")]
    NotRecorded(String),
    #[error("fuzz timeout must be positive")]
    ZeroTimeout,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCoverage {
    pub covered: BTreeSet<u32>,
    pub instrumentable: BTreeSet<u32>,
}

/// Line coverage for a set of files, attributed to one DeFi semantic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub attribution: String,
    pub files: BTreeMap<String, FileCoverage>,
}

impl CoverageMap {
    pub fn empty(attribution: impl Into<String>) -> Self {
        CoverageMap {
            attribution: attribution.into(),
            files: BTreeMap::new(),
        }
    }

    pub fn covered_lines(&self) -> usize {
        self.files.values().map(|f| f.covered.len()).sum()
    }

    pub fn instrumentable_lines(&self) -> usize {
        self.files.values().map(|f| f.instrumentable.len()).sum()
    }

    /// Covered over instrumentable lines; 0 when nothing is instrumentable.
    pub fn ratio(&self) -> f64 {
        match self.instrumentable_lines() {
            0 => 0.0,
            total => self.covered_lines() as f64 / total as f64,
        }
    }

    /// Same map under a different attribution.
    pub fn attributed(mut self, attribution: impl Into<String>) -> Self {
        self.attribution = attribution.into();
        self
    }

    /// Keeps only files whose path satisfies `keep`, e.g. project sources
    /// without test and library files.
    pub fn retain_files(mut self, keep: impl Fn(&str) -> bool) -> Self {
        self.files.retain(|path, _| keep(path));
        self
    }
}

/// Unions covered and instrumentable line sets file by file. Both maps
/// must carry the same attribution.
pub fn merge_coverage(old: &CoverageMap, new: &CoverageMap) -> Result<CoverageMap, FuzzError> {
    if old.attribution != new.attribution {
        return Err(FuzzError::AttributionMismatch {
            left: old.attribution.clone(),
            right: new.attribution.clone(),
        });
    }
    let mut out = old.clone();
    for (path, cov) in &new.files {
        let slot = out.files.entry(path.clone()).or_default();
        slot.covered.extend(&cov.covered);
        slot.instrumentable.extend(&cov.instrumentable);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub caller: String,
    pub callee: String,
    pub function: String,
    pub arguments: Vec<String>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub contract: String,
    pub variable: String,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub oracle_id: String,
    pub trace: Vec<CallRecord>,
    pub state_diff: Vec<StateChange>,
}

impl Violation {
    /// Value after the run of `Contract.variable`, if it was logged.
    pub fn final_value(&self, contract: &str, variable: &str) -> Option<&str> {
        self.state_diff
            .iter()
            .rev()
            .find(|c| c.contract == contract && c.variable == variable)
            .map(|c| c.after.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = format!("Failing oracle: {}\n\nExecution trace:\n", self.oracle_id);
        for (i, c) in self.trace.iter().enumerate() {
            out.push_str(&format!(
                "{}. {} -> {}.{}({}) => {}\n",
                i + 1,
                c.caller,
                c.callee,
                c.function,
                c.arguments.join(", "),
                c.outcome
            ));
        }
        out.push_str("\nState changes:\n");
        for s in &self.state_diff {
            out.push_str(&format!("- {}.{}: {} -> {}\n", s.contract, s.variable, s.before, s.after));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzOutcome {
    pub run_id: String,
    pub coverage: CoverageMap,
    pub violation: Option<Violation>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub timeout: Duration,
    pub seed: Option<u64>,
    /// Attribution tag for the harvested coverage.
    pub attribution: String,
}

impl RunConfig {
    pub fn new(attribution: impl Into<String>) -> Self {
        RunConfig {
            timeout: DEFAULT_FUZZ_TIMEOUT,
            seed: None,
            attribution: attribution.into(),
        }
    }
}

pub trait Executor: Send + Sync {
    fn run(&self, compiled: &CompiledHarness, config: &RunConfig) -> Result<FuzzOutcome, FuzzError>;
}

/// Checks the cheap preconditions shared by every executor.
pub fn check_run(compiled: &CompiledHarness, config: &RunConfig) -> Result<(), FuzzError> {
    if config.timeout.is_zero() {
        return Err(FuzzError::ZeroTimeout);
    }
    if !compiled.workspace.is_dir() {
        return Err(FuzzError::ToolchainCrash(format!(
            "artifact workspace {} does not exist",
            compiled.workspace.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(tag: &str, files: &[(&str, &[u32], &[u32])]) -> CoverageMap {
        CoverageMap {
            attribution: tag.into(),
            files: files
                .iter()
                .map(|(p, c, i)| {
                    (
                        p.to_string(),
                        FileCoverage {
                            covered: c.iter().copied().collect(),
                            instrumentable: i.iter().copied().collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn merge_identity_and_union() {
        let a = map("s", &[("A.sol", &[1, 2], &[1, 2, 3, 4])]);
        assert_eq!(merge_coverage(&a, &CoverageMap::empty("s")).unwrap(), a);
        assert_eq!(merge_coverage(&CoverageMap::empty("s"), &a).unwrap(), a);
        let b = map("s", &[("A.sol", &[2, 3], &[1, 2, 3, 4])]);
        assert_eq!(merge_coverage(&a, &b).unwrap().ratio(), 0.75);
    }

    #[test]
    fn merge_checks_attribution() {
        let err = merge_coverage(&CoverageMap::empty("a"), &CoverageMap::empty("b")).unwrap_err();
        assert!(matches!(err, FuzzError::AttributionMismatch { .. }));
    }

    #[test]
    fn empty_ratio_is_zero() {
        assert_eq!(CoverageMap::empty("s").ratio(), 0.0);
    }

    fn arb_map() -> impl Strategy<Value = CoverageMap> {
        proptest::collection::btree_map(
            "[a-c]\\.sol",
            proptest::collection::btree_set(1u32..40, 0..20).prop_flat_map(|inst| {
                let v: Vec<u32> = inst.iter().copied().collect();
                let n = v.len();
                (Just(inst), proptest::sample::subsequence(v, 0..=n))
            }),
            0..3,
        )
        .prop_map(|files| CoverageMap {
            attribution: "s".into(),
            files: files
                .into_iter()
                .map(|(p, (inst, cov))| {
                    (
                        p,
                        FileCoverage {
                            covered: cov.into_iter().collect(),
                            instrumentable: inst,
                        },
                    )
                })
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn covered_stays_within_instrumentable(a in arb_map(), b in arb_map()) {
            let m = merge_coverage(&a, &b).unwrap();
            for f in m.files.values() {
                prop_assert!(f.covered.is_subset(&f.instrumentable));
            }
            prop_assert!((0.0..=1.0).contains(&m.ratio()));
        }
    }
}
