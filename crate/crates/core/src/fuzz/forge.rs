//! Foundry adapter: `forge test` for invariant fuzzing and `forge coverage`
//! for lcov output, each run as a child process with a wall-clock limit.

use std::io::Read;
use std::path::Path;
use std::process::{Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use super::{check_run, parse_coverage, CallRecord, CoverageMap, Executor, FuzzError, FuzzOutcome, RunConfig, StateChange, Violation};
use crate::harness::CompiledHarness;

pub(crate) struct ProcessOutput {
    pub status: Option<ExitStatus>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
}

fn drain(mut r: impl Read + Send + 'static) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Kills the process group led by `pid`, so that compiler and fuzzer
/// subprocesses die with their parent.
fn kill_group(pid: u32) {
    #[cfg(unix)]
    {
        let _ = Command::new("kill")
            .args(["-s", "KILL", "--", &format!("-{pid}")])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
    }
    #[cfg(not(unix))]
    let _ = pid;
}

/// Runs `cmd` in `dir` with a minimal environment, killing it after
/// `timeout`.
pub(crate) fn run_with_timeout(mut cmd: Command, dir: &Path, timeout: Duration) -> std::io::Result<ProcessOutput> {
    cmd.current_dir(dir).env_clear().stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    for key in ["PATH", "HOME", "FOUNDRY_DIR"] {
        if let Some(v) = std::env::var_os(key) {
            cmd.env(key, v);
        }
    }
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let mut child = cmd.spawn()?;
    let out = drain(child.stdout.take().expect("piped stdout"));
    let err = drain(child.stderr.take().expect("piped stderr"));
    let start = Instant::now();
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= timeout {
            timed_out = true;
            kill_group(child.id());
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    Ok(ProcessOutput {
        status,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        timed_out,
    })
}

/// What could be read from `forge test` output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForgeReport {
    pub violation: Option<Violation>,
    pub passed: usize,
    pub failed: usize,
    /// Whether the output contains a test-suite summary at all.
    pub completed: bool,
}

fn oracle_id(line: &str) -> Option<String> {
    let start = line.find("oracle:")? + "oracle:".len();
    let id: String = line[start..]
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '-' || *c == '_')
        .collect();
    (!id.is_empty()).then_some(id)
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '(' => {
                depth += 1;
                cur.push(c);
            }
            ']' | ')' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out.into_iter()
        .map(|a| a.split_whitespace().next().unwrap_or("").to_string())
        .filter(|a| !a.is_empty())
        .collect()
}

fn sequence_call(line: &str) -> Option<CallRecord> {
    let line = line.trim();
    if !line.contains("sender=") || !line.contains("calldata=") {
        return None;
    }
    let field = |key: &str| -> Option<&str> {
        let start = line.find(key)? + key.len();
        Some(&line[start..])
    };
    let caller = field("sender=")?.split_whitespace().next()?.to_string();
    let callee = field("addr=")
        .and_then(|a| {
            let a = a.strip_prefix('[')?;
            let label = &a[..a.find(']')?];
            Some(label.rsplit(':').next().unwrap_or(label).to_string())
        })
        .unwrap_or_default();
    let calldata = field("calldata=")?;
    let calldata = calldata.split(" args=").next().unwrap_or(calldata).trim().trim_end_matches(',');
    let function = calldata.split('(').next().unwrap_or(calldata).to_string();
    let arguments = field("args=")
        .and_then(|a| {
            let a = a.strip_prefix('[')?;
            let mut depth = 1;
            let end = a.char_indices().find_map(|(i, c)| {
                match c {
                    '[' => depth += 1,
                    ']' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(i);
                        }
                    }
                    _ => {}
                }
                None
            })?;
            Some(split_top_level(&a[..end]))
        })
        .unwrap_or_default();
    Some(CallRecord {
        caller,
        callee,
        function,
        arguments,
        outcome: "ok".into(),
    })
}

fn state_line(line: &str) -> Option<StateChange> {
    let rest = line.trim().strip_prefix("STATE ")?;
    let mut parts = rest.split_whitespace();
    let target = parts.next()?;
    let before = parts.next()?.to_string();
    let after = parts.next()?.to_string();
    let (contract, variable) = target.split_once('.')?;
    Some(StateChange {
        contract: contract.to_string(),
        variable: variable.to_string(),
        before,
        after,
    })
}

/// Collapses repeated logs of one variable into its first `before` and
/// last `after`, in order of first appearance.
fn collapse(changes: Vec<StateChange>) -> Vec<StateChange> {
    let mut out: Vec<StateChange> = Vec::new();
    for c in changes {
        match out.iter_mut().find(|o| o.contract == c.contract && o.variable == c.variable) {
            Some(o) => o.after = c.after,
            None => out.push(c),
        }
    }
    out
}

/// Parses `forge test -vvv` output. Only oracle failures (revert messages
/// of the form `oracle:<id>`) count as violations.
pub fn parse_forge_output(stdout: &str) -> ForgeReport {
    let mut report = ForgeReport::default();
    let mut suite_contract = String::new();
    let lines: Vec<&str> = stdout.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim();
        if let Some(rest) = line.strip_prefix("Ran ") {
            report.completed = true;
            if let Some(target) = rest.split(" for ").nth(1) {
                suite_contract = target.rsplit(':').next().unwrap_or("").trim().to_string();
            }
        }
        if line.starts_with("Suite result:") {
            report.completed = true;
        }
        if line.starts_with("[PASS]") {
            report.passed += 1;
        }
        if line.starts_with("[FAIL") {
            report.failed += 1;
            if let (Some(id), None) = (oracle_id(line), &report.violation) {
                let mut trace = Vec::new();
                let mut invariant = None;
                let mut j = i + 1;
                while j < lines.len() {
                    let l = lines[j].trim();
                    if let Some(call) = sequence_call(l) {
                        trace.push(call);
                    } else if l.starts_with("invariant") && l.contains('(') {
                        invariant = Some(l.split('(').next().unwrap_or(l).to_string());
                        break;
                    } else if l.starts_with("[PASS]") || l.starts_with("[FAIL") || l.starts_with("Suite result:") {
                        break;
                    }
                    j += 1;
                }
                if invariant.is_none() {
                    // older layouts put the invariant name on the FAIL line
                    invariant = line
                        .split_whitespace()
                        .find(|w| w.starts_with("invariant"))
                        .map(|w| w.split('(').next().unwrap_or(w).to_string());
                }
                trace.push(CallRecord {
                    caller: "fuzzer".into(),
                    callee: suite_contract.clone(),
                    function: invariant.unwrap_or_else(|| "invariant".into()),
                    arguments: vec![],
                    outcome: format!("revert: oracle:{id}"),
                });
                report.violation = Some(Violation {
                    oracle_id: id,
                    trace,
                    state_diff: Vec::new(),
                });
            }
        }
        i += 1;
    }
    if let Some(v) = report.violation.as_mut() {
        v.state_diff = collapse(lines.iter().filter_map(|l| state_line(l)).collect());
    }
    report
}

/// Runs harnesses with the real toolchain.
pub struct ForgeExecutor {
    pub forge: String,
}

impl Default for ForgeExecutor {
    fn default() -> Self {
        ForgeExecutor { forge: "forge".into() }
    }
}

impl ForgeExecutor {
    /// Whether `forge --version` runs.
    pub fn available(&self) -> bool {
        Command::new(&self.forge)
            .arg("--version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    }

    fn command(&self, args: &[&str], seed: Option<u64>) -> Command {
        let mut cmd = Command::new(&self.forge);
        cmd.args(args);
        if let Some(seed) = seed {
            cmd.arg("--fuzz-seed").arg(seed.to_string());
        }
        cmd
    }
}

fn crash(what: &str, out: &ProcessOutput) -> FuzzError {
    let tail: String = out.stderr.lines().rev().take(20).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
    FuzzError::ToolchainCrash(format!("{what} exited with {:?}: {tail}", out.status.and_then(|s| s.code())))
}

impl Executor for ForgeExecutor {
    fn run(&self, compiled: &CompiledHarness, config: &RunConfig) -> Result<FuzzOutcome, FuzzError> {
        check_run(compiled, config)?;
        let ws = &compiled.workspace;
        let start = Instant::now();
        let entry = compiled.source.entry_contract.as_str();

        let test = run_with_timeout(self.command(&["test", "--match-contract", entry, "-vvv"], config.seed), ws, config.timeout)?;
        let report = parse_forge_output(&test.stdout);
        if !test.timed_out && !report.completed {
            return Err(crash("forge test", &test));
        }

        let remaining = config.timeout.saturating_sub(start.elapsed()).max(Duration::from_secs(1));
        let cov = run_with_timeout(
            self.command(
                &["coverage", "--report", "lcov", "--report-file", "lcov.info", "--match-contract", entry],
                config.seed,
            ),
            ws,
            remaining,
        )?;
        let lcov_path = ws.join("lcov.info");
        let coverage = if lcov_path.is_file() {
            let raw = std::fs::read_to_string(&lcov_path)?;
            parse_coverage(&raw, &config.attribution)?.retain_files(|p| p.starts_with("src/"))
        } else if test.timed_out {
            return Err(FuzzError::RunFailed(format!("timed out after {:?} without coverage", config.timeout)));
        } else {
            tracing::warn!(status = ?cov.status, "forge coverage produced no lcov file");
            CoverageMap::empty(&config.attribution)
        };

        Ok(FuzzOutcome {
            run_id: format!("{}-{}", &compiled.content_hash[..12.min(compiled.content_hash.len())], config.seed.unwrap_or(0)),
            coverage,
            violation: report.violation,
            wall_time_ms: start.elapsed().as_millis() as u64,
        })
    }
}
