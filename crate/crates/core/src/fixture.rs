//! Reference model of the first-depositor vault shipped under
//! `fixtures/first-depositor-vault`.
//!
//! The vault mints `floor(a * S / A)` shares for a deposit of `a` assets,
//! with `S` shares outstanding and `A` assets held, and mints `a` shares
//! while `S == 0`. The model mirrors the fixture harness: the attacker holds
//! 2 000 000 units and acts with amounts of 1 or 1 000 000, donations are
//! skipped while the vault is empty, and the victim deposits 1 000 000 once.
//!
//! It gives an oracle for the fuzzer that does not depend on the toolchain,
//! and it generates the recorded outcome the replay executor serves.

use std::collections::{BTreeMap, BTreeSet};

use crate::fuzz::{CallRecord, CoverageMap, FileCoverage, FuzzOutcome, StateChange, Violation};

pub const SMALL: u128 = 1;
pub const LARGE: u128 = 1_000_000;
pub const ATTACKER_FUNDS: u128 = 2_000_000;
pub const VICTIM_DEPOSIT: u128 = 1_000_000;

/// Oracle the harness attaches to the victim's share balance.
pub const ORACLE_ID: &str = "post-1";
pub const HANDLER: &str = "ShareVaultHandler";
pub const SUITE: &str = "ShareVaultInvariant";
pub const ORACLE_FUNCTION: &str = "invariant_laterDepositorGetsShares";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackerStep {
    Deposit(u128),
    Donate(u128),
}

impl AttackerStep {
    fn handler_call(self) -> (&'static str, &'static str) {
        let large = |a: u128| if a == LARGE { "true" } else { "false" };
        match self {
            AttackerStep::Deposit(a) => ("attackerDeposit", large(a)),
            AttackerStep::Donate(a) => ("attackerDonate", large(a)),
        }
    }
}

/// Vault state restricted to what the oracle compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EndState {
    pub total_shares: u128,
    pub total_assets: u128,
    pub victim_shares: u128,
}

impl EndState {
    /// A later depositor ended with nothing while shares exist.
    pub fn is_zero_share(&self) -> bool {
        self.victim_shares == 0 && self.total_shares > 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VaultModel {
    pub total_shares: u128,
    pub total_assets: u128,
    pub attacker_shares: u128,
    pub victim_shares: u128,
    pub attacker_balance: u128,
}

impl VaultModel {
    pub fn new() -> Self {
        VaultModel {
            attacker_balance: ATTACKER_FUNDS,
            ..Default::default()
        }
    }

    pub fn preview_deposit(&self, assets: u128) -> u128 {
        if self.total_shares == 0 {
            assets
        } else {
            assets * self.total_shares / self.total_assets
        }
    }

    fn deposit(&mut self, assets: u128) -> u128 {
        let shares = self.preview_deposit(assets);
        self.total_assets += assets;
        self.total_shares += shares;
        shares
    }

    /// Applies a handler call. Returns false when the handler's guard
    /// turns it into a no-op.
    pub fn attacker(&mut self, step: AttackerStep) -> bool {
        match step {
            AttackerStep::Deposit(a) => {
                if self.attacker_balance < a {
                    return false;
                }
                self.attacker_balance -= a;
                self.attacker_shares += self.deposit(a);
            }
            AttackerStep::Donate(a) => {
                if self.total_shares == 0 || self.attacker_balance < a {
                    return false;
                }
                self.attacker_balance -= a;
                self.total_assets += a;
            }
        }
        true
    }

    pub fn victim_deposit(&mut self) {
        self.victim_shares += self.deposit(VICTIM_DEPOSIT);
    }

    pub fn end_state(&self) -> EndState {
        EndState {
            total_shares: self.total_shares,
            total_assets: self.total_assets,
            victim_shares: self.victim_shares,
        }
    }
}

/// Attacker steps followed by the victim's deposit.
pub fn run_sequence(steps: &[AttackerStep]) -> EndState {
    let mut v = VaultModel::new();
    for s in steps {
        v.attacker(*s);
    }
    v.victim_deposit();
    v.end_state()
}

/// Every 2-step attacker sequence over {deposit, donate} x {1, 1 000 000},
/// with the end state after the victim deposits.
pub fn brute_force() -> Vec<([AttackerStep; 2], EndState)> {
    let moves: Vec<AttackerStep> = [SMALL, LARGE]
        .into_iter()
        .flat_map(|a| [AttackerStep::Deposit(a), AttackerStep::Donate(a)])
        .collect();
    let mut out = Vec::new();
    for &a in &moves {
        for &b in &moves {
            out.push(([a, b], run_sequence(&[a, b])));
        }
    }
    out
}

/// The sequences of [`brute_force`] that leave the victim with zero shares.
pub fn zero_share_witnesses() -> Vec<([AttackerStep; 2], EndState)> {
    brute_force().into_iter().filter(|(_, end)| end.is_zero_share()).collect()
}

/// End state as logged in a violation's state changes.
pub fn end_state_of(violation: &Violation) -> Option<EndState> {
    let get = |var: &str| violation.final_value("ShareVault", var)?.parse::<u128>().ok();
    Some(EndState {
        total_shares: get("totalShares")?,
        total_assets: get("totalAssets")?,
        victim_shares: get("sharesOf(victim)")?,
    })
}

fn first_arg(c: &CallRecord) -> &str {
    c.arguments.first().map(String::as_str).unwrap_or("")
}

fn is_small(arg: &str) -> bool {
    arg == "false" || arg == "1"
}

fn is_large(arg: &str) -> bool {
    arg == "true" || arg == "1000000"
}

/// Whether the trace seeds with a small deposit, later donates a large
/// amount, and only then lets the victim deposit, ending with the victim
/// holding zero shares.
pub fn is_seed_then_donate(violation: &Violation) -> bool {
    let trace = &violation.trace;
    let seed = trace
        .iter()
        .position(|c| c.function == "attackerDeposit" && is_small(first_arg(c)));
    let donate = seed.and_then(|s| {
        trace
            .iter()
            .skip(s + 1)
            .position(|c| c.function == "attackerDonate" && is_large(first_arg(c)))
            .map(|p| p + s + 1)
    });
    let victim = donate.and_then(|d| trace.iter().skip(d + 1).position(|c| c.function == "victimDeposit"));
    victim.is_some() && end_state_of(violation).is_some_and(|e| e.is_zero_share())
}

/// Executable lines of the functions named in `called`, found by a brace
/// scan of each source. Lines of other functions count as instrumentable
/// but uncovered.
pub fn model_coverage(sources: &[(&str, &str)], called: &BTreeSet<&str>, attribution: &str) -> CoverageMap {
    let mut files = BTreeMap::new();
    for (path, text) in sources {
        let mut cov = FileCoverage::default();
        let mut depth = 0i32;
        let mut current: Option<(String, i32)> = None;
        for (i, line) in text.lines().enumerate() {
            let n = i as u32 + 1;
            let t = line.trim();
            if current.is_none() {
                let name = t
                    .strip_prefix("function ")
                    .map(|r| r.split('(').next().unwrap_or("").to_string())
                    .or_else(|| t.starts_with("constructor(").then(|| "constructor".to_string()));
                if let (Some(name), true) = (name, t.ends_with('{')) {
                    current = Some((name, depth + 1));
                }
            } else if let Some((name, _)) = &current {
                let code = !t.is_empty() && !t.starts_with("//") && t != "}" && t != "{";
                if code {
                    cov.instrumentable.insert(n);
                    if called.contains(name.as_str()) {
                        cov.covered.insert(n);
                    }
                }
            }
            depth += t.matches('{').count() as i32 - t.matches('}').count() as i32;
            if let Some((_, body)) = &current {
                if depth < *body {
                    current = None;
                }
            }
        }
        files.insert(path.to_string(), cov);
    }
    CoverageMap {
        attribution: attribution.to_string(),
        files,
    }
}

/// Contract functions a witness run executes.
pub const WITNESS_FUNCTIONS: [&str; 8] = [
    "constructor",
    "totalAssets",
    "previewDeposit",
    "deposit",
    "mint",
    "approve",
    "transfer",
    "transferFrom",
];

/// The outcome a fuzz run of the fixture harness reports for the model's
/// unique witness. `sources` are the fixture's `src/` files as
/// `(path, text)`.
pub fn recorded_outcome(content_hash: &str, attribution: &str, sources: &[(&str, &str)]) -> FuzzOutcome {
    let witnesses = zero_share_witnesses();
    let (steps, end) = witnesses.first().copied().expect("the fixture has a zero-share witness");
    const SENDER: &str = "0x0000000000000000000000000000000000010000";
    let call = |function: &str, args: &[&str], callee: &str, outcome: &str| CallRecord {
        caller: SENDER.to_string(),
        callee: callee.to_string(),
        function: function.to_string(),
        arguments: args.iter().map(|a| a.to_string()).collect(),
        outcome: outcome.to_string(),
    };
    let mut trace: Vec<CallRecord> = steps
        .iter()
        .map(|s| {
            let (f, arg) = s.handler_call();
            call(f, &[arg], HANDLER, "ok")
        })
        .collect();
    trace.push(call("victimDeposit", &[], HANDLER, "ok"));
    trace.push(call(ORACLE_FUNCTION, &[], SUITE, &format!("revert: oracle:{ORACLE_ID}")));
    let change = |variable: &str, after: u128| StateChange {
        contract: "ShareVault".into(),
        variable: variable.into(),
        before: "0".into(),
        after: after.to_string(),
    };
    FuzzOutcome {
        run_id: format!("{}-0", &content_hash[..12.min(content_hash.len())]),
        coverage: model_coverage(sources, &WITNESS_FUNCTIONS.into_iter().collect(), attribution),
        violation: Some(Violation {
            oracle_id: ORACLE_ID.to_string(),
            trace,
            state_diff: vec![
                change("totalShares", end.total_shares),
                change("totalAssets", end.total_assets),
                change("sharesOf(victim)", end.victim_shares),
            ],
        }),
        wall_time_ms: 0,
    }
}
