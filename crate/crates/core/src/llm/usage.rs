use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Role, TemplateId};

const PICO_PER_USD: u128 = 1_000_000_000_000;

/// A non-negative dollar amount with picodollar resolution.
///
/// Sums are exact, so a ledger of ten one-cent calls totals exactly `0.10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Usd {
    pico: u64,
}

impl Usd {
    pub const ZERO: Usd = Usd { pico: 0 };

    pub fn from_pico(pico: u64) -> Self {
        Usd { pico }
    }

    pub fn pico(self) -> u64 {
        self.pico
    }

    pub fn from_cents(cents: u64) -> Self {
        Usd { pico: cents * 10_000_000_000 }
    }

    pub fn saturating_sub(self, other: Usd) -> Usd {
        Usd { pico: self.pico.saturating_sub(other.pico) }
    }

    pub fn as_f64(self) -> f64 {
        self.pico as f64 / PICO_PER_USD as f64
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd { pico: self.pico + rhs.pico }
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.pico += rhs.pico;
    }
}

impl Mul<u64> for Usd {
    type Output = Usd;
    fn mul(self, rhs: u64) -> Usd {
        Usd { pico: self.pico * rhs }
    }
}

impl Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, Add::add)
    }
}

impl fmt::Display for Usd {
    /// At least two decimals, more when needed: `0.10`, `0.5`→`0.50`,
    /// `0.00000125`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.pico as u128 / PICO_PER_USD;
        let frac = self.pico as u128 % PICO_PER_USD;
        let mut digits = format!("{frac:012}");
        while digits.len() > 2 && digits.ends_with('0') {
            digits.pop();
        }
        write!(f, "{whole}.{digits}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid dollar amount `{0}`")]
pub struct BadAmount(pub String);

impl FromStr for Usd {
    type Err = BadAmount;

    /// Parses plain decimal notation such as `10`, `0.5` or `0.00000125`.
    /// More than twelve decimals is rejected rather than rounded.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadAmount(s.to_string());
        let t = s.trim().trim_start_matches('$');
        let (whole, frac) = t.split_once('.').unwrap_or((t, ""));
        if whole.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 12 {
            return Err(bad());
        }
        let whole: u128 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| bad())? };
        let frac_pico: u128 = if frac.is_empty() {
            0
        } else {
            frac.parse::<u128>().map_err(|_| bad())? * 10u128.pow(12 - frac.len() as u32)
        };
        let pico = whole
            .checked_mul(PICO_PER_USD)
            .and_then(|w| w.checked_add(frac_pico))
            .and_then(|p| u64::try_from(p).ok())
            .ok_or_else(bad)?;
        Ok(Usd { pico })
    }
}

impl TryFrom<String> for Usd {
    type Error = BadAmount;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Usd> for String {
    fn from(u: Usd) -> String {
        u.to_string()
    }
}

/// One model assignment: which model serves a role and what it costs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub role: Role,
    pub model_name: String,
    pub input_cost_per_token: Usd,
    pub output_cost_per_token: Usd,
}

impl ModelProfile {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> Usd {
        self.input_cost_per_token * prompt_tokens + self.output_cost_per_token * completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub role: Role,
    pub model: String,
    pub template: TemplateId,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: Usd,
    pub purpose: String,
}

/// Append-only record of every provider call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    entries: Vec<UsageEntry>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn append(&mut self, entry: UsageEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[UsageEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> Usd {
        self.entries.iter().map(|e| e.cost).sum()
    }

    /// Total cost of entries whose purpose tag starts with `prefix`.
    pub fn total_for(&self, prefix: &str) -> Usd {
        self.entries
            .iter()
            .filter(|e| e.purpose.starts_with(prefix))
            .map(|e| e.cost)
            .sum()
    }
}

/// Exact sum of all entry costs.
pub fn ledger_total(ledger: &UsageLedger) -> Usd {
    ledger.total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(role: Role, cost: Usd) -> UsageEntry {
        UsageEntry {
            role,
            model: "m".into(),
            template: TemplateId::Classification,
            prompt_tokens: 0,
            completion_tokens: 0,
            cost,
            purpose: "test".into(),
        }
    }

    #[test]
    fn empty_ledger_is_zero() {
        assert_eq!(ledger_total(&UsageLedger::new()).to_string(), "0.00");
    }

    #[test]
    fn ten_cents_exactly() {
        let mut l = UsageLedger::new();
        for _ in 0..10 {
            l.append(entry(Role::Reasoning, "0.01".parse().unwrap()));
        }
        assert_eq!(ledger_total(&l), "0.10".parse().unwrap());
        assert_eq!(ledger_total(&l).to_string(), "0.10");
    }

    #[test]
    fn mixed_roles_match_recomputation() {
        let reasoning = ModelProfile {
            role: Role::Reasoning,
            model_name: "big".into(),
            input_cost_per_token: "0.00000125".parse().unwrap(),
            output_cost_per_token: "0.00001".parse().unwrap(),
        };
        let synthesis = ModelProfile {
            role: Role::Synthesis,
            model_name: "small".into(),
            input_cost_per_token: "0.00000025".parse().unwrap(),
            output_cost_per_token: "0.000002".parse().unwrap(),
        };
        let calls = [(&reasoning, 1200u64, 300u64), (&synthesis, 5000, 2500), (&reasoning, 17, 9)];
        let mut l = UsageLedger::new();
        for (p, i, o) in calls {
            l.append(entry(p.role, p.cost(i, o)));
        }
        // brute force in integer picodollars
        let oracle: u64 = calls
            .iter()
            .map(|(p, i, o)| p.input_cost_per_token.pico() * i + p.output_cost_per_token.pico() * o)
            .sum();
        assert_eq!(ledger_total(&l).pico(), oracle);
        assert_eq!(ledger_total(&l).to_string(), "0.01086125");
    }

    #[test]
    fn parse_and_display() {
        for (s, shown) in [("10", "10.00"), ("0.5", "0.50"), ("$100", "100.00"), (".25", "0.25")] {
            assert_eq!(s.parse::<Usd>().unwrap().to_string(), shown);
        }
        for s in ["", "-1", "1e3", "0.0000000000001", "abc", "."] {
            assert!(s.parse::<Usd>().is_err(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn total_is_monotone(costs in proptest::collection::vec(0u64..10_000_000, 0..50)) {
            let mut l = UsageLedger::new();
            let mut last = Usd::ZERO;
            for c in costs {
                l.append(entry(Role::Synthesis, Usd::from_pico(c)));
                prop_assert!(l.total() >= last);
                last = l.total();
            }
        }

        #[test]
        fn display_parse_round_trip(pico in 0u64..u64::MAX / 2) {
            let u = Usd::from_pico(pico);
            prop_assert_eq!(u.to_string().parse::<Usd>().unwrap(), u);
        }
    }
}
