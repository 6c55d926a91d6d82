//! Category definitions and in-context examples used by the classification
//! and extraction prompts. The bank is configuration: the built-in default
//! can be replaced by a JSON document of the same shape.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{AttackType, BusinessType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry<C> {
    pub category: C,
    pub definition: String,
    /// A representative DeFi semantic (business types) or vulnerability
    /// pattern (attack types).
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryBank {
    pub business: Vec<CategoryEntry<BusinessType>>,
    pub attack: Vec<CategoryEntry<AttackType>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BankError {
    #[error("category bank is not valid JSON: {0}")]
    Parse(String),
    #[error("category `{0}` is missing from the bank")]
    Missing(String),
    #[error("category `{0}` appears more than once")]
    Duplicate(String),
}

fn check<C: Copy + Ord + std::fmt::Display>(all: &[C], entries: &[CategoryEntry<C>]) -> Result<(), BankError> {
    let mut seen = BTreeSet::new();
    for e in entries {
        if !seen.insert(e.category) {
            return Err(BankError::Duplicate(e.category.to_string()));
        }
    }
    match all.iter().find(|c| !seen.contains(c)) {
        Some(c) => Err(BankError::Missing(c.to_string())),
        None => Ok(()),
    }
}

fn render<C: Copy + Ord + std::fmt::Display>(entries: &[CategoryEntry<C>], only: Option<&BTreeSet<C>>) -> String {
    entries
        .iter()
        .filter(|e| only.map_or(true, |set| set.contains(&e.category)))
        .map(|e| format!("### {}\n{}\nExample: {}", e.category, e.definition, e.example))
        .collect::<Vec<_>>()
        .join("\n\n")
}

impl CategoryBank {
    pub fn from_json(text: &str) -> Result<Self, BankError> {
        let bank: CategoryBank = serde_json::from_str(text).map_err(|e| BankError::Parse(e.to_string()))?;
        bank.validate()?;
        Ok(bank)
    }

    /// Every category appears exactly once.
    pub fn validate(&self) -> Result<(), BankError> {
        check(BusinessType::ALL, &self.business)?;
        check(AttackType::ALL, &self.attack)
    }

    pub fn render_business(&self, only: Option<&BTreeSet<BusinessType>>) -> String {
        render(&self.business, only)
    }

    pub fn render_attack(&self, only: Option<&BTreeSet<AttackType>>) -> String {
        render(&self.attack, only)
    }
}

impl Default for CategoryBank {
    fn default() -> Self {
        let business: BTreeMap<BusinessType, (&str, &str)> = [
            (BusinessType::Lending, (
                "Protocols that let users supply assets to earn interest and borrow against collateral, with liquidation of unhealthy positions.",
                "Collateralized borrowing: a position may borrow up to a fraction of its collateral value priced by an oracle; positions above the threshold can be liquidated at a discount.",
            )),
            (BusinessType::Dexes, (
                "Decentralized exchanges that swap tokens through liquidity pools or order books.",
                "Swap token X to token Y: the pool prices the trade from its reserves under an invariant such as x*y=k and charges a fee.",
            )),
            (BusinessType::Yield, (
                "Protocols that reward staking or liquidity provision with emissions or fees.",
                "Reward accrual per staked share: a global reward-per-share index grows over time and each staker claims the difference since their last checkpoint.",
            )),
            (BusinessType::Services, (
                "Infrastructure offered to other protocols, such as oracles, keepers, payment streaming or account abstraction.",
                "Price feed aggregation: reports from several sources are combined and rejected when stale.",
            )),
            (BusinessType::Derivatives, (
                "Options, perpetuals, futures and other instruments whose value tracks an underlying asset.",
                "Funding rate settlement: open positions periodically pay or receive funding depending on the mark price versus the index price.",
            )),
            (BusinessType::YieldAggregator, (
                "Vaults that pool user deposits and route them through external yield strategies.",
                "Proportional share accounting: a depositor receives shares equal to the deposit times total shares divided by total assets, and redeems shares for the same fraction of assets.",
            )),
            (BusinessType::RealWorldAssets, (
                "Tokenized off-chain assets such as treasuries, credit or real estate, usually with permissioned transfer and off-chain settlement.",
                "Permissioned redemption queue: holders request redemption and an operator settles requests in order at the current net asset value.",
            )),
            (BusinessType::Stablecoins, (
                "Tokens designed to hold a peg, backed by collateral or algorithmic supply control.",
                "Collateral-backed minting: users lock collateral and mint stable tokens up to a collateral ratio, burning them to unlock.",
            )),
            (BusinessType::Indexes, (
                "Tokens representing a basket of assets with weights maintained by rebalancing.",
                "Basket issuance: minting one index token pulls each component in proportion to its weight.",
            )),
            (BusinessType::Insurance, (
                "Cover markets where underwriters pool capital and pay claims on covered events.",
                "Claim assessment: a claim is paid from the cover pool once assessors vote it valid within a window.",
            )),
            (BusinessType::NftMarketplace, (
                "Venues for listing, bidding on and trading non-fungible tokens.",
                "Signed order fulfillment: a seller signs an off-chain order and any buyer can fill it on-chain before it expires.",
            )),
            (BusinessType::NftLending, (
                "Lending markets that accept non-fungible tokens as collateral.",
                "NFT-collateralized loan: a borrower escrows an NFT, receives a loan, and forfeits the NFT if the loan is not repaid by the deadline.",
            )),
            (BusinessType::CrossChain, (
                "Bridges and messaging layers that move assets or calls between chains.",
                "Lock and mint bridging: tokens locked on the source chain are minted on the destination chain after a relayed message is verified.",
            )),
        ]
        .into_iter()
        .collect();
        let attack: BTreeMap<AttackType, (&str, &str)> = [
            (AttackType::AccessControl, (
                "Privileged functionality reachable by the wrong caller, or missing or incorrect authorization checks.",
                "Unprotected initializer: an initialization function can be called by anyone after deployment and reassigns ownership.",
            )),
            (AttackType::Arithmetic, (
                "Incorrect math: rounding, precision loss, overflow, wrong units or wrong formula.",
                "Share inflation by the first depositor: an attacker mints a tiny number of shares, donates assets to inflate the share price, and later deposits round down to zero shares.",
            )),
            (AttackType::BlockManipulation, (
                "Dependence on values that block producers or transaction ordering can influence, including front-running and timestamp reliance.",
                "Missing slippage bound: a swap executes at whatever price the pool offers, so a sandwiching trader extracts the difference.",
            )),
            (AttackType::Cryptographic, (
                "Misuse of signatures, hashes or randomness.",
                "Signature replay: a signed message lacks a nonce or chain id, so it can be submitted again or on another chain.",
            )),
            (AttackType::DenialOfService, (
                "Ways to block or grief normal operation, such as unbounded loops, forced reverts or locked funds.",
                "Unbounded iteration: a function loops over a user-growable array and eventually exceeds the block gas limit.",
            )),
            (AttackType::Reentrancy, (
                "External calls that let the callee re-enter before state is fully updated.",
                "Cross-function reentrancy: a withdrawal sends funds before clearing the balance, and the receiver re-enters another function that reads the stale balance.",
            )),
            (AttackType::StorageAndMemory, (
                "Incorrect handling of storage layout, storage pointers, memory copies or uninitialized data.",
                "Storage collision on upgrade: a new implementation inserts a variable before existing ones and shifts the layout behind a proxy.",
            )),
        ]
        .into_iter()
        .collect();
        CategoryBank {
            business: business
                .into_iter()
                .map(|(category, (d, e))| CategoryEntry {
                    category,
                    definition: d.into(),
                    example: e.into(),
                })
                .collect(),
            attack: attack
                .into_iter()
                .map(|(category, (d, e))| CategoryEntry {
                    category,
                    definition: d.into(),
                    example: e.into(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bank_is_complete() {
        let bank = CategoryBank::default();
        bank.validate().unwrap();
        assert_eq!(bank.business.len(), 13);
        assert_eq!(bank.attack.len(), 7);
    }

    #[test]
    fn json_round_trip_and_checks() {
        let bank = CategoryBank::default();
        let text = serde_json::to_string(&bank).unwrap();
        assert_eq!(CategoryBank::from_json(&text).unwrap(), bank);

        let mut short = bank.clone();
        short.attack.pop();
        let err = CategoryBank::from_json(&serde_json::to_string(&short).unwrap()).unwrap_err();
        assert!(matches!(err, BankError::Missing(_)));
    }

    #[test]
    fn scoped_rendering() {
        let bank = CategoryBank::default();
        let only: BTreeSet<_> = [BusinessType::Dexes].into();
        let text = bank.render_business(Some(&only));
        assert!(text.contains("### Dexes"));
        assert!(!text.contains("### Lending"));
        assert_eq!(bank.render_business(None).matches("### ").count(), 13);
    }
}
