//! Closed category sets used by the knowledge graph.
//!
//! Business types describe what a protocol is for; attack types describe how
//! an exploit works. Neither set can be extended at runtime, so both are plain
//! enums rather than graph nodes. Edges pointing at them store the enum value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownCategory(pub String);

impl fmt::Display for UnknownCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown category label `{}`", self.0)
    }
}

impl std::error::Error for UnknownCategory {}

/// Compares labels ignoring case and punctuation, so that "Cross Chain",
/// "cross-chain" and "CrossChain" all resolve. The Rust variant name is
/// accepted as well.
fn label_key(label: &str) -> String {
    label
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

macro_rules! category_enum {
    (
        $(#[$meta:meta])*
        $name:ident { $( $variant:ident => $label:literal ),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub enum $name {
            $( $variant ),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[ $( $name::$variant ),+ ];

            /// Human-readable label, also used on the wire.
            pub fn label(self) -> &'static str {
                match self {
                    $( $name::$variant => $label ),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = UnknownCategory;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let key = label_key(s);
                let names: &[(&str, $name)] = &[ $( (stringify!($variant), $name::$variant) ),+ ];
                names
                    .iter()
                    .find(|(ident, c)| label_key(c.label()) == key || label_key(ident) == key)
                    .map(|(_, c)| *c)
                    .ok_or_else(|| UnknownCategory(s.to_string()))
            }
        }

        impl TryFrom<String> for $name {
            type Error = UnknownCategory;

            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }

        impl From<$name> for String {
            fn from(c: $name) -> String {
                c.label().to_string()
            }
        }
    };
}

category_enum! {
    /// High-level purpose of a DeFi protocol.
    BusinessType {
        Lending => "Lending",
        Dexes => "Dexes",
        Yield => "Yield",
        Services => "Services",
        Derivatives => "Derivatives",
        YieldAggregator => "Yield Aggregator",
        RealWorldAssets => "Real World Assets",
        Stablecoins => "Stablecoins",
        Indexes => "Indexes",
        Insurance => "Insurance",
        NftMarketplace => "NFT Marketplace",
        NftLending => "NFT Lending",
        CrossChain => "Cross Chain",
    }
}

category_enum! {
    /// Exploit mechanics category.
    AttackType {
        AccessControl => "Access Control",
        Arithmetic => "Arithmetic",
        BlockManipulation => "Block Manipulation",
        Cryptographic => "Cryptographic",
        DenialOfService => "Denial of Service",
        Reentrancy => "Reentrancy",
        StorageAndMemory => "Storage & Memory",
    }
}

/// Severity of a retained audit finding. Quality-assurance entries never make
/// it this far; see [`crate::ingest::load_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    High,
    Medium,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::High => f.write_str("High"),
            Severity::Medium => f.write_str("Medium"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_set_sizes() {
        assert_eq!(BusinessType::ALL.len(), 13);
        assert_eq!(AttackType::ALL.len(), 7);
    }

    #[test]
    fn labels_round_trip() {
        for b in BusinessType::ALL {
            assert_eq!(b.label().parse::<BusinessType>().unwrap(), *b);
        }
        for a in AttackType::ALL {
            assert_eq!(a.label().parse::<AttackType>().unwrap(), *a);
        }
    }

    #[test]
    fn lenient_spelling() {
        assert_eq!("cross-chain".parse::<BusinessType>().unwrap(), BusinessType::CrossChain);
        assert_eq!("NFTLending".parse::<BusinessType>().unwrap(), BusinessType::NftLending);
        assert_eq!("StorageAndMemory".parse::<AttackType>().unwrap(), AttackType::StorageAndMemory);
        assert_eq!("Storage and Memory".parse::<AttackType>().unwrap(), AttackType::StorageAndMemory);
        assert_eq!("storage & memory".parse::<AttackType>().unwrap(), AttackType::StorageAndMemory);
        assert!("Price Manipulation".parse::<AttackType>().is_err());
    }

    #[test]
    fn serde_uses_labels() {
        let s = serde_json::to_string(&BusinessType::YieldAggregator).unwrap();
        assert_eq!(s, "\"Yield Aggregator\"");
        let a: AttackType = serde_json::from_str("\"Denial of Service\"").unwrap();
        assert_eq!(a, AttackType::DenialOfService);
        assert!(serde_json::from_str::<AttackType>("\"Flashloan\"").is_err());
    }
}
