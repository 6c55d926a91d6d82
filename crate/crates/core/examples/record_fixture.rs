//! Regenerates the recorded fuzz outcome of the vault fixture from the
//! reference model.
//!
//! cargo run -p kgaudit --example record_fixture -- fixtures/first-depositor-vault sem-000002

use std::path::PathBuf;

use kgaudit::fixture;
use kgaudit::fuzz::store_outcome;
use kgaudit::harness::{HarnessFile, HarnessSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: record_fixture FIXTURE_DIR SEMANTIC_ID")?);
    let attribution = args.next().ok_or("usage: record_fixture FIXTURE_DIR SEMANTIC_ID")?;
    let harness = harness_from_transcript(&dir)?;
    let hash = harness.content_hash();
    let vault = std::fs::read_to_string(dir.join("src/ShareVault.sol"))?;
    let token = std::fs::read_to_string(dir.join("src/MockToken.sol"))?;
    let outcome = fixture::recorded_outcome(
        &hash,
        &attribution,
        &[("src/MockToken.sol", &token), ("src/ShareVault.sol", &vault)],
    );
    let path = store_outcome(&dir.join("recorded"), &hash, &outcome)?;
    println!("{}", path.display());
    Ok(())
}

fn harness_from_transcript(dir: &std::path::Path) -> Result<HarnessSource, Box<dyn std::error::Error>> {
    let script: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("transcript.json"))?)?;
    let reply = script
        .as_array()
        .into_iter()
        .flatten()
        .find(|e| e["template"] == "HarnessSynthesis")
        .map(|e| e["reply"].clone())
        .ok_or("transcript has no HarnessSynthesis entry")?;
    let files: Vec<HarnessFile> = serde_json::from_value(reply["files"].clone())?;
    Ok(HarnessSource {
        files,
        entry_contract: reply["entry_contract"].as_str().unwrap_or_default().to_string(),
        handler_names: serde_json::from_value(reply["handler_names"].clone())?,
    })
}
